use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::ClientShard;
use crate::error::{Error, Result};

/// L1-clipped unigram totals U = Σᵢ wᵢ·Cᵢ with wᵢ = λ / max(λ, |Cᵢ|₁).
#[derive(Clone, Debug, PartialEq)]
pub struct UnigramAccumulator {
    pub lambda: f64,
    /// Every whitelisted token seen so far, with its weighted count.
    pub counts: BTreeMap<String, f64>,
    pub clients: usize,
}

/// Clipping weight of a client with `total` whitelisted tokens.
pub fn clip_weight(total: f64, lambda: f64) -> f64 {
    lambda / lambda.max(total)
}

/// Raw whitelisted token counts of one client; `None` accepts every token.
pub fn client_counts(shard: &ClientShard, whitelist: Option<&BTreeSet<String>>) -> BTreeMap<String, u64> {
    let mut c = BTreeMap::new();
    for t in shard.sentences.iter().flatten() {
        if whitelist.is_none_or(|w| w.contains(t)) {
            *c.entry(t.clone()).or_insert(0) += 1;
        }
    }
    c
}

/// Clipped contribution wᵢ·Cᵢ of one client.
pub fn clipped(counts: &BTreeMap<String, u64>, lambda: f64) -> BTreeMap<String, f64> {
    let total: u64 = counts.values().sum();
    let w = clip_weight(total as f64, lambda);
    counts.iter().map(|(k, &v)| (k.clone(), w * v as f64)).collect()
}

impl UnigramAccumulator {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::Config(format!("clipping threshold λ = {lambda} must be positive")));
        }
        Ok(UnigramAccumulator { lambda, counts: BTreeMap::new(), clients: 0 })
    }

    pub fn add(&mut self, contribution: &BTreeMap<String, f64>) {
        for (k, v) in contribution {
            *self.counts.entry(k.clone()).or_insert(0.0) += v;
        }
        self.clients += 1;
    }

    /// Tokens by decreasing weight, ties by token.
    pub fn ranked(&self) -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = self.counts.iter().map(|(k, &c)| (k.clone(), c)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    /// `token<TAB>weight` lines in [`ranked`](Self::ranked) order.
    pub fn to_tsv(&self) -> String {
        self.ranked().iter().map(|(k, c)| format!("{k}\t{c}\n")).collect()
    }
}

/// Parses `token<TAB>weight` lines.
pub fn read_unigram_tsv(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('\t').ok_or_else(|| Error::parse(i + 1, "expected token<TAB>weight"))?;
        let v: f64 = v.trim().parse().map_err(|_| Error::parse(i + 1, format!("bad weight `{v}`")))?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::parse(i + 1, format!("weight {v} must be finite and ≥ 0")));
        }
        out.push((k.to_string(), v));
    }
    Ok(out)
}

/// Unigram collection over all shards. Clients are summed in id order, so
/// the result does not depend on the input order.
pub fn collect_unigrams(shards: &[ClientShard], whitelist: Option<&BTreeSet<String>>, lambda: f64) -> Result<UnigramAccumulator> {
    let mut acc = UnigramAccumulator::new(lambda)?;
    let mut sorted: Vec<&ClientShard> = shards.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for s in sorted {
        acc.add(&clipped(&client_counts(s, whitelist), lambda));
    }
    Ok(acc)
}

/// Collection in rounds of `per_round` clients in a seeded order. Returns the
/// pooled accumulator (identical to [`collect_unigrams`] up to summation
/// order) and each round's clipped counts.
pub fn collect_in_rounds(
    shards: &[ClientShard],
    whitelist: Option<&BTreeSet<String>>,
    lambda: f64,
    per_round: usize,
    seed: u64,
) -> Result<(UnigramAccumulator, Vec<BTreeMap<String, f64>>)> {
    if per_round == 0 {
        return Err(Error::Config("clients per round must be ≥ 1".into()));
    }
    let pooled = collect_unigrams(shards, whitelist, lambda)?;
    let mut order: Vec<usize> = (0..shards.len()).collect();
    order.sort_by(|&a, &b| shards[a].id.cmp(&shards[b].id));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let rounds = order
        .chunks(per_round)
        .map(|group| {
            let mut r = BTreeMap::new();
            for &i in group {
                for (k, v) in clipped(&client_counts(&shards[i], whitelist), lambda) {
                    *r.entry(k).or_insert(0.0) += v;
                }
            }
            r
        })
        .collect();
    Ok((pooled, rounds))
}
