//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

pub mod compose;
pub mod counting;
pub mod kl;
pub mod segment;

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use fedgram_core::ngram::{extract_topology, train_kneser_ney, BackoffAutomaton, BackoffNGramModel, NGramTopology};
use fedgram_core::{LanguageModel, SymbolId, SymbolTable, BOS, EOS};
use rand::Rng;

/// Table over single letters a, b, c, ...
pub fn letters(n: usize) -> Arc<SymbolTable> {
    Arc::new(SymbolTable::from_tokens((0..n).map(|i| ((b'a' + i as u8) as char).to_string())))
}

/// Random sentences over the word ids of `table`.
pub fn random_corpus<R: Rng>(rng: &mut R, table: &SymbolTable, sentences: usize, max_len: usize) -> Vec<Vec<SymbolId>> {
    let words: Vec<SymbolId> = table.words().collect();
    (0..sentences)
        .map(|_| {
            let n = rng.gen_range(0..=max_len);
            (0..n).map(|_| words[rng.gen_range(0..words.len())]).collect()
        })
        .collect()
}

/// Kneser–Ney model of a random corpus.
pub fn random_kn<R: Rng>(rng: &mut R, table: &Arc<SymbolTable>, order: usize) -> BackoffNGramModel {
    let n = rng.gen_range(3..30);
    let corpus = random_corpus(rng, table, n, 6);
    let topo = extract_topology(&corpus, order, table.clone(), &vec![1; order]).unwrap();
    train_kneser_ney(Arc::new(topo), &corpus).unwrap()
}

/// Backoff recursion over explicit n-gram entries, independent of the
/// automaton: p(x | h) = w(h·x) if explicit, else bo(h)·p(x | h[1..]).
pub struct Oracle {
    order: usize,
    prob: HashMap<Vec<SymbolId>, f64>,
    backoff: HashMap<Vec<SymbolId>, f64>,
}

impl Oracle {
    pub fn new(m: &BackoffNGramModel) -> Self {
        let t = m.topology();
        let arcs = t.arcs();
        let mut prob = HashMap::new();
        let mut backoff = HashMap::new();
        for q in 0..t.num_states() as u32 {
            let ctx = t.context(q).to_vec();
            for a in arcs.range(q) {
                let mut g = ctx.clone();
                g.push(arcs.label(a));
                prob.insert(g, m.arc_weights()[a]);
            }
            if t.is_final(q) {
                let mut g = ctx.clone();
                g.push(EOS);
                prob.insert(g, m.final_weights()[q as usize]);
            }
            backoff.insert(ctx, m.backoff_weights()[q as usize]);
        }
        Oracle { order: t.order(), prob, backoff }
    }

    /// p(x | history); `history` starts with `<s>`.
    pub fn p(&self, history: &[SymbolId], x: SymbolId) -> f64 {
        let keep = history.len().min(self.order - 1);
        let mut h = &history[history.len() - keep..];
        let mut scale = 1.0;
        loop {
            let mut g = h.to_vec();
            g.push(x);
            if let Some(&w) = self.prob.get(&g) {
                return scale * w;
            }
            if h.is_empty() {
                return 0.0;
            }
            scale *= self.backoff.get(h).copied().unwrap_or(1.0);
            h = &h[1..];
        }
    }

    pub fn seq_logprob(&self, sentence: &[SymbolId]) -> f64 {
        let mut h = vec![BOS];
        let mut lp = 0.0;
        for &x in sentence {
            lp += self.p(&h, x).ln();
            h.push(x);
        }
        lp + self.p(&h, EOS).ln()
    }
}

/// Explicit n-grams of a topology (including those ending in `</s>`).
pub fn ngram_set(t: &NGramTopology) -> HashSet<Vec<SymbolId>> {
    t.ngrams().into_iter().collect()
}

/// Longest suffix of `history` (≤ order − 1 symbols) that is a state context.
pub fn state_context(t: &NGramTopology, history: &[SymbolId]) -> Vec<SymbolId> {
    let keep = history.len().min(t.order() - 1);
    let mut h = &history[history.len() - keep..];
    while t.state(h).is_none() {
        h = &h[1..];
    }
    h.to_vec()
}

/// Teacher with pseudo-random conditionals that depend on the whole prefix.
pub struct HashTeacher {
    pub symbols: Arc<SymbolTable>,
    pub salt: u64,
    /// Extra weight on sentence end, to keep samples short.
    pub end_bias: f64,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl LanguageModel for HashTeacher {
    type State = Vec<SymbolId>;

    fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    fn start(&self) -> Vec<SymbolId> {
        Vec::new()
    }

    fn advance(&self, state: &mut Vec<SymbolId>, token: SymbolId) {
        state.push(token);
    }

    fn distribution(&self, state: &Vec<SymbolId>, out: &mut [f64]) {
        let mut h = mix(self.salt);
        for &x in state {
            h = mix(h ^ (x as u64 + 1));
        }
        let mut total = 0.0;
        for (i, p) in out.iter_mut().enumerate() {
            let u = (mix(h ^ (i as u64).wrapping_mul(0x9E37_79B9)) >> 11) as f64 / (1u64 << 53) as f64;
            *p = if i as SymbolId == BOS { 0.0 } else { 0.05 + u };
            if i as SymbolId == EOS {
                *p += self.end_bias;
            }
            total += *p;
        }
        for p in out.iter_mut() {
            *p /= total;
        }
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
