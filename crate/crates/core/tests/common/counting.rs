//! Expected counts by direct evaluation of the defining sum.

use std::collections::HashMap;
use std::sync::Arc;

use fedgram_core::distill::CapModel;
use fedgram_core::ngram::{extract_topology, train_kneser_ney, NGramTopology};
use fedgram_core::{LanguageModel, SymbolId, SymbolTable, BOS};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ngram_set, state_context};

/// C(ctx·x) = Σ_samples Σ_prefixes p(x | prefix) · [x is read at ctx after the prefix].
pub fn triple_sum<M: LanguageModel<State = Vec<SymbolId>>>(
    teacher: &M,
    t: &NGramTopology,
    samples: &[Vec<SymbolId>],
    max_len: usize,
) -> HashMap<(Vec<SymbolId>, SymbolId), f64> {
    let set = ngram_set(t);
    let v = teacher.symbols().len();
    let mut out = HashMap::new();
    let mut dist = vec![0.0; v];
    for s in samples {
        let rows = if s.len() >= max_len { s.len() } else { s.len() + 1 };
        for i in 0..rows {
            teacher.distribution(&s[..i].to_vec(), &mut dist);
            let history: Vec<SymbolId> = [&[BOS][..], &s[..i]].concat();
            let ctx = state_context(t, &history);
            for x in 0..v as SymbolId {
                if x == BOS {
                    continue;
                }
                let mut r = ctx.as_slice();
                while !set.contains(&[r, &[x]].concat()) {
                    r = &r[1..];
                }
                *out.entry((r.to_vec(), x)).or_insert(0.0) += dist[x as usize];
            }
        }
    }
    out
}

/// Trigram capitalization model over `tokens`, trained on random text.
pub fn cased_fixture(rng: &mut ChaCha8Rng, tokens: &[&str]) -> (CapModel, Arc<SymbolTable>) {
    let cs = Arc::new(SymbolTable::from_tokens(tokens.iter().copied()));
    let words: Vec<SymbolId> = cs.words().collect();
    let corpus: Vec<Vec<SymbolId>> = (0..40)
        .map(|_| (0..rng.gen_range(1..6)).map(|_| words[rng.gen_range(0..words.len())]).collect())
        .collect();
    let topo = extract_topology(&corpus, 3, cs.clone(), &[1, 1, 1]).unwrap();
    let model = train_kneser_ney(Arc::new(topo), &corpus).unwrap();
    let us = Arc::new(CapModel::lowercase_table(&cs));
    (CapModel::new(Arc::new(model), us.clone(), 1e-6).unwrap(), cs)
}
