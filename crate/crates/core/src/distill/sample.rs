use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lm::{sample_sentence, LanguageModel};
use crate::par::{self, Execution};
use crate::symbols::{SymbolId, SymbolTable};

/// Draws `k` sentences. Sentence `i` uses its own ChaCha stream of `seed`, so
/// the corpus is identical for any thread count.
pub fn sample_corpus<M: LanguageModel + ?Sized>(
    teacher: &M,
    k: usize,
    max_len: usize,
    seed: u64,
    exec: Execution,
) -> Vec<Vec<SymbolId>> {
    par::map_range(exec, k, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        sample_sentence(teacher, &mut rng, max_len)
    })
}

/// Sample cache: one sentence per line, tokens separated by spaces.
pub fn write_samples(symbols: &SymbolTable, samples: &[Vec<SymbolId>]) -> String {
    let mut out = String::new();
    for s in samples {
        let _ = writeln!(out, "{}", symbols.decode(s).join(" "));
    }
    out
}

/// Reads a sample cache; every token must be in `symbols`.
pub fn read_samples(symbols: &SymbolTable, text: &str) -> Result<Vec<Vec<SymbolId>>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|t| {
                    symbols
                        .get(t)
                        .ok_or_else(|| Error::parse(i + 1, format!("unknown token {t:?}")))
                })
                .collect()
        })
        .collect()
}
