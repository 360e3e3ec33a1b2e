use std::collections::HashMap;
use std::sync::Arc;

use crate::error::Result;
use crate::ngram::topology::NGramTopology;
use crate::symbols::{SymbolId, SymbolTable, BOS, EOS, UNK};

/// Raw counts of every n-gram of length 1..=order in `<s> sentence </s>`;
/// `<s>` alone is never counted.
pub fn count_ngrams(corpus: &[Vec<SymbolId>], order: usize, n_symbols: usize) -> HashMap<Vec<SymbolId>, u64> {
    let mut counts: HashMap<Vec<SymbolId>, u64> = HashMap::new();
    let mut padded = Vec::new();
    for sent in corpus {
        padded.clear();
        padded.push(BOS);
        padded.extend(sent.iter().map(|&x| sanitize(x, n_symbols)));
        padded.push(EOS);
        for end in 1..padded.len() {
            for len in 1..=order.min(end + 1) {
                let g = &padded[end + 1 - len..=end];
                match counts.get_mut(g) {
                    Some(c) => *c += 1,
                    None => {
                        counts.insert(g.to_vec(), 1);
                    }
                }
            }
        }
    }
    counts
}

fn sanitize(x: SymbolId, n_symbols: usize) -> SymbolId {
    if x == BOS || x == EOS || x as usize >= n_symbols { UNK } else { x }
}

/// Threshold for n-grams of length `len` (≥ 2); the last entry repeats.
pub fn threshold(min_counts: &[u64], len: usize) -> u64 {
    if min_counts.is_empty() {
        return 1;
    }
    min_counts[(len - 1).min(min_counts.len() - 1)].max(1)
}

/// Topology holding every n-gram of length ≥ 2 whose count reaches its
/// threshold, closed under prefixes and suffixes, plus every alphabet unigram.
///
/// `min_counts[k-1]` is the threshold for length k (the unigram entry is
/// ignored: the vocabulary defines the unigrams).
pub fn extract_topology(
    corpus: &[Vec<SymbolId>],
    order: usize,
    symbols: Arc<SymbolTable>,
    min_counts: &[u64],
) -> Result<NGramTopology> {
    let counts = count_ngrams(corpus, order, symbols.len());
    let mut kept: Vec<Vec<SymbolId>> = counts
        .into_iter()
        .filter(|(g, c)| g.len() >= 2 && *c >= threshold(min_counts, g.len()))
        .map(|(g, _)| g)
        .collect();
    kept.sort_unstable();
    NGramTopology::from_ngrams(symbols, order, kept)
}
