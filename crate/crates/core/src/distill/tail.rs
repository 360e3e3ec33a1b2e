use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::symbols::{SymbolId, SymbolTable, BOS, UNK};

/// Extends a teacher over a small head vocabulary to a larger vocabulary by
/// splitting the head's `<unk>` probability over the tail words in
/// proportion to their unigram weights.
///
/// Tail words are the full-vocabulary ids missing from the head vocabulary,
/// plus the full `<unk>`. Context updates map tail words to the head `<unk>`.
pub struct UnigramTailTeacher<M> {
    head: M,
    full: Arc<SymbolTable>,
    to_head: Vec<SymbolId>,
    /// Share of the head `<unk>` mass per full id (0 for head words).
    share: Vec<f64>,
}

impl<M: LanguageModel> UnigramTailTeacher<M> {
    /// `weights[y]` is the unigram weight of full id `y`; each tail word gets
    /// (weight + 0.5) / Σ_tail (weight + 0.5).
    pub fn new(head: M, full: Arc<SymbolTable>, weights: &[f64]) -> Result<Self> {
        if weights.len() != full.len() {
            return Err(Error::Contract("one unigram weight per full-vocabulary id required".into()));
        }
        let hs = head.symbols();
        let to_head: Vec<SymbolId> = full
            .tokens()
            .iter()
            .enumerate()
            .map(|(i, t)| if i as SymbolId <= UNK { i as SymbolId } else { hs.get(t).unwrap_or(UNK) })
            .collect();
        let mut share = vec![0.0; full.len()];
        let mut total = 0.0;
        for y in UNK as usize..full.len() {
            if to_head[y] == UNK {
                share[y] = weights[y].max(0.0) + 0.5;
                total += share[y];
            }
        }
        share.iter_mut().for_each(|s| *s /= total);
        Ok(UnigramTailTeacher { head, full, to_head, share })
    }

    pub fn head(&self) -> &M {
        &self.head
    }

    fn expand(&self, head: &[f64], out: &mut [f64]) {
        let unk = head[UNK as usize];
        for (y, o) in out.iter_mut().enumerate() {
            let h = self.to_head[y];
            *o = if h == UNK { unk * self.share[y] } else { head[h as usize] };
        }
        out[BOS as usize] = 0.0;
    }
}

impl<M: LanguageModel> LanguageModel for UnigramTailTeacher<M> {
    type State = M::State;

    fn symbols(&self) -> &SymbolTable {
        &self.full
    }

    fn start(&self) -> M::State {
        self.head.start()
    }

    fn advance(&self, state: &mut M::State, token: SymbolId) {
        self.head.advance(state, self.to_head[token as usize]);
    }

    fn distribution(&self, state: &M::State, out: &mut [f64]) {
        let mut h = vec![0.0; self.head.symbols().len()];
        self.head.distribution(state, &mut h);
        self.expand(&h, out);
    }

    fn prefix_distributions(&self, sentence: &[SymbolId], rows: usize, out: &mut [f64]) {
        let hv = self.head.symbols().len();
        let v = self.full.len();
        let mapped: Vec<SymbolId> = sentence.iter().map(|&x| self.to_head[x as usize]).collect();
        let mut h = vec![0.0; rows * hv];
        self.head.prefix_distributions(&mapped, rows, &mut h);
        for i in 0..rows {
            self.expand(&h[i * hv..(i + 1) * hv], &mut out[i * v..(i + 1) * v]);
        }
    }
}
