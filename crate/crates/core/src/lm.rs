//! The conditional language-model interface shared by teachers, n-gram models
//! and evaluation.

use rand::Rng;

use crate::symbols::{SymbolId, SymbolTable, BOS, EOS};

/// A left-to-right model of p(x | prefix) over a symbol table plus sentence end.
pub trait LanguageModel: Sync {
    type State: Clone + Send;

    fn symbols(&self) -> &SymbolTable;

    /// State after consuming `<s>`.
    fn start(&self) -> Self::State;

    fn advance(&self, state: &mut Self::State, token: SymbolId);

    /// Writes p(· | state) into `out` (length `symbols().len()`); `out[EOS]` is
    /// the sentence-end probability and `out[BOS]` is zero.
    fn distribution(&self, state: &Self::State, out: &mut [f64]);

    fn prob(&self, state: &Self::State, token: SymbolId) -> f64 {
        let mut out = vec![0.0; self.symbols().len()];
        self.distribution(state, &mut out);
        out[token as usize]
    }

    /// Fills `out` (`rows × symbols().len()`) with p(· | sentence[..i]) in
    /// row i, for i in 0..rows (rows ≤ sentence.len() + 1).
    fn prefix_distributions(&self, sentence: &[SymbolId], rows: usize, out: &mut [f64]) {
        let v = self.symbols().len();
        let mut state = self.start();
        for i in 0..rows {
            self.distribution(&state, &mut out[i * v..(i + 1) * v]);
            if i < sentence.len() {
                self.advance(&mut state, sentence[i]);
            }
        }
    }
}

/// Ancestral sample of one sentence, stopping at `</s>` or after `max_len` tokens.
pub fn sample_sentence<M, R>(lm: &M, rng: &mut R, max_len: usize) -> Vec<SymbolId>
where
    M: LanguageModel + ?Sized,
    R: Rng + ?Sized,
{
    let mut state = lm.start();
    let mut dist = vec![0.0; lm.symbols().len()];
    let mut out = Vec::new();
    while out.len() < max_len {
        lm.distribution(&state, &mut dist);
        let x = draw(&dist, rng.gen::<f64>());
        if x == EOS {
            break;
        }
        out.push(x);
        lm.advance(&mut state, x);
    }
    out
}

/// Inverse-CDF draw over ids in ascending order.
pub fn draw(dist: &[f64], u: f64) -> SymbolId {
    let total: f64 = dist.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = EOS;
    for (i, &p) in dist.iter().enumerate() {
        if p <= 0.0 || i as SymbolId == BOS {
            continue;
        }
        acc += p;
        last = i as SymbolId;
        if target < acc {
            return last;
        }
    }
    last
}

/// Natural-log probability of a full sentence including sentence end.
pub fn sentence_logprob<M: LanguageModel + ?Sized>(lm: &M, sentence: &[SymbolId]) -> f64 {
    let mut state = lm.start();
    let mut total = 0.0;
    for &x in sentence {
        total += lm.prob(&state, x).ln();
        lm.advance(&mut state, x);
    }
    total + lm.prob(&state, EOS).ln()
}
