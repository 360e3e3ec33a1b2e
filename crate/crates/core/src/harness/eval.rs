//! Offline metrics: SLL^e, perplexity, top-k next-token accuracy, OOV rate.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::par::{self, Execution};
use crate::symbols::{SymbolId, SymbolTable, EOS, UNK};
use crate::wordpiece::inventory::{piece_token, WordPieceInventory};

/// One evaluation sentence: model ids, which positions are scored, and the
/// word-level token counts behind it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalUnit {
    pub ids: Vec<SymbolId>,
    pub counted: Vec<bool>,
    pub words: usize,
    pub oov_words: usize,
}

/// Word-level units: a token is scored iff it is in `symbols`.
pub fn word_units<S: AsRef<str>>(symbols: &SymbolTable, corpus: &[Vec<S>]) -> Vec<EvalUnit> {
    corpus
        .iter()
        .map(|s| {
            let ids = symbols.encode(s);
            let counted: Vec<bool> = ids.iter().map(|&x| x != UNK).collect();
            let oov = counted.iter().filter(|c| !**c).count();
            EvalUnit { ids, counted, words: s.len(), oov_words: oov }
        })
        .collect()
}

/// Piece-level units: a piece is scored iff its parent word is in `words`.
/// Words the inventory cannot spell become a single unscored `<unk>`.
pub fn piece_units<S: AsRef<str>>(
    pieces: &SymbolTable,
    inventory: &WordPieceInventory,
    words: &SymbolTable,
    corpus: &[Vec<S>],
) -> Vec<EvalUnit> {
    corpus
        .iter()
        .map(|s| {
            let mut ids = Vec::new();
            let mut counted = Vec::new();
            let mut oov = 0;
            for w in s {
                let in_vocab = words.get(w.as_ref()).is_some_and(|x| x != UNK);
                if !in_vocab {
                    oov += 1;
                }
                match inventory.segment(w.as_ref()) {
                    Ok(seg) => {
                        for (k, &p) in seg.iter().enumerate() {
                            ids.push(pieces.id(&piece_token(inventory.piece(p), k + 1 == seg.len())));
                            counted.push(in_vocab);
                        }
                    }
                    Err(_) => {
                        ids.push(UNK);
                        counted.push(false);
                    }
                }
            }
            EvalUnit { ids, counted, words: s.len(), oov_words: oov }
        })
        .collect()
}

/// Aggregate metrics over a set of units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub words: usize,
    pub oov_words: usize,
    /// Scored model positions (sentence ends excluded).
    pub scored: usize,
    /// Mean per-sentence sum of ln p over scored positions.
    pub sll_e: f64,
    /// exp of the mean negative ln p over scored positions and sentence ends.
    pub perplexity: f64,
    pub top1: f64,
    pub k: usize,
    pub topk: f64,
    pub oov_rate: f64,
}

#[derive(Clone, Debug, Default)]
struct Sums {
    sll: f64,
    end: f64,
    scored: usize,
    hit1: usize,
    hitk: usize,
    sentences: usize,
    words: usize,
    oov: usize,
}

impl Sums {
    fn merge(&mut self, o: Sums) {
        self.sll += o.sll;
        self.end += o.end;
        self.scored += o.scored;
        self.hit1 += o.hit1;
        self.hitk += o.hitk;
        self.sentences += o.sentences;
        self.words += o.words;
        self.oov += o.oov;
    }
}

/// Rank of `y` among prediction candidates (ids above `<unk>` other than
/// `</s>`), ties going to the lower id.
fn rank_of(dist: &[f64], y: SymbolId) -> usize {
    let py = dist[y as usize];
    dist.iter()
        .enumerate()
        .skip(UNK as usize + 1)
        .filter(|&(i, &p)| i as SymbolId != EOS && (p > py || (p == py && (i as SymbolId) < y)))
        .count()
}

const EVAL_CHUNK: usize = 64;

fn sums<M: LanguageModel + ?Sized>(lm: &M, unit: &EvalUnit, k: usize, acc: &mut Sums) {
    let v = lm.symbols().len();
    let rows = unit.ids.len() + 1;
    let mut out = vec![0.0; rows * v];
    lm.prefix_distributions(&unit.ids, rows, &mut out);
    for (i, (&y, &c)) in unit.ids.iter().zip(&unit.counted).enumerate() {
        if !c {
            continue;
        }
        let row = &out[i * v..(i + 1) * v];
        acc.sll += row[y as usize].ln();
        acc.scored += 1;
        let r = rank_of(row, y);
        acc.hit1 += (r == 0) as usize;
        acc.hitk += (r < k) as usize;
    }
    acc.end += out[unit.ids.len() * v + EOS as usize].ln();
    acc.sentences += 1;
    acc.words += unit.words;
    acc.oov += unit.oov_words;
}

/// Evaluates `lm` on `units`, reducing fixed chunks in order.
pub fn evaluate<M: LanguageModel + ?Sized>(lm: &M, units: &[EvalUnit], k: usize, exec: Execution) -> Result<EvalReport> {
    if units.is_empty() {
        return Err(Error::Invalid("empty evaluation corpus".into()));
    }
    if k == 0 {
        return Err(Error::Config("top-k needs k ≥ 1".into()));
    }
    let v = lm.symbols().len();
    if let Some(x) = units.iter().flat_map(|u| &u.ids).find(|&&x| x as usize >= v) {
        return Err(Error::Alphabet(format!("token id {x} outside the model vocabulary")));
    }
    let s = par::fold_chunks(exec, units, EVAL_CHUNK, Sums::default, |a, _, u| sums(lm, u, k, a), |a, p| a.merge(p));
    let frac = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let perplexity = (-(s.sll + s.end) / (s.scored + s.sentences) as f64).exp();
    if !perplexity.is_finite() {
        return Err(Error::Numeric("model assigns zero probability to an evaluated token".into()));
    }
    Ok(EvalReport {
        sentences: s.sentences,
        words: s.words,
        oov_words: s.oov,
        scored: s.scored,
        sll_e: s.sll / s.sentences as f64,
        perplexity,
        top1: frac(s.hit1, s.scored),
        k,
        topk: frac(s.hitk, s.scored),
        oov_rate: frac(s.oov, s.words),
    })
}

/// Mean SLL^e per sentence.
pub fn sll_excl_oov<M: LanguageModel + ?Sized>(lm: &M, units: &[EvalUnit], exec: Execution) -> Result<f64> {
    Ok(evaluate(lm, units, 1, exec)?.sll_e)
}

/// Top-k next-token accuracy over scored positions.
pub fn next_word_accuracy<M: LanguageModel + ?Sized>(lm: &M, units: &[EvalUnit], k: usize, exec: Execution) -> Result<f64> {
    Ok(evaluate(lm, units, k, exec)?.topk)
}

/// Fraction of corpus tokens missing from `vocab`.
pub fn oov_rate<S: AsRef<str>>(corpus: &[Vec<S>], vocab: &SymbolTable) -> Result<f64> {
    let total: usize = corpus.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Invalid("empty corpus".into()));
    }
    let oov = corpus
        .iter()
        .flatten()
        .filter(|t| vocab.get(t.as_ref()).is_none_or(|x| x == UNK))
        .count();
    Ok(oov as f64 / total as f64)
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sentences   {}", self.sentences)?;
        writeln!(f, "words       {} ({} OOV, rate {:.6})", self.words, self.oov_words, self.oov_rate)?;
        writeln!(f, "scored      {}", self.scored)?;
        writeln!(f, "SLL^e       {:.6}", self.sll_e)?;
        writeln!(f, "perplexity  {:.6}", self.perplexity)?;
        writeln!(f, "top-1       {:.6}", self.top1)?;
        write!(f, "top-{:<7} {:.6}", self.k, self.topk)
    }
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "model,sentences,words,oov_rate,scored,sll_e,perplexity,top1,k,topk";

    pub fn csv_row(&self, name: &str) -> String {
        format!(
            "{name},{},{},{:.9},{},{:.9},{:.9},{:.9},{},{:.9}",
            self.sentences, self.words, self.oov_rate, self.scored, self.sll_e, self.perplexity, self.top1, self.k, self.topk
        )
    }
}
