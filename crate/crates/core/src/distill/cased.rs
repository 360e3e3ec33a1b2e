use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::ngram::model::BackoffNGramModel;
use crate::ngram::topology::StateId;
use crate::symbols::{is_reserved_token, SymbolId, SymbolTable, BOS, EOS, UNK};

/// Default floor on cased probabilities before the per-group normalization.
pub const DEFAULT_CAP_FLOOR: f64 = 1e-6;

/// Case mapping u plus a cased n-gram model p_cap.
///
/// Every cased id maps to the id of its lowercased token in the uncased
/// table, or to `<unk>` when that table lacks it.
#[derive(Clone, Debug)]
pub struct CapModel {
    cased: Arc<BackoffNGramModel>,
    uncased: Arc<SymbolTable>,
    lower: Vec<SymbolId>,
    variants: Vec<Vec<SymbolId>>,
    floor: f64,
}

impl CapModel {
    pub fn new(cased: Arc<BackoffNGramModel>, uncased: Arc<SymbolTable>, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::Config(format!("cap floor must be positive, got {floor}")));
        }
        let cs = cased.symbols().clone();
        let lower: Vec<SymbolId> = cs
            .tokens()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let i = i as SymbolId;
                if i <= UNK {
                    i
                } else {
                    uncased.get(&lowercase(t)).unwrap_or(UNK)
                }
            })
            .collect();
        let mut variants = vec![Vec::new(); uncased.len()];
        for (y, &x) in lower.iter().enumerate() {
            variants[x as usize].push(y as SymbolId);
        }
        Ok(CapModel { cased, uncased, lower, variants, floor })
    }

    /// Uncased table holding the lowercased tokens of `cased` (first-seen order).
    pub fn lowercase_table(cased: &SymbolTable) -> SymbolTable {
        let mut t = SymbolTable::new();
        for tok in cased.tokens() {
            if !is_reserved_token(tok) {
                t.add(&lowercase(tok));
            }
        }
        t
    }

    pub fn cased(&self) -> &Arc<BackoffNGramModel> {
        &self.cased
    }

    pub fn cased_symbols(&self) -> &Arc<SymbolTable> {
        self.cased.symbols()
    }

    pub fn uncased_symbols(&self) -> &Arc<SymbolTable> {
        &self.uncased
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// u(y) as ids.
    pub fn lower(&self, y: SymbolId) -> SymbolId {
        self.lower[y as usize]
    }

    pub fn lower_map(&self) -> &[SymbolId] {
        &self.lower
    }

    /// Cased ids y with u(y) = x.
    pub fn variants(&self, x: SymbolId) -> &[SymbolId] {
        &self.variants[x as usize]
    }

    /// p_cap(y | q) with the coverage floor applied.
    pub fn floored(&self, q: StateId, y: SymbolId) -> f64 {
        self.cased.prob(q, y).max(self.floor)
    }

    /// Viterbi case restoration of a lowercased sentence.
    ///
    /// Input case is ignored. Each token may become any cased variant of its
    /// lowercase form (or stays as typed when there is none); paths are scored
    /// by the floored cased model including sentence end. Ties keep the
    /// smallest cased state id, then the smallest variant id.
    pub fn truecase<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<String> {
        let cs = self.cased_symbols();
        // Each candidate: (cased id, surface string).
        let options: Vec<Vec<(SymbolId, String)>> = sentence
            .iter()
            .map(|t| {
                let low = lowercase(t.as_ref());
                let x = self.uncased.get(&low).unwrap_or(UNK);
                let mut v: Vec<(SymbolId, String)> = if x == UNK {
                    Vec::new()
                } else {
                    self.variants(x).iter().map(|&y| (y, cs.token(y).to_string())).collect()
                };
                if v.is_empty() {
                    v.push((cs.get(&low).unwrap_or(UNK), low));
                }
                v
            })
            .collect();
        let topo = self.cased.topology();
        let mut beam: BTreeMap<StateId, (f64, usize)> = BTreeMap::new();
        beam.insert(self.cased.start(), (0.0, usize::MAX));
        // Back pointers: (previous node, option index) per node.
        let mut nodes: Vec<(usize, usize)> = Vec::new();
        for opts in &options {
            let mut next: BTreeMap<StateId, (f64, usize)> = BTreeMap::new();
            for (&q, &(score, node)) in &beam {
                for (j, &(y, _)) in opts.iter().enumerate() {
                    let s = score + self.floored(q, y).ln();
                    let d = topo.step(q, y);
                    let better = next.get(&d).is_none_or(|&(cur, _)| s > cur);
                    if better {
                        nodes.push((node, j));
                        next.insert(d, (s, nodes.len() - 1));
                    }
                }
            }
            beam = next;
        }
        let mut best: Option<(f64, usize)> = None;
        for (&q, &(score, node)) in &beam {
            let s = score + self.floored(q, EOS).ln();
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, node));
            }
        }
        let mut out = Vec::with_capacity(options.len());
        let mut node = best.map_or(usize::MAX, |b| b.1);
        let mut pos = options.len();
        while node != usize::MAX {
            pos -= 1;
            let (prev, j) = nodes[node];
            out.push(options[pos][j].1.clone());
            node = prev;
        }
        out.reverse();
        out
    }
}

/// Lowercases a token; reserved tokens stay as they are.
pub fn lowercase(token: &str) -> String {
    if is_reserved_token(token) {
        token.to_string()
    } else {
        token.to_lowercase()
    }
}

/// The capitalization-reweighted teacher over cased symbols:
/// p̃(y | ȳ) = p_nn(u(y) | u(ȳ)) · p_cap(y | ȳ) / Σ_{y': u(y') = u(y)} p_cap(y' | ȳ).
pub struct CasedTeacher<'a, M: LanguageModel + ?Sized> {
    teacher: &'a M,
    cap: &'a CapModel,
}

impl<'a, M: LanguageModel + ?Sized> CasedTeacher<'a, M> {
    pub fn new(teacher: &'a M, cap: &'a CapModel) -> Result<Self> {
        if teacher.symbols() != &**cap.uncased_symbols() {
            return Err(Error::Alphabet("teacher vocabulary differs from the cap model's uncased table".into()));
        }
        Ok(CasedTeacher { teacher, cap })
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for CasedTeacher<'_, M> {
    type State = (M::State, StateId);

    fn symbols(&self) -> &SymbolTable {
        self.cap.cased_symbols()
    }

    fn start(&self) -> Self::State {
        (self.teacher.start(), self.cap.cased.start())
    }

    fn advance(&self, state: &mut Self::State, token: SymbolId) {
        self.teacher.advance(&mut state.0, self.cap.lower(token));
        self.cap.cased.advance(&mut state.1, token);
    }

    fn distribution(&self, state: &Self::State, out: &mut [f64]) {
        let mut pu = vec![0.0; self.teacher.symbols().len()];
        self.teacher.distribution(&state.0, &mut pu);
        self.cap.cased.fill_distribution(state.1, out);
        let floor = self.cap.floor;
        let mut z = vec![0.0; pu.len()];
        for (y, p) in out.iter_mut().enumerate() {
            *p = p.max(floor);
            z[self.cap.lower[y] as usize] += *p;
        }
        for (y, p) in out.iter_mut().enumerate() {
            let x = self.cap.lower[y] as usize;
            *p = pu[x] * (*p / z[x]);
        }
        out[BOS as usize] = 0.0;
    }
}
