use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::ngram::topology::{BackoffAutomaton, NGramTopology, StateId, ROOT};
use crate::symbols::{SymbolId, SymbolTable, BOS, EOS, UNK};

/// A backoff n-gram model: a topology plus probabilities on arcs, a backoff
/// weight per state and a sentence-end weight per final state.
#[derive(Clone, Debug, PartialEq)]
pub struct BackoffNGramModel {
    topology: Arc<NGramTopology>,
    arc_weight: Vec<f64>,
    backoff_weight: Vec<f64>,
    final_weight: Vec<f64>,
}

impl BackoffNGramModel {
    /// `final_weight` entries of non-final states are ignored and stored as 0;
    /// the root's backoff weight is stored as 1.
    pub fn new(
        topology: Arc<NGramTopology>,
        arc_weight: Vec<f64>,
        mut backoff_weight: Vec<f64>,
        mut final_weight: Vec<f64>,
    ) -> Result<Self> {
        let n = topology.num_states();
        if arc_weight.len() != topology.arcs().len() || backoff_weight.len() != n || final_weight.len() != n {
            return Err(Error::Contract("weight vectors do not match the topology".into()));
        }
        if let Some(w) = arc_weight.iter().find(|w| !(w.is_finite() && **w >= 0.0 && **w <= 1.0 + 1e-9)) {
            return Err(Error::Numeric(format!("arc weight {w} outside [0, 1]")));
        }
        backoff_weight[ROOT as usize] = 1.0;
        for q in 0..n {
            if !topology.is_final(q as StateId) {
                final_weight[q] = 0.0;
            }
            let (b, f) = (backoff_weight[q], final_weight[q]);
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::Numeric(format!("backoff weight {b} at state {q}")));
            }
            if !(f.is_finite() && f >= 0.0) {
                return Err(Error::Numeric(format!("final weight {f} at state {q}")));
            }
        }
        Ok(BackoffNGramModel {
            topology,
            arc_weight,
            backoff_weight,
            final_weight,
        })
    }

    pub fn topology(&self) -> &Arc<NGramTopology> {
        &self.topology
    }

    pub fn symbols(&self) -> &Arc<SymbolTable> {
        self.topology.symbols()
    }

    pub fn arc_weights(&self) -> &[f64] {
        &self.arc_weight
    }

    pub fn backoff_weights(&self) -> &[f64] {
        &self.backoff_weight
    }

    pub fn final_weights(&self) -> &[f64] {
        &self.final_weight
    }

    pub fn arc_weight(&self, arc: usize) -> f64 {
        self.arc_weight[arc]
    }

    pub fn backoff_weight(&self, q: StateId) -> f64 {
        self.backoff_weight[q as usize]
    }

    /// Explicit sentence-end weight (0 for non-final states).
    pub fn final_weight(&self, q: StateId) -> f64 {
        self.final_weight[q as usize]
    }

    /// The reading state q[x] and p(x | q). Out-of-alphabet ids read as `<unk>`.
    pub fn resolve(&self, q: StateId, x: SymbolId) -> Result<(StateId, f64)> {
        self.topology.check_state(q)?;
        let x = if x == BOS || x as usize >= self.symbols().len() { UNK } else { x };
        let arcs = self.topology.arcs();
        let mut s = q;
        let mut scale = 1.0;
        loop {
            if x == EOS {
                if self.topology.is_final(s) {
                    return Ok((s, scale * self.final_weight[s as usize]));
                }
            } else if let Some(a) = arcs.find(s, x) {
                return Ok((s, scale * self.arc_weight[a]));
            }
            if s == ROOT {
                return Ok((ROOT, 0.0));
            }
            scale *= self.backoff_weight[s as usize];
            s = self.topology.backoff_state(s);
        }
    }

    pub fn prob(&self, q: StateId, x: SymbolId) -> f64 {
        self.resolve(q, x).map(|r| r.1).unwrap_or(0.0)
    }

    /// p(· | q) over all ids; `out[EOS]` is the end probability.
    pub fn fill_distribution(&self, q: StateId, out: &mut [f64]) {
        let mut chain = vec![q];
        while *chain.last().unwrap() != ROOT {
            let s = *chain.last().unwrap();
            chain.push(self.topology.backoff_state(s));
        }
        out.iter_mut().for_each(|p| *p = 0.0);
        let arcs = self.topology.arcs();
        for (i, &s) in chain.iter().rev().enumerate() {
            if i > 0 {
                let b = self.backoff_weight[s as usize];
                out.iter_mut().for_each(|p| *p *= b);
            }
            for a in arcs.range(s) {
                out[arcs.label(a) as usize] = self.arc_weight[a];
            }
            if self.topology.is_final(s) {
                out[EOS as usize] = self.final_weight[s as usize];
            }
        }
        out[BOS as usize] = 0.0;
    }

    pub fn distribution_at(&self, q: StateId) -> Vec<f64> {
        let mut out = vec![0.0; self.symbols().len()];
        self.fill_distribution(q, &mut out);
        out
    }

    /// Natural-log probability of `sentence` from the initial state, ending with `</s>`.
    pub fn seq_logprob(&self, sentence: &[SymbolId]) -> f64 {
        let mut q = self.topology.initial();
        let mut total = 0.0;
        for &x in sentence {
            let x = if x as usize >= self.symbols().len() || x == BOS { UNK } else { x };
            total += self.prob(q, x).ln();
            q = self.topology.step(q, x);
        }
        total + self.prob(q, EOS).ln()
    }

    pub fn seq_logprob_tokens<S: AsRef<str>>(&self, sentence: &[S]) -> f64 {
        self.seq_logprob(&self.symbols().encode(sentence))
    }

    /// Largest |Σ p(·|q) − 1| over all states.
    pub fn normalization_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut buf = vec![0.0; self.symbols().len()];
        for q in 0..self.topology.num_states() as StateId {
            self.fill_distribution(q, &mut buf);
            let s: f64 = buf.iter().sum();
            worst = worst.max((s - 1.0).abs());
        }
        worst
    }
}

impl LanguageModel for BackoffNGramModel {
    type State = StateId;

    fn symbols(&self) -> &SymbolTable {
        self.topology.symbols()
    }

    fn start(&self) -> StateId {
        self.topology.initial()
    }

    fn advance(&self, state: &mut StateId, token: SymbolId) {
        *state = self.topology.step(*state, token);
    }

    fn distribution(&self, state: &StateId, out: &mut [f64]) {
        self.fill_distribution(*state, out);
    }

    fn prob(&self, state: &StateId, token: SymbolId) -> f64 {
        BackoffNGramModel::prob(self, *state, token)
    }
}

/// Fills backoff weights (and the weights of non-fixed entries) so every state
/// normalizes, processing states parents-first.
///
/// Fixed arcs and fixed final weights keep their values. Every other explicit
/// entry becomes transparent: its weight is the backoff weight times the
/// lower-order probability, so it changes nothing but the topology. At the
/// root, non-fixed entries share the leftover mass uniformly.
pub fn complete_backoff(
    topology: Arc<NGramTopology>,
    mut arc_weight: Vec<f64>,
    mut final_weight: Vec<f64>,
    fixed_arc: &[bool],
    fixed_final: &[bool],
) -> Result<BackoffNGramModel> {
    let n = topology.num_states();
    let arcs = topology.arcs();
    let backoff_weight = vec![1.0; n];
    // Root.
    {
        let r = arcs.range(ROOT);
        let mut fixed_mass = 0.0;
        let mut free = 0usize;
        for a in r.clone() {
            if fixed_arc[a] {
                fixed_mass += arc_weight[a];
            } else {
                free += 1;
            }
        }
        if fixed_final[ROOT as usize] {
            fixed_mass += final_weight[ROOT as usize];
        } else {
            free += 1;
        }
        if free > 0 {
            let share = ((1.0 - fixed_mass).max(0.0)) / free as f64;
            for a in r.clone() {
                if !fixed_arc[a] {
                    arc_weight[a] = share;
                }
            }
            if !fixed_final[ROOT as usize] {
                final_weight[ROOT as usize] = share;
            }
        } else if fixed_mass > 0.0 && (fixed_mass - 1.0).abs() > 1e-12 {
            for a in r {
                arc_weight[a] /= fixed_mass;
            }
            final_weight[ROOT as usize] /= fixed_mass;
        }
    }
    let mut model = BackoffNGramModel {
        topology: topology.clone(),
        arc_weight,
        backoff_weight,
        final_weight,
    };
    for q in 1..n as StateId {
        let parent = topology.backoff_state(q);
        let mut fixed_mass = 0.0;
        let mut fixed_low = 0.0;
        for a in arcs.range(q) {
            if fixed_arc[a] {
                fixed_mass += model.arc_weight[a];
                fixed_low += model.prob(parent, arcs.label(a));
            }
        }
        let is_final = topology.is_final(q);
        if is_final && fixed_final[q as usize] {
            fixed_mass += model.final_weight[q as usize];
            fixed_low += model.prob(parent, EOS);
        }
        let num = 1.0 - fixed_mass;
        let den = 1.0 - fixed_low;
        let bo = if den <= 1e-12 || num <= 1e-15 {
            // Everything readable here is explicit, or nothing is left to back off.
            if fixed_mass > 0.0 {
                let scale = 1.0 / fixed_mass.max(1e-300);
                for a in arcs.range(q) {
                    if fixed_arc[a] {
                        model.arc_weight[a] = (model.arc_weight[a] * scale * (1.0 - 1e-12)).min(1.0);
                    }
                }
                if is_final && fixed_final[q as usize] {
                    model.final_weight[q as usize] *= scale * (1.0 - 1e-12);
                }
            }
            if den <= 1e-12 { 1.0 } else { 1e-12 / den }
        } else {
            num / den
        };
        if !(bo.is_finite() && bo > 0.0) {
            return Err(Error::Numeric(format!("backoff weight {bo} at state {q}")));
        }
        model.backoff_weight[q as usize] = bo;
        for a in arcs.range(q) {
            if !fixed_arc[a] {
                model.arc_weight[a] = (bo * model.prob(parent, arcs.label(a))).min(1.0);
            }
        }
        if is_final && !fixed_final[q as usize] {
            model.final_weight[q as usize] = bo * model.prob(parent, EOS);
        }
    }
    BackoffNGramModel::new(topology, model.arc_weight, model.backoff_weight, model.final_weight)
}
