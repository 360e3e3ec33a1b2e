use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ngram::topology::{BackoffAutomaton, NGramTopology, StateId, ROOT};
use crate::symbols::{EOS, EOS_TOKEN};

/// Expected counts accumulated by the counting step on one automaton.
///
/// `arc[a]` is the teacher mass read on arc `a`, `end[q]` the sentence-end
/// mass read at final state `q`. `origin[q]` is the word-level mass that
/// started at boundary state `q` (one unit per counted prefix on word
/// automata), and `lost[q]` the part of it no arc could read.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedCounts {
    pub arc: Vec<f64>,
    pub end: Vec<f64>,
    pub origin: Vec<f64>,
    pub lost: Vec<f64>,
}

impl ExpectedCounts {
    pub fn zeros(num_states: usize, num_arcs: usize) -> Self {
        ExpectedCounts {
            arc: vec![0.0; num_arcs],
            end: vec![0.0; num_states],
            origin: vec![0.0; num_states],
            lost: vec![0.0; num_states],
        }
    }

    pub fn for_automaton<A: BackoffAutomaton + ?Sized>(a: &A) -> Self {
        Self::zeros(a.num_states(), a.arcs().len())
    }

    pub fn num_states(&self) -> usize {
        self.end.len()
    }

    pub fn add(&mut self, other: &ExpectedCounts) {
        for (a, b) in self.arc.iter_mut().zip(&other.arc) {
            *a += b;
        }
        for q in 0..self.end.len() {
            self.end[q] += other.end[q];
            self.origin[q] += other.origin[q];
            self.lost[q] += other.lost[q];
        }
    }

    pub fn scale(&mut self, f: f64) {
        for v in self
            .arc
            .iter_mut()
            .chain(&mut self.end)
            .chain(&mut self.origin)
            .chain(&mut self.lost)
        {
            *v *= f;
        }
    }

    /// Mass read on arcs and sentence ends.
    pub fn read_total(&self) -> f64 {
        self.arc.iter().sum::<f64>() + self.end.iter().sum::<f64>()
    }

    pub fn origin_total(&self) -> f64 {
        self.origin.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.read_total() == 0.0 && self.origin_total() == 0.0
    }

    /// Checks shape against `a` and that every count is finite and ≥ 0.
    pub fn validate<A: BackoffAutomaton + ?Sized>(&self, a: &A) -> Result<()> {
        if self.arc.len() != a.arcs().len()
            || self.end.len() != a.num_states()
            || self.origin.len() != a.num_states()
            || self.lost.len() != a.num_states()
        {
            return Err(Error::Contract("counts do not match the automaton".into()));
        }
        let all = self.arc.iter().chain(&self.end).chain(&self.origin).chain(&self.lost);
        if let Some(v) = all.into_iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Invalid(format!("count {v} is negative or not finite")));
        }
        Ok(())
    }

    /// Mass that left each state through its backoff edge: origin mass of the
    /// backoff subtree minus the mass read inside it. Tiny negative rounding
    /// residue is clamped to 0.
    pub fn backoff_flow(&self, topology: &NGramTopology) -> Vec<f64> {
        let n = topology.num_states();
        let arcs = topology.arcs();
        let mut net: Vec<f64> = (0..n)
            .map(|q| {
                let read: f64 = arcs.range(q as StateId).map(|a| self.arc[a]).sum::<f64>()
                    + self.end[q]
                    + self.lost[q];
                self.origin[q] - read
            })
            .collect();
        for q in (1..n).rev() {
            let p = topology.backoff_state(q as StateId) as usize;
            net[p] += net[q];
        }
        net[ROOT as usize] = 0.0;
        let scale = self.origin_total().max(1.0);
        net.iter()
            .map(|&v| if v < 0.0 && v > -1e-9 * scale { 0.0 } else { v.max(0.0) })
            .collect()
    }

    /// Debug dump: `context<TAB>label<TAB>count` for every nonzero entry.
    pub fn dump(&self, topology: &NGramTopology) -> String {
        let symbols = topology.symbols();
        let arcs = topology.arcs();
        let mut out = String::new();
        for q in 0..topology.num_states() as StateId {
            let ctx: Vec<&str> = topology.context(q).iter().map(|&x| symbols.token(x)).collect();
            let ctx = ctx.join(" ");
            for a in arcs.range(q) {
                if self.arc[a] != 0.0 {
                    let _ = writeln!(out, "{ctx}\t{}\t{}", symbols.token(arcs.label(a)), self.arc[a]);
                }
            }
            if self.end[q as usize] != 0.0 {
                let _ = writeln!(out, "{ctx}\t{EOS_TOKEN}\t{}", self.end[q as usize]);
            }
        }
        out
    }

    /// Count for n-gram `ctx · x` if it is explicit in `topology`.
    pub fn get(&self, topology: &NGramTopology, ctx: &[u32], x: u32) -> Option<f64> {
        let q = topology.state(ctx)?;
        if x == EOS {
            return topology.is_final(q).then(|| self.end[q as usize]);
        }
        topology.arcs().find(q, x).map(|a| self.arc[a])
    }
}
