use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ngram::counts::ExpectedCounts;
use crate::ngram::model::{complete_backoff, BackoffNGramModel};
use crate::ngram::topology::{BackoffAutomaton, NGramTopology, StateId, ROOT};

/// Settings for [`kl_minimize`].
#[derive(Clone, Debug, PartialEq)]
pub struct KlConfig {
    /// Stop once the relative objective improvement drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest backoff mass kept at a non-root state.
    pub min_backoff: f64,
    /// Smallest probability kept for a root entry.
    pub root_floor: f64,
}

impl Default for KlConfig {
    fn default() -> Self {
        KlConfig { tol: 1e-8, max_iter: 200, min_backoff: 1e-10, root_floor: 1e-10 }
    }
}

/// Objective value after the initial solve and after each iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KlReport {
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits backoff-model weights on `topology` minimizing
/// F = −Σ_q Σ_x C(x, q) · log p(x | q) under backoff semantics.
///
/// With Φ_s the count mass leaving state s through its backoff edge,
/// F = −Σ C log w − Σ_s Φ_s log β_s, and β_s = v_s / (1 − Σ_{x∈L[s]} w_parent[x])
/// where v_s is the backoff mass at s. The last factor couples each state to
/// its parent through a concave term, so this is a difference of convex
/// functions. Each iteration linearizes that term at the current parent
/// weights (g_x = Σ_children Φ_c / (1 − Σ_{L[c]} w)) and solves every state's
/// convex subproblem in closed form up to one scalar:
/// w_x = C_x / (μ − g_x), v = Φ / μ, with μ fixed by normalization.
/// The objective never increases between iterations.
///
/// Arcs with zero count and states never visited end up transparent (they
/// repeat the backoff estimate). All-zero counts give the uniform model.
pub fn kl_minimize(
    topology: Arc<NGramTopology>,
    counts: &ExpectedCounts,
    cfg: &KlConfig,
) -> Result<(BackoffNGramModel, KlReport)> {
    counts.validate(&*topology)?;
    if !(cfg.tol > 0.0 && cfg.min_backoff > 0.0 && cfg.root_floor > 0.0) {
        return Err(Error::Config("KL tolerances must be positive".into()));
    }
    let n = topology.num_states();
    let arcs = topology.arcs();
    if counts.read_total() == 0.0 {
        let m = complete_backoff(
            topology.clone(),
            vec![0.0; arcs.len()],
            vec![0.0; n],
            &vec![false; arcs.len()],
            &vec![false; n],
        )?;
        return Ok((m, KlReport { converged: true, ..Default::default() }));
    }
    let phi = counts.backoff_flow(&topology);
    let parent_arc = topology.parent_arcs();
    let children = topology.children();
    let mut st = Solver {
        topo: &topology,
        counts,
        phi: &phi,
        w: vec![0.0; arcs.len()],
        f: vec![0.0; n],
        v: vec![0.0; n],
        mu: vec![0.0; n],
        g: vec![0.0; arcs.len()],
        g_end: vec![0.0; n],
        cfg,
    };
    for q in 0..n as StateId {
        st.solve(q);
    }
    // States whose children can back off into them.
    let coupled: Vec<StateId> = (0..n as StateId)
        .filter(|&q| children[q as usize].iter().any(|&c| phi[c as usize] > 0.0))
        .collect();
    let mut report = KlReport::default();
    let mut obj = st.objective(&parent_arc);
    report.objective.push(obj);
    if coupled.is_empty() {
        report.converged = true;
    }
    while !report.converged && report.iterations < cfg.max_iter {
        st.linearize(&coupled, &children, &parent_arc);
        for &q in &coupled {
            st.solve(q);
        }
        report.iterations += 1;
        let next = st.objective(&parent_arc);
        report.objective.push(next);
        if !next.is_finite() {
            return Err(Error::Numeric("KL objective is not finite".into()));
        }
        let gain = obj - next;
        obj = next;
        if gain <= cfg.tol * obj.abs().max(1.0) {
            report.converged = true;
        }
    }
    let model = st.finish()?;
    Ok((model, report))
}

struct Solver<'a> {
    topo: &'a NGramTopology,
    counts: &'a ExpectedCounts,
    phi: &'a [f64],
    w: Vec<f64>,
    f: Vec<f64>,
    v: Vec<f64>,
    mu: Vec<f64>,
    g: Vec<f64>,
    g_end: Vec<f64>,
    cfg: &'a KlConfig,
}

impl Solver<'_> {
    /// 1 − Σ_{x ∈ L[c]} w_parent[x], the parent mass a child cannot back off to.
    fn free_mass(&self, c: StateId, parent_arc: &[u32]) -> f64 {
        let arcs = self.topo.arcs();
        let p = self.topo.backoff_state(c);
        let mut low: f64 = arcs.range(c).map(|a| self.w[parent_arc[a] as usize]).sum();
        if self.topo.is_final(c) {
            low += self.f[p as usize];
        }
        (1.0 - low).max(1e-300)
    }

    fn linearize(&mut self, coupled: &[StateId], children: &[Vec<StateId>], parent_arc: &[u32]) {
        let arcs = self.topo.arcs();
        for &q in coupled {
            for a in arcs.range(q) {
                self.g[a] = 0.0;
            }
            self.g_end[q as usize] = 0.0;
            for &c in &children[q as usize] {
                let phi = self.phi[c as usize];
                if phi <= 0.0 {
                    continue;
                }
                let slope = phi / self.free_mass(c, parent_arc);
                for a in arcs.range(c) {
                    self.g[parent_arc[a] as usize] += slope;
                }
                if self.topo.is_final(c) {
                    self.g_end[q as usize] += slope;
                }
            }
        }
    }

    /// Exact minimizer of state q's linearized subproblem.
    fn solve(&mut self, q: StateId) {
        let arcs = self.topo.arcs();
        let r = arcs.range(q);
        let qi = q as usize;
        let is_final = self.topo.is_final(q);
        let c_end = if is_final { self.counts.end[qi] } else { 0.0 };
        let phi = if q == ROOT { 0.0 } else { self.phi[qi] };
        let total: f64 = r.clone().map(|a| self.counts.arc[a]).sum::<f64>() + c_end + phi;
        if total == 0.0 {
            for a in r {
                self.w[a] = 0.0;
            }
            self.f[qi] = 0.0;
            self.v[qi] = 1.0;
            return;
        }
        // Largest slope among counted entries, and among uncounted ones.
        let mut lo: f64 = 0.0;
        let mut zero_best: Option<(f64, Option<usize>)> = None;
        let mut consider = |c: f64, g: f64, id: Option<usize>| {
            if c > 0.0 {
                lo = lo.max(g);
            } else if g > 0.0 && zero_best.is_none_or(|(b, _)| g > b) {
                zero_best = Some((g, id));
            }
        };
        for a in r.clone() {
            consider(self.counts.arc[a], self.g[a], Some(a));
        }
        if is_final {
            consider(c_end, self.g_end[qi], None);
        }
        let h = |mu: f64| -> (f64, f64) {
            let mut val = if phi > 0.0 { phi / mu } else { 0.0 };
            let mut der = if phi > 0.0 { -phi / (mu * mu) } else { 0.0 };
            for a in r.clone() {
                let c = self.counts.arc[a];
                if c > 0.0 {
                    let d = mu - self.g[a];
                    val += c / d;
                    der -= c / (d * d);
                }
            }
            if c_end > 0.0 {
                let d = mu - self.g_end[qi];
                val += c_end / d;
                der -= c_end / (d * d);
            }
            (val - 1.0, der)
        };
        // h is decreasing on (lo, ∞), +∞ at lo (or total at lo = 0), ≤ 0 at lo + total.
        let mut a_lo = lo;
        let mut a_hi = lo + total;
        let mut mu = if self.mu[qi] > a_lo && self.mu[qi] < a_hi { self.mu[qi] } else { lo + total };
        for _ in 0..200 {
            let (val, der) = h(mu);
            if val == 0.0 {
                break;
            }
            if val > 0.0 {
                a_lo = mu;
            } else {
                a_hi = mu;
            }
            let newton = mu - val / der;
            let next = if der < 0.0 && newton > a_lo && newton < a_hi { newton } else { 0.5 * (a_lo + a_hi) };
            if (next - mu).abs() <= 1e-15 * mu.abs().max(1e-300) {
                mu = next;
                break;
            }
            mu = next;
        }
        // An uncounted entry with a steeper slope absorbs the leftover mass.
        let mut leftover = None;
        if let Some((gz, id)) = zero_best {
            if gz >= mu {
                mu = gz;
                leftover = Some(id);
            }
        }
        self.mu[qi] = mu;
        let mut used = 0.0;
        for a in r.clone() {
            let c = self.counts.arc[a];
            self.w[a] = if c > 0.0 { c / (mu - self.g[a]) } else { 0.0 };
            used += self.w[a];
        }
        self.f[qi] = if c_end > 0.0 { c_end / (mu - self.g_end[qi]) } else { 0.0 };
        used += self.f[qi];
        let mut v = if phi > 0.0 { phi / mu } else { 0.0 };
        used += v;
        if let Some(id) = leftover {
            let rest = (1.0 - used).max(0.0);
            match id {
                Some(a) => self.w[a] = rest,
                None => self.f[qi] = rest,
            }
        }
        // Keep a little backoff mass so β stays positive.
        if q != ROOT && v < self.cfg.min_backoff {
            let others = 1.0 - v;
            let scale = (1.0 - self.cfg.min_backoff) / others.max(1e-300);
            for a in r {
                self.w[a] *= scale;
            }
            self.f[qi] *= scale;
            v = self.cfg.min_backoff;
        }
        self.v[qi] = v;
    }

    fn objective(&self, parent_arc: &[u32]) -> f64 {
        let arcs = self.topo.arcs();
        let mut obj = 0.0;
        for q in 0..self.topo.num_states() as StateId {
            let qi = q as usize;
            for a in arcs.range(q) {
                let c = self.counts.arc[a];
                if c > 0.0 {
                    obj -= c * self.w[a].ln();
                }
            }
            if self.topo.is_final(q) && self.counts.end[qi] > 0.0 {
                obj -= self.counts.end[qi] * self.f[qi].ln();
            }
            if q != ROOT && self.phi[qi] > 0.0 {
                let beta = self.v[qi] / self.free_mass(q, parent_arc);
                obj -= self.phi[qi] * beta.ln();
            }
        }
        obj
    }

    fn finish(mut self) -> Result<BackoffNGramModel> {
        let arcs = self.topo.arcs();
        let n = self.topo.num_states();
        // Root: every entry keeps at least the floor.
        let r = arcs.range(ROOT);
        let zeros = r.clone().filter(|&a| self.w[a] <= 0.0).count() + usize::from(self.f[0] <= 0.0);
        if zeros > 0 {
            let keep = 1.0 - zeros as f64 * self.cfg.root_floor;
            let sum: f64 = r.clone().map(|a| self.w[a]).sum::<f64>() + self.f[0];
            let scale = if sum > 0.0 { keep / sum } else { 0.0 };
            for a in r {
                self.w[a] = if self.w[a] > 0.0 { self.w[a] * scale } else { self.cfg.root_floor };
            }
            self.f[0] = if self.f[0] > 0.0 { self.f[0] * scale } else { self.cfg.root_floor };
        }
        let fixed_arc: Vec<bool> = self.w.iter().map(|&w| w > 0.0).collect();
        let fixed_final: Vec<bool> = (0..n).map(|q| self.f[q] > 0.0).collect();
        complete_backoff(Arc::new(self.topo.clone()), self.w, self.f, &fixed_arc, &fixed_final)
    }
}
