use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{CifgConfig, LayerSlots, Layout};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::symbols::{SymbolId, SymbolTable, BOS, EOS};

const LN_EPS: f64 = 1e-5;

/// CIFG LSTM language model with a shared input/output embedding and an
/// output projection. Parameters live in one flat vector described by
/// [`Layout`].
#[derive(Clone, Debug)]
pub struct CifgLstm {
    cfg: CifgConfig,
    layout: Layout,
    symbols: Arc<SymbolTable>,
    params: Vec<f64>,
}

/// Recurrent state: per layer h then c, plus the top layer output.
#[derive(Clone, Debug, PartialEq)]
pub struct CifgState {
    h: Vec<f64>,
    c: Vec<f64>,
    top: Vec<f64>,
}

/// Activations of one layer over a packed batch, each `R × width` row-major.
#[derive(Clone, Debug, Default)]
struct LayerTrace {
    x: Vec<f64>,
    i: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tc: Vec<f64>,
    h: Vec<f64>,
    nhat: Vec<f64>,
    inv_std: Vec<f64>,
    y: Vec<f64>,
}

/// Time-major packing of a batch: sentences sorted by decreasing length,
/// row `offsets[t] + j` holds step t of the j-th sorted sentence. Step 0
/// reads `<s>`; step t > 0 reads token t − 1.
#[derive(Clone, Debug)]
struct Packing {
    active: Vec<usize>,
    offsets: Vec<usize>,
    inputs: Vec<SymbolId>,
    targets: Vec<SymbolId>,
}

impl Packing {
    fn new(batch: &[&[SymbolId]]) -> Self {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        order.sort_by(|&a, &b| batch[b].len().cmp(&batch[a].len()));
        let steps = batch.iter().map(|s| s.len() + 1).max().unwrap_or(0);
        let mut active = Vec::with_capacity(steps);
        let mut offsets = vec![0];
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for t in 0..steps {
            let mut n = 0;
            for &k in &order {
                let s = batch[k];
                if s.len() < t {
                    break;
                }
                inputs.push(if t == 0 { BOS } else { s[t - 1] });
                targets.push(if t < s.len() { s[t] } else { EOS });
                n += 1;
            }
            active.push(n);
            offsets.push(offsets[t] + n);
        }
        Packing { active, offsets, inputs, targets }
    }

    fn rows(&self) -> usize {
        self.inputs.len()
    }
}

/// Forward activations of a packed batch.
#[derive(Clone, Debug)]
struct Trace {
    pack: Packing,
    layers: Vec<LayerTrace>,
}

/// Scratch for one layer step.
struct StepOut<'a> {
    i: &'a mut [f64],
    g: &'a mut [f64],
    o: &'a mut [f64],
    c: &'a mut [f64],
    tc: &'a mut [f64],
    h: &'a mut [f64],
    nhat: &'a mut [f64],
    inv_std: &'a mut f64,
    y: &'a mut [f64],
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// C (m × n) += A (m × k) · B (k × n) with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64], rsc: usize) {
    gemm_beta(m, k, n, a, rsa, csa, b, rsb, csb, 1.0, c, rsc)
}

/// C (m × n) = A (m × k) · B (k × n), overwriting C.
#[allow(clippy::too_many_arguments)]
fn gemm_set(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64], rsc: usize) {
    gemm_beta(m, k, n, a, rsa, csa, b, rsb, csb, 0.0, c, rsc)
}

#[allow(clippy::too_many_arguments)]
fn gemm_beta(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, beta: f64, c: &mut [f64], rsc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa, "gemm: A out of bounds");
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb, "gemm: B out of bounds");
    }
    assert!(c.len() > (m - 1) * rsc + n - 1, "gemm: C out of bounds");
    // SAFETY: callers pass slices covering the strided extents.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa as isize, csa as isize,
            b.as_ptr(), rsb as isize, csb as isize,
            beta,
            c.as_mut_ptr(), rsc as isize, 1,
        );
    }
}

/// exp(x) for x ≤ 0 over a slice, in a form the compiler can vectorize:
/// x = k·ln 2 + r with |r| ≤ ln 2 / 2, exp(r) by a degree-13 Taylor
/// polynomial, 2^k from exponent bits. Slices reaching below −700 use
/// `f64::exp`.
fn exp_nonpositive(xs: &mut [f64]) {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    const FLOOR: f64 = -700.0;
    if xs.iter().any(|x| !(*x >= FLOOR)) {
        xs.iter_mut().for_each(|x| *x = x.exp());
        return;
    }
    for x in xs.iter_mut() {
        let v = *x;
        let t = v * LOG2E + SHIFTER;
        let k = t - SHIFTER;
        let r = (v - k * LN2_HI) - k * LN2_LO;
        let mut p = 1.0 / 6_227_020_800.0;
        p = p * r + 1.0 / 479_001_600.0;
        p = p * r + 1.0 / 39_916_800.0;
        p = p * r + 1.0 / 3_628_800.0;
        p = p * r + 1.0 / 362_880.0;
        p = p * r + 1.0 / 40_320.0;
        p = p * r + 1.0 / 5_040.0;
        p = p * r + 1.0 / 720.0;
        p = p * r + 1.0 / 120.0;
        p = p * r + 1.0 / 24.0;
        p = p * r + 1.0 / 6.0;
        p = p * r + 0.5;
        p = p * r + 1.0;
        p = p * r + 1.0;
        *x = p * f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    }
}

/// Reduces `xs` with eight interleaved accumulators, combined pairwise.
fn reduce8(xs: &[f64], init: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = [init; 8];
    let chunks = xs.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for k in 0..8 {
            acc[k] = f(acc[k], c[k]);
        }
    }
    for (k, &x) in rest.iter().enumerate() {
        acc[k] = f(acc[k], x);
    }
    let a = [f(acc[0], acc[4]), f(acc[1], acc[5]), f(acc[2], acc[6]), f(acc[3], acc[7])];
    f(f(a[0], a[2]), f(a[1], a[3]))
}

/// In-place softmax over ids other than `<s>`, which gets zero.
fn softmax_row(row: &mut [f64]) {
    row[BOS as usize] = row[EOS as usize];
    let max = reduce8(row, f64::NEG_INFINITY, f64::max);
    for v in row.iter_mut() {
        *v -= max;
    }
    exp_nonpositive(row);
    row[BOS as usize] = 0.0;
    let inv = 1.0 / reduce8(row, 0.0, |a, b| a + b);
    for v in row.iter_mut() {
        *v *= inv;
    }
}

impl CifgLstm {
    /// All-zero parameters; every conditional is uniform.
    pub fn zeros(cfg: CifgConfig, symbols: Arc<SymbolTable>) -> Result<Self> {
        cfg.validate()?;
        if cfg.vocab != symbols.len() {
            return Err(Error::Config(format!(
                "model vocab {} does not match symbol table size {}",
                cfg.vocab,
                symbols.len()
            )));
        }
        let layout = Layout::new(&cfg);
        let params = vec![0.0; layout.total];
        Ok(CifgLstm { cfg, layout, symbols, params })
    }

    /// Glorot-uniform weights from `seed` (embedding rows of unit expected
    /// norm), biases zero, norm gains one.
    pub fn init(cfg: CifgConfig, symbols: Arc<SymbolTable>, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(cfg, symbols)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, e) = (m.cfg.hidden, m.cfg.embed);
        let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut blocks = vec![(m.layout.embed.clone(), (3.0 / e as f64).sqrt())];
        for s in &m.layout.layers {
            blocks.push((s.w.clone(), glorot(s.d_in, h)));
            blocks.push((s.u.clone(), glorot(h / m.cfg.groups, h)));
        }
        blocks.push((m.layout.proj.clone(), glorot(h, e)));
        for (range, r) in blocks {
            for p in &mut m.params[range] {
                *p = rng.gen_range(-r..r);
            }
        }
        for s in &m.layout.layers {
            if let Some(g) = &s.ln_gain {
                m.params[g.clone()].fill(1.0);
            }
        }
        Ok(m)
    }

    pub fn from_params(cfg: CifgConfig, symbols: Arc<SymbolTable>, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(cfg, symbols)?;
        if params.len() != m.layout.total {
            return Err(Error::Invalid(format!(
                "expected {} parameters, got {}",
                m.layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &CifgConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn symbols_arc(&self) -> &Arc<SymbolTable> {
        &self.symbols
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn embedding(&self, id: SymbolId) -> &[f64] {
        let e = self.cfg.embed;
        let base = self.layout.embed.start + id as usize * e;
        &self.params[base..base + e]
    }

    fn layer_step(&self, s: &LayerSlots, residual: bool, x: &[f64], h_prev: &[f64], c_prev: &[f64], out: StepOut<'_>) {
        let h = self.cfg.hidden;
        let k = self.cfg.groups;
        let hs = h / k;
        let p = &self.params;
        let mut a = p[s.b.clone()].to_vec();
        let w = &p[s.w.clone()];
        for (r, ar) in a.iter_mut().enumerate() {
            let row = &w[r * s.d_in..(r + 1) * s.d_in];
            *ar += row.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>();
        }
        let u = &p[s.u.clone()];
        for gate in 0..3 {
            for grp in 0..k {
                let block = &u[(gate * k + grp) * hs * hs..(gate * k + grp + 1) * hs * hs];
                let hp = &h_prev[grp * hs..(grp + 1) * hs];
                for r in 0..hs {
                    let row = &block[r * hs..(r + 1) * hs];
                    a[gate * h + grp * hs + r] += row.iter().zip(hp).map(|(uv, hv)| uv * hv).sum::<f64>();
                }
            }
        }
        for j in 0..h {
            let i = sigmoid(a[j]);
            let g = a[h + j].tanh();
            let o = sigmoid(a[2 * h + j]);
            let c = (1.0 - i) * c_prev[j] + i * g;
            let tc = c.tanh();
            out.i[j] = i;
            out.g[j] = g;
            out.o[j] = o;
            out.c[j] = c;
            out.tc[j] = tc;
            out.h[j] = o * tc;
        }
        if let (Some(gain), Some(bias)) = (&s.ln_gain, &s.ln_bias) {
            let mean = out.h.iter().sum::<f64>() / h as f64;
            let var = out.h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            *out.inv_std = inv;
            for j in 0..h {
                out.nhat[j] = (out.h[j] - mean) * inv;
                out.y[j] = p[gain.start + j] * out.nhat[j] + p[bias.start + j];
            }
        } else {
            out.y.copy_from_slice(out.h);
        }
        if residual {
            for (y, xv) in out.y.iter_mut().zip(x) {
                *y += xv;
            }
        }
    }

    fn residual(&self, layer: usize) -> bool {
        self.cfg.residual && layer > 0
    }

    /// Runs the recurrence over a packed batch.
    fn trace(&self, batch: &[&[SymbolId]]) -> Trace {
        let pack = Packing::new(batch);
        let r = pack.rows();
        let (h, k) = (self.cfg.hidden, self.cfg.groups);
        let hs = h / k;
        let p = &self.params;
        let mut layers: Vec<LayerTrace> = Vec::with_capacity(self.cfg.layers);
        for (l, s) in self.layout.layers.iter().enumerate() {
            let d_in = s.d_in;
            let x = if l == 0 {
                let mut x = Vec::with_capacity(r * d_in);
                for &tok in &pack.inputs {
                    x.extend_from_slice(self.embedding(tok));
                }
                x
            } else {
                layers[l - 1].y.clone()
            };
            // a = b + x·Wᵀ, then the recurrent term step by step.
            let mut a = Vec::with_capacity(r * 3 * h);
            for _ in 0..r {
                a.extend_from_slice(&p[s.b.clone()]);
            }
            gemm(r, d_in, 3 * h, &x, d_in, 1, &p[s.w.clone()], 1, d_in, &mut a, 3 * h);
            let mut tr = LayerTrace {
                x,
                i: vec![0.0; r * h],
                g: vec![0.0; r * h],
                o: vec![0.0; r * h],
                c: vec![0.0; r * h],
                tc: vec![0.0; r * h],
                h: vec![0.0; r * h],
                nhat: vec![0.0; r * h],
                inv_std: vec![0.0; r],
                y: vec![0.0; r * h],
            };
            let u = &p[s.u.clone()];
            for t in 0..pack.active.len() {
                let (off, n) = (pack.offsets[t], pack.active[t]);
                if t > 0 {
                    let prev = pack.offsets[t - 1];
                    for gate in 0..3 {
                        for grp in 0..k {
                            let blk = &u[(gate * k + grp) * hs * hs..(gate * k + grp + 1) * hs * hs];
                            gemm(n, hs, hs, &tr.h[prev * h + grp * hs..], h, 1, blk, 1, hs, &mut a[off * 3 * h + gate * h + grp * hs..], 3 * h);
                        }
                    }
                }
                for j in 0..n {
                    let row = off + j;
                    let c_prev = if t == 0 { None } else { Some(pack.offsets[t - 1] + j) };
                    self.cell(s, l, row, c_prev, &a[row * 3 * h..(row + 1) * 3 * h], &mut tr);
                }
            }
            layers.push(tr);
        }
        Trace { pack, layers }
    }

    /// Gate nonlinearities, cell update, norm and residual for one row.
    fn cell(&self, s: &LayerSlots, l: usize, row: usize, prev: Option<usize>, a: &[f64], tr: &mut LayerTrace) {
        let h = self.cfg.hidden;
        let p = &self.params;
        let base = row * h;
        for j in 0..h {
            let i = sigmoid(a[j]);
            let g = a[h + j].tanh();
            let o = sigmoid(a[2 * h + j]);
            let cp = prev.map_or(0.0, |q| tr.c[q * h + j]);
            let c = (1.0 - i) * cp + i * g;
            let tc = c.tanh();
            tr.i[base + j] = i;
            tr.g[base + j] = g;
            tr.o[base + j] = o;
            tr.c[base + j] = c;
            tr.tc[base + j] = tc;
            tr.h[base + j] = o * tc;
        }
        let hrow = base..base + h;
        if let (Some(gain), Some(bias)) = (&s.ln_gain, &s.ln_bias) {
            let hv = &tr.h[hrow.clone()];
            let mean = hv.iter().sum::<f64>() / h as f64;
            let var = hv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            tr.inv_std[row] = inv;
            for j in 0..h {
                let n = (tr.h[base + j] - mean) * inv;
                tr.nhat[base + j] = n;
                tr.y[base + j] = p[gain.start + j] * n + p[bias.start + j];
            }
        } else {
            let (hv, yv) = (&tr.h, &mut tr.y);
            yv[hrow.clone()].copy_from_slice(&hv[hrow]);
        }
        if self.residual(l) {
            for j in 0..h {
                tr.y[base + j] += tr.x[base + j];
            }
        }
    }

    /// Projected outputs `rows × E` for the first `rows` positions of `tr`.
    fn project(&self, top: &[f64], rows: usize, out: &mut [f64]) {
        let (e, h) = (self.cfg.embed, self.cfg.hidden);
        let pm = &self.params[self.layout.proj.clone()];
        // out (rows × E) += top (rows × H) · Pᵀ (H × E)
        gemm(rows, h, e, top, h, 1, pm, 1, h, out, e);
    }

    /// Softmax rows `rows × V` from projected outputs `rows × E`.
    fn logits(&self, proj: &[f64], rows: usize, out: &mut [f64]) {
        let (v, e) = (self.cfg.vocab, self.cfg.embed);
        let em = &self.params[self.layout.embed.clone()];
        // out (rows × V) = proj (rows × E) · Eᵀ (E × V)
        gemm_set(rows, e, v, proj, e, 1, em, 1, e, out, v);
        for r in 0..rows {
            softmax_row(&mut out[r * v..(r + 1) * v]);
        }
    }

    fn step_state(&self, state: &mut CifgState, token: SymbolId) {
        let h = self.cfg.hidden;
        let mut x = self.embedding(token).to_vec();
        let (mut i, mut g, mut o, mut tc, mut nhat) = (vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h], vec![0.0; h]);
        let mut inv = 0.0;
        for (l, s) in self.layout.layers.iter().enumerate() {
            let hp = state.h[l * h..(l + 1) * h].to_vec();
            let cp = state.c[l * h..(l + 1) * h].to_vec();
            let mut y = vec![0.0; h];
            let (hs, cs) = (&mut state.h[l * h..(l + 1) * h], &mut state.c[l * h..(l + 1) * h]);
            self.layer_step(
                s,
                self.residual(l),
                &x,
                &hp,
                &cp,
                StepOut { i: &mut i, g: &mut g, o: &mut o, c: cs, tc: &mut tc, h: hs, nhat: &mut nhat, inv_std: &mut inv, y: &mut y },
            );
            x = y;
        }
        state.top = x;
    }

    /// Mean per-token cross-entropy (sentence end included) over `batch`.
    pub fn loss(&self, batch: &[Vec<SymbolId>]) -> Result<f64> {
        Ok(self.loss_and_grad(batch, false)?.0)
    }

    /// Mean per-token cross-entropy and its gradient over `batch`.
    pub fn loss_grad(&self, batch: &[Vec<SymbolId>]) -> Result<(f64, Vec<f64>)> {
        self.loss_and_grad(batch, true)
    }

    fn check_tokens(&self, batch: &[Vec<SymbolId>]) -> Result<()> {
        let v = self.cfg.vocab;
        for s in batch {
            if let Some(&x) = s.iter().find(|&&x| x as usize >= v || x == BOS || x == EOS) {
                return Err(Error::Invalid(format!("token id {x} cannot appear inside a sentence")));
            }
        }
        Ok(())
    }

    fn loss_and_grad(&self, batch: &[Vec<SymbolId>], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty training batch".into()));
        }
        self.check_tokens(batch)?;
        let (v, e, h) = (self.cfg.vocab, self.cfg.embed, self.cfg.hidden);
        let refs: Vec<&[SymbolId]> = batch.iter().map(|s| s.as_slice()).collect();
        let tr = self.trace(&refs);
        let rows = tr.pack.rows();
        let top = &tr.layers.last().expect("at least one layer").y;
        let mut proj = vec![0.0; rows * e];
        self.project(top, rows, &mut proj);
        let mut probs = vec![0.0; rows * v];
        self.logits(&proj, rows, &mut probs);
        let targets = &tr.pack.targets;
        let mut loss = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            loss -= probs[r * v + y as usize].ln();
        }
        let loss = loss / rows as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss over {} sentences", batch.len())));
        }
        if !want_grad {
            return Ok((loss, Vec::new()));
        }
        let mut grad = vec![0.0; self.layout.total];
        // dlogits = (p − onehot) / rows
        let scale = 1.0 / rows as f64;
        let mut dlog = probs;
        for (r, &y) in targets.iter().enumerate() {
            dlog[r * v + y as usize] -= 1.0;
            for d in &mut dlog[r * v..(r + 1) * v] {
                *d *= scale;
            }
        }
        let em = &self.params[self.layout.embed.clone()];
        // dE (V × E) += dlogᵀ (V × rows) · proj (rows × E)
        gemm(v, rows, e, &dlog, 1, v, &proj, e, 1, &mut grad[self.layout.embed.clone()], e);
        // dproj (rows × E) = dlog (rows × V) · E (V × E)
        let mut dproj = vec![0.0; rows * e];
        gemm(rows, v, e, &dlog, v, 1, em, e, 1, &mut dproj, e);
        drop(dlog);
        // dP (E × H) += dprojᵀ (E × rows) · top (rows × H)
        gemm(e, rows, h, &dproj, 1, e, top, h, 1, &mut grad[self.layout.proj.clone()], h);
        // dtop (rows × H) = dproj (rows × E) · P (E × H)
        let mut dtop = vec![0.0; rows * h];
        let pm = &self.params[self.layout.proj.clone()];
        gemm(rows, e, h, &dproj, e, 1, pm, h, 1, &mut dtop, h);
        self.backward(&tr, dtop, &mut grad);
        Ok((loss, grad))
    }

    /// Backpropagation through time over a packed batch given d(top output).
    fn backward(&self, tr: &Trace, dtop: Vec<f64>, grad: &mut [f64]) {
        let (h, k) = (self.cfg.hidden, self.cfg.groups);
        let hs = h / k;
        let pack = &tr.pack;
        let r = pack.rows();
        let p = &self.params;
        let mut dy = dtop;
        for l in (0..self.cfg.layers).rev() {
            let s = &self.layout.layers[l];
            let lt = &tr.layers[l];
            let d_in = s.d_in;
            let mut dx = vec![0.0; r * d_in];
            if self.residual(l) {
                dx.copy_from_slice(&dy);
            }
            // Recurrent gradients flowing into h and c of each row.
            let mut dh_rec = vec![0.0; r * h];
            let mut dc_rec = vec![0.0; r * h];
            let mut da = vec![0.0; r * 3 * h];
            let mut dh = vec![0.0; h];
            let mut dn = vec![0.0; h];
            let u = &p[s.u.clone()];
            for t in (0..pack.active.len()).rev() {
                let (off, n) = (pack.offsets[t], pack.active[t]);
                for j in 0..n {
                    let row = off + j;
                    let base = row * h;
                    let dyt = &dy[base..base + h];
                    if let (Some(gain), Some(bias)) = (&s.ln_gain, &s.ln_bias) {
                        let nhat = &lt.nhat[base..base + h];
                        for q in 0..h {
                            grad[gain.start + q] += dyt[q] * nhat[q];
                            grad[bias.start + q] += dyt[q];
                            dn[q] = dyt[q] * p[gain.start + q];
                        }
                        let mean_dn = dn.iter().sum::<f64>() / h as f64;
                        let mean_dnn = dn.iter().zip(nhat).map(|(a, b)| a * b).sum::<f64>() / h as f64;
                        for q in 0..h {
                            dh[q] = lt.inv_std[row] * (dn[q] - mean_dn - nhat[q] * mean_dnn) + dh_rec[base + q];
                        }
                    } else {
                        for q in 0..h {
                            dh[q] = dyt[q] + dh_rec[base + q];
                        }
                    }
                    let prev = if t == 0 { None } else { Some(pack.offsets[t - 1] + j) };
                    let dar = &mut da[row * 3 * h..(row + 1) * 3 * h];
                    for q in 0..h {
                        let idx = base + q;
                        let (i, g, o, tc) = (lt.i[idx], lt.g[idx], lt.o[idx], lt.tc[idx]);
                        let c_prev = prev.map_or(0.0, |pr| lt.c[pr * h + q]);
                        let d_o = dh[q] * tc;
                        let dc = dh[q] * o * (1.0 - tc * tc) + dc_rec[idx];
                        if let Some(pr) = prev {
                            dc_rec[pr * h + q] = dc * (1.0 - i);
                        }
                        dar[q] = dc * (g - c_prev) * i * (1.0 - i);
                        dar[h + q] = dc * i * (1.0 - g * g);
                        dar[2 * h + q] = d_o * o * (1.0 - o);
                    }
                }
                if t > 0 {
                    let prev = pack.offsets[t - 1];
                    for gate in 0..3 {
                        for grp in 0..k {
                            let blk = &u[(gate * k + grp) * hs * hs..(gate * k + grp + 1) * hs * hs];
                            // dh_prev (n × hs) += da_blk (n × hs) · U_blk (hs × hs)
                            gemm(n, hs, hs, &da[off * 3 * h + gate * h + grp * hs..], 3 * h, 1, blk, hs, 1, &mut dh_rec[prev * h + grp * hs..], h);
                        }
                    }
                }
            }
            // Shifted hidden states: row (t, j) holds h of (t − 1, j).
            let mut h_shift = vec![0.0; r * h];
            for t in 1..pack.active.len() {
                let (off, prev, n) = (pack.offsets[t], pack.offsets[t - 1], pack.active[t]);
                h_shift[off * h..(off + n) * h].copy_from_slice(&lt.h[prev * h..(prev + n) * h]);
            }
            for row in da.chunks_exact(3 * h) {
                for (gb, d) in grad[s.b.clone()].iter_mut().zip(row) {
                    *gb += d;
                }
            }
            // dW (3H × d_in) += daᵀ · x ; dx (R × d_in) += da · W
            gemm(3 * h, r, d_in, &da, 1, 3 * h, &lt.x, d_in, 1, &mut grad[s.w.clone()], d_in);
            gemm(r, 3 * h, d_in, &da, 3 * h, 1, &p[s.w.clone()], d_in, 1, &mut dx, d_in);
            for gate in 0..3 {
                for grp in 0..k {
                    let at = s.u.start + (gate * k + grp) * hs * hs;
                    // dU_blk (hs × hs) += da_blkᵀ (hs × R) · h_shift_blk (R × hs)
                    gemm(hs, r, hs, &da[gate * h + grp * hs..], 1, 3 * h, &h_shift[grp * hs..], h, 1, &mut grad[at..at + hs * hs], hs);
                }
            }
            if l == 0 {
                let e = self.cfg.embed;
                for (row, &tok) in pack.inputs.iter().enumerate() {
                    let base = self.layout.embed.start + tok as usize * e;
                    for c in 0..e {
                        grad[base + c] += dx[row * e + c];
                    }
                }
            } else {
                dy = dx;
            }
        }
    }
}

impl LanguageModel for CifgLstm {
    type State = CifgState;

    fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    fn start(&self) -> CifgState {
        let n = self.cfg.layers * self.cfg.hidden;
        let mut st = CifgState { h: vec![0.0; n], c: vec![0.0; n], top: vec![0.0; self.cfg.hidden] };
        self.step_state(&mut st, BOS);
        st
    }

    fn advance(&self, state: &mut CifgState, token: SymbolId) {
        self.step_state(state, token);
    }

    fn distribution(&self, state: &CifgState, out: &mut [f64]) {
        let mut proj = vec![0.0; self.cfg.embed];
        self.project(&state.top, 1, &mut proj);
        self.logits(&proj, 1, out);
    }

    fn prefix_distributions(&self, sentence: &[SymbolId], rows: usize, out: &mut [f64]) {
        let e = self.cfg.embed;
        let tr = self.trace(&[&sentence[..rows.saturating_sub(1).min(sentence.len())]]);
        let top = &tr.layers.last().expect("at least one layer").y;
        let mut proj = vec![0.0; rows * e];
        self.project(top, rows, &mut proj);
        self.logits(&proj, rows, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(words: &[&str]) -> Arc<SymbolTable> {
        Arc::new(SymbolTable::from_tokens(words.iter().copied()))
    }

    #[test]
    fn fast_exp_matches_std() {
        let mut xs: Vec<f64> = (0..20_000).map(|i| -(i as f64) * 0.0371).collect();
        xs.extend([0.0, -1e-300, -699.9, -700.1, -745.0, -800.0, f64::NEG_INFINITY]);
        let want: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        exp_nonpositive(&mut xs);
        for (a, b) in xs.iter().zip(&want) {
            assert!((a - b).abs() <= 4e-16 * b.abs() || a == b, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let sym = table(&["a", "b", "c"]);
        let m = CifgLstm::zeros(CifgConfig::desk(sym.len()), sym.clone()).unwrap();
        let mut out = vec![0.0; sym.len()];
        let st = m.start();
        m.distribution(&st, &mut out);
        assert_eq!(out[BOS as usize], 0.0);
        for &p in &out[1..] {
            assert!((p - 1.0 / (sym.len() - 1) as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn batched_prefixes_match_stepwise() {
        let sym = table(&["a", "b", "c", "d"]);
        let cfg = CifgConfig { vocab: sym.len(), layers: 2, hidden: 6, embed: 4, layer_norm: true, residual: true, groups: 2 };
        let m = CifgLstm::init(cfg, sym.clone(), 3).unwrap();
        let s = vec![3, 4, 5, 3];
        let v = sym.len();
        let mut batched = vec![0.0; 5 * v];
        m.prefix_distributions(&s, 5, &mut batched);
        let mut st = m.start();
        let mut row = vec![0.0; v];
        for i in 0..5 {
            m.distribution(&st, &mut row);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (a, b) in row.iter().zip(&batched[i * v..(i + 1) * v]) {
                assert!((a - b).abs() < 1e-13);
            }
            if i < 4 {
                m.advance(&mut st, s[i]);
            }
        }
    }

    #[test]
    fn loss_matches_sentence_logprob() {
        let sym = table(&["a", "b"]);
        let m = CifgLstm::init(CifgConfig::desk(sym.len()), sym.clone(), 1).unwrap();
        let batch = vec![vec![3, 4], vec![4]];
        let total: f64 = batch.iter().map(|s| -crate::lm::sentence_logprob(&m, s)).sum();
        let loss = m.loss(&batch).unwrap();
        assert!((loss - total / 5.0).abs() < 1e-12);
    }
}
