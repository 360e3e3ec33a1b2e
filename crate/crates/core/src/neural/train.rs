use serde::{Deserialize, Serialize};

use super::cifg::CifgLstm;
use crate::error::{Error, Result};
use crate::symbols::SymbolId;

/// Nesterov-momentum SGD settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 0.5, momentum: 0.9 }
    }
}

/// Optimizer state carried alongside a model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub momentum: Vec<f64>,
    pub step: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(model: &CifgLstm, seed: u64) -> Self {
        TrainState { momentum: vec![0.0; model.num_params()], step: 0, seed }
    }
}

/// One Nesterov step on the mean per-token cross-entropy of `batch`:
/// buf ← μ·buf + g, θ ← θ − lr·(g + μ·buf). Returns the pre-step loss.
pub fn train_batch(model: &mut CifgLstm, state: &mut TrainState, batch: &[Vec<SymbolId>], sgd: SgdConfig) -> Result<f64> {
    if state.momentum.len() != model.num_params() {
        return Err(Error::Contract("momentum buffer does not match the parameter count".into()));
    }
    let (loss, grad) = model.loss_grad(batch)?;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at parameter {i} (loss {loss})")));
    }
    let mu = sgd.momentum;
    for ((p, b), g) in model.params_mut().iter_mut().zip(state.momentum.iter_mut()).zip(&grad) {
        *b = mu * *b + g;
        *p -= sgd.lr * (g + mu * *b);
    }
    state.step += 1;
    Ok(loss)
}

/// Result of comparing analytic and finite-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Worst relative error per named parameter group.
    pub groups: Vec<(String, f64)>,
}

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-6)
}

/// Compares the analytic gradient with central differences on every
/// parameter. `corrupt` may alter the analytic gradient first.
pub fn grad_check_with(model: &CifgLstm, batch: &[Vec<SymbolId>], corrupt: impl FnOnce(&CifgLstm, &mut [f64])) -> Result<GradCheck> {
    let (_, mut grad) = model.loss_grad(batch)?;
    corrupt(model, &mut grad);
    let mut probe = model.clone();
    let mut groups = Vec::new();
    let mut max_rel: f64 = 0.0;
    for (name, range) in model.layout().groups() {
        let mut worst: f64 = 0.0;
        for i in range {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + FD_STEP;
            let up = probe.loss(batch)?;
            probe.params_mut()[i] = orig - FD_STEP;
            let down = probe.loss(batch)?;
            probe.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_error(grad[i], numeric));
        }
        max_rel = max_rel.max(worst);
        groups.push((name, worst));
    }
    Ok(GradCheck { max_rel_error: max_rel, groups })
}

pub fn grad_check(model: &CifgLstm, batch: &[Vec<SymbolId>]) -> Result<GradCheck> {
    grad_check_with(model, batch, |_, _| {})
}
