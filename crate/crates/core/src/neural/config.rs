use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and options of a CIFG LSTM language model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CifgConfig {
    /// Number of symbol-table entries (reserved ids included).
    pub vocab: usize,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default = "hidden")]
    pub hidden: usize,
    #[serde(default = "embed")]
    pub embed: usize,
    #[serde(default)]
    pub layer_norm: bool,
    #[serde(default)]
    pub residual: bool,
    /// Block-diagonal groups in the recurrent matrices.
    #[serde(default = "one")]
    pub groups: usize,
}

fn one() -> usize {
    1
}
fn hidden() -> usize {
    64
}
fn embed() -> usize {
    32
}

impl CifgConfig {
    /// Desk defaults: one layer, 64 hidden units, 32-dim embeddings.
    pub fn desk(vocab: usize) -> Self {
        CifgConfig { vocab, layers: 1, hidden: 64, embed: 32, layer_norm: false, residual: false, groups: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 4 || self.layers == 0 || self.hidden == 0 || self.embed == 0 || self.groups == 0 {
            return Err(Error::Config("model dimensions must be positive (vocab ≥ 4)".into()));
        }
        if self.hidden % self.groups != 0 {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} groups",
                self.hidden, self.groups
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embed
        } else {
            self.hidden
        }
    }

    /// Closed-form parameter count: tied embedding once, per layer
    /// 3·H·d_in + 3·H²/k + 3·H (+ 2·H with layer norm), and the H→E projection.
    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        let per_layer = |d_in: usize| 3 * h * d_in + 3 * h * h / self.groups + 3 * h + if self.layer_norm { 2 * h } else { 0 };
        self.vocab * self.embed + (0..self.layers).map(|l| per_layer(self.input_dim(l))).sum::<usize>() + self.embed * h
    }
}

/// Offsets of one layer's parameter blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub d_in: usize,
    /// Input weights, (3·H) × d_in row-major; gate rows: input, candidate, output.
    pub w: Range<usize>,
    /// Recurrent weights: per gate, per group, an (H/k) × (H/k) block.
    pub u: Range<usize>,
    pub b: Range<usize>,
    pub ln_gain: Option<Range<usize>>,
    pub ln_bias: Option<Range<usize>>,
}

/// Where every parameter block lives in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    /// Shared embedding, vocab × E row-major.
    pub embed: Range<usize>,
    pub layers: Vec<LayerSlots>,
    /// Projection, E × H row-major.
    pub proj: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &CifgConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let h = cfg.hidden;
        let embed = take(cfg.vocab * cfg.embed);
        let mut layers = Vec::new();
        for l in 0..cfg.layers {
            let d_in = cfg.input_dim(l);
            let w = take(3 * h * d_in);
            let u = take(3 * h * h / cfg.groups);
            let b = take(3 * h);
            let (ln_gain, ln_bias) = if cfg.layer_norm { (Some(take(h)), Some(take(h))) } else { (None, None) };
            layers.push(LayerSlots { d_in, w, u, b, ln_gain, ln_bias });
        }
        let proj = take(cfg.embed * h);
        Layout { embed, layers, proj, total: at }
    }

    /// Named parameter groups, for gradient reports.
    pub fn groups(&self) -> Vec<(String, Range<usize>)> {
        let mut out = vec![("embedding".to_string(), self.embed.clone())];
        for (l, s) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.input"), s.w.clone()));
            out.push((format!("layer{l}.recurrent"), s.u.clone()));
            out.push((format!("layer{l}.bias"), s.b.clone()));
            if let Some(g) = &s.ln_gain {
                out.push((format!("layer{l}.norm_gain"), g.clone()));
            }
            if let Some(b) = &s.ln_bias {
                out.push((format!("layer{l}.norm_bias"), b.clone()));
            }
        }
        out.push(("projection".to_string(), self.proj.clone()));
        out
    }
}
