//! TOML experiment configuration. Every stage that draws random numbers has
//! a mandatory seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::synth::SynthConfig;
use crate::distill::{DistillConfig, KlConfig, DEFAULT_CAP_FLOOR};
use crate::error::{Error, Result};
use crate::fedsim::FedConfig;
use crate::neural::CifgConfig;
use crate::par::Execution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    pub fed: FedConfig,
    pub distill: DistillSection,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub wordpiece: Option<WordPieceConfig>,
}

/// Either a synthetic corpus or paths to real data (relative to the config).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub synthetic: Option<SynthConfig>,
    #[serde(default = "heldout_tokens")]
    pub heldout_tokens: usize,
    #[serde(default = "supplement_tokens")]
    pub supplement_tokens: usize,
    #[serde(default = "per_client")]
    pub max_sentences_per_client: usize,
    /// Client shard directory (one file per client).
    #[serde(default)]
    pub shards: Option<PathBuf>,
    #[serde(default)]
    pub heldout: Option<PathBuf>,
    #[serde(default)]
    pub supplement: Option<PathBuf>,
}

fn heldout_tokens() -> usize {
    20_000
}
fn supplement_tokens() -> usize {
    200_000
}
fn per_client() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabConfig {
    /// L1 clipping threshold λ.
    pub lambda: f64,
    /// Cased vocabulary size.
    pub max_words: usize,
    /// Uncased words modeled directly by the neural model; the rest share
    /// its `<unk>` mass by unigram weight.
    pub head_words: usize,
    #[serde(default = "per_round")]
    pub clients_per_round: usize,
    #[serde(default = "window")]
    pub novelty_window: usize,
    pub seed: u64,
}

fn per_round() -> usize {
    500
}
fn window() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
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
    #[serde(default = "one")]
    pub groups: usize,
    pub seed: u64,
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

impl ModelConfig {
    pub fn cifg(&self, vocab: usize) -> CifgConfig {
        CifgConfig {
            vocab,
            layers: self.layers,
            hidden: self.hidden,
            embed: self.embed,
            layer_norm: self.layer_norm,
            residual: self.residual,
            groups: self.groups,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    pub samples: usize,
    #[serde(default = "max_len")]
    pub max_len: usize,
    pub seed: u64,
    #[serde(default = "order")]
    pub order: usize,
    #[serde(default = "min_counts")]
    pub min_counts: Vec<u64>,
    /// Order of the cased capitalization model.
    #[serde(default = "cap_order")]
    pub cap_order: usize,
    #[serde(default = "cap_floor")]
    pub cap_floor: f64,
    #[serde(default = "mix")]
    pub mix: f64,
    #[serde(default = "tol")]
    pub kl_tol: f64,
    #[serde(default = "max_iter")]
    pub kl_max_iter: usize,
}

fn max_len() -> usize {
    50
}
fn order() -> usize {
    4
}
fn min_counts() -> Vec<u64> {
    vec![1, 1, 2, 2]
}
fn cap_order() -> usize {
    3
}
fn cap_floor() -> f64 {
    DEFAULT_CAP_FLOOR
}
fn mix() -> f64 {
    0.5
}
fn tol() -> f64 {
    1e-8
}
fn max_iter() -> usize {
    200
}

impl DistillSection {
    pub fn to_config(&self, exec: Execution) -> DistillConfig {
        DistillConfig {
            samples: self.samples,
            max_len: self.max_len,
            seed: self.seed,
            order: self.order,
            min_counts: self.min_counts.clone(),
            mix: self.mix,
            kl: KlConfig { tol: self.kl_tol, max_iter: self.kl_max_iter, ..KlConfig::default() },
            exec,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "top_k")]
    pub k: usize,
}

fn top_k() -> usize {
    3
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k: top_k() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordPieceConfig {
    pub inventory_size: usize,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.shards, &mut cfg.data.heldout, &mut cfg.data.supplement].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let real = d.shards.is_some() || d.heldout.is_some() || d.supplement.is_some();
        match (&d.synthetic, real) {
            (Some(_), true) => return Err(Error::Config("data: give either `synthetic` or corpus paths, not both".into())),
            (None, false) => return Err(Error::Config("data: no corpus configured".into())),
            (None, true) if d.shards.is_none() || d.heldout.is_none() || d.supplement.is_none() => {
                return Err(Error::Config("data: `shards`, `heldout` and `supplement` are all required".into()))
            }
            _ => {}
        }
        if !(self.vocab.lambda > 0.0) {
            return Err(Error::Config("vocab.lambda must be positive".into()));
        }
        if self.vocab.head_words == 0 || self.vocab.max_words == 0 {
            return Err(Error::Config("vocabulary sizes must be ≥ 1".into()));
        }
        if self.distill.min_counts.is_empty() {
            return Err(Error::Config("distill.min_counts must not be empty".into()));
        }
        self.fed.validate()?;
        self.distill.to_config(Execution::default()).validate()?;
        self.model.cifg(4).validate()
    }

    /// Desk-scale defaults over a synthetic corpus.
    pub fn desk() -> Self {
        ExperimentConfig {
            data: DataConfig {
                synthetic: Some(SynthConfig::default()),
                heldout_tokens: heldout_tokens(),
                supplement_tokens: supplement_tokens(),
                max_sentences_per_client: per_client(),
                shards: None,
                heldout: None,
                supplement: None,
            },
            vocab: VocabConfig { lambda: 5.0, max_words: 10_000, head_words: 2000, clients_per_round: 500, novelty_window: 10, seed: 11 },
            model: ModelConfig { layers: 1, hidden: 64, embed: 32, layer_norm: false, residual: false, groups: 1, seed: 12 },
            fed: FedConfig::desk(1000, 13),
            distill: DistillSection {
                samples: 10_000,
                max_len: max_len(),
                seed: 14,
                order: order(),
                min_counts: min_counts(),
                cap_order: cap_order(),
                cap_floor: cap_floor(),
                mix: mix(),
                kl_tol: tol(),
                kl_max_iter: max_iter(),
            },
            eval: EvalConfig::default(),
            wordpiece: None,
        }
    }
}
