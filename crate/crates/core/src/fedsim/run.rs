use std::collections::BTreeMap;

use super::fedavg::{run_round, EncodedShard, FedConfig};
use super::stats::{ConvergenceTracker, RoundMetrics};
use crate::corpus::ClientShard;
use crate::error::{Error, Result};
use crate::harness::eval::{sll_excl_oov, EvalUnit};
use crate::neural::CifgLstm;
use crate::par::Execution;
use crate::symbols::{SymbolTable, UNK};

/// Maps client tokens to model ids (unknown tokens become `<unk>`).
pub fn encode_shards(shards: &[ClientShard], symbols: &SymbolTable) -> Vec<EncodedShard> {
    shards
        .iter()
        .map(|s| EncodedShard { id: s.id.clone(), sentences: s.sentences.iter().map(|x| symbols.encode(x)).collect() })
        .collect()
}

/// Trained model plus one metrics row per round.
#[derive(Clone, Debug)]
pub struct FedRun {
    pub model: CifgLstm,
    pub metrics: Vec<RoundMetrics>,
}

/// Runs `cfg.rounds` FedAvg rounds. Unigram statistics track the
/// in-vocabulary tokens of each round's participants; SLL^e on `heldout` is
/// reported every `cfg.eval_every` rounds and after the last one.
pub fn run_fedavg(mut model: CifgLstm, shards: &[EncodedShard], heldout: &[EvalUnit], cfg: &FedConfig, window: usize, exec: Execution) -> Result<FedRun> {
    cfg.validate()?;
    if shards.is_empty() {
        return Err(Error::Invalid("empty client population".into()));
    }
    let mut tracker = ConvergenceTracker::new(window)?;
    let mut metrics = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let picked = run_round(&mut model, shards, cfg, round, exec)?;
        let mut counts = BTreeMap::new();
        for &i in &picked {
            for &x in shards[i].sentences.iter().flatten() {
                if x != UNK {
                    *counts.entry(x).or_insert(0.0) += 1.0;
                }
            }
        }
        let mut row = RoundMetrics::from(&tracker.push(counts));
        let last = round + 1 == cfg.rounds;
        if !heldout.is_empty() && ((cfg.eval_every > 0 && (round + 1) % cfg.eval_every == 0) || last) {
            row.sll_e = Some(sll_excl_oov(&model, heldout, exec)?);
        }
        metrics.push(row);
    }
    Ok(FedRun { model, metrics })
}
