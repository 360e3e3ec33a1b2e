use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{train_batch, CifgLstm, SgdConfig, TrainState};
use crate::par::{self, Execution};
use crate::symbols::SymbolId;

/// Federated averaging settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    pub clients_per_round: usize,
    #[serde(default = "one")]
    pub server_lr: f64,
    #[serde(default = "half")]
    pub client_lr: f64,
    #[serde(default = "nesterov")]
    pub momentum: f64,
    #[serde(default = "batch")]
    pub batch_size: usize,
    #[serde(default = "epochs")]
    pub local_epochs: usize,
    pub rounds: usize,
    pub seed: u64,
    /// Held-out evaluation cadence in rounds; 0 disables it.
    #[serde(default)]
    pub eval_every: usize,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn nesterov() -> f64 {
    0.9
}
fn batch() -> usize {
    8
}
fn epochs() -> usize {
    1
}

impl FedConfig {
    pub fn desk(rounds: usize, seed: u64) -> Self {
        FedConfig {
            clients_per_round: 10,
            server_lr: 1.0,
            client_lr: 0.5,
            momentum: 0.9,
            batch_size: 8,
            local_epochs: 1,
            rounds,
            seed,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.server_lr > 0.0) || !(self.client_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 || self.clients_per_round == 0 {
            return Err(Error::Config("batch size and clients per round must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One client's contribution to a round.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDelta {
    pub id: String,
    pub delta: Vec<f64>,
    pub examples: usize,
}

/// A client's data already mapped to model ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedShard {
    pub id: String,
    pub sentences: Vec<Vec<SymbolId>>,
}

/// Local Nesterov SGD from `model` over `local_epochs` shuffled passes of
/// `shard`; the delta is trained minus received parameters.
pub fn client_update(model: &CifgLstm, shard: &EncodedShard, cfg: &FedConfig, seed: u64) -> Result<ClientDelta> {
    let n = model.num_params();
    if shard.sentences.is_empty() || cfg.local_epochs == 0 {
        return Ok(ClientDelta { id: shard.id.clone(), delta: vec![0.0; n], examples: 0 });
    }
    let mut local = model.clone();
    let mut state = TrainState::new(&local, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sgd = SgdConfig { lr: cfg.client_lr, momentum: cfg.momentum };
    let mut order: Vec<usize> = (0..shard.sentences.len()).collect();
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Vec<SymbolId>> = chunk.iter().map(|&i| shard.sentences[i].clone()).collect();
            train_batch(&mut local, &mut state, &batch, sgd)
                .map_err(|e| annotate(e, &shard.id))?;
        }
    }
    let delta = local.params().iter().zip(model.params()).map(|(a, b)| a - b).collect();
    Ok(ClientDelta { id: shard.id.clone(), delta, examples: shard.sentences.len() })
}

fn annotate(e: Error, id: &str) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("client {id}: {m}")),
        other => other,
    }
}

/// θ ← θ + server_lr · Σ nᵢΔᵢ / Σ nᵢ, summing in client-id order.
pub fn aggregate_and_apply(model: &mut CifgLstm, deltas: &[ClientDelta], cfg: &FedConfig) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::Invalid("no client deltas to aggregate".into()));
    }
    let n = model.num_params();
    if let Some(d) = deltas.iter().find(|d| d.delta.len() != n) {
        return Err(Error::Contract(format!("client {} sent {} values, model has {n}", d.id, d.delta.len())));
    }
    let total: usize = deltas.iter().map(|d| d.examples).sum();
    if total == 0 {
        return Ok(());
    }
    let mut sorted: Vec<&ClientDelta> = deltas.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id).then(a.examples.cmp(&b.examples)));
    let mut sum = vec![0.0; n];
    for d in sorted {
        let w = d.examples as f64;
        for (s, v) in sum.iter_mut().zip(&d.delta) {
            *s += w * v;
        }
    }
    let scale = cfg.server_lr / total as f64;
    for (p, s) in model.params_mut().iter_mut().zip(&sum) {
        *p += scale * s;
    }
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("aggregated parameters are not finite".into()));
    }
    Ok(())
}

/// Seed of client `id` in round `round`.
pub fn client_seed(seed: u64, round: usize, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes().chain((round as u64).to_le_bytes()).chain(seed.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Indices of the clients taking part in `round`.
pub fn sample_clients(population: usize, per_round: usize, seed: u64, round: usize) -> Result<Vec<usize>> {
    if per_round > population {
        return Err(Error::Config(format!("{per_round} clients per round exceeds the population of {population}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    let mut picked = rand::seq::index::sample(&mut rng, population, per_round).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// One FedAvg round over the chosen clients.
pub fn run_round(model: &mut CifgLstm, shards: &[EncodedShard], cfg: &FedConfig, round: usize, exec: Execution) -> Result<Vec<usize>> {
    let picked = sample_clients(shards.len(), cfg.clients_per_round, cfg.seed, round)?;
    let broadcast = &*model;
    let deltas = par::map(exec, &picked, |_, &i| client_update(broadcast, &shards[i], cfg, client_seed(cfg.seed, round, &shards[i].id)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    aggregate_and_apply(model, &deltas, cfg)?;
    Ok(picked)
}
