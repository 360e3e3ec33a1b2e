//! Simulated federated learning: FedAvg rounds, clipped unigram collection
//! and convergence statistics.

mod fedavg;
mod population;
mod run;
mod stats;
mod unigrams;

pub use fedavg::{aggregate_and_apply, client_seed, client_update, run_round, sample_clients, ClientDelta, EncodedShard, FedConfig};
pub use population::ZipfPopulation;
pub use run::{encode_shards, run_fedavg, FedRun};
pub use stats::{metrics_csv, z_statistic, ConvergenceTracker, RoundMetrics, RoundStats, METRICS_HEADER};
pub use unigrams::{clip_weight, client_counts, clipped, collect_in_rounds, collect_unigrams, read_unigram_tsv, UnigramAccumulator};
