//! Backoff n-gram models as deterministic weighted automata.

pub mod arpa;
pub mod build;
pub mod counts;
pub mod interpolate;
pub mod model;
pub mod prune;
pub mod smoothing;
pub mod topology;

pub use arpa::{read_arpa, write_arpa};
pub use build::{count_ngrams, extract_topology};
pub use counts::ExpectedCounts;
pub use interpolate::interpolate;
pub use model::{complete_backoff, BackoffNGramModel};
pub use prune::prune;
pub use smoothing::train_kneser_ney;
pub use topology::{ArcStore, BackoffAutomaton, NGramTopology, StateId, ROOT};
