//! Evaluation, configuration and the end-to-end pipeline.

pub mod config;
pub mod eval;
pub mod pipeline;

pub use crate::distill::CapModel;
pub use config::ExperimentConfig;
pub use eval::{evaluate, next_word_accuracy, oov_rate, piece_units, sll_excl_oov, word_units, EvalReport, EvalUnit};
pub use pipeline::{build_vocab, DeskReport, Pipeline, Vocab};

/// Viterbi truecasing of a lowercased sentence with a cap model.
pub fn truecase<S: AsRef<str>>(cap: &CapModel, sentence: &[S]) -> Vec<String> {
    cap.truecase(sentence)
}
