//! Federated neural language models distilled into backoff n-gram automata.
//!
//! The crate covers backoff n-gram models ([`ngram`]), word-piece lexicons and
//! piece-level composition ([`wordpiece`]), sampling-based distillation
//! ([`distill`]), a federated-averaging simulator ([`fedsim`]), a CIFG LSTM
//! teacher ([`neural`]) and evaluation plus pipeline glue ([`harness`]).

pub mod corpus;
pub mod distill;
pub mod error;
pub mod fedsim;
pub mod harness;
pub mod lm;
pub mod neural;
pub mod ngram;
pub mod par;
pub mod symbols;
pub mod wordpiece;

pub use error::{Error, Result};
pub use lm::LanguageModel;
pub use par::Execution;
pub use symbols::{SymbolId, SymbolTable, BOS, EOS, UNK};
