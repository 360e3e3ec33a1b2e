//! Distilling a teacher language model into a backoff n-gram model: sampling,
//! the counting step (plain and capitalization-reweighted) and KL minimization.

pub mod cased;
pub mod count;
pub mod gen;
pub mod kl;
pub mod sample;
pub mod tail;

pub use cased::{lowercase, CapModel, CasedTeacher, DEFAULT_CAP_FLOOR};
pub use count::{count_many, expected_counts};
pub use gen::{approximate, gen_word, gen_word_from_samples, gen_wordpiece, infer_topology, truecase_samples, DistillConfig, GenOutput};
pub use kl::{kl_minimize, KlConfig, KlReport};
pub use sample::{read_samples, sample_corpus, write_samples};
pub use tail::UnigramTailTeacher;
