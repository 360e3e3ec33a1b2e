//! Word-piece inventories, the piece-to-word lexicon transducer and the
//! piece-level composition with a word n-gram topology.

pub mod compose;
pub mod inventory;
pub mod lexicon;

pub use compose::ComposedTopology;
pub use inventory::{escape, piece_token, score_order, unescape, WordPieceInventory, WORD_END};
pub use lexicon::{detokenize, piece_table, segment_sentence, LexiconFst, LEX_ROOT};
