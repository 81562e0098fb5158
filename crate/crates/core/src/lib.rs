//! Post-encoder decoding and refinement for Mandarin visual speech recognition.
//!
//! The crate consumes frame-level posteriors from a character stream and a
//! toneless Pinyin stream, produces N-best character hypotheses with CTC
//! prefix beam search, fuses them with the Pinyin prediction into a
//! homophone-constrained lattice and picks a final transcription under a
//! pluggable language scorer. It also builds instruction-tuning data from
//! synthetic recognition errors and scores output with character error rate.

pub mod ctc;
pub mod datasmith;
pub mod inventory;
pub mod loss;
pub mod metrics;
pub mod posterior;
pub mod records;
pub mod refine;

pub use ctc::{Hypothesis, NBestList};
pub use inventory::{PinyinSequence, SyllableInventory};
pub use posterior::{PosteriorMatrix, StreamVocab};

/// Shipped 397-unit toneless syllable inventory.
pub const SHIPPED_INVENTORY: &str = include_str!("../../../data/pinyin397.txt");

/// Shipped character-to-syllable dictionary, ordered by character frequency.
pub const SHIPPED_DICTIONARY: &str = include_str!("../../../data/homophones.tsv");
