//! Homophone-constrained refinement of character N-best lists.

pub mod align;
pub mod chat;
pub mod dict;
pub mod lattice;
pub mod ngram;
pub mod scorer;
pub mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::SyllableInventory;
use crate::records::NBestRecord;

pub use dict::HomophoneDictionary;
pub use lattice::{build_lattice, LatticeConfig, RefinementLattice};
pub use ngram::NgramScorer;
pub use scorer::{Next, Scorer, ScorerError};
pub use search::{refine, RefineWeights, Refined};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("N-best list is empty")]
    EmptyNBest,
    #[error("lattice produced no complete path")]
    EmptyLattice,
    #[error("beam width must be at least 1")]
    Beam,
    #[error("weight {name} must be finite, got {value}")]
    Weight { name: &'static str, value: f64 },
    #[error("scorer failed at position {position}")]
    Scorer {
        position: usize,
        #[source]
        source: ScorerError,
    },
    #[error("pinyin {0:?} is not a space-separated inventory sequence")]
    Pinyin(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub lattice: LatticeConfig,
    pub weights: RefineWeights,
    pub beam: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            lattice: LatticeConfig::default(),
            weights: RefineWeights::default(),
            beam: 16,
        }
    }
}

/// Builds the lattice for one decoded record and searches it.
pub fn refine_record<S: Scorer + ?Sized>(
    record: &NBestRecord,
    dict: &HomophoneDictionary,
    inv: &SyllableInventory,
    scorer: &S,
    cfg: &RefineConfig,
) -> Result<Refined, RefineError> {
    let pinyin = inv
        .parse_spaced(&record.pinyin)
        .map_err(|_| RefineError::Pinyin(record.pinyin.clone()))?;
    let lattice = build_lattice(&pinyin, &record.nbest, dict, inv, &cfg.lattice)?;
    refine(&lattice, scorer, &cfg.weights, cfg.beam)
}
