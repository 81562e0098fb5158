//! Weighted beam search over a refinement lattice.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::lattice::{Candidate, RefinementLattice};
use super::scorer::{Next, Scorer};
use super::RefineError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineWeights {
    pub w_lm: f64,
    pub w_ac: f64,
    pub w_py: f64,
}

impl Default for RefineWeights {
    fn default() -> Self {
        Self {
            w_lm: 1.0,
            w_ac: 0.5,
            w_py: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub text: String,
    pub log_score: f64,
}

/// Score contribution of a candidate that does not depend on the prefix.
pub fn local_score(c: &Candidate, w: &RefineWeights) -> f64 {
    let py = if c.matches_anchor { 0.0 } else { -1.0 };
    w.w_ac * c.log_weight + w.w_py * py
}

/// Higher score first; ties resolved by lexicographic character order.
fn better(a: &(Vec<char>, f64), b: &(Vec<char>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Picks the lattice path maximizing
/// `w_lm·LM + w_ac·log_weight + w_py·anchor_penalty`.
///
/// Paths emitting the same text are merged keeping the best score; this is
/// exact because the LM term depends only on the emitted text. With `beam`
/// at least the number of paths no hypothesis is ever pruned.
pub fn refine<S: Scorer + ?Sized>(
    lattice: &RefinementLattice,
    scorer: &S,
    weights: &RefineWeights,
    beam: usize,
) -> Result<Refined, RefineError> {
    for (name, v) in [("w_lm", weights.w_lm), ("w_ac", weights.w_ac), ("w_py", weights.w_py)] {
        if !v.is_finite() {
            return Err(RefineError::Weight { name, value: v });
        }
    }
    if beam == 0 {
        return Err(RefineError::Beam);
    }
    let mut hyps: Vec<(Vec<char>, f64)> = vec![(Vec::new(), 0.0)];
    for (position, pos) in lattice.positions.iter().enumerate() {
        let mut merged: HashMap<Vec<char>, f64> = HashMap::new();
        for (prefix, score) in &hyps {
            for c in &pos.candidates {
                let mut s = score + local_score(c, weights);
                let mut text = prefix.clone();
                if let Some(ch) = c.symbol {
                    let lm = scorer
                        .score(prefix, Next::Char(ch))
                        .map_err(|source| RefineError::Scorer { position, source })?;
                    s += weights.w_lm * lm;
                    text.push(ch);
                }
                merged
                    .entry(text)
                    .and_modify(|best| *best = best.max(s))
                    .or_insert(s);
            }
        }
        hyps = merged.into_iter().collect();
        hyps.sort_by(better);
        hyps.truncate(beam);
    }
    let end = lattice.positions.len();
    let mut finals = Vec::with_capacity(hyps.len());
    for (text, score) in hyps {
        let lm = scorer
            .score(&text, Next::End)
            .map_err(|source| RefineError::Scorer {
                position: end,
                source,
            })?;
        finals.push((text, score + weights.w_lm * lm));
    }
    finals.sort_by(better);
    let (text, log_score) = finals.into_iter().next().ok_or(RefineError::EmptyLattice)?;
    Ok(Refined {
        text: text.into_iter().collect(),
        log_score,
    })
}
