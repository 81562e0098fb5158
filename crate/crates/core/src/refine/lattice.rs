//! Positional candidate lattice fusing the Pinyin prediction with the
//! character N-best list.

use serde::Serialize;
use unicode_normalization::UnicodeNormalization;

use super::align::align;
use super::dict::HomophoneDictionary;
use super::RefineError;
use crate::inventory::{PinyinSequence, SyllableId, SyllableInventory};
use crate::posterior::{log_add, log_sum_exp};
use crate::records::NBestEntry;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    /// `None` is the epsilon (emit nothing) candidate.
    pub symbol: Option<char>,
    pub from_nbest: bool,
    pub from_pinyin_expansion: bool,
    /// Log of the summed scores of the hypotheses proposing this candidate,
    /// or for pure expansions the floor weight plus the log of the mass the
    /// N-best list leaves unexplained.
    pub log_weight: f64,
    /// Whether the candidate agrees with the position's anchor syllable
    /// (for unanchored positions: whether it is epsilon).
    pub matches_anchor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Position {
    pub anchor: Option<SyllableId>,
    pub candidates: Vec<Candidate>,
}

impl Position {
    pub fn candidate(&self, symbol: Option<char>) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.symbol == symbol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementLattice {
    pub positions: Vec<Position>,
}

impl RefinementLattice {
    /// Number of distinct paths; saturates at `usize::MAX`.
    pub fn path_count(&self) -> usize {
        self.positions
            .iter()
            .fold(1usize, |acc, p| acc.saturating_mul(p.candidates.len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatticeConfig {
    pub expansion_cap: usize,
    pub floor_weight: f64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            expansion_cap: 8,
            floor_weight: 0.01f64.ln(),
        }
    }
}

/// Log of the probability mass outside the N-best list. A list that
/// accounts for all the mass yields a very small but finite value, so
/// expansions stay representable without overriding a certain decode.
pub fn unexplained_log_mass(nbest: &[NBestEntry]) -> f64 {
    let covered = log_sum_exp(nbest.iter().map(|h| h.log_score.min(0.0)));
    let rest = -covered.exp_m1();
    rest.max(f64::MIN_POSITIVE).ln()
}

/// Pairs of (top index, other index) from a unit-cost character alignment.
fn char_pairs(top: &[char], other: &[char]) -> Vec<(Option<usize>, Option<usize>)> {
    let (n, m) = (top.len(), other.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        dp[i * w] = i;
    }
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = dp[(i - 1) * w + j - 1] + usize::from(top[i - 1] != other[j - 1]);
            dp[i * w + j] = diag.min(dp[(i - 1) * w + j] + 1).min(dp[i * w + j - 1] + 1);
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 && dp[(i - 1) * w + j - 1] + usize::from(top[i - 1] != other[j - 1]) == here {
            out.push((Some(i - 1), Some(j - 1)));
            i -= 1;
            j -= 1;
        } else if i > 0 && dp[(i - 1) * w + j] + 1 == here {
            out.push((Some(i - 1), None));
            i -= 1;
        } else {
            out.push((None, Some(j - 1)));
            j -= 1;
        }
    }
    out.reverse();
    out
}

struct Builder<'a> {
    positions: Vec<Position>,
    dict: &'a HomophoneDictionary,
}

impl Builder<'_> {
    fn propose(&mut self, pos: usize, symbol: Option<char>, weight: f64) {
        let anchor = self.positions[pos].anchor;
        let cands = &mut self.positions[pos].candidates;
        if let Some(c) = cands.iter_mut().find(|c| c.symbol == symbol) {
            c.log_weight = log_add(c.log_weight, weight);
            c.from_nbest = true;
            return;
        }
        let matches_anchor = match (anchor, symbol) {
            (Some(s), Some(ch)) => self.dict.reads_as(ch, s),
            (None, None) => true,
            _ => false,
        };
        cands.push(Candidate {
            symbol,
            from_nbest: true,
            from_pinyin_expansion: false,
            log_weight: weight,
            matches_anchor,
        });
    }
}

/// Builds the lattice along the alignment of the top hypothesis against the
/// Pinyin prediction.
///
/// Other hypotheses are aligned character-wise to the top hypothesis; their
/// characters join the aligned position, characters they lack become
/// epsilon candidates, and extra characters fill syllable-only positions
/// lying in the same gap (otherwise they are dropped). Each anchored
/// position then receives up to `expansion_cap` of the most frequent
/// homophones of its syllable.
pub fn build_lattice(
    pinyin: &PinyinSequence,
    nbest: &[NBestEntry],
    dict: &HomophoneDictionary,
    inv: &SyllableInventory,
    cfg: &LatticeConfig,
) -> Result<RefinementLattice, RefineError> {
    let top_entry = nbest.first().ok_or(RefineError::EmptyNBest)?;
    let expansion_weight = cfg.floor_weight + unexplained_log_mass(nbest);
    let score = |h: &NBestEntry| h.log_score.min(0.0);
    let top: Vec<char> = top_entry.text.nfc().collect();
    let alignment = align(&pinyin.units, &top, dict, inv);

    let mut positions = Vec::with_capacity(alignment.pairs.len());
    // position of each top character
    let mut char_pos = vec![0usize; top.len()];
    // syllable-only positions preceding top character j (index top.len() = tail)
    let mut gap_slots: Vec<Vec<usize>> = vec![Vec::new(); top.len() + 1];
    let mut next_char = 0;
    for pair in &alignment.pairs {
        let anchor = pair.syllable.map(|s| pinyin.units[s]);
        let idx = positions.len();
        positions.push(Position {
            anchor,
            candidates: Vec::new(),
        });
        match pair.character {
            Some(j) => {
                char_pos[j] = idx;
                next_char = j + 1;
            }
            None => gap_slots[next_char].push(idx),
        }
    }
    let mut b = Builder { positions, dict };

    let w_top = score(top_entry);
    for (j, &ch) in top.iter().enumerate() {
        b.propose(char_pos[j], Some(ch), w_top);
    }
    for slots in &gap_slots {
        for &p in slots {
            b.propose(p, None, w_top);
        }
    }

    for hyp in &nbest[1..] {
        let w = score(hyp);
        let chars: Vec<char> = hyp.text.nfc().collect();
        let mut gap = 0usize;
        let mut used: Vec<usize> = vec![0; top.len() + 1];
        let mut filled = vec![false; b.positions.len()];
        for (ti, oi) in char_pairs(&top, &chars) {
            match (ti, oi) {
                (Some(t), Some(o)) => {
                    b.propose(char_pos[t], Some(chars[o]), w);
                    gap = t + 1;
                }
                (Some(t), None) => {
                    b.propose(char_pos[t], None, w);
                    gap = t + 1;
                }
                (None, Some(o)) => {
                    if let Some(&p) = gap_slots[gap].get(used[gap]) {
                        used[gap] += 1;
                        filled[p] = true;
                        b.propose(p, Some(chars[o]), w);
                    }
                }
                (None, None) => unreachable!(),
            }
        }
        for slots in &gap_slots {
            for &p in slots {
                if !filled[p] {
                    b.propose(p, None, w);
                }
            }
        }
    }

    let mut positions = b.positions;
    for pos in &mut positions {
        if let Some(anchor) = pos.anchor {
            for &ch in dict.homophones(anchor).iter().take(cfg.expansion_cap) {
                match pos.candidates.iter_mut().find(|c| c.symbol == Some(ch)) {
                    Some(c) => c.from_pinyin_expansion = true,
                    None => pos.candidates.push(Candidate {
                        symbol: Some(ch),
                        from_nbest: false,
                        from_pinyin_expansion: true,
                        log_weight: expansion_weight,
                        matches_anchor: true,
                    }),
                }
            }
        }
        pos.candidates.sort_by_key(|a| a.symbol);
    }
    Ok(RefinementLattice { positions })
}
