//! Syllable-level edit alignment between a Pinyin prediction and a character
//! hypothesis.

use serde::Serialize;

use super::dict::HomophoneDictionary;
use crate::inventory::{SyllableId, SyllableInventory};
use crate::metrics::edit_counts_seq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignLabel {
    Match,
    Substitute,
    /// Character with no syllable.
    Insert,
    /// Syllable with no character.
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AlignPair {
    /// Index into the Pinyin sequence.
    pub syllable: Option<usize>,
    /// Index into the character sequence.
    pub character: Option<usize>,
    pub label: AlignLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alignment {
    pub pairs: Vec<AlignPair>,
    pub cost: f64,
}

fn normalized_distance(a: &str, b: &str) -> f64 {
    let d = edit_counts_seq(a.as_bytes(), b.as_bytes()).distance();
    d as f64 / a.len().max(b.len()).max(1) as f64
}

/// 0 when `ch` reads as `syl`; otherwise the smallest length-normalized
/// spelling distance from `syl` to any reading of `ch` (1 if unknown).
pub fn match_cost(syl: SyllableId, ch: char, dict: &HomophoneDictionary, inv: &SyllableInventory) -> f64 {
    if dict.reads_as(ch, syl) {
        return 0.0;
    }
    let Some(spelled) = inv.syllable(syl) else {
        return 1.0;
    };
    dict.readings(ch)
        .iter()
        .filter_map(|&r| inv.syllable(r))
        .map(|r| normalized_distance(spelled, r))
        .fold(1.0, f64::min)
}

const TIE: f64 = 1e-12;

/// Minimum-cost alignment; insert and delete cost 1. Ties prefer the
/// diagonal, then deletion, then insertion.
pub fn align(
    pinyin: &[SyllableId],
    chars: &[char],
    dict: &HomophoneDictionary,
    inv: &SyllableInventory,
) -> Alignment {
    let (n, m) = (pinyin.len(), chars.len());
    let w = m + 1;
    let mut dp = vec![0.0f64; (n + 1) * w];
    let mut sub = vec![0.0f64; (n + 1) * w];
    for i in 0..=n {
        dp[i * w] = i as f64;
    }
    for j in 0..=m {
        dp[j] = j as f64;
    }
    for i in 1..=n {
        for j in 1..=m {
            let c = match_cost(pinyin[i - 1], chars[j - 1], dict, inv);
            sub[i * w + j] = c;
            let diag = dp[(i - 1) * w + j - 1] + c;
            let del = dp[(i - 1) * w + j] + 1.0;
            let ins = dp[i * w + j - 1] + 1.0;
            dp[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut pairs = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let c = sub[i * w + j];
            if (dp[(i - 1) * w + j - 1] + c - here).abs() < TIE {
                pairs.push(AlignPair {
                    syllable: Some(i - 1),
                    character: Some(j - 1),
                    label: if c == 0.0 {
                        AlignLabel::Match
                    } else {
                        AlignLabel::Substitute
                    },
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && (dp[(i - 1) * w + j] + 1.0 - here).abs() < TIE {
            pairs.push(AlignPair {
                syllable: Some(i - 1),
                character: None,
                label: AlignLabel::Delete,
            });
            i -= 1;
        } else {
            pairs.push(AlignPair {
                syllable: None,
                character: Some(j - 1),
                label: AlignLabel::Insert,
            });
            j -= 1;
        }
    }
    pairs.reverse();
    Alignment {
        pairs,
        cost: dp[n * w + m],
    }
}
