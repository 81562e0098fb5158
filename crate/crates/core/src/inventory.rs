//! Toneless Pinyin syllable inventory and segmentation of unspaced Pinyin.
//!
//! Syllables are ASCII lowercase with `v` standing for `ü`. The inventory
//! file lists one syllable per line; the id of a syllable is its position
//! among the non-comment lines.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("line {line}: duplicate syllable {syllable:?}")]
    Duplicate { line: usize, syllable: String },
    #[error("line {line}: illegal character in syllable {syllable:?}")]
    IllegalCharacter { line: usize, syllable: String },
    #[error("inventory is empty")]
    Empty,
    #[error("failed to read inventory: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("illegal character {found:?} in pinyin text {text:?}")]
    IllegalCharacter { text: String, found: char },
    #[error("unsegmentable pinyin {text:?}; longest matchable prefix {prefix:?}")]
    Unsegmentable { text: String, prefix: String },
}

/// Identifier of a syllable inside one [`SyllableInventory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SyllableId(pub u32);

/// Lowercases, trims and maps `ü` (and the `u:` spelling) to `v`.
pub fn normalize_syllable(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .replace("u:", "v")
        .replace('ü', "v")
}

fn is_legal(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyllableInventory {
    syllables: Vec<String>,
    index: HashMap<String, SyllableId>,
    max_len: usize,
}

impl SyllableInventory {
    /// Reads an inventory file. Lines starting with `#` and blank lines are
    /// skipped and do not consume ids.
    pub fn load<R: BufRead>(source: R) -> Result<Self, InventoryError> {
        let mut syllables = Vec::new();
        let mut index = HashMap::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let syl = normalize_syllable(trimmed);
            if !is_legal(&syl) {
                return Err(InventoryError::IllegalCharacter {
                    line: lineno,
                    syllable: trimmed.to_string(),
                });
            }
            if index.contains_key(&syl) {
                return Err(InventoryError::Duplicate {
                    line: lineno,
                    syllable: syl,
                });
            }
            index.insert(syl.clone(), SyllableId(syllables.len() as u32));
            syllables.push(syl);
        }
        if syllables.is_empty() {
            return Err(InventoryError::Empty);
        }
        let max_len = syllables.iter().map(String::len).max().unwrap_or(0);
        Ok(Self {
            syllables,
            index,
            max_len,
        })
    }

    pub fn from_str_lines(text: &str) -> Result<Self, InventoryError> {
        Self::load(text.as_bytes())
    }

    /// The inventory shipped with the crate.
    pub fn shipped() -> Self {
        Self::from_str_lines(crate::SHIPPED_INVENTORY).expect("shipped inventory is valid")
    }

    pub fn len(&self) -> usize {
        self.syllables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.syllables.is_empty()
    }

    pub fn syllables(&self) -> &[String] {
        &self.syllables
    }

    /// Looks up a syllable after normalization.
    pub fn id(&self, syllable: &str) -> Option<SyllableId> {
        self.index.get(&normalize_syllable(syllable)).copied()
    }

    pub fn syllable(&self, id: SyllableId) -> Option<&str> {
        self.syllables.get(id.0 as usize).map(String::as_str)
    }

    fn exact_id(&self, normalized: &str) -> Option<SyllableId> {
        self.index.get(normalized).copied()
    }

    /// Parses a whitespace-separated syllable list.
    pub fn parse_spaced(&self, text: &str) -> Result<PinyinSequence, SegmentError> {
        let mut units = Vec::new();
        for tok in text.split_whitespace() {
            match self.id(tok) {
                Some(id) => units.push(id),
                None => {
                    return Err(SegmentError::Unsegmentable {
                        text: text.to_string(),
                        prefix: tok.to_string(),
                    })
                }
            }
        }
        Ok(PinyinSequence { units })
    }
}

/// A sequence of syllable ids from one inventory.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PinyinSequence {
    pub units: Vec<SyllableId>,
}

impl PinyinSequence {
    pub fn new(units: Vec<SyllableId>) -> Self {
        Self { units }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn syllables<'a>(&self, inv: &'a SyllableInventory) -> Vec<&'a str> {
        self.units
            .iter()
            .map(|&id| inv.syllable(id).unwrap_or("?"))
            .collect()
    }

    /// Space-separated rendering, the form used in serialized records.
    pub fn render(&self, inv: &SyllableInventory) -> String {
        self.syllables(inv).join(" ")
    }

    pub fn concat(&self, inv: &SyllableInventory) -> String {
        self.syllables(inv).concat()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    /// Valid segmentations in canonical order, truncated to the requested count.
    pub all: Vec<PinyinSequence>,
    /// Fewest syllables, ties broken by preferring longer syllables earlier.
    pub canonical: PinyinSequence,
}

/// Splits unspaced Pinyin into inventory syllables.
///
/// Results are produced best-first in canonical order (fewest units, then
/// lexicographically longest leading units), so truncation to `max_results`
/// keeps the best segmentations without enumerating the rest.
pub fn segment_pinyin(
    text: &str,
    inv: &SyllableInventory,
    max_results: usize,
) -> Result<Segmentation, SegmentError> {
    let norm = normalize_syllable(text);
    if let Some(found) = norm.chars().find(|c| !c.is_ascii_lowercase()) {
        return Err(SegmentError::IllegalCharacter {
            text: text.to_string(),
            found,
        });
    }
    let bytes = norm.as_str();
    let n = bytes.len();

    // edges[i]: (end, id) for every inventory syllable starting at i
    let mut edges: Vec<Vec<(usize, SyllableId)>> = vec![Vec::new(); n];
    for (i, slot) in edges.iter_mut().enumerate() {
        for len in (1..=inv.max_len.min(n - i)).rev() {
            if let Some(id) = inv.exact_id(&bytes[i..i + len]) {
                slot.push((i + len, id));
            }
        }
    }

    // min_units[i]: fewest syllables covering text[i..], None if impossible
    let mut min_units: Vec<Option<usize>> = vec![None; n + 1];
    min_units[n] = Some(0);
    for i in (0..n).rev() {
        min_units[i] = edges[i]
            .iter()
            .filter_map(|&(end, _)| min_units[end].map(|m| m + 1))
            .min();
    }

    if min_units[0].is_none() {
        let mut reach = vec![false; n + 1];
        reach[0] = true;
        for i in 0..n {
            if reach[i] {
                for &(end, _) in &edges[i] {
                    reach[end] = true;
                }
            }
        }
        let longest = (0..=n).rev().find(|&i| reach[i]).unwrap_or(0);
        return Err(SegmentError::Unsegmentable {
            text: text.to_string(),
            prefix: bytes[..longest].to_string(),
        });
    }

    // Best-first search. Key = (lower bound on unit count, negated unit
    // lengths so far); keys never decrease along an expansion, so complete
    // segmentations pop in canonical order.
    type Key = (usize, Vec<Reverse<usize>>);
    let mut heap: BinaryHeap<Reverse<(Key, usize, Vec<SyllableId>)>> = BinaryHeap::new();
    heap.push(Reverse(((min_units[0].unwrap(), Vec::new()), 0, Vec::new())));
    let mut all = Vec::new();
    while let Some(Reverse(((_, lens), pos, units))) = heap.pop() {
        if all.len() >= max_results {
            break;
        }
        if pos == n {
            all.push(PinyinSequence { units });
            continue;
        }
        for &(end, id) in &edges[pos] {
            let Some(rest) = min_units[end] else { continue };
            let mut next_lens = lens.clone();
            next_lens.push(Reverse(end - pos));
            let mut next_units = units.clone();
            next_units.push(id);
            let bound = next_units.len() + rest;
            heap.push(Reverse(((bound, next_lens), end, next_units)));
        }
    }

    let canonical = if let Some(first) = all.first() {
        first.clone()
    } else {
        canonical_greedy(&edges, &min_units)
    };
    Ok(Segmentation { all, canonical })
}

fn canonical_greedy(
    edges: &[Vec<(usize, SyllableId)>],
    min_units: &[Option<usize>],
) -> PinyinSequence {
    let mut pos = 0;
    let mut units = Vec::new();
    while pos < edges.len() {
        let need = min_units[pos].unwrap();
        // edges are ordered longest first
        let &(end, id) = edges[pos]
            .iter()
            .find(|&&(end, _)| min_units[end] == Some(need - 1))
            .unwrap();
        units.push(id);
        pos = end;
    }
    PinyinSequence { units }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    /// (position, syllable) for every entry missing from the inventory.
    pub unknown: Vec<(usize, String)>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.unknown.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "valid");
        }
        write!(f, "invalid at")?;
        for (pos, syl) in &self.unknown {
            write!(f, " {pos}:{syl}")?;
        }
        Ok(())
    }
}

pub fn validate_sequence<S: AsRef<str>>(seq: &[S], inv: &SyllableInventory) -> ValidationReport {
    let unknown = seq
        .iter()
        .enumerate()
        .filter(|(_, s)| inv.id(s.as_ref()).is_none())
        .map(|(i, s)| (i, s.as_ref().to_string()))
        .collect();
    ValidationReport { unknown }
}
