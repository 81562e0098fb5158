use std::collections::HashMap;
use std::io::BufRead;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::inventory::{SyllableId, SyllableInventory};

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("line {line}: expected `character<TAB>syllable[,syllable...]`")]
    Malformed { line: usize },
    #[error("line {line}: key {key:?} is not a single character")]
    NotSingleChar { line: usize, key: String },
    #[error("line {line}: duplicate character {ch}")]
    Duplicate { line: usize, ch: char },
    #[error("line {line}: syllable {syllable:?} not in inventory")]
    UnknownSyllable { line: usize, syllable: String },
    #[error("failed to read dictionary: {0}")]
    Io(#[from] std::io::Error),
}

/// Character ↔ toneless syllable mapping.
///
/// Entry order in the source file is the frequency prior: earlier lines are
/// more frequent characters, and homophone lists keep that order.
#[derive(Debug, Clone)]
pub struct HomophoneDictionary {
    char_to_pinyin: HashMap<char, Vec<SyllableId>>,
    pinyin_to_chars: HashMap<SyllableId, Vec<char>>,
    chars: Vec<char>,
}

impl HomophoneDictionary {
    pub fn load<R: BufRead>(source: R, inv: &SyllableInventory) -> Result<Self, DictionaryError> {
        let mut char_to_pinyin = HashMap::new();
        let mut pinyin_to_chars: HashMap<SyllableId, Vec<char>> = HashMap::new();
        let mut chars = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, readings) = line
                .split_once('\t')
                .ok_or(DictionaryError::Malformed { line: lineno })?;
            let key: String = key.trim().nfc().collect();
            let mut it = key.chars();
            let ch = match (it.next(), it.next()) {
                (Some(c), None) => c,
                _ => {
                    return Err(DictionaryError::NotSingleChar {
                        line: lineno,
                        key,
                    })
                }
            };
            if char_to_pinyin.contains_key(&ch) {
                return Err(DictionaryError::Duplicate { line: lineno, ch });
            }
            let mut ids = Vec::new();
            for syl in readings.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let id = inv.id(syl).ok_or_else(|| DictionaryError::UnknownSyllable {
                    line: lineno,
                    syllable: syl.to_string(),
                })?;
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            if ids.is_empty() {
                return Err(DictionaryError::Malformed { line: lineno });
            }
            for &id in &ids {
                pinyin_to_chars.entry(id).or_default().push(ch);
            }
            char_to_pinyin.insert(ch, ids);
            chars.push(ch);
        }
        Ok(Self {
            char_to_pinyin,
            pinyin_to_chars,
            chars,
        })
    }

    pub fn from_tsv(text: &str, inv: &SyllableInventory) -> Result<Self, DictionaryError> {
        Self::load(text.as_bytes(), inv)
    }

    /// The dictionary shipped with the crate, bound to the shipped inventory.
    pub fn shipped(inv: &SyllableInventory) -> Result<Self, DictionaryError> {
        Self::from_tsv(crate::SHIPPED_DICTIONARY, inv)
    }

    pub fn readings(&self, ch: char) -> &[SyllableId] {
        self.char_to_pinyin.get(&ch).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Characters reading `syl`, most frequent first.
    pub fn homophones(&self, syl: SyllableId) -> &[char] {
        self.pinyin_to_chars.get(&syl).map(Vec::as_slice).unwrap_or(&[])
    }

    /// True when any reading of `ch` equals `syl`.
    pub fn reads_as(&self, ch: char, syl: SyllableId) -> bool {
        self.readings(ch).contains(&syl)
    }

    pub fn contains(&self, ch: char) -> bool {
        self.char_to_pinyin.contains_key(&ch)
    }

    /// All characters in frequency order.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Checks that the two maps are inverses of each other.
    pub fn is_consistent(&self) -> bool {
        let forward = self
            .char_to_pinyin
            .iter()
            .all(|(c, ids)| ids.iter().all(|s| self.homophones(*s).contains(c)));
        let backward = self
            .pinyin_to_chars
            .iter()
            .all(|(s, cs)| cs.iter().all(|c| self.reads_as(*c, *s)));
        forward && backward
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharReadings {
    pub ch: char,
    pub syllables: Vec<SyllableId>,
    /// False when the character is absent from the dictionary.
    pub known: bool,
}

pub fn chars_to_pinyin(text: &str, dict: &HomophoneDictionary) -> Vec<CharReadings> {
    text.nfc()
        .map(|ch| {
            let syllables = dict.readings(ch).to_vec();
            CharReadings {
                ch,
                known: !syllables.is_empty(),
                syllables,
            }
        })
        .collect()
}

/// First reading of every known character; unknown characters are skipped.
pub fn reference_pinyin(text: &str, dict: &HomophoneDictionary) -> Vec<SyllableId> {
    chars_to_pinyin(text, dict)
        .into_iter()
        .filter_map(|r| r.syllables.first().copied())
        .collect()
}
