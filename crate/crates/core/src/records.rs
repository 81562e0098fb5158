//! Line-delimited JSON records exchanged between decoding, refinement and
//! dataset construction.

use std::io::{self, BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestEntry {
    pub text: String,
    pub log_score: f64,
}

/// One decoded utterance: character N-best plus the best Pinyin sequence
/// rendered as space-separated syllables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestRecord {
    pub utt: String,
    pub nbest: Vec<NBestEntry>,
    pub pinyin: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineSource {
    Ngram,
    Chat,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub utt: String,
    pub text: String,
    pub log_score: Option<f64>,
    pub source: RefineSource,
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut sink: W) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut sink, item)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(source: R) -> io::Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}
