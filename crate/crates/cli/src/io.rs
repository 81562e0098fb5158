use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use pinrefine_core::records::{read_jsonl, write_jsonl};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// `utt<TAB>text` lines; blank lines are skipped.
pub fn read_refs(path: &Path) -> Result<Vec<(String, String)>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((utt, text)) = line.split_once('\t') else {
            bail!("{}:{}: expected utt<TAB>text", path.display(), i + 1);
        };
        check_utt_id(utt).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push((utt.to_string(), text.trim().to_string()));
    }
    Ok(out)
}

/// Utterance ids become file names, so keep them to a safe alphabet.
pub fn check_utt_id(utt: &str) -> Result<()> {
    let ok = !utt.is_empty()
        && utt
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !utt.starts_with('.');
    if !ok {
        bail!("utterance id {utt:?} must use only [A-Za-z0-9_.-]");
    }
    Ok(())
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_jsonl(items, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Pretty JSON report on stdout.
pub fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    serde_json::to_writer_pretty(&mut lock, value)?;
    writeln!(lock)?;
    Ok(())
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}
