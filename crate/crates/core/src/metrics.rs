//! Character error rate with substitution/deletion/insertion accounting.

use serde::Serialize;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    /// Reference length.
    pub n: usize,
}

impl EditCounts {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Length of the hypothesis implied by the alignment.
    pub fn hyp_len(&self) -> usize {
        self.n - self.deletions + self.insertions
    }

    fn add(&mut self, other: &EditCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.n += other.n;
    }
}

/// Unicode scalar values after NFC normalization.
pub fn nfc_chars(s: &str) -> Vec<char> {
    s.nfc().collect()
}

/// Counts for `ref`/`hyp` strings, compared per character after NFC.
pub fn edit_counts(reference: &str, hyp: &str) -> EditCounts {
    edit_counts_seq(&nfc_chars(reference), &nfc_chars(hyp))
}

/// Unit-cost Levenshtein alignment. Among equal-cost alignments the
/// backtrace prefers substitution, then deletion, then insertion.
pub fn edit_counts_seq<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
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
            let diag = dp[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut counts = EditCounts {
        n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let differs = reference[i - 1] != hyp[j - 1];
            if dp[(i - 1) * w + j - 1] + usize::from(differs) == here {
                counts.substitutions += usize::from(differs);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * w + j] + 1 == here {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cer {
    pub value: f64,
    /// Set when the reference is empty but the hypothesis is not; `value`
    /// then reports insertions over 1.
    pub undefined_reference: bool,
}

pub fn cer(c: &EditCounts) -> Cer {
    if c.n == 0 {
        return Cer {
            value: c.insertions as f64,
            undefined_reference: c.insertions > 0,
        };
    }
    Cer {
        value: c.distance() as f64 / c.n as f64,
        undefined_reference: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusCer {
    pub pooled: EditCounts,
    pub cer: Cer,
    pub per_utterance: Vec<EditCounts>,
}

/// Micro-averaged CER: total edits over total reference characters.
pub fn corpus_cer<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> CorpusCer {
    let per_utterance: Vec<EditCounts> = pairs
        .iter()
        .map(|(r, h)| edit_counts(r.as_ref(), h.as_ref()))
        .collect();
    let mut pooled = EditCounts::default();
    for c in &per_utterance {
        pooled.add(c);
    }
    CorpusCer {
        pooled,
        cer: cer(&pooled),
        per_utterance,
    }
}
