//! Add-k smoothed character n-gram scorer.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use super::scorer::{Next, Scorer, ScorerError};

#[derive(Debug, Error, PartialEq)]
pub enum NgramError {
    #[error("order {0} outside [1, 5]")]
    Order(usize),
    #[error("smoothing constant must be positive, got {0}")]
    Smoothing(f64),
    #[error("corpus has no non-empty lines")]
    EmptyCorpus,
    #[error("malformed model: {0}")]
    Malformed(String),
}

const BOS: u32 = 0;
const EOS: u32 = 1;
const UNK: u32 = 2;
const FIRST_CHAR: u32 = 3;

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Conditional character model `P(next | previous order-1 symbols)`.
///
/// The predicted vocabulary is every corpus character plus an unknown-char
/// class and the end marker, so each context's distribution sums to one
/// over `|chars| + 2` outcomes. Unseen contexts are uniform.
#[derive(Debug, Clone)]
pub struct NgramScorer {
    order: usize,
    k: f64,
    chars: Vec<char>,
    ids: HashMap<char, u32>,
    counts: HashMap<Vec<u32>, ContextCounts>,
}

#[derive(Serialize, Deserialize)]
struct SerializedModel {
    order: usize,
    k: f64,
    chars: String,
    /// `[context..., next, count]`, sorted.
    counts: Vec<Vec<u64>>,
}

impl NgramScorer {
    pub fn train<I, S>(corpus: I, order: usize, k: f64) -> Result<Self, NgramError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if !(1..=5).contains(&order) {
            return Err(NgramError::Order(order));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(NgramError::Smoothing(k));
        }
        let lines: Vec<Vec<char>> = corpus
            .into_iter()
            .map(|l| l.as_ref().trim().nfc().collect::<Vec<char>>())
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(NgramError::EmptyCorpus);
        }
        let mut uniq: Vec<char> = lines.iter().flatten().copied().collect();
        uniq.sort_unstable();
        uniq.dedup();
        let mut model = Self::empty(order, k, uniq);
        for line in &lines {
            let mut syms = vec![BOS; order - 1];
            syms.extend(line.iter().map(|c| model.ids[c]));
            syms.push(EOS);
            for end in order - 1..syms.len() {
                let ctx = syms[end + 1 - order..end].to_vec();
                let entry = model.counts.entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(syms[end]).or_default() += 1;
            }
        }
        Ok(model)
    }

    fn empty(order: usize, k: f64, chars: Vec<char>) -> Self {
        let ids = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, FIRST_CHAR + i as u32))
            .collect();
        Self {
            order,
            k,
            chars,
            ids,
            counts: HashMap::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of predicted outcomes: characters, unknown and end.
    pub fn outcomes(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    fn sym(&self, c: char) -> u32 {
        self.ids.get(&c).copied().unwrap_or(UNK)
    }

    fn context(&self, prefix: &[char]) -> Vec<u32> {
        let need = self.order - 1;
        let mut ctx = Vec::with_capacity(need);
        let take = prefix.len().min(need);
        ctx.extend(std::iter::repeat_n(BOS, need - take));
        ctx.extend(prefix[prefix.len() - take..].iter().map(|&c| self.sym(c)));
        ctx
    }

    fn log_prob_sym(&self, ctx: &[u32], next: u32) -> f64 {
        let denom_k = self.k * self.outcomes() as f64;
        match self.counts.get(ctx) {
            Some(cc) => {
                let c = cc.next.get(&next).copied().unwrap_or(0) as f64;
                ((c + self.k) / (cc.total as f64 + denom_k)).ln()
            }
            None => -(self.outcomes() as f64).ln(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut counts: Vec<Vec<u64>> = Vec::new();
        for (ctx, cc) in &self.counts {
            for (&next, &n) in &cc.next {
                let mut row: Vec<u64> = ctx.iter().map(|&s| s as u64).collect();
                row.push(next as u64);
                row.push(n);
                counts.push(row);
            }
        }
        counts.sort();
        let model = SerializedModel {
            order: self.order,
            k: self.k,
            chars: self.chars.iter().collect(),
            counts,
        };
        serde_json::to_string(&model).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NgramError> {
        let m: SerializedModel =
            serde_json::from_str(text).map_err(|e| NgramError::Malformed(e.to_string()))?;
        if !(1..=5).contains(&m.order) {
            return Err(NgramError::Order(m.order));
        }
        if !(m.k > 0.0) {
            return Err(NgramError::Smoothing(m.k));
        }
        let mut model = Self::empty(m.order, m.k, m.chars.chars().collect());
        let max_sym = FIRST_CHAR as u64 + model.chars.len() as u64;
        for row in m.counts {
            if row.len() != m.order + 1 || row[..m.order].iter().any(|&s| s >= max_sym) {
                return Err(NgramError::Malformed(format!("bad count row {row:?}")));
            }
            let ctx: Vec<u32> = row[..m.order - 1].iter().map(|&s| s as u32).collect();
            let entry = model.counts.entry(ctx).or_default();
            entry.total += row[m.order];
            *entry.next.entry(row[m.order - 1] as u32).or_default() += row[m.order];
        }
        Ok(model)
    }

    /// Sizes reported by the CLI after training.
    pub fn summary(&self) -> BTreeMap<&'static str, u64> {
        let events: u64 = self.counts.values().map(|c| c.total).sum();
        BTreeMap::from([
            ("order", self.order as u64),
            ("chars", self.chars.len() as u64),
            ("contexts", self.counts.len() as u64),
            ("events", events),
        ])
    }
}

impl Scorer for NgramScorer {
    fn score(&self, prefix: &[char], next: Next) -> Result<f64, ScorerError> {
        let ctx = self.context(prefix);
        let sym = match next {
            Next::Char(c) => self.sym(c),
            Next::End => EOS,
        };
        Ok(self.log_prob_sym(&ctx, sym))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total_mass(m: &NgramScorer, prefix: &[char]) -> f64 {
        let mut s: f64 = m
            .chars()
            .iter()
            .map(|&c| m.score(prefix, Next::Char(c)).unwrap().exp())
            .sum();
        s += m.score(prefix, Next::Char('\u{E000}')).unwrap().exp();
        s + m.score(prefix, Next::End).unwrap().exp()
    }

    #[test]
    fn deterministic_corpus_limit() {
        let m = NgramScorer::train(["ab", "ab"], 2, 1e-9).unwrap();
        let lp = m.score(&['a'], Next::Char('b')).unwrap();
        assert!(lp.abs() < 1e-8, "{lp}");
    }

    #[test]
    fn unseen_context_is_uniform() {
        let m = NgramScorer::train(["ab", "cd"], 3, 0.5).unwrap();
        let lp = m.score(&['d', 'a'], Next::Char('b')).unwrap();
        assert!((lp + (m.outcomes() as f64).ln()).abs() < 1e-12);
        assert_eq!(m.outcomes(), 6);
    }

    #[test]
    fn distributions_normalize() {
        let m = NgramScorer::train(["我想去银行", "银行很近", "我想回家"], 3, 0.1).unwrap();
        for prefix in ["", "我", "我想", "银行", "zz", "行很"] {
            let p: Vec<char> = prefix.chars().collect();
            assert!((total_mass(&m, &p) - 1.0).abs() < 1e-9, "{prefix}");
        }
    }

    #[test]
    fn sequence_score_sums_steps() {
        let m = NgramScorer::train(["abc", "abd"], 2, 0.1).unwrap();
        let seq = ['a', 'b', 'c'];
        let manual = m.score(&[], Next::Char('a')).unwrap()
            + m.score(&['a'], Next::Char('b')).unwrap()
            + m.score(&['a', 'b'], Next::Char('c')).unwrap()
            + m.score(&seq, Next::End).unwrap();
        assert!((m.score_sequence(&seq).unwrap() - manual).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let m = NgramScorer::train(["今天下雨", "今天晴"], 3, 0.2).unwrap();
        let json = m.to_json();
        let back = NgramScorer::from_json(&json).unwrap();
        assert_eq!(back.to_json(), json);
        let p = ['今', '天'];
        assert_eq!(
            m.score(&p, Next::Char('下')).unwrap(),
            back.score(&p, Next::Char('下')).unwrap()
        );
    }

    #[test]
    fn training_errors() {
        assert_eq!(
            NgramScorer::train(["", "  "], 2, 0.1).unwrap_err(),
            NgramError::EmptyCorpus
        );
        assert_eq!(NgramScorer::train(["a"], 0, 0.1).unwrap_err(), NgramError::Order(0));
        assert_eq!(NgramScorer::train(["a"], 6, 0.1).unwrap_err(), NgramError::Order(6));
        assert!(matches!(
            NgramScorer::train(["a"], 2, 0.0),
            Err(NgramError::Smoothing(_))
        ));
    }

    #[test]
    fn unigram_ignores_context() {
        let m = NgramScorer::train(["aab"], 1, 1.0).unwrap();
        let a = m.score(&[], Next::Char('a')).unwrap();
        assert_eq!(a, m.score(&['b', 'b'], Next::Char('a')).unwrap());
        // (2 + 1) / (4 + 4)
        assert!((a - (3.0f64 / 8.0).ln()).abs() < 1e-12);
    }
}
