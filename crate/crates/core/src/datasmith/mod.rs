//! Instruction-tuning data built from hypotheses with controlled error rates.
//!
//! Real multi-checkpoint decodes can be supplied as N-best records; where
//! they are unavailable, homophone-biased synthetic corruption emulates
//! checkpoints of different quality.

pub mod prompt;

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{SyllableId, SyllableInventory};
use crate::metrics::{cer, edit_counts, edit_counts_seq, nfc_chars};
use crate::records::NBestRecord;
use crate::refine::dict::{chars_to_pinyin, HomophoneDictionary};

#[derive(Debug, Error, PartialEq)]
pub enum DatasmithError {
    #[error("cannot corrupt empty text")]
    EmptyText,
    #[error("edit mix must be non-negative and sum to 1, got sub {p_sub} del {p_del} ins {p_ins}")]
    Mix { p_sub: f64, p_del: f64, p_ins: f64 },
    #[error("error rate target {0} outside [0, 1)")]
    CerTarget(f64),
    #[error("dictionary is empty")]
    EmptyDictionary,
    #[error("reference for utterance {0:?} is empty")]
    EmptyReference(String),
    #[error("corruption source {0:?} needs k >= 1")]
    ZeroK(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditMix {
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
}

impl EditMix {
    pub const SUB_ONLY: Self = Self {
        p_sub: 1.0,
        p_del: 0.0,
        p_ins: 0.0,
    };

    fn validate(&self) -> Result<(), DatasmithError> {
        let ok = [self.p_sub, self.p_del, self.p_ins]
            .iter()
            .all(|p| p.is_finite() && *p >= 0.0)
            && (self.p_sub + self.p_del + self.p_ins - 1.0).abs() < 1e-6;
        if ok {
            Ok(())
        } else {
            Err(DatasmithError::Mix {
                p_sub: self.p_sub,
                p_del: self.p_del,
                p_ins: self.p_ins,
            })
        }
    }
}

impl Default for EditMix {
    fn default() -> Self {
        Self {
            p_sub: 0.7,
            p_del: 0.15,
            p_ins: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptConfig {
    pub cer_target: f64,
    pub mix: EditMix,
    /// Probability that a substitution draws a homophone when one exists.
    pub homophone_bias: f64,
}

impl CorruptConfig {
    pub fn new(cer_target: f64) -> Self {
        Self {
            cer_target,
            mix: EditMix::default(),
            homophone_bias: 0.7,
        }
    }
}

/// Number of edits for a target rate; guards against `0.3 * 10 = 3.0000000000000004`.
pub fn edit_budget(cer_target: f64, n: usize) -> usize {
    ((cer_target * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Most frequent homophones considered per reading.
const HOMOPHONE_POOL: usize = 10;
const MAX_ATTEMPTS: usize = 32;

#[derive(Clone, Copy, PartialEq)]
enum Op {
    Sub,
    Del,
}

fn substitute(ch: char, bias: f64, dict: &HomophoneDictionary, rng: &mut ChaCha8Rng) -> char {
    if rng.gen::<f64>() < bias {
        let mut pool: Vec<char> = Vec::new();
        for &syl in dict.readings(ch) {
            for &h in dict.homophones(syl).iter().take(HOMOPHONE_POOL) {
                if h != ch && !pool.contains(&h) {
                    pool.push(h);
                }
            }
        }
        if let Some(&h) = pool.choose(rng) {
            return h;
        }
    }
    random_other(ch, dict, rng)
}

fn random_other(ch: char, dict: &HomophoneDictionary, rng: &mut ChaCha8Rng) -> char {
    let all = dict.chars();
    loop {
        let c = all[rng.gen_range(0..all.len())];
        if c != ch || all.len() == 1 {
            return c;
        }
    }
}

/// Applies `ceil(cer_target·N)` edits drawn from `mix`.
///
/// Edits land on distinct characters and insertions avoid gaps next to
/// deletions; the draw is repeated (deterministically) until the realized
/// edit distance equals the budget, up to a fixed number of attempts.
pub fn corrupt(
    text: &str,
    cfg: &CorruptConfig,
    dict: &HomophoneDictionary,
    seed: u64,
) -> Result<String, DatasmithError> {
    cfg.mix.validate()?;
    if !(0.0..1.0).contains(&cfg.cer_target) {
        return Err(DatasmithError::CerTarget(cfg.cer_target));
    }
    let chars = nfc_chars(text);
    let n = chars.len();
    if n == 0 {
        return Err(DatasmithError::EmptyText);
    }
    if dict.is_empty() {
        return Err(DatasmithError::EmptyDictionary);
    }
    let budget = edit_budget(cfg.cer_target, n);
    if budget == 0 {
        return Ok(chars.iter().collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let (mut subs, mut dels, mut ins) = (0usize, 0usize, 0usize);
        for _ in 0..budget {
            let r = rng.gen::<f64>();
            if r < cfg.mix.p_sub {
                subs += 1;
            } else if r < cfg.mix.p_sub + cfg.mix.p_del {
                dels += 1;
            } else {
                ins += 1;
            }
        }
        // cannot touch more characters than exist
        while subs + dels > n {
            if dels > 0 {
                dels -= 1;
            } else {
                subs -= 1;
            }
            ins += 1;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut ops: Vec<Option<Op>> = vec![None; n];
        for (rank, &i) in order.iter().take(subs + dels).enumerate() {
            ops[i] = Some(if rank < subs { Op::Sub } else { Op::Del });
        }
        let deleted = |i: usize| i < n && ops[i] == Some(Op::Del);
        let mut gaps: Vec<usize> = (0..=n)
            .filter(|&g| !(g > 0 && deleted(g - 1)) && !deleted(g))
            .collect();
        if gaps.is_empty() {
            gaps = (0..=n).collect();
        }
        let mut inserts = vec![0usize; n + 1];
        for _ in 0..ins {
            inserts[gaps[rng.gen_range(0..gaps.len())]] += 1;
        }

        let mut result = Vec::with_capacity(n + ins);
        for g in 0..=n {
            for _ in 0..inserts[g] {
                let prev = result.last().copied().unwrap_or('\0');
                result.push(random_other(prev, dict, &mut rng));
            }
            if g < n {
                match ops[g] {
                    Some(Op::Sub) => result.push(substitute(chars[g], cfg.homophone_bias, dict, &mut rng)),
                    Some(Op::Del) => {}
                    None => result.push(chars[g]),
                }
            }
        }
        out = result.iter().collect();
        if edit_counts_seq(&chars, &result).distance() == budget {
            break;
        }
    }
    Ok(out)
}

/// Replaces `ceil(rate·M)` syllables with near-spelling confusions.
pub fn corrupt_pinyin(
    units: &[SyllableId],
    rate: f64,
    inv: &SyllableInventory,
    seed: u64,
) -> Vec<SyllableId> {
    let budget = edit_budget(rate, units.len()).min(units.len());
    let mut out = units.to_vec();
    if budget == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.shuffle(&mut rng);
    for &i in order.iter().take(budget) {
        let orig = inv.syllable(units[i]).unwrap_or("");
        let close: Vec<SyllableId> = inv
            .syllables()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.as_str() != orig)
            .filter(|(_, s)| {
                let d = edit_counts_seq(orig.as_bytes(), s.as_bytes()).distance();
                d as f64 <= 0.5 * orig.len().max(s.len()) as f64
            })
            .map(|(j, _)| SyllableId(j as u32))
            .collect();
        out[i] = match close.choose(&mut rng) {
            Some(&s) => s,
            None => loop {
                let s = SyllableId(rng.gen_range(0..inv.len() as u32));
                if s != units[i] || inv.len() == 1 {
                    break s;
                }
            },
        };
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionInstance {
    pub instruction: String,
    pub input: String,
    pub output: String,
    /// Set when the Pinyin in `input` is not fully covered by the inventory.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pinyin_flagged: bool,
}

impl InstructionInstance {
    pub fn top_hypothesis(&self) -> Option<String> {
        prompt::parse_input(&self.input).and_then(|p| p.candidates.into_iter().next())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptSource {
    pub name: String,
    pub corrupt: CorruptConfig,
    /// Syllable error rate applied to the reference Pinyin.
    pub pinyin_cer: f64,
    /// Hypotheses per instance.
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum HypothesisSource {
    /// N-best records from a real decode, keyed by utterance id.
    Decoded {
        name: String,
        records: HashMap<String, NBestRecord>,
    },
    Corrupt(CorruptSource),
}

impl HypothesisSource {
    pub fn name(&self) -> &str {
        match self {
            Self::Decoded { name, .. } => name,
            Self::Corrupt(c) => &c.name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BuildOptions {
    /// Annotate candidates with their log scores when the source has them.
    pub include_scores: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BuildOutput {
    #[serde(skip)]
    pub instances: Vec<InstructionInstance>,
    pub dedup_removed: usize,
    pub flagged: usize,
    /// (ref, source) pairs without a decoded record.
    pub missing: usize,
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

pub fn validate_sources(sources: &[HypothesisSource]) -> Result<(), DatasmithError> {
    for s in sources {
        if let HypothesisSource::Corrupt(c) = s {
            if c.k == 0 {
                return Err(DatasmithError::ZeroK(c.name.clone()));
            }
            c.corrupt.mix.validate()?;
            if !(0.0..1.0).contains(&c.corrupt.cer_target) {
                return Err(DatasmithError::CerTarget(c.corrupt.cer_target));
            }
        }
    }
    Ok(())
}

/// Instances produced for one reference, before deduplication.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RefInstances {
    pub instances: Vec<InstructionInstance>,
    pub missing: usize,
}

/// One instance per source for the reference at `idx`. Depends only on its
/// arguments, so references can be processed in parallel.
pub fn instances_for_ref(
    idx: usize,
    utt: &str,
    reference: &str,
    sources: &[HypothesisSource],
    dict: &HomophoneDictionary,
    inv: &SyllableInventory,
    opts: &BuildOptions,
) -> Result<RefInstances, DatasmithError> {
    let reference: String = nfc_chars(reference).into_iter().collect();
    if reference.trim().is_empty() {
        return Err(DatasmithError::EmptyReference(utt.to_string()));
    }
    let mut out = RefInstances::default();
    for source in sources {
        let (pinyin, hyps, scores, flagged) = match source {
            HypothesisSource::Decoded { records, .. } => {
                let Some(rec) = records.get(utt).filter(|r| !r.nbest.is_empty()) else {
                    out.missing += 1;
                    continue;
                };
                let flagged = inv.parse_spaced(&rec.pinyin).is_err();
                let hyps: Vec<String> = rec.nbest.iter().map(|e| e.text.clone()).collect();
                let scores: Vec<f64> = rec.nbest.iter().map(|e| e.log_score).collect();
                (rec.pinyin.clone(), hyps, Some(scores), flagged)
            }
            HypothesisSource::Corrupt(c) => {
                let readings = chars_to_pinyin(&reference, dict);
                let flagged = readings.iter().any(|r| !r.known);
                let units: Vec<SyllableId> = readings.iter().filter_map(|r| r.syllables.first().copied()).collect();
                let py_seed = mix_seed(c.seed, idx as u64, u64::MAX);
                let noisy = corrupt_pinyin(&units, c.pinyin_cer, inv, py_seed);
                let pinyin = noisy
                    .iter()
                    .map(|&s| inv.syllable(s).unwrap_or("?"))
                    .collect::<Vec<_>>()
                    .join(" ");
                let mut hyps = Vec::with_capacity(c.k);
                for k in 0..c.k {
                    let seed = mix_seed(c.seed, idx as u64, k as u64);
                    hyps.push(corrupt(&reference, &c.corrupt, dict, seed)?);
                }
                (pinyin, hyps, None, flagged)
            }
        };
        let texts: Vec<&str> = hyps.iter().map(String::as_str).collect();
        let scores = if opts.include_scores { scores } else { None };
        out.instances.push(InstructionInstance {
            instruction: prompt::INSTRUCTION.to_string(),
            input: prompt::format_input(&pinyin, &texts, scores.as_deref()),
            output: reference.clone(),
            pinyin_flagged: flagged,
        });
    }
    Ok(out)
}

/// Concatenates per-reference results in order, dropping repeated
/// (input, output) pairs.
pub fn collect_instances<I: IntoIterator<Item = RefInstances>>(per_ref: I) -> BuildOutput {
    let mut out = BuildOutput::default();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for r in per_ref {
        out.missing += r.missing;
        for inst in r.instances {
            if !seen.insert((inst.input.clone(), inst.output.clone())) {
                out.dedup_removed += 1;
                continue;
            }
            out.flagged += usize::from(inst.pinyin_flagged);
            out.instances.push(inst);
        }
    }
    out
}

/// One instance per (reference, source), in reference-major order, with
/// duplicates on (input, output) removed.
pub fn build_instances(
    refs: &[(String, String)],
    sources: &[HypothesisSource],
    dict: &HomophoneDictionary,
    inv: &SyllableInventory,
    opts: &BuildOptions,
) -> Result<BuildOutput, DatasmithError> {
    validate_sources(sources)?;
    let per_ref = refs
        .iter()
        .enumerate()
        .map(|(idx, (utt, reference))| instances_for_ref(idx, utt, reference, sources, dict, inv, opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(collect_instances(per_ref))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub count: usize,
    pub dedup_removed: usize,
    pub flagged_pinyin: usize,
    /// Top-1 hypothesis CER against the output: an exact-zero bin, ten
    /// bins of width 0.1 closed on the right, and an overflow bin.
    pub cer_histogram: Vec<HistogramBin>,
}

pub const HISTOGRAM_BINS: usize = 12;

pub fn histogram_bin(value: f64) -> usize {
    if value <= 0.0 {
        0
    } else if value > 1.0 + 1e-12 {
        HISTOGRAM_BINS - 1
    } else {
        ((value * 10.0 - 1e-9).ceil() as usize).clamp(1, 10)
    }
}

fn bin_label(i: usize) -> String {
    match i {
        0 => "0".to_string(),
        i if i == HISTOGRAM_BINS - 1 => ">1".to_string(),
        i => format!("({:.1},{:.1}]", (i - 1) as f64 / 10.0, i as f64 / 10.0),
    }
}

pub fn dataset_stats(instances: &[InstructionInstance], dedup_removed: usize) -> DatasetStats {
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for inst in instances {
        let top = inst.top_hypothesis().unwrap_or_default();
        counts[histogram_bin(cer(&edit_counts(&inst.output, &top)).value)] += 1;
    }
    DatasetStats {
        count: instances.len(),
        dedup_removed,
        flagged_pinyin: instances.iter().filter(|i| i.pinyin_flagged).count(),
        cer_histogram: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                label: bin_label(i),
                count,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (SyllableInventory, HomophoneDictionary) {
        let inv = SyllableInventory::shipped();
        let dict = HomophoneDictionary::shipped(&inv).unwrap();
        (inv, dict)
    }

    #[test]
    fn zero_target_is_identity() {
        let (_, dict) = setup();
        let out = corrupt("我想去银行", &CorruptConfig::new(0.0), &dict, 1).unwrap();
        assert_eq!(out, "我想去银行");
    }

    #[test]
    fn budget_handles_float_noise() {
        assert_eq!(edit_budget(0.3, 10), 3);
        assert_eq!(edit_budget(0.2, 5), 1);
        assert_eq!(edit_budget(0.25, 10), 3);
        assert_eq!(edit_budget(0.0, 10), 0);
    }

    #[test]
    fn single_homophone_substitution() {
        let (_, dict) = setup();
        let cfg = CorruptConfig {
            cer_target: 0.2,
            mix: EditMix::SUB_ONLY,
            homophone_bias: 1.0,
        };
        for seed in 0..20 {
            let out = corrupt("我想去银行", &cfg, &dict, seed).unwrap();
            let c = edit_counts("我想去银行", &out);
            assert_eq!((c.substitutions, c.deletions, c.insertions), (1, 0, 0));
            // every changed character shares a reading with the original
            for (a, b) in "我想去银行".chars().zip(out.chars()) {
                if a != b {
                    assert!(dict.readings(a).iter().any(|s| dict.reads_as(b, *s)), "{a}->{b}");
                }
            }
        }
    }

    #[test]
    fn exact_edit_count_length_ten() {
        let (_, dict) = setup();
        for seed in 0..50 {
            let out = corrupt("我们正在开会讨论方案", &CorruptConfig::new(0.3), &dict, seed).unwrap();
            assert_eq!(edit_counts("我们正在开会讨论方案", &out).distance(), 3, "seed {seed}: {out}");
        }
    }

    #[test]
    fn corrupt_is_seeded() {
        let (_, dict) = setup();
        let cfg = CorruptConfig::new(0.4);
        let a = corrupt("今天可能会下雨", &cfg, &dict, 9).unwrap();
        assert_eq!(a, corrupt("今天可能会下雨", &cfg, &dict, 9).unwrap());
    }

    #[test]
    fn corrupt_errors() {
        let (_, dict) = setup();
        assert_eq!(
            corrupt("", &CorruptConfig::new(0.1), &dict, 0),
            Err(DatasmithError::EmptyText)
        );
        let bad = CorruptConfig {
            mix: EditMix {
                p_sub: 0.5,
                p_del: 0.1,
                p_ins: 0.1,
            },
            ..CorruptConfig::new(0.1)
        };
        assert!(matches!(corrupt("好", &bad, &dict, 0), Err(DatasmithError::Mix { .. })));
        assert!(matches!(
            corrupt("好", &CorruptConfig::new(1.0), &dict, 0),
            Err(DatasmithError::CerTarget(_))
        ));
    }

    fn source(name: &str, cer: f64, seed: u64) -> HypothesisSource {
        HypothesisSource::Corrupt(CorruptSource {
            name: name.into(),
            corrupt: CorruptConfig::new(cer),
            pinyin_cer: cer,
            k: 3,
            seed,
        })
    }

    #[test]
    fn identity_source_top_equals_output() {
        let (inv, dict) = setup();
        let refs = vec![("u1".to_string(), "我想去银行".to_string())];
        let out = build_instances(&refs, &[source("clean", 0.0, 1)], &dict, &inv, &BuildOptions::default()).unwrap();
        let inst = &out.instances[0];
        assert_eq!(inst.top_hypothesis().unwrap(), inst.output);
        assert!(inst.input.starts_with("Pinyin: wo xiang qu yin "));
        assert!(!inst.pinyin_flagged);
        let stats = dataset_stats(&out.instances, out.dedup_removed);
        assert_eq!(stats.cer_histogram[0].count, 1);
    }

    #[test]
    fn unknown_character_flags_pinyin() {
        let (inv, dict) = setup();
        let refs = vec![("u1".to_string(), "我用AI".to_string())];
        let out = build_instances(&refs, &[source("clean", 0.0, 1)], &dict, &inv, &BuildOptions::default()).unwrap();
        assert_eq!(out.flagged, 1);
        assert!(out.instances[0].pinyin_flagged);
        let line = serde_json::to_string(&out.instances[0]).unwrap();
        assert!(line.contains("\"pinyin_flagged\":true"));
    }

    #[test]
    fn empty_reference_rejected() {
        let (inv, dict) = setup();
        let refs = vec![("u1".to_string(), " ".to_string())];
        assert_eq!(
            build_instances(&refs, &[source("s", 0.1, 1)], &dict, &inv, &BuildOptions::default()),
            Err(DatasmithError::EmptyReference("u1".into()))
        );
    }

    #[test]
    fn empty_stats() {
        let s = dataset_stats(&[], 0);
        assert_eq!(s.count, 0);
        assert!(s.cer_histogram.iter().all(|b| b.count == 0));
        assert_eq!(s.cer_histogram.len(), HISTOGRAM_BINS);
        assert_eq!(s.cer_histogram[3].label, "(0.2,0.3]");
    }

    #[test]
    fn bins() {
        assert_eq!(histogram_bin(0.0), 0);
        assert_eq!(histogram_bin(0.1), 1);
        assert_eq!(histogram_bin(0.3), 3);
        assert_eq!(histogram_bin(0.31), 4);
        assert_eq!(histogram_bin(1.0), 10);
        assert_eq!(histogram_bin(1.5), 11);
    }
}
