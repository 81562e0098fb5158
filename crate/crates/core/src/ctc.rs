//! CTC collapse, forward-backward loss, greedy decoding and prefix beam search.
//!
//! Token id 0 is the blank. Everything runs in the natural-log domain.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::posterior::{log_add, LogGrid, LogProbs, BLANK_ID};

#[derive(Debug, Error, PartialEq)]
pub enum CtcError {
    #[error("target of length {target_len} needs at least {required} frames, got {frames}")]
    Infeasible {
        target_len: usize,
        required: usize,
        frames: usize,
    },
    #[error("target contains the blank id at position {0}")]
    BlankInTarget(usize),
    #[error("token id {id} out of range for vocab size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("beam search needs beam_width >= k >= 1 (beam_width {beam_width}, k {k})")]
    BeamParams { beam_width: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_score: f64,
}

/// Distinct hypotheses sorted by descending score.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NBestList {
    pub items: Vec<Hypothesis>,
}

impl NBestList {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.items.first()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse(alignment: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &tok in alignment {
        if Some(tok) != prev && tok != BLANK_ID {
            out.push(tok);
        }
        prev = Some(tok);
    }
    out
}

/// Minimum number of frames able to emit `target`.
pub fn min_frames(target: &[u32]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcLoss {
    /// `-ln P(target)`; `+inf` when every alignment has zero probability.
    pub loss: f64,
    /// d loss / d log-prob, same shape as the input.
    pub grad: LogGrid,
}

fn check_target<P: LogProbs + ?Sized>(p: &P, target: &[u32]) -> Result<(), CtcError> {
    for (i, &id) in target.iter().enumerate() {
        if id == BLANK_ID {
            return Err(CtcError::BlankInTarget(i));
        }
        if id as usize >= p.vocab_size() {
            return Err(CtcError::TokenOutOfRange {
                id,
                vocab_size: p.vocab_size(),
            });
        }
    }
    let required = min_frames(target);
    if p.frames() < required {
        return Err(CtcError::Infeasible {
            target_len: target.len(),
            required,
            frames: p.frames(),
        });
    }
    Ok(())
}

/// Forward variables over the blank-interleaved target, `frames × (2L+1)`.
fn forward<P: LogProbs + ?Sized>(p: &P, target: &[u32]) -> Vec<f64> {
    let t_len = p.frames();
    let s_len = 2 * target.len() + 1;
    let label = |s: usize| if s.is_multiple_of(2) { BLANK_ID } else { target[s / 2] };
    let can_skip = |s: usize| s >= 2 && s % 2 == 1 && label(s) != label(s - 2);
    let mut alpha = vec![f64::NEG_INFINITY; t_len * s_len];
    if t_len == 0 {
        return alpha;
    }
    alpha[0] = p.log_prob(0, BLANK_ID as usize);
    if s_len > 1 {
        alpha[1] = p.log_prob(0, label(1) as usize);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = acc + p.log_prob(t, label(s) as usize);
        }
    }
    alpha
}

/// `ln P(target | p)` summed over all alignments; `-inf` when infeasible.
pub fn sequence_log_prob<P: LogProbs + ?Sized>(p: &P, target: &[u32]) -> f64 {
    let t_len = p.frames();
    if t_len == 0 {
        return if target.is_empty() { 0.0 } else { f64::NEG_INFINITY };
    }
    let s_len = 2 * target.len() + 1;
    let alpha = forward(p, target);
    let last = (t_len - 1) * s_len;
    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    log_p
}

/// CTC negative log-likelihood with its gradient, via forward-backward.
///
/// The gradient treats every grid entry as a free variable, so it equals
/// minus the expected occupancy of each (frame, token) under the alignment
/// posterior.
pub fn ctc_loss<P: LogProbs + ?Sized>(p: &P, target: &[u32]) -> Result<CtcLoss, CtcError> {
    check_target(p, target)?;
    let t_len = p.frames();
    let v = p.vocab_size();
    let mut grad = LogGrid::new(t_len, v, vec![0.0; t_len * v]);
    if t_len == 0 {
        return Ok(CtcLoss { loss: 0.0, grad });
    }

    let s_len = 2 * target.len() + 1;
    let label = |s: usize| if s.is_multiple_of(2) { BLANK_ID } else { target[s / 2] };
    let can_skip = |s: usize| s >= 2 && s % 2 == 1 && label(s) != label(s - 2);
    let ninf = f64::NEG_INFINITY;
    let alpha = forward(p, target);

    // beta[t][s]: log mass of frames t+1.. given state s at frame t
    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = (t + 1) * s_len;
            let step = |s2: usize| p.log_prob(t + 1, label(s2) as usize) + beta[next + s2];
            let mut acc = step(s);
            if s + 1 < s_len {
                acc = log_add(acc, step(s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, step(s + 2));
            }
            beta[t * s_len + s] = acc;
        }
    }

    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if log_p == ninf {
        return Ok(CtcLoss {
            loss: f64::INFINITY,
            grad,
        });
    }
    for t in 0..t_len {
        for s in 0..s_len {
            let occ = alpha[t * s_len + s] + beta[t * s_len + s] - log_p;
            if occ > ninf {
                grad.values[t * v + label(s) as usize] -= occ.exp();
            }
        }
    }
    Ok(CtcLoss { loss: -log_p, grad })
}

/// Best single path, collapsed. Ties go to the lowest token id.
pub fn greedy_decode<P: LogProbs + ?Sized>(p: &P) -> Hypothesis {
    let mut path = Vec::with_capacity(p.frames());
    let mut score = 0.0;
    for t in 0..p.frames() {
        let mut best = 0;
        let mut best_lp = p.log_prob(t, 0);
        for k in 1..p.vocab_size() {
            let lp = p.log_prob(t, k);
            if lp > best_lp {
                best = k;
                best_lp = lp;
            }
        }
        path.push(best as u32);
        score += best_lp;
    }
    Hypothesis {
        tokens: collapse(&path),
        log_score: score,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamOptions {
    pub beam_width: usize,
    pub k: usize,
    /// Non-blank tokens whose frame log-prob falls below this are not used
    /// to extend prefixes. `-inf` disables the cutoff.
    pub token_cutoff: f64,
}

impl BeamOptions {
    pub fn new(beam_width: usize, k: usize) -> Self {
        Self {
            beam_width,
            k,
            token_cutoff: f64::NEG_INFINITY,
        }
    }
}

impl Default for BeamOptions {
    fn default() -> Self {
        Self::new(16, 5)
    }
}

#[derive(Debug, Clone, Copy)]
struct PrefixMass {
    blank: f64,
    non_blank: f64,
}

impl PrefixMass {
    const EMPTY: Self = Self {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
    };

    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

/// Higher score first, then shorter, then lexicographically smaller.
fn rank(a: (&[u32], f64), b: (&[u32], f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then(a.0.len().cmp(&b.0.len()))
        .then_with(|| a.0.cmp(b.0))
}

pub fn prefix_beam_search<P: LogProbs + ?Sized>(
    p: &P,
    beam_width: usize,
    k: usize,
) -> Result<NBestList, CtcError> {
    prefix_beam_search_with(p, &BeamOptions::new(beam_width, k))
}

/// CTC prefix beam search keeping blank- and non-blank-ending mass apart.
///
/// Surviving prefixes are rescored with their exact forward probability
/// before ranking, so reported scores do not depend on which alignments the
/// beam happened to prune.
pub fn prefix_beam_search_with<P: LogProbs + ?Sized>(
    p: &P,
    opts: &BeamOptions,
) -> Result<NBestList, CtcError> {
    if opts.k == 0 || opts.beam_width < opts.k {
        return Err(CtcError::BeamParams {
            beam_width: opts.beam_width,
            k: opts.k,
        });
    }
    let blank = BLANK_ID as usize;
    let mut beam: Vec<(Vec<u32>, PrefixMass)> = vec![(
        Vec::new(),
        PrefixMass {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    )];

    for t in 0..p.frames() {
        // Beam prefixes are distinct, so an extension can only coincide with
        // another beam prefix; all other extensions stay as (parent, token)
        // until they survive the cut.
        let index: HashMap<&[u32], usize> = beam.iter().enumerate().map(|(i, (q, _))| (q.as_slice(), i)).collect();
        let mut children: Vec<Vec<(u32, usize)>> = vec![Vec::new(); beam.len()];
        for (j, (q, _)) in beam.iter().enumerate() {
            if let Some((&c, parent)) = q.split_last() {
                if let Some(&i) = index.get(parent) {
                    children[i].push((c, j));
                }
            }
        }
        let mut carried = vec![PrefixMass::EMPTY; beam.len()];
        let mut fresh: Vec<(usize, u32, f64)> = Vec::new();
        let lp_blank = p.log_prob(t, blank);
        for (i, (prefix, mass)) in beam.iter().enumerate() {
            let total = mass.total();
            carried[i].blank = log_add(carried[i].blank, total + lp_blank);
            let last = prefix.last().copied();
            for c in 1..p.vocab_size() {
                let lp = p.log_prob(t, c);
                if lp == f64::NEG_INFINITY || lp < opts.token_cutoff {
                    continue;
                }
                let c = c as u32;
                let gain = if last == Some(c) {
                    // repeat needs a blank in between to start a new token
                    carried[i].non_blank = log_add(carried[i].non_blank, mass.non_blank + lp);
                    mass.blank + lp
                } else {
                    total + lp
                };
                match children[i].iter().find(|&&(d, _)| d == c) {
                    Some(&(_, j)) => carried[j].non_blank = log_add(carried[j].non_blank, gain),
                    None => fresh.push((i, c, gain)),
                }
            }
        }
        let mut totals: Vec<f64> = carried
            .iter()
            .map(PrefixMass::total)
            .chain(fresh.iter().map(|e| e.2))
            .filter(|&v| v > f64::NEG_INFINITY)
            .collect();
        let cut = if totals.len() > opts.beam_width {
            let (_, nth, _) = totals.select_nth_unstable_by(opts.beam_width - 1, |a, b| b.total_cmp(a));
            *nth
        } else {
            f64::NEG_INFINITY
        };
        let keep = |v: f64| v > f64::NEG_INFINITY && v >= cut;
        let mut ranked: Vec<(Vec<u32>, f64, PrefixMass)> = Vec::new();
        for (i, mass) in carried.iter().enumerate() {
            if keep(mass.total()) {
                ranked.push((beam[i].0.clone(), mass.total(), *mass));
            }
        }
        for &(i, c, gain) in &fresh {
            if keep(gain) {
                let mut q = beam[i].0.clone();
                q.push(c);
                let mass = PrefixMass {
                    blank: f64::NEG_INFINITY,
                    non_blank: gain,
                };
                ranked.push((q, gain, mass));
            }
        }
        ranked.sort_by(|a, b| rank((&a.0, a.1), (&b.0, b.1)));
        ranked.truncate(opts.beam_width);
        beam = ranked.into_iter().map(|(p, _, m)| (p, m)).collect();
    }

    let mut finals: Vec<(Vec<u32>, f64)> = beam
        .into_iter()
        .map(|(prefix, _)| {
            let exact = sequence_log_prob(p, &prefix);
            (prefix, exact)
        })
        .filter(|e| e.1 > f64::NEG_INFINITY)
        .collect();
    finals.sort_by(|a, b| rank((&a.0, a.1), (&b.0, b.1)));
    finals.truncate(opts.k);
    Ok(NBestList {
        items: finals
            .into_iter()
            .map(|(tokens, log_score)| Hypothesis {
                tokens,
                log_score: log_score.min(0.0),
            })
            .collect(),
    })
}
