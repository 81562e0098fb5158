//! Brute-force reference implementations used by the property tests.
#![allow(dead_code)]

use std::collections::HashMap;

use pinrefine_core::ctc::collapse;
use pinrefine_core::inventory::SyllableInventory;
use pinrefine_core::posterior::{LogGrid, LogProbs};
use pinrefine_core::refine::lattice::{Candidate, Position, RefinementLattice};
use pinrefine_core::refine::search::{local_score, RefineWeights};
use pinrefine_core::refine::Scorer;
use rand::Rng;

/// Row-normalized log grid from uniform logits in `[-spread, spread]`.
pub fn random_grid<R: Rng>(rng: &mut R, frames: usize, vocab: usize, spread: f64) -> LogGrid {
    let mut values = Vec::with_capacity(frames * vocab);
    for _ in 0..frames {
        let row: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-spread..=spread)).collect();
        let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
        values.extend(row.iter().map(|x| x - lse));
    }
    LogGrid::new(frames, vocab, values)
}

/// Unnormalized grid, used for gradient checks on raw scores.
pub fn random_raw_grid<R: Rng>(rng: &mut R, frames: usize, vocab: usize) -> LogGrid {
    let values = (0..frames * vocab).map(|_| rng.gen_range(-3.0..0.0)).collect();
    LogGrid::new(frames, vocab, values)
}

/// Calls `f` with every frame alignment and its linear probability.
pub fn for_each_alignment<P: LogProbs>(p: &P, mut f: impl FnMut(&[u32], f64)) {
    let (t, v) = (p.frames(), p.vocab_size());
    let mut path = vec![0u32; t];
    loop {
        let lp: f64 = path
            .iter()
            .enumerate()
            .map(|(i, &tok)| p.log_prob(i, tok as usize))
            .sum();
        f(&path, lp.exp());
        // odometer increment
        let mut i = 0;
        loop {
            if i == t {
                return;
            }
            path[i] += 1;
            if (path[i] as usize) < v {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Sum of alignment probabilities collapsing to `target`.
pub fn brute_ctc_prob<P: LogProbs>(p: &P, target: &[u32]) -> f64 {
    let mut total = 0.0;
    for_each_alignment(p, |path, prob| {
        if collapse(path) == target {
            total += prob;
        }
    });
    total
}

/// Probability of every collapsed label sequence.
pub fn brute_collapsed<P: LogProbs>(p: &P) -> HashMap<Vec<u32>, f64> {
    let mut out: HashMap<Vec<u32>, f64> = HashMap::new();
    for_each_alignment(p, |path, prob| {
        *out.entry(collapse(path)).or_default() += prob;
    });
    out
}

/// Most probable collapsed sequence; ties go to shorter, then smaller.
pub fn brute_ctc_argmax<P: LogProbs>(p: &P) -> (Vec<u32>, f64) {
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut all: Vec<(Vec<u32>, f64)> = brute_collapsed(p).into_iter().collect();
    all.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
    for (seq, prob) in all {
        if best.as_ref().is_none_or(|(_, b)| prob > *b) {
            best = Some((seq, prob));
        }
    }
    best.unwrap()
}

/// Every way to cut `text` into inventory syllables, by recursing over
/// each possible first cut point.
pub fn brute_segmentations(text: &str, inv: &SyllableInventory) -> Vec<Vec<String>> {
    if text.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for cut in 1..=text.len() {
        if inv.id(&text[..cut]).is_none() {
            continue;
        }
        for mut rest in brute_segmentations(&text[cut..], inv) {
            rest.insert(0, text[..cut].to_string());
            out.push(rest);
        }
    }
    out
}

/// Plain recursive edit distance with memoization on suffix positions.
pub fn brute_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let d = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j + 1, memo)
                .min(go(a, b, i + 1, j, memo))
                .min(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), d);
        d
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Enumerates every lattice path; returns the best (text, score) with
/// lexicographic tie-breaking.
pub fn brute_refine<S: Scorer>(lattice: &RefinementLattice, scorer: &S, w: &RefineWeights) -> (String, f64) {
    let mut best: Option<(Vec<char>, f64)> = None;
    let mut choice = vec![0usize; lattice.positions.len()];
    loop {
        let mut text = Vec::new();
        let mut score = 0.0;
        for (pos, &c) in lattice.positions.iter().zip(&choice) {
            let cand: &Candidate = &pos.candidates[c];
            score += local_score(cand, w);
            if let Some(ch) = cand.symbol {
                text.push(ch);
            }
        }
        score += w.w_lm * scorer.score_sequence(&text).unwrap();
        let better = match &best {
            None => true,
            Some((bt, bs)) => score > *bs || (score == *bs && text < *bt),
        };
        if better {
            best = Some((text, score));
        }
        let mut i = 0;
        loop {
            if i == choice.len() {
                let (t, s) = best.unwrap();
                return (t.into_iter().collect(), s);
            }
            choice[i] += 1;
            if choice[i] < lattice.positions[i].candidates.len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

/// Random lattice over a small alphabet with at most `max_paths` paths.
pub fn random_lattice<R: Rng>(rng: &mut R, alphabet: &[char], max_paths: usize) -> RefinementLattice {
    loop {
        let len = rng.gen_range(1..=5);
        let positions: Vec<Position> = (0..len)
            .map(|_| {
                let mut syms: Vec<Option<char>> = alphabet.iter().map(|&c| Some(c)).collect();
                syms.push(None);
                let n = rng.gen_range(1..=4.min(syms.len()));
                let mut chosen = Vec::new();
                while chosen.len() < n {
                    let s = syms[rng.gen_range(0..syms.len())];
                    if !chosen.contains(&s) {
                        chosen.push(s);
                    }
                }
                chosen.sort();
                Position {
                    anchor: None,
                    candidates: chosen
                        .into_iter()
                        .map(|symbol| Candidate {
                            symbol,
                            from_nbest: true,
                            from_pinyin_expansion: false,
                            log_weight: rng.gen_range(-4.0..0.0),
                            matches_anchor: rng.gen_bool(0.6),
                        })
                        .collect(),
                }
            })
            .collect();
        let lattice = RefinementLattice { positions };
        if lattice.path_count() <= max_paths {
            return lattice;
        }
    }
}

/// First-pass outputs with a homophone error, their correct Pinyin and the truth.
pub const HOMOPHONE_CASES: [(&str, &str, &str); 3] = [
    ("我想去银航", "wo xiang qu yin hang", "我想去银行"),
    ("今天可能会夏雨", "jin tian ke neng hui xia yu", "今天可能会下雨"),
    ("他正在开会导论", "ta zheng zai kai hui tao lun", "他正在开会讨论"),
];

pub const FIXTURE_CORPUS: &str = include_str!("../fixtures/corpus_zh.txt");
