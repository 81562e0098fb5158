mod common;

use std::time::Instant;

use common::*;
use pinrefine_core::inventory::SyllableInventory;
use pinrefine_core::records::NBestEntry;
use pinrefine_core::refine::dict::HomophoneDictionary;
use pinrefine_core::refine::search::{refine, RefineWeights};
use pinrefine_core::refine::{build_lattice, refine_record, LatticeConfig, NgramScorer, RefineConfig};
use pinrefine_core::records::NBestRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn beam_search_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let alphabet = ['a', 'b', 'c'];
    let corpus: Vec<String> = (0..30)
        .map(|_| {
            let n = rng.gen_range(1..6);
            (0..n).map(|_| alphabet[rng.gen_range(0..3)]).collect()
        })
        .collect();
    let scorer = NgramScorer::train(&corpus, 2, 0.5).unwrap();
    for _ in 0..250 {
        let lattice = random_lattice(&mut rng, &alphabet, 100);
        let w = RefineWeights {
            w_lm: rng.gen_range(0.0..2.0),
            w_ac: rng.gen_range(0.0..2.0),
            w_py: rng.gen_range(0.0..2.0),
        };
        let (text, score) = brute_refine(&lattice, &scorer, &w);
        let got = refine(&lattice, &scorer, &w, lattice.path_count()).unwrap();
        assert_eq!(got.text, text);
        assert!((got.log_score - score).abs() < 1e-9);
    }
}

fn fixture_setup() -> (SyllableInventory, HomophoneDictionary, NgramScorer) {
    let inv = SyllableInventory::shipped();
    let dict = HomophoneDictionary::shipped(&inv).unwrap();
    let lines: Vec<&str> = FIXTURE_CORPUS.lines().filter(|l| !l.trim().is_empty()).collect();
    assert!(lines.len() >= 200);
    let scorer = NgramScorer::train(&lines, 3, 0.01).unwrap();
    (inv, dict, scorer)
}

#[test]
fn homophone_errors_are_corrected() {
    let start = Instant::now();
    let (inv, dict, scorer) = fixture_setup();
    for (first_pass, pinyin, truth) in HOMOPHONE_CASES {
        assert!(FIXTURE_CORPUS.lines().any(|l| l.trim() == truth));
        assert!(!FIXTURE_CORPUS.contains(first_pass));
        let record = NBestRecord {
            utt: truth.into(),
            nbest: vec![NBestEntry {
                text: first_pass.into(),
                log_score: -0.5,
            }],
            pinyin: pinyin.into(),
        };
        let out = refine_record(&record, &dict, &inv, &scorer, &RefineConfig::default()).unwrap();
        assert_eq!(out.text, truth);
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn single_hypothesis_lattice_stays_homophone_consistent() {
    let (inv, dict, scorer) = fixture_setup();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let lines: Vec<&str> = FIXTURE_CORPUS.lines().filter(|l| !l.is_empty()).collect();
    for _ in 0..40 {
        let line = lines[rng.gen_range(0..lines.len())];
        let pinyin = pinrefine_core::refine::dict::reference_pinyin(line, &dict);
        let seq = pinrefine_core::PinyinSequence::new(pinyin.clone());
        let nbest = vec![NBestEntry {
            text: line.into(),
            log_score: 0.0,
        }];
        let lattice = build_lattice(&seq, &nbest, &dict, &inv, &LatticeConfig::default()).unwrap();
        let out = refine(&lattice, &scorer, &RefineWeights::default(), 16).unwrap();
        // every output character reads as its anchor syllable
        let chars: Vec<char> = out.text.chars().collect();
        assert_eq!(chars.len(), pinyin.len(), "{line} -> {}", out.text);
        for (c, s) in chars.iter().zip(&pinyin) {
            assert!(dict.reads_as(*c, *s), "{line} -> {}", out.text);
        }
    }
}
