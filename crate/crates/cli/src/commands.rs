use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use pinrefine_core::ctc::{ctc_loss, greedy_decode, prefix_beam_search_with, BeamOptions, Hypothesis};
use pinrefine_core::datasmith::{
    collect_instances, dataset_stats, instances_for_ref, validate_sources, BuildOptions, CorruptSource,
    HypothesisSource,
};
use pinrefine_core::inventory::{segment_pinyin, validate_sequence};
use pinrefine_core::loss::{combine, cross_entropy, finite_diff_check, StreamLosses};
use pinrefine_core::metrics::{cer, corpus_cer};
use pinrefine_core::posterior::{
    read_posteriors, synth_posteriors, write_posteriors, LogGrid, PosteriorMatrix, StreamVocab, SynthParams,
};
use pinrefine_core::records::{NBestEntry, NBestRecord, RefineSource, RefinementRecord};
use pinrefine_core::refine::chat::{ChatClient, ChatJob};
use pinrefine_core::refine::dict::reference_pinyin;
use pinrefine_core::refine::{refine_record, NgramScorer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Backend, DecodeMethod, RunConfig};
use crate::io::{
    check_utt_id, ensure_parent, print_json, read_jsonl_file, read_refs, write_json_file, write_jsonl_file,
};
use crate::{
    BuildDataArgs, Cli, Command, DecodeArgs, EvalArgs, InventoryArgs, LmTrainArgs, LossCheckArgs, RefineArgs,
    SynthArgs,
};

const CHAR_VOCAB: &str = "char_vocab.txt";
const PINYIN_VOCAB: &str = "pinyin_vocab.txt";
const UTT_LIST: &str = "utts.txt";

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        ensure!(jobs >= 1, "--jobs must be at least 1");
        builder = builder.num_threads(jobs);
    }
    let pool = builder.build().context("starting worker pool")?;
    pool.install(|| match cli.command {
        Command::Inventory(a) => inventory(cfg, a),
        Command::Synth(a) => synth(cfg, a),
        Command::Decode(a) => decode(cfg, a),
        Command::Refine(a) => refine(cfg, a, cli.jobs),
        Command::Eval(a) => eval(a),
        Command::BuildData(a) => build_data(cfg, a),
        Command::LmTrain(a) => lm_train(cfg, a),
        Command::LossCheck(a) => loss_check(cfg, a),
    })
}

/// Stable per-item seed derived from the run seed.
fn derive_seed(seed: u64, index: usize, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.gen()
}

fn inventory(mut cfg: RunConfig, a: InventoryArgs) -> Result<()> {
    if a.inventory.is_some() {
        cfg.paths.inventory = a.inventory;
    }
    cfg.validate()?;
    let inv = cfg.inventory()?;
    let segmentations: Vec<Value> = a
        .segment
        .iter()
        .map(|text| match segment_pinyin(text, &inv, a.max_results) {
            Ok(seg) => json!({
                "text": text,
                "canonical": seg.canonical.render(&inv),
                "all": seg.all.iter().map(|s| s.render(&inv)).collect::<Vec<_>>(),
            }),
            Err(e) => json!({"text": text, "error": e.to_string()}),
        })
        .collect();
    let validations: Vec<Value> = a
        .validate
        .iter()
        .map(|seq| {
            let units: Vec<&str> = seq.split_whitespace().collect();
            let report = validate_sequence(&units, &inv);
            json!({
                "input": seq,
                "valid": report.is_valid(),
                "unknown": report.unknown.iter().map(|(p, s)| json!({"position": p, "syllable": s})).collect::<Vec<_>>(),
            })
        })
        .collect();
    print_json(&json!({
        "size": inv.len(),
        "sample": inv.syllables().iter().take(10).collect::<Vec<_>>(),
        "segmentations": segmentations,
        "validations": validations,
    }))
}

fn synth(mut cfg: RunConfig, a: SynthArgs) -> Result<()> {
    if let Some(v) = a.noise {
        cfg.synth.noise = v;
    }
    if let Some(v) = a.frames_per_token {
        cfg.synth.frames_per_token = v;
    }
    if let Some(v) = a.blank_gap {
        cfg.synth.blank_gap = v;
    }
    ensure!(
        (0.0..=1.0).contains(&cfg.synth.noise),
        "synth.noise must lie in [0, 1], got {}",
        cfg.synth.noise
    );
    ensure!(cfg.synth.frames_per_token >= 1, "synth.frames_per_token must be at least 1");
    cfg.validate()?;
    let inv = cfg.inventory()?;
    let dict = cfg.dictionary(&inv)?;
    let refs = read_refs(&a.refs)?;

    let mut chars: Vec<char> = refs.iter().flat_map(|(_, t)| t.chars()).collect();
    chars.sort_unstable();
    chars.dedup();
    let char_vocab = StreamVocab::ctc_with(chars.iter().map(|c| c.to_string()))?;
    let pinyin_vocab = StreamVocab::ctc_with(inv.syllables().iter().cloned())?;

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    char_vocab.write(File::create(a.out_dir.join(CHAR_VOCAB))?)?;
    pinyin_vocab.write(File::create(a.out_dir.join(PINYIN_VOCAB))?)?;
    let mut list = String::new();
    for (utt, _) in &refs {
        list.push_str(utt);
        list.push('\n');
    }
    fs::write(a.out_dir.join(UTT_LIST), list)?;

    let params = |vocab_size: usize, seed: u64| SynthParams {
        vocab_size,
        frames_per_token: cfg.synth.frames_per_token,
        blank_gap: cfg.synth.blank_gap,
        noise: cfg.synth.noise,
        seed,
    };
    let frames: Vec<usize> = refs
        .par_iter()
        .enumerate()
        .map(|(idx, (utt, text))| -> Result<usize> {
            let char_ids: Vec<u32> = text
                .chars()
                .map(|c| char_vocab.id(&c.to_string()).expect("vocab built from refs"))
                .collect();
            let py_ids: Vec<u32> = reference_pinyin(text, &dict).iter().map(|s| s.0 + 1).collect();
            let cm = synth_posteriors(&char_ids, &params(char_vocab.len(), derive_seed(cfg.seed, idx, 0)))?;
            let pm = synth_posteriors(&py_ids, &params(pinyin_vocab.len(), derive_seed(cfg.seed, idx, 1)))?;
            write_matrix(&a.out_dir.join(format!("{utt}.char.vppm")), &cm)?;
            write_matrix(&a.out_dir.join(format!("{utt}.pinyin.vppm")), &pm)?;
            Ok(cm.frames())
        })
        .collect::<Result<_>>()?;

    cfg.persist_next_to(&a.out_dir.join("synth"))?;
    print_json(&json!({
        "utterances": refs.len(),
        "char_frames": frames.iter().sum::<usize>(),
        "char_vocab": char_vocab.len(),
        "pinyin_vocab": pinyin_vocab.len(),
        "out_dir": a.out_dir,
    }))
}

fn write_matrix(path: &Path, m: &PosteriorMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_posteriors(m, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_matrix(path: &Path) -> Result<PosteriorMatrix> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_posteriors(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn read_vocab(path: &Path) -> Result<StreamVocab> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    StreamVocab::load(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn decode(mut cfg: RunConfig, a: DecodeArgs) -> Result<()> {
    if let Some(v) = a.method {
        cfg.decode.method = v;
    }
    if let Some(v) = a.beam_width {
        cfg.decode.beam_width = v;
    }
    if let Some(v) = a.k {
        cfg.decode.k = v;
    }
    if a.token_cutoff.is_some() {
        cfg.decode.token_cutoff = a.token_cutoff;
    }
    cfg.validate()?;
    let char_vocab = read_vocab(&a.posteriors.join(CHAR_VOCAB))?;
    let pinyin_vocab = read_vocab(&a.posteriors.join(PINYIN_VOCAB))?;
    let list_path = a.posteriors.join(UTT_LIST);
    let utts: Vec<String> = fs::read_to_string(&list_path)
        .with_context(|| format!("reading {}", list_path.display()))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().to_string())
        .collect();
    for utt in &utts {
        check_utt_id(utt)?;
    }
    let opts = BeamOptions {
        beam_width: cfg.decode.beam_width,
        k: cfg.decode.k,
        token_cutoff: cfg.decode.token_cutoff.unwrap_or(f64::NEG_INFINITY),
    };
    let method = cfg.decode.method;
    let run = |m: &PosteriorMatrix, k: usize| -> Result<Vec<Hypothesis>> {
        Ok(match method {
            DecodeMethod::Greedy => vec![greedy_decode(m)],
            DecodeMethod::Beam => prefix_beam_search_with(m, &BeamOptions { k, ..opts })?.items,
        })
    };
    let records: Vec<NBestRecord> = utts
        .par_iter()
        .map(|utt| -> Result<NBestRecord> {
            let cm = read_matrix(&a.posteriors.join(format!("{utt}.char.vppm")))?;
            let pm = read_matrix(&a.posteriors.join(format!("{utt}.pinyin.vppm")))?;
            ensure!(
                cm.vocab_size() == char_vocab.len(),
                "{utt}: character posteriors have {} columns but the vocabulary has {} tokens",
                cm.vocab_size(),
                char_vocab.len()
            );
            ensure!(
                pm.vocab_size() == pinyin_vocab.len(),
                "{utt}: pinyin posteriors have {} columns but the vocabulary has {} tokens",
                pm.vocab_size(),
                pinyin_vocab.len()
            );
            let nbest = run(&cm, opts.k)
                .with_context(|| format!("decoding {utt}"))?
                .into_iter()
                .map(|h| NBestEntry {
                    text: char_vocab.render(&h.tokens, ""),
                    log_score: h.log_score,
                })
                .collect();
            let py = run(&pm, 1).with_context(|| format!("decoding pinyin for {utt}"))?;
            let pinyin = py
                .first()
                .map(|h| pinyin_vocab.render(&h.tokens, " "))
                .unwrap_or_default();
            Ok(NBestRecord {
                utt: utt.clone(),
                nbest,
                pinyin,
            })
        })
        .collect::<Result<_>>()?;

    ensure_parent(&a.out)?;
    write_jsonl_file(&a.out, &records)?;
    cfg.persist_next_to(&a.out)?;
    print_json(&json!({"utterances": records.len(), "out": a.out}))
}

#[derive(Serialize, Default)]
struct RefineSummary {
    records: usize,
    ngram: usize,
    chat: usize,
    fallback: usize,
}

fn refine(mut cfg: RunConfig, a: RefineArgs, jobs: Option<usize>) -> Result<()> {
    if let Some(v) = a.backend {
        cfg.refine.backend = v;
    }
    if a.lm.is_some() {
        cfg.refine.lm = a.lm;
    }
    if let Some(v) = a.beam {
        cfg.refine.beam = v;
    }
    if let Some(v) = a.w_lm {
        cfg.refine.w_lm = v;
    }
    if let Some(v) = a.w_ac {
        cfg.refine.w_ac = v;
    }
    if let Some(v) = a.w_py {
        cfg.refine.w_py = v;
    }
    if let Some(v) = a.endpoint_url {
        cfg.endpoint.url = v;
    }
    cfg.validate()?;
    let records: Vec<NBestRecord> = read_jsonl_file(&a.nbest)?;
    let top = |r: &NBestRecord| r.nbest.first().map(|e| e.text.clone()).unwrap_or_default();

    let out: Vec<RefinementRecord> = match cfg.refine.backend {
        Backend::Ngram => {
            let lm_path = cfg
                .refine
                .lm
                .clone()
                .context("the ngram backend needs a model (--lm or refine.lm)")?;
            let text = fs::read_to_string(&lm_path).with_context(|| format!("reading {}", lm_path.display()))?;
            let scorer = NgramScorer::from_json(&text).with_context(|| format!("loading {}", lm_path.display()))?;
            let inv = cfg.inventory()?;
            let dict = cfg.dictionary(&inv)?;
            let rcfg = cfg.refine.core()?;
            records
                .par_iter()
                .map(|r| match refine_record(r, &dict, &inv, &scorer, &rcfg) {
                    Ok(best) => RefinementRecord {
                        utt: r.utt.clone(),
                        text: best.text,
                        log_score: Some(best.log_score),
                        source: RefineSource::Ngram,
                    },
                    Err(e) => {
                        tracing::warn!(utt = %r.utt, error = %e, "refinement fell back to top hypothesis");
                        RefinementRecord {
                            utt: r.utt.clone(),
                            text: top(r),
                            log_score: None,
                            source: RefineSource::Fallback,
                        }
                    }
                })
                .collect()
        }
        Backend::Chat => {
            let client = ChatClient::new(cfg.endpoint.clone())?;
            let mut rt = tokio::runtime::Builder::new_multi_thread();
            if let Some(j) = jobs {
                rt.worker_threads(j);
            }
            let rt = rt.enable_all().build().context("starting async runtime")?;
            let jobs: Vec<ChatJob> = records
                .iter()
                .map(|r| ChatJob {
                    utt: r.utt.clone(),
                    pinyin: r.pinyin.clone(),
                    nbest: r.nbest.clone(),
                })
                .collect();
            rt.block_on(client.refine_batch(&jobs))
                .into_iter()
                .map(|o| RefinementRecord {
                    utt: o.utt,
                    text: o.text,
                    log_score: None,
                    source: o.source,
                })
                .collect()
        }
    };

    let mut summary = RefineSummary {
        records: out.len(),
        ..Default::default()
    };
    for r in &out {
        match r.source {
            RefineSource::Ngram => summary.ngram += 1,
            RefineSource::Chat => summary.chat += 1,
            RefineSource::Fallback => summary.fallback += 1,
        }
    }
    ensure_parent(&a.out)?;
    write_jsonl_file(&a.out, &out)?;
    cfg.persist_next_to(&a.out)?;
    print_json(&summary)
}

/// Final text of a refinement record, or the top entry of an N-best record.
fn hypothesis_text(v: &Value) -> Option<String> {
    if let Some(t) = v.get("text").and_then(Value::as_str) {
        return Some(t.to_string());
    }
    let nbest = v.get("nbest")?.as_array()?;
    match nbest.first() {
        Some(e) => e.get("text")?.as_str().map(String::from),
        None => Some(String::new()),
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let refs = read_refs(&a.refs)?;
    let lines: Vec<Value> = read_jsonl_file(&a.hyps)?;
    let mut hyps: HashMap<String, String> = HashMap::new();
    for (i, v) in lines.iter().enumerate() {
        let utt = v
            .get("utt")
            .and_then(Value::as_str)
            .with_context(|| format!("{}:{}: missing utt", a.hyps.display(), i + 1))?;
        let text = hypothesis_text(v)
            .with_context(|| format!("{}:{}: no text or nbest field", a.hyps.display(), i + 1))?;
        if hyps.insert(utt.to_string(), text).is_some() {
            bail!("{}: duplicate utterance {utt}", a.hyps.display());
        }
    }
    let mut missing = 0;
    let pairs: Vec<(String, String)> = refs
        .iter()
        .map(|(utt, text)| {
            let hyp = hyps.get(utt).cloned().unwrap_or_else(|| {
                missing += 1;
                String::new()
            });
            (text.clone(), hyp)
        })
        .collect();
    let report = corpus_cer(&pairs);
    let value = json!({
        "utterances": refs.len(),
        "missing_hypotheses": missing,
        "substitutions": report.pooled.substitutions,
        "deletions": report.pooled.deletions,
        "insertions": report.pooled.insertions,
        "n": report.pooled.n,
        "cer": report.cer.value,
        "undefined_reference": report.cer.undefined_reference,
    });
    if let Some(path) = &a.per_utt {
        ensure_parent(path)?;
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "utt\tS\tD\tI\tN\tcer")?;
        for ((utt, _), c) in refs.iter().zip(&report.per_utterance) {
            writeln!(
                w,
                "{utt}\t{}\t{}\t{}\t{}\t{:.6}",
                c.substitutions,
                c.deletions,
                c.insertions,
                c.n,
                cer(c).value
            )?;
        }
        w.flush()?;
    }
    if let Some(path) = &a.out {
        ensure_parent(path)?;
        write_json_file(path, &value)?;
    }
    print_json(&value)
}

fn build_data(mut cfg: RunConfig, a: BuildDataArgs) -> Result<()> {
    if a.include_scores {
        cfg.data.include_scores = true;
    }
    if a.no_synthetic {
        cfg.data.sources.clear();
    }
    cfg.validate()?;
    let inv = cfg.inventory()?;
    let dict = cfg.dictionary(&inv)?;
    let refs = read_refs(&a.refs)?;

    let mut sources: Vec<HypothesisSource> = cfg
        .data
        .sources
        .iter()
        .map(|s| {
            HypothesisSource::Corrupt(CorruptSource {
                seed: derive_seed(cfg.seed, 0, s.seed),
                ..s.clone()
            })
        })
        .collect();
    for spec in &a.nbest {
        let (name, path) = spec
            .split_once('=')
            .with_context(|| format!("--nbest expects NAME=PATH, got {spec:?}"))?;
        let records: Vec<NBestRecord> = read_jsonl_file(Path::new(path))?;
        sources.push(HypothesisSource::Decoded {
            name: name.to_string(),
            records: records.into_iter().map(|r| (r.utt.clone(), r)).collect(),
        });
    }
    ensure!(!sources.is_empty(), "no hypothesis sources: add --nbest or configure data.sources");
    validate_sources(&sources)?;
    let opts = BuildOptions {
        include_scores: cfg.data.include_scores,
    };
    let per_ref = refs
        .par_iter()
        .enumerate()
        .map(|(idx, (utt, text))| instances_for_ref(idx, utt, text, &sources, &dict, &inv, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let built = collect_instances(per_ref);
    let stats = dataset_stats(&built.instances, built.dedup_removed);

    ensure_parent(&a.out)?;
    write_jsonl_file(&a.out, &built.instances)?;
    let mut stats_name = a.out.file_name().context("output has no file name")?.to_os_string();
    stats_name.push(".stats.json");
    let stats_path = a.out.with_file_name(stats_name);
    write_json_file(
        &stats_path,
        &json!({"stats": stats, "missing_decoded": built.missing, "sources": sources.iter().map(|s| s.name()).collect::<Vec<_>>()}),
    )?;
    cfg.persist_next_to(&a.out)?;
    print_json(&stats)
}

fn lm_train(mut cfg: RunConfig, a: LmTrainArgs) -> Result<()> {
    if let Some(v) = a.order {
        cfg.lm.order = v;
    }
    if let Some(v) = a.k {
        cfg.lm.k = v;
    }
    let text = fs::read_to_string(&a.corpus).with_context(|| format!("reading {}", a.corpus.display()))?;
    let model = NgramScorer::train(text.lines(), cfg.lm.order, cfg.lm.k)?;
    ensure_parent(&a.out)?;
    fs::write(&a.out, model.to_json()).with_context(|| format!("writing {}", a.out.display()))?;
    cfg.persist_next_to(&a.out)?;
    print_json(&model.summary())
}

/// Random logits, their log-softmax grid and a feasible CTC target.
fn random_stream(rng: &mut ChaCha8Rng, frames: usize, vocab: usize) -> (LogGrid, Vec<u32>) {
    let logits: Vec<f64> = (0..frames * vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut values = Vec::with_capacity(logits.len());
    for row in logits.chunks(vocab) {
        let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
        values.extend(row.iter().map(|x| x - lse));
    }
    let max_len = frames.div_ceil(2);
    let len = rng.gen_range(1..=max_len);
    let target = (0..len).map(|_| rng.gen_range(1..vocab as u32)).collect();
    (LogGrid::new(frames, vocab, values), target)
}

fn loss_check(mut cfg: RunConfig, a: LossCheckArgs) -> Result<()> {
    if let Some(v) = a.lambda_ctc {
        cfg.loss.lambda_ctc = v;
    }
    if let Some(v) = a.alpha {
        cfg.loss.alpha = v;
    }
    ensure!(a.frames >= 1 && a.vocab >= 2, "need at least 1 frame and 2 tokens");
    ensure!(a.instances >= 1, "need at least one instance");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // one breakdown on a character and a pinyin stream
    let mut streams = Vec::new();
    for _ in 0..2 {
        let (grid, target) = random_stream(&mut rng, a.frames, a.vocab);
        let ctc = ctc_loss(&grid, &target)?.loss;
        let logits: Vec<f64> = (0..target.len() * a.vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let ce = cross_entropy(&logits, a.vocab, &target)?.loss;
        streams.push(StreamLosses { ctc, ce });
    }
    let breakdown = combine(cfg.loss.lambda_ctc, cfg.loss.alpha, streams[0], streams[1])?;

    let (mut ctc_worst, mut ce_worst) = (0.0f64, 0.0f64);
    for _ in 0..a.instances {
        let (grid, target) = random_stream(&mut rng, a.frames, a.vocab);
        let f = |x: &[f64]| {
            let g = LogGrid::new(a.frames, a.vocab, x.to_vec());
            let l = ctc_loss(&g, &target).expect("target fits");
            (l.loss, l.grad.values)
        };
        ctc_worst = ctc_worst.max(finite_diff_check(f, &grid.values, a.eps)?);
        let logits: Vec<f64> = (0..target.len() * a.vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let g = |x: &[f64]| {
            let ce = cross_entropy(x, a.vocab, &target).expect("shape fixed");
            (ce.loss, ce.grad)
        };
        ce_worst = ce_worst.max(finite_diff_check(g, &logits, a.eps)?);
    }
    let pass = ctc_worst <= 1e-4 && ce_worst <= 1e-4;
    print_json(&json!({
        "breakdown": breakdown,
        "gradient_check": {
            "instances": a.instances,
            "eps": a.eps,
            "ctc_max_rel_error": ctc_worst,
            "ce_max_rel_error": ce_worst,
            "pass": pass,
        },
    }))?;
    ensure!(pass, "gradient check exceeded 1e-4 relative error");
    Ok(())
}
