use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{hex_sha256, write_snapshot, ExperimentConfig};
use super::{out_dir, write_file, ArousalArgs, AttnArgs, CliError, CostArgs, EvalArgs, PredictArgs, SynthArgs, TrainArgs, TripletArgs};
use crate::costmodel::{scaling_table, table_csv};
use crate::evaluation::{ConfusionCounts, MetricsReport};
use crate::hifreq::{
    derive_arousals, features_csv_header, features_csv_rows, iou_match, triplet_features, wake_overlap_fraction,
    OverlapMeasure, Prf, RowStep,
};
use crate::model::{
    check_resolution, extract_attention_trace, predict_chunked, Checkpoint, ChunkOptions, ModelConfig, Parameters,
};
use crate::numkernel::Array;
use crate::signal_io::{
    prepare, read_edf, read_events, read_hypnogram, write_hypnogram, EventInterval, Hypnogram, Manifest,
    ModalityTable,
};
use crate::stage::{Label, Stage, NUM_STAGES};
use crate::training::{corpus_counts, validate, Corpus, TrainError, TrainState, Trainer};

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(CliError::internal)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

pub(super) fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.common.config.as_deref(), a.seed)?;
    if let Some(n) = a.recordings {
        cfg.synth.datasets = BTreeMap::from([("synth".to_string(), n)]);
    }
    if let Some(e) = a.epochs {
        cfg.synth.spec.epochs = e;
    }
    cfg.synth.spec.validate().map_err(CliError::usage)?;
    if cfg.synth.datasets.values().all(|&n| n == 0) {
        return Err(CliError::Usage("no recordings requested".into()));
    }
    let dir = out_dir(&a.common, &cfg)?;
    Manifest::synthesize(cfg.seed, &cfg.synth.spec, &cfg.synth.datasets, &dir).map_err(CliError::internal)?;
    write_snapshot(&dir, "synth", &a, &cfg)?;
    let bytes = std::fs::read(dir.join("manifest.json")).map_err(CliError::internal)?;
    println!("manifest {} sha256 {}", dir.join("manifest.json").display(), hex_sha256(&bytes));
    Ok(())
}

fn load_corpus(manifest: &Manifest, base: &Path, names: &[String]) -> Result<Corpus, CliError> {
    let loaded = manifest.load_all(base, names, &ModalityTable::default()).map_err(CliError::usage)?;
    Corpus::from_loaded(&loaded).map_err(CliError::usage)
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) | TrainError::EmptyCorpus(_) | TrainError::NoScoreableEpochs | TrainError::State(_) => {
            CliError::usage(e)
        }
        other => CliError::internal(other),
    }
}

pub(super) fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(a.common.config.as_deref(), a.seed)?;
    let manifest_path = cfg
        .corpus
        .manifest
        .clone()
        .ok_or_else(|| CliError::Usage("corpus.manifest is required for training".into()))?;
    require_file(&manifest_path, "corpus manifest")?;
    if cfg.corpus.valid.is_empty() {
        return Err(CliError::Usage("corpus.valid must name at least one dataset".into()));
    }
    let dir = out_dir(&a.common, &cfg)?;
    write_snapshot(&dir, "train", &a, &cfg)?;
    let manifest = Manifest::load(&manifest_path).map_err(CliError::usage)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let train_names: Vec<String> = if cfg.corpus.train.is_empty() {
        manifest
            .datasets
            .keys()
            .filter(|k| !cfg.corpus.valid.contains(k) && !cfg.corpus.test.contains(k))
            .cloned()
            .collect()
    } else {
        cfg.corpus.train.clone()
    };
    if train_names.is_empty() {
        return Err(CliError::Usage("no training datasets left after removing validation and test sets".into()));
    }
    let train = load_corpus(&manifest, base, &train_names)?;
    let valid = load_corpus(&manifest, base, &cfg.corpus.valid)?;

    let hash = cfg.train_hash();
    let state_dir = dir.join("state");
    let mut trainer = if a.resume {
        if !state_dir.join("state.json").is_file() {
            return Err(CliError::Usage(format!("nothing to resume in {}", state_dir.display())));
        }
        let (state, _) = TrainState::load(&state_dir, &hash).map_err(train_error)?;
        Trainer::resume(&cfg.model, &train, &cfg.train, state).map_err(train_error)?
    } else {
        Trainer::new(&cfg.model, &train, &cfg.train).map_err(train_error)?
    };
    let chunk = cfg.train.valid_chunk_epochs;
    let mut validator = |p: &Parameters| validate(&cfg.model, p, &valid, chunk);
    let mut ran = 0;
    while !trainer.is_done() && a.stop_after.is_none_or(|k| ran < k) {
        match trainer.run_epoch(&mut validator) {
            Ok(r) => eprintln!(
                "epoch {} loss {:.4} valid MF1 {:.4} ({:.1} s)",
                r.epoch, r.train_loss, r.valid_mf1, r.wall_seconds
            ),
            Err(TrainError::NonFinite {
                epoch,
                update,
                last_good,
            }) => {
                let p = dir.join("last_good.ckpt");
                last_good.save(&p).map_err(CliError::internal)?;
                return Err(CliError::Internal(format!(
                    "non-finite values at epoch {epoch}, update {update}; best parameters saved to {}",
                    p.display()
                )));
            }
            Err(e) => return Err(train_error(e)),
        }
        ran += 1;
        let st = trainer.state();
        st.save(&state_dir, &cfg.model, &hash).map_err(CliError::internal)?;
        write_file(&dir.join("run_log.csv"), st.log.to_csv().as_bytes())?;
        write_file(&dir.join("timing.csv"), st.log.timing_csv().as_bytes())?;
    }
    if !trainer.is_done() {
        eprintln!("stopped after {ran} epochs; continue with --resume");
        return Ok(());
    }
    let (ckpt, log) = trainer.finish();
    write_file(&dir.join("run_log.csv"), log.to_csv().as_bytes())?;
    write_file(&dir.join("timing.csv"), log.timing_csv().as_bytes())?;
    ckpt.save(&dir.join("best.ckpt")).map_err(CliError::internal)?;
    if !cfg.corpus.test.is_empty() {
        let test = load_corpus(&manifest, base, &cfg.corpus.test)?;
        let counts = corpus_counts(&cfg.model, &ckpt.params, &test, chunk).map_err(train_error)?;
        let named: Vec<(String, ConfusionCounts)> =
            test.recordings.iter().map(|r| r.id.clone()).zip(counts).collect();
        let report = MetricsReport::build(&named, cfg.evaluation.scope, cfg.evaluation.absent_stage, Some(cfg.seed))
            .map_err(CliError::internal)?;
        write_file(&dir.join("test_metrics.json"), &json_bytes(&report)?)?;
    }
    if let Some(b) = log.best_record() {
        println!("best epoch {} valid MF1 {:.4}", b.epoch, b.valid_mf1);
    }
    Ok(())
}

/// Reads an EDF file, keeps the requested channels and cuts the signal to
/// a length the model accepts.
fn model_input(path: &Path, channels: &[String], cfg: &ModelConfig) -> Result<(String, Vec<String>, Array), CliError> {
    require_file(path, "recording")?;
    let (rec, warnings) = read_edf(path, &ModalityTable::default()).map_err(CliError::usage)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let rec = if channels.is_empty() {
        rec
    } else {
        rec.select(channels).map_err(CliError::usage)?
    };
    let (x, degenerate) = prepare(&rec, None).map_err(CliError::usage)?;
    for d in degenerate {
        eprintln!("warning: channel {d} is nearly constant");
    }
    let unit = cfg.required_multiple();
    let t = x.shape()[1] / unit * unit;
    if t == 0 {
        return Err(CliError::Usage(format!(
            "{} is shorter than one model input unit ({} samples)",
            path.display(),
            unit
        )));
    }
    let x = if t < x.shape()[1] {
        eprintln!("warning: trailing {} samples dropped", x.shape()[1] - t);
        let c = x.shape()[0];
        let data: Vec<f64> = (0..c).flat_map(|r| x.row(r)[..t].to_vec()).collect();
        Array::new(vec![c, t], data).map_err(CliError::internal)?
    } else {
        x
    };
    let id = path
        .file_name()
        .map(|n| n.to_string_lossy().trim_end_matches(".edf").to_string())
        .unwrap_or_else(|| "recording".into());
    Ok((id, rec.channel_names(), x))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    require_file(path, "checkpoint")?;
    Checkpoint::load(path).map_err(CliError::usage)
}

const PROB_HEADER: [&str; 7] = ["onset_sec", "duration_sec", "W", "N1", "N2", "N3", "R"];

fn probs_csv(rows: &[[f64; NUM_STAGES]], resolution: usize) -> String {
    let step = 30.0 / resolution as f64;
    let mut out = PROB_HEADER.join(",");
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!("{},{}", i as f64 * step, step));
        for p in r {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
    }
    out
}

/// Reads a probability CSV; returns its resolution and rows.
fn read_probs(path: &Path) -> Result<(usize, Vec<[f64; NUM_STAGES]>), CliError> {
    require_file(path, "predictions")?;
    let bad = |m: String| CliError::Usage(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = r.headers().map_err(|e| bad(e.to_string()))?;
    if headers.iter().ne(PROB_HEADER) {
        return Err(bad(format!("expected header {}", PROB_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    let mut duration = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(format!("row {}: non-numeric field", i + 1)))?;
        let d = *duration.get_or_insert(vals[1]);
        if (vals[1] - d).abs() > 1e-9 || (vals[0] - i as f64 * d).abs() > 1e-6 {
            return Err(bad(format!("row {}: rows must be contiguous with equal durations", i + 1)));
        }
        rows.push([vals[2], vals[3], vals[4], vals[5], vals[6]]);
    }
    let Some(d) = duration else {
        return Err(bad("no prediction rows".into()));
    };
    let r = (30.0 / d).round() as usize;
    if r == 0 || (30.0 / r as f64 - d).abs() > 1e-9 || check_resolution(r).is_err() {
        return Err(bad(format!("row duration {d} s is not 30 s over a supported resolution")));
    }
    Ok((r, rows))
}

fn argmax(row: &[f64; NUM_STAGES]) -> Stage {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    Stage::from_index(best).expect("five columns")
}

fn check_expected_resolution(found: usize, wanted: Option<usize>) -> Result<(), CliError> {
    match wanted {
        Some(w) if w != found => Err(CliError::Usage(format!(
            "predictions are at resolution {found}, --resolution {w} requested"
        ))),
        _ => Ok(()),
    }
}

pub(super) fn predict(a: PredictArgs) -> Result<(), CliError> {
    let cfg = load_config(a.common.config.as_deref(), None)?;
    check_resolution(a.resolution).map_err(CliError::usage)?;
    let dir = out_dir(&a.common, &cfg)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let (id, _, x) = model_input(&a.recording, &a.channels, &ckpt.config)?;
    let opts = ChunkOptions {
        chunk_epochs: cfg.evaluation.chunk_epochs,
        overlap_epochs: None,
    };
    let (probs, _) = predict_chunked(&ckpt.config, &ckpt.params, &x, &[a.resolution], opts).map_err(CliError::usage)?;
    let p = &probs[0];
    let rows: Vec<[f64; NUM_STAGES]> = (0..p.rows())
        .map(|i| {
            let r = p.row(i);
            [r[0], r[1], r[2], r[3], r[4]]
        })
        .collect();
    write_file(&dir.join(format!("{id}.probs.csv")), probs_csv(&rows, a.resolution).as_bytes())?;
    let hyp = Hypnogram {
        epoch_seconds: 30.0 / a.resolution as f64,
        labels: p.argmax().into_iter().map(Some).collect(),
    };
    write_hypnogram(&hyp, &dir.join(format!("{id}.hypnogram.csv"))).map_err(CliError::internal)?;
    write_snapshot(&dir, "predict", &a, &cfg)?;
    println!("{id}: {} rows at resolution {}", rows.len(), a.resolution);
    Ok(())
}

const HYP_SUFFIX: &str = ".hypnogram.csv";

/// `(id, predicted, truth)` files: one pair, or every `*.hypnogram.csv` in
/// the predictions directory matched by name in the truth directory.
fn eval_pairs(pred: &Path, truth: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, CliError> {
    if pred.is_dir() {
        if !truth.is_dir() {
            return Err(CliError::Usage(format!("{} is not a directory", truth.display())));
        }
        let mut names: Vec<String> = std::fs::read_dir(pred)
            .map_err(CliError::usage)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(HYP_SUFFIX))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(CliError::Usage(format!("no *{HYP_SUFFIX} files in {}", pred.display())));
        }
        names
            .into_iter()
            .map(|n| {
                let t = truth.join(&n);
                require_file(&t, "truth file")?;
                Ok((n.trim_end_matches(HYP_SUFFIX).to_string(), pred.join(&n), t))
            })
            .collect()
    } else {
        require_file(pred, "predictions")?;
        require_file(truth, "truth file")?;
        let id = pred
            .file_name()
            .map(|n| n.to_string_lossy().trim_end_matches(HYP_SUFFIX).trim_end_matches(".csv").to_string())
            .unwrap_or_default();
        Ok(vec![(id, pred.to_path_buf(), truth.to_path_buf())])
    }
}

pub(super) fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.common.config.as_deref(), a.seed)?;
    if let Some(s) = a.scope {
        cfg.evaluation.scope = s;
    }
    if let Some(p) = a.absent_stage {
        cfg.evaluation.absent_stage = p;
    }
    let pairs = eval_pairs(&a.predictions, &a.truth)?;
    let mut named = Vec::with_capacity(pairs.len());
    for (id, p, t) in pairs {
        let pred = read_hypnogram(&p).map_err(CliError::usage)?;
        let truth = read_hypnogram(&t).map_err(CliError::usage)?;
        let stages: Vec<Stage> = pred
            .labels
            .iter()
            .map(|l| l.ok_or_else(|| CliError::Usage(format!("{}: predictions cannot be excluded", p.display()))))
            .collect::<Result<_, _>>()?;
        let counts = ConfusionCounts::from_labels(&stages, &truth.labels)
            .map_err(|e| CliError::Usage(format!("{id}: {e}")))?;
        named.push((id, counts));
    }
    let report = MetricsReport::build(&named, cfg.evaluation.scope, cfg.evaluation.absent_stage, a.seed)
        .map_err(CliError::usage)?;
    let dir = out_dir(&a.common, &cfg)?;
    write_file(&dir.join("metrics.json"), &json_bytes(&report)?)?;
    write_snapshot(&dir, "eval", &a, &cfg)?;
    match &report.dataset {
        Some(d) => println!("dataset MF1 {:.4}", d.mf1),
        None => {
            for r in &report.recordings {
                println!("{} MF1 {:.4}", r.id, r.mf1);
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ArousalReport {
    resolution: usize,
    overlap: OverlapMeasure,
    threshold: f64,
    candidates: usize,
    annotations: usize,
    matches: usize,
    #[serde(flatten)]
    prf: Prf,
    /// `None` when the annotations have zero total duration.
    wake_overlap_fraction: Option<f64>,
}

pub(super) fn arousals(a: ArousalArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.common.config.as_deref(), None)?;
    if let Some(o) = &a.overlap {
        cfg.evaluation.overlap = match o.as_str() {
            "union" => OverlapMeasure::Union,
            "summed" => OverlapMeasure::Summed,
            other => return Err(CliError::Usage(format!("--overlap must be union or summed, got `{other}`"))),
        };
    }
    let (r, rows) = read_probs(&a.predictions)?;
    check_expected_resolution(r, a.resolution)?;
    let stages: Vec<Stage> = rows.iter().map(argmax).collect();
    let step = RowStep::resolution(r).map_err(CliError::usage)?;
    let candidates = derive_arousals(&stages, step);
    let dir = out_dir(&a.common, &cfg)?;
    crate::signal_io::write_events(&candidates, &dir.join("candidates.events.csv")).map_err(CliError::internal)?;
    if let Some(ev) = &a.events {
        require_file(ev, "events")?;
        let annotated: Vec<EventInterval> = read_events(ev).map_err(CliError::usage)?;
        let m = iou_match(&candidates, &annotated, cfg.evaluation.iou_threshold, cfg.evaluation.overlap);
        let wake = match wake_overlap_fraction(&stages, step, &annotated) {
            Ok(f) => Some(f),
            Err(crate::hifreq::HifreqError::UndefinedFraction) => None,
            Err(e) => return Err(CliError::usage(e)),
        };
        let report = ArousalReport {
            resolution: r,
            overlap: cfg.evaluation.overlap,
            threshold: cfg.evaluation.iou_threshold,
            candidates: candidates.len(),
            annotations: annotated.len(),
            matches: m.matches.len(),
            prf: m.prf(),
            wake_overlap_fraction: wake,
        };
        write_file(&dir.join("arousal_metrics.json"), &json_bytes(&report)?)?;
    }
    write_snapshot(&dir, "arousals", &a, &cfg)?;
    println!("{} candidates at resolution {r}", candidates.len());
    Ok(())
}

pub(super) fn triplets(a: TripletArgs) -> Result<(), CliError> {
    let cfg = load_config(a.common.config.as_deref(), None)?;
    let (r, rows) = read_probs(&a.predictions)?;
    check_expected_resolution(r, a.resolution)?;
    if rows.len() % r != 0 {
        return Err(CliError::Usage(format!("{} rows do not fill whole epochs at resolution {r}", rows.len())));
    }
    let stages: Vec<Stage> = rows.iter().map(argmax).collect();
    let reference: Vec<Label> = match &a.truth {
        Some(t) => {
            require_file(t, "truth file")?;
            read_hypnogram(t).map_err(CliError::usage)?.labels
        }
        None => rows
            .chunks(r)
            .map(|ep| {
                let mut mean = [0.0; NUM_STAGES];
                for row in ep {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v / r as f64;
                    }
                }
                Some(argmax(&mean))
            })
            .collect(),
    };
    let res = triplet_features(&stages, r, &reference).map_err(CliError::usage)?;
    let id = a.id.clone().unwrap_or_else(|| {
        a.predictions
            .file_name()
            .map(|n| n.to_string_lossy().trim_end_matches(".csv").trim_end_matches(".probs").to_string())
            .unwrap_or_default()
    });
    let dir = out_dir(&a.common, &cfg)?;
    let mut csv = features_csv_header();
    csv.push_str(&features_csv_rows(&id, r, &res.blocks));
    write_file(&dir.join("triplets.csv"), csv.as_bytes())?;
    write_snapshot(&dir, "triplets", &a, &cfg)?;
    if res.too_short {
        eprintln!("warning: trimmed span holds no full 1.5-h block; no features written");
    }
    println!("{} blocks", res.blocks.len());
    Ok(())
}

pub(super) fn cost(a: CostArgs) -> Result<(), CliError> {
    let cfg = load_config(a.common.config.as_deref(), None)?;
    if a.max_channels == 0 {
        return Err(CliError::Usage("--max-channels must be positive".into()));
    }
    let rows = scaling_table(a.max_channels, a.depth).map_err(CliError::usage)?;
    let dir = out_dir(&a.common, &cfg)?;
    write_file(&dir.join("cost.csv"), table_csv(&rows).as_bytes())?;
    write_snapshot(&dir, "cost", &a, &cfg)?;
    println!("{} rows", rows.len());
    Ok(())
}

pub(super) fn attn_trace(a: AttnArgs) -> Result<(), CliError> {
    let cfg = load_config(a.common.config.as_deref(), None)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let inputs: Vec<(Vec<String>, Array)> = a
        .recording
        .iter()
        .map(|p| model_input(p, &a.channels, &ckpt.config).map(|(_, n, x)| (n, x)))
        .collect::<Result<_, _>>()?;
    let refs: Vec<(&[String], &Array)> = inputs.iter().map(|(n, x)| (n.as_slice(), x)).collect();
    let trace = extract_attention_trace(&ckpt.config, &ckpt.params, &refs).map_err(CliError::usage)?;
    let dir = out_dir(&a.common, &cfg)?;
    write_file(&dir.join("attention.json"), &json_bytes(&trace)?)?;
    write_snapshot(&dir, "attn-trace", &a, &cfg)?;
    println!("{} modules x {} channels", trace.weights.len(), trace.channels.len());
    Ok(())
}
