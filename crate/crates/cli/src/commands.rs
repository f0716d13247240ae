//! Subcommand implementations. Each resolves its settings, digests its inputs,
//! calls into the library and writes outputs plus a manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde_json::json;
use svkit::calibfuse::{self, CalibrationModel, TrainConfig};
use svkit::dspfeat::{self, FbankConfig, NoiseKind, NoiseSource, PlanConfig};
use svkit::kernels::toy::{self, LossChoice, ToyDataConfig, ToyDataset, ToyTrainConfig};
use svkit::metrics::{self, DcfParams, EerMode};
use svkit::qmf::{self, DMode, QmfVector, SnrConfig, QMF_LEN};
use svkit::scoring::{self, Cohort};
use svkit::trialdata::{self, EmbeddingFormat, Label, MetadataSet, TrialList, UtteranceMeta};

use crate::inputs;
use crate::manifest::Manifest;
use crate::settings::Settings;
use crate::CliError;

fn non_empty<T>(v: Vec<T>) -> Option<Vec<T>> {
    (!v.is_empty()).then_some(v)
}

fn parse<T: std::str::FromStr<Err = svkit::Error>>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|e: svkit::Error| CliError::Usage(format!("{key}: {e}")))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string(value).expect("summary is plain data"));
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

fn embedding_format(settings: &mut Settings, flag: Option<String>) -> Result<Option<EmbeddingFormat>, CliError> {
    let Some(name) = settings.optional::<String>("embeddings.format", flag)? else {
        return Ok(None);
    };
    match name.as_str() {
        "binary" => Ok(Some(EmbeddingFormat::Binary)),
        "text" => Ok(Some(EmbeddingFormat::Text)),
        "auto" => Ok(None),
        other => Err(CliError::Usage(format!("unknown embedding format `{other}` (binary, text, auto)"))),
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Trial list, `[label] enroll test` per line.
    #[arg(long)]
    trials: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// binary, text or auto.
    #[arg(long)]
    embedding_format: Option<String>,
}

pub fn score(a: ScoreArgs, settings: &mut Settings) -> Result<(), CliError> {
    let emb_path = settings.required_path("paths.embeddings", a.embeddings)?;
    let trials_path = settings.required_path("paths.trials", a.trials)?;
    let format = embedding_format(settings, a.embedding_format)?;
    let out = settings.output("score.out", a.out, "scores.txt")?;

    let mut manifest = Manifest::new("score", None);
    manifest.input("embeddings", &emb_path)?;
    manifest.input("trials", &trials_path)?;

    let embeddings = inputs::embeddings(&emb_path, format)?;
    let trials = trialdata::parse_trials(&trials_path)?;
    let scores = scoring::score_trials(&trials, &embeddings)?;
    trialdata::write_score_file(&out, scores.trials(), scores.values())?;
    manifest.outputs.push(out.clone());
    manifest.write(&out, settings.resolved())?;
    eprintln!("svkit score: {} trials -> {}", trials.len(), out.display());
    print_json(&json!({ "trials": trials.len(), "out": out }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct AsnormArgs {
    /// Raw score file, `enroll test score` per line.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Imposter cohort embeddings.
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    embedding_format: Option<String>,
}

pub const DEFAULT_TOP_K: usize = 300;

pub fn asnorm(a: AsnormArgs, settings: &mut Settings) -> Result<(), CliError> {
    let scores_path = settings.required_path("paths.scores", a.scores)?;
    let emb_path = settings.required_path("paths.embeddings", a.embeddings)?;
    let cohort_path = settings.required_path("paths.cohort", a.cohort)?;
    let top_k = settings.get("asnorm.top_k", a.top_k, DEFAULT_TOP_K)?;
    let format = embedding_format(settings, a.embedding_format)?;
    let out = settings.output("asnorm.out", a.out, "asnorm_scores.txt")?;

    let mut manifest = Manifest::new("asnorm", None);
    manifest.input("scores", &scores_path)?;
    manifest.input("embeddings", &emb_path)?;
    manifest.input("cohort", &cohort_path)?;

    let raw = inputs::score_file(&scores_path)?;
    let embeddings = inputs::embeddings(&emb_path, format)?;
    let cohort = Cohort::new(inputs::embeddings(&cohort_path, format)?, top_k)?;
    let normalized = scoring::asnorm(&raw, &embeddings, &cohort)?;
    trialdata::write_score_file(&out, normalized.trials(), normalized.values())?;
    manifest.outputs.push(out.clone());
    manifest.write(&out, settings.resolved())?;
    eprintln!(
        "svkit asnorm: {} trials, cohort {} (top {top_k}) -> {}",
        raw.n_trials(),
        cohort.embeddings.len(),
        out.display()
    );
    print_json(&json!({ "trials": raw.n_trials(), "top_k": top_k, "out": out }));
    Ok(())
}

fn d_mode(settings: &mut Settings, flag: Option<String>) -> Result<DMode, CliError> {
    let name = settings.get("qmf.d_mode", flag, "duplicate".to_string())?;
    parse("qmf.d_mode", &name)
}

/// Fills missing SNRs of utterances used by `trials` from `<wav_dir>/<id>.wav`.
fn fill_snr(
    meta: &MetadataSet,
    trials: &TrialList,
    wav_dir: &Path,
    manifest: &mut Manifest,
) -> Result<MetadataSet, CliError> {
    let mut needed: Vec<&str> = trials
        .iter()
        .flat_map(|t| [t.enroll_id.as_str(), t.test_id.as_str()])
        .filter(|id| meta.get(id).is_some_and(|m| m.snr_db.is_none()))
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let paths: Vec<PathBuf> = needed.iter().map(|id| wav_dir.join(format!("{id}.wav"))).collect();
    for (id, p) in needed.iter().zip(&paths) {
        manifest.input(&format!("wav:{id}"), p)?;
    }
    let estimates = paths
        .par_iter()
        .map(|p| dspfeat::read_wav(p).and_then(|w| qmf::estimate_snr(&w, &SnrConfig::default())))
        .collect::<svkit::Result<Vec<f64>>>()?;
    let filled: BTreeMap<&str, f64> = needed.into_iter().zip(estimates).collect();
    let items = meta
        .items()
        .iter()
        .map(|m| UtteranceMeta { snr_db: m.snr_db.or_else(|| filled.get(m.id.as_str()).copied()), ..m.clone() })
        .collect();
    Ok(MetadataSet::new(items)?)
}

fn trial_qmfs(trials: &TrialList, meta: &MetadataSet, mode: DMode) -> Result<Vec<QmfVector>, CliError> {
    trials
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let side =
                |id: &str| meta.get(id).ok_or_else(|| svkit::Error::UnresolvedId { trial: i + 1, id: id.to_string() });
            let q = qmf::qmf_vector(side(&t.enroll_id)?, side(&t.test_id)?, mode)
                .map_err(|e| CliError::data(format!("trial {}: {e}", i + 1)))?;
            Ok(q)
        })
        .collect()
}

#[derive(Debug, Args)]
pub struct QmfArgs {
    #[arg(long)]
    trials: Option<PathBuf>,
    /// JSON list of {id, duration_seconds, snr_db?, speaker?}.
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Directory of `<id>.wav` files used to estimate missing SNRs.
    #[arg(long)]
    wav_dir: Option<PathBuf>,
    /// duplicate or log_product.
    #[arg(long)]
    d_mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn qmf(a: QmfArgs, settings: &mut Settings) -> Result<(), CliError> {
    let trials_path = settings.required_path("paths.trials", a.trials)?;
    let meta_path = settings.required_path("paths.metadata", a.metadata)?;
    let wav_dir = settings.optional::<PathBuf>("paths.wav_dir", a.wav_dir)?;
    let mode = d_mode(settings, a.d_mode)?;
    let out = settings.output("qmf.out", a.out, "qmf.jsonl")?;

    let mut manifest = Manifest::new("qmf", None);
    manifest.input("trials", &trials_path)?;
    manifest.input("metadata", &meta_path)?;

    let trials = trialdata::parse_trials(&trials_path)?;
    let mut meta = trialdata::parse_metadata(&meta_path)?;
    if let Some(dir) = &wav_dir {
        meta = fill_snr(&meta, &trials, dir, &mut manifest)?;
    }
    let qmfs = trial_qmfs(&trials, &meta, mode)?;
    inputs::write_qmf(&out, &trials, &qmfs)?;
    manifest.outputs.push(out.clone());
    manifest.write(&out, settings.resolved())?;
    eprintln!("svkit qmf: {} trials -> {}", trials.len(), out.display());
    print_json(&json!({ "trials": trials.len(), "out": out }));
    Ok(())
}

/// QMF rows from a QMF file, or computed from metadata, or zeros when the
/// caller does not need them.
fn resolve_qmfs(
    settings: &mut Settings,
    qmf_flag: Option<PathBuf>,
    metadata_flag: Option<PathBuf>,
    trials: &TrialList,
    needed: bool,
    manifest: &mut Manifest,
) -> Result<Vec<QmfVector>, CliError> {
    if let Some(path) = settings.optional::<PathBuf>("paths.qmf", qmf_flag)? {
        manifest.input("qmf", &path)?;
        return inputs::read_qmf(&path, trials);
    }
    if let Some(path) = settings.optional::<PathBuf>("paths.metadata", metadata_flag)? {
        let mode = d_mode(settings, None)?;
        manifest.input("metadata", &path)?;
        return trial_qmfs(trials, &trialdata::parse_metadata(&path)?, mode);
    }
    if needed {
        return Err(CliError::Usage("missing --qmf or --metadata".into()));
    }
    Ok(vec![QmfVector([0.0; QMF_LEN]); trials.len()])
}

#[derive(Debug, Args)]
pub struct CalibrateTrainArgs {
    /// Labeled trial list.
    #[arg(long)]
    trials: Option<PathBuf>,
    /// Score file of one system; repeat for fusion.
    #[arg(long = "scores")]
    scores: Vec<PathBuf>,
    /// QMF lines from `svkit qmf`.
    #[arg(long)]
    qmf: Option<PathBuf>,
    /// Metadata to compute QMFs on the fly instead of --qmf.
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Fusion weights, comma separated; uniform by default.
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
    #[arg(long)]
    l2_lambda: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Fit only v0 and b.
    #[arg(long)]
    freeze_qmf: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn calibrate_train(a: CalibrateTrainArgs, seed: Option<u64>, settings: &mut Settings) -> Result<(), CliError> {
    let trials_path = settings.required_path("paths.trials", a.trials)?;
    let score_paths: Vec<PathBuf> = settings.required("calib.scores", non_empty(a.scores))?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        l2_lambda: settings.get("calib.l2_lambda", a.l2_lambda, defaults.l2_lambda)?,
        max_iters: settings.get("calib.max_iters", a.max_iters, defaults.max_iters)?,
        grad_tol: settings.get("calib.grad_tol", a.grad_tol, defaults.grad_tol)?,
        seed: settings.get("seed", seed, defaults.seed)?,
        freeze_qmf: settings.get("calib.freeze_qmf", a.freeze_qmf.then_some(true), false)?,
    };
    let weights = settings
        .optional::<Vec<f64>>("calib.W", non_empty(a.weights))?
        .unwrap_or_else(|| calibfuse::uniform_weights(score_paths.len()));
    let out = settings.output("calib.out", a.out, "calibration.json")?;

    let mut manifest = Manifest::new("calibrate-train", Some(cfg.seed));
    manifest.input("trials", &trials_path)?;
    for (j, p) in score_paths.iter().enumerate() {
        manifest.input(&format!("scores.{j}"), p)?;
    }
    let trials = trialdata::parse_trials(&trials_path)?;
    let qmfs = resolve_qmfs(settings, a.qmf, a.metadata, &trials, !cfg.freeze_qmf, &mut manifest)?;
    let raw = inputs::systems(trials.clone(), &score_paths)?;
    let (model, summary) = calibfuse::train(&trials, &raw, &qmfs, &weights, &cfg)?;
    model.save(&out)?;
    manifest.outputs.push(out.clone());
    manifest.write(&out, settings.resolved())?;
    eprintln!(
        "svkit calibrate-train: {} trials, {} systems, {} iterations, gradient norm {:e} -> {}",
        trials.len(),
        raw.n_systems(),
        summary.iterations,
        summary.grad_norm,
        out.display()
    );
    print_json(&json!({
        "trials": trials.len(),
        "systems": raw.n_systems(),
        "iterations": summary.iterations,
        "final_loss": summary.final_loss,
        "grad_norm": summary.grad_norm,
        "v0": model.v0,
        "V": model.qmf_weights,
        "b": model.b,
        "out": out,
    }));
    Ok(())
}

/// Trials for apply-style commands: the labeled list when given, else the
/// first score file's pairs in file order.
fn apply_trials(
    settings: &mut Settings,
    trials_flag: Option<PathBuf>,
    score_paths: &[PathBuf],
    manifest: &mut Manifest,
) -> Result<TrialList, CliError> {
    match settings.optional::<PathBuf>("paths.trials", trials_flag)? {
        Some(p) => {
            manifest.input("trials", &p)?;
            Ok(trialdata::parse_trials(&p)?)
        }
        None => Ok(inputs::score_file(&score_paths[0])?.trials().clone()),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_model(
    command: &str,
    model_path: PathBuf,
    score_paths: Vec<PathBuf>,
    trials_flag: Option<PathBuf>,
    qmf_flag: Option<PathBuf>,
    metadata_flag: Option<PathBuf>,
    out: PathBuf,
    settings: &mut Settings,
) -> Result<(), CliError> {
    let mut manifest = Manifest::new(command, None);
    manifest.input("model", &model_path)?;
    for (j, p) in score_paths.iter().enumerate() {
        manifest.input(&format!("scores.{j}"), p)?;
    }
    let model = CalibrationModel::load(&model_path)?;
    let trials = apply_trials(settings, trials_flag, &score_paths, &mut manifest)?;
    let needs_qmf = model.qmf_weights.iter().any(|v| *v != 0.0);
    let qmfs = resolve_qmfs(settings, qmf_flag, metadata_flag, &trials, needs_qmf, &mut manifest)?;
    let raw = inputs::systems(trials.clone(), &score_paths)?;
    let scores = calibfuse::apply(&model, &raw, &qmfs)?;
    trialdata::write_score_file(&out, &trials, &scores)?;
    manifest.outputs.push(out.clone());
    manifest.write(&out, settings.resolved())?;
    eprintln!("svkit {command}: {} trials -> {}", trials.len(), out.display());
    print_json(&json!({ "trials": trials.len(), "out": out }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Score file of one system; repeat in training order.
    #[arg(long = "scores")]
    scores: Vec<PathBuf>,
    #[arg(long)]
    qmf: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Trial list fixing the output order; defaults to the first score file.
    #[arg(long)]
    trials: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn calibrate_apply(a: ApplyArgs, settings: &mut Settings) -> Result<(), CliError> {
    let model = settings.required_path("calib.model", a.model)?;
    let scores: Vec<PathBuf> = settings.required("calib.scores", non_empty(a.scores))?;
    let out = settings.output("calib.apply_out", a.out, "calibrated_scores.txt")?;
    run_model("calibrate-apply", model, scores, a.trials, a.qmf, a.metadata, out, settings)
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Score file of one system; repeat per system.
    #[arg(long = "scores")]
    scores: Vec<PathBuf>,
    /// Calibration model; without it the systems are z-normalized on their own
    /// statistics and combined with --weights.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
    #[arg(long)]
    qmf: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long)]
    trials: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn fuse(a: FuseArgs, settings: &mut Settings) -> Result<(), CliError> {
    let scores: Vec<PathBuf> = settings.required("fuse.scores", non_empty(a.scores))?;
    let out = settings.output("fuse.out", a.out, "fused_scores.txt")?;
    if let Some(model) = settings.optional::<PathBuf>("calib.model", a.model)? {
        return run_model("fuse", model, scores, a.trials, a.qmf, a.metadata, out, settings);
    }
    let weights = settings
        .optional::<Vec<f64>>("calib.W", non_empty(a.weights))?
        .unwrap_or_else(|| calibfuse::uniform_weights(scores.len()));
    if weights.len() != scores.len() {
        return Err(CliError::Usage(format!("{} weights for {} score files", weights.len(), scores.len())));
    }
    let mut manifest = Manifest::new("fuse", None);
    for (j, p) in scores.iter().enumerate() {
        manifest.input(&format!("scores.{j}"), p)?;
    }
    let trials = apply_trials(settings, a.trials, &scores, &mut manifest)?;
    let raw = inputs::systems(trials.clone(), &scores)?;
    let (normalized, _) = calibfuse::normalize_scores(&raw)?;
    let fused: Vec<f64> =
        (0..normalized.n_trials()).map(|i| normalized.row(i).iter().zip(&weights).map(|(s, w)| s * w).sum()).collect();
    trialdata::write_score_file(&out, &trials, &fused)?;
    manifest.outputs.push(out.clone());
    manifest.write(&out, settings.resolved())?;
    eprintln!("svkit fuse: {} trials, {} systems -> {}", trials.len(), scores.len(), out.display());
    print_json(&json!({ "trials": trials.len(), "out": out }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Labeled trial list.
    #[arg(long)]
    trials: Option<PathBuf>,
    #[arg(long)]
    p_target: Option<f64>,
    #[arg(long)]
    c_miss: Option<f64>,
    #[arg(long)]
    c_fa: Option<f64>,
    /// interpolated or staircase.
    #[arg(long)]
    eer_mode: Option<String>,
    /// Also write the report here, with a manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs, settings: &mut Settings) -> Result<(), CliError> {
    let scores_path = settings.required_path("paths.scores", a.scores)?;
    let trials_path = settings.required_path("paths.trials", a.trials)?;
    let defaults = DcfParams::default();
    let params = DcfParams {
        p_target: settings.get("metrics.p_target", a.p_target, defaults.p_target)?,
        c_miss: settings.get("metrics.c_miss", a.c_miss, defaults.c_miss)?,
        c_fa: settings.get("metrics.c_fa", a.c_fa, defaults.c_fa)?,
    };
    let mode_name = settings.get("metrics.eer_mode", a.eer_mode, "interpolated".to_string())?;
    let mode: EerMode = parse("metrics.eer_mode", &mode_name)?;
    let out = settings.optional::<PathBuf>("eval.out", a.out)?;

    let mut manifest = Manifest::new("eval", None);
    manifest.input("scores", &scores_path)?;
    manifest.input("trials", &trials_path)?;
    let trials = trialdata::parse_trials(&trials_path)?;
    let set = inputs::systems(trials, &[&scores_path])?;
    let report = metrics::evaluate_scores(&set, &params, mode)?;
    let summary = json!({
        "eer": report.eer,
        "eer_percent": metrics::format_eer_percent(report.eer),
        "eer_threshold": finite_or_null(report.eer_threshold),
        "min_dcf": report.min_dcf,
        "dcf_threshold": finite_or_null(report.dcf_threshold),
        "p_target": params.p_target,
        "c_miss": params.c_miss,
        "c_fa": params.c_fa,
        "eer_mode": mode_name,
        "n_target": report.n_target,
        "n_nontarget": report.n_nontarget,
    });
    if let Some(out) = out {
        inputs::write_text(&out, &format!("{}\n", serde_json::to_string_pretty(&summary).expect("plain data")))?;
        manifest.outputs.push(out.clone());
        manifest.write(&out, settings.resolved())?;
    }
    eprintln!("svkit eval: EER {}%, minDCF {:.4}", metrics::format_eer_percent(report.eer), report.min_dcf);
    print_json(&summary);
    Ok(())
}

#[derive(Debug, Args)]
pub struct BuildTrialsArgs {
    /// Speaker-labeled metadata.
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn build_trials(a: BuildTrialsArgs, seed: Option<u64>, settings: &mut Settings) -> Result<(), CliError> {
    let meta_path = settings.required_path("paths.metadata", a.metadata)?;
    let count = settings.get("trials.count", a.count, 30_000usize)?;
    let seed = settings.get("seed", seed, 0u64)?;
    let out = settings.output("trials.out", a.out, "calibration_trials.txt")?;

    let mut manifest = Manifest::new("build-trials", Some(seed));
    manifest.input("metadata", &meta_path)?;
    let meta = trialdata::parse_metadata(&meta_path)?;
    let trials = trialdata::build_calibration_trials(&meta, count, seed)?;
    trialdata::write_trials(&out, &trials)?;
    manifest.outputs.push(out.clone());
    manifest.write(&out, settings.resolved())?;
    let targets = trials.iter().filter(|t| t.label == Label::Target).count();
    eprintln!("svkit build-trials: {} trials ({targets} target) -> {}", trials.len(), out.display());
    print_json(&json!({ "trials": trials.len(), "targets": targets, "out": out }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct FbankArgs {
    /// 16-bit PCM mono WAV.
    #[arg(long)]
    wav: Option<PathBuf>,
    #[arg(long)]
    n_mels: Option<usize>,
    /// Text matrix, one frame per line.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn fbank(a: FbankArgs, settings: &mut Settings) -> Result<(), CliError> {
    let wav_path = settings.required_path("paths.wav", a.wav)?;
    let defaults = FbankConfig::default();
    let cfg = FbankConfig {
        n_mels: settings.get("fbank.n_mels", a.n_mels, defaults.n_mels)?,
        frame_length_ms: settings.get("fbank.frame_length_ms", None, defaults.frame_length_ms)?,
        frame_shift_ms: settings.get("fbank.frame_shift_ms", None, defaults.frame_shift_ms)?,
        fft_size: settings.get("fbank.fft_size", None, defaults.fft_size)?,
        ..defaults
    };
    let out = settings.output("fbank.out", a.out, "fbank.txt")?;

    let mut manifest = Manifest::new("fbank", None);
    manifest.input("wav", &wav_path)?;
    let wave = dspfeat::read_wav(&wav_path)?;
    let feats = dspfeat::fbank(&wave, &cfg)?;
    let mut text = String::new();
    for row in feats.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(text, "{}", line.join(" ")).expect("writing to a String");
    }
    inputs::write_text(&out, &text)?;
    manifest.outputs.push(out.clone());
    manifest.write(&out, settings.resolved())?;
    let (frames, mels) = feats.dim();
    eprintln!("svkit fbank: {frames} x {mels} -> {}", out.display());
    print_json(&json!({ "frames": frames, "n_mels": mels, "out": out }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Utterance ids, one per line.
    #[arg(long)]
    ids: Option<PathBuf>,
    #[arg(long)]
    noise_probability: Option<f64>,
    #[arg(long)]
    crop_seconds: Option<f64>,
    /// Plans as JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Render plans: source `<id>.wav` files.
    #[arg(long, requires_all = ["noise_dir", "out_dir"])]
    wav_dir: Option<PathBuf>,
    /// `<source>.wav` for each noise source (`musan`, `rir`).
    #[arg(long)]
    noise_dir: Option<PathBuf>,
    /// Rendered `<id>.wav` files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

pub fn augment(a: AugmentArgs, seed: Option<u64>, settings: &mut Settings) -> Result<(), CliError> {
    let ids_path = settings.required_path("paths.ids", a.ids)?;
    let seed = settings.get("seed", seed, 0u64)?;
    let defaults = PlanConfig::default();
    let cfg = PlanConfig {
        noise_probability: settings.get(
            "augment.noise_probability",
            a.noise_probability,
            defaults.noise_probability,
        )?,
        crop_seconds: settings.get("augment.crop_seconds", a.crop_seconds, defaults.crop_seconds)?,
        snr_range_db: settings.get("augment.snr_range_db", None, defaults.snr_range_db)?,
        speed_perturb: settings.get("augment.speed_perturb", None, defaults.speed_perturb)?,
        noise_sources: defaults.noise_sources,
    };
    let out = settings.output("augment.out", a.out, "augment_plans.jsonl")?;
    let render = match (a.wav_dir, a.noise_dir, a.out_dir) {
        (Some(w), Some(n), Some(o)) => Some((w, n, o)),
        _ => None,
    };

    let mut manifest = Manifest::new("augment", Some(seed));
    manifest.input("ids", &ids_path)?;
    let ids = inputs::id_list(&ids_path)?;
    let plans = dspfeat::plan_augmentation(&ids, seed, &cfg)?;
    let mut text = String::new();
    for p in &plans {
        writeln!(text, "{}", serde_json::to_string(p).expect("plan is plain data")).expect("writing to a String");
    }
    inputs::write_text(&out, &text)?;
    manifest.outputs.push(out.clone());

    if let Some((wav_dir, noise_dir, out_dir)) = render {
        inputs::create_dir(&out_dir)?;
        let mut noises = BTreeMap::new();
        for NoiseSource { id, kind } in &cfg.noise_sources {
            let path = noise_dir.join(format!("{id}.wav"));
            if plans.iter().any(|p| p.noise_source.as_ref().is_some_and(|s| &s.id == id)) {
                manifest.input(&format!("noise:{id}"), &path)?;
                noises.insert(id.clone(), (dspfeat::read_wav(&path)?, *kind));
            }
        }
        for p in &plans {
            let src = wav_dir.join(format!("{}.wav", p.utterance_id));
            manifest.input(&format!("wav:{}", p.utterance_id), &src)?;
        }
        let rendered = plans
            .par_iter()
            .map(|p| {
                let wave = dspfeat::read_wav(wav_dir.join(format!("{}.wav", p.utterance_id)))?;
                let noise = p.noise_source.as_ref().and_then(|s| noises.get(&s.id)).map(|(w, _)| w);
                let augmented = dspfeat::apply_plan(&wave, p, noise)?;
                let dst = out_dir.join(format!("{}.wav", p.utterance_id));
                dspfeat::write_wav(&dst, &augmented)?;
                Ok(dst)
            })
            .collect::<svkit::Result<Vec<_>>>()?;
        manifest.outputs.extend(rendered);
        let reverb =
            plans.iter().filter(|p| p.noise_source.as_ref().is_some_and(|s| s.kind == NoiseKind::Reverb)).count();
        eprintln!("svkit augment: rendered {} files ({reverb} reverberated) into {}", plans.len(), out_dir.display());
    }
    manifest.write(&out, settings.resolved())?;
    let noisy = plans.iter().filter(|p| p.apply_noise).count();
    eprintln!("svkit augment: {} plans, {noisy} with noise -> {}", plans.len(), out.display());
    print_json(&json!({ "plans": plans.len(), "with_noise": noisy, "out": out }));
    Ok(())
}

#[derive(Debug, Args)]
pub struct ToyTrainArgs {
    /// aam or sphere2.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    initial_epochs: Option<usize>,
    #[arg(long)]
    large_margin_epochs: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

pub fn toy_train(a: ToyTrainArgs, seed: Option<u64>, settings: &mut Settings) -> Result<(), CliError> {
    let seed = settings.get("seed", seed, 0u64)?;
    let loss_name = settings.get("toy.loss", a.loss, "aam".to_string())?;
    let loss = match loss_name.as_str() {
        "aam" => LossChoice::Aam,
        "sphere2" => LossChoice::Sphere2,
        other => return Err(CliError::Usage(format!("unknown loss `{other}` (aam, sphere2)"))),
    };
    let data_cfg = ToyDataConfig {
        n_speakers: settings.get("toy.speakers", a.speakers, ToyDataConfig::default().n_speakers)?,
        ..ToyDataConfig::default()
    };
    let initial = ToyTrainConfig {
        epochs: settings.get("toy.initial_epochs", a.initial_epochs, ToyTrainConfig::initial(seed).epochs)?,
        ..ToyTrainConfig::initial(seed)
    };
    let large_margin = ToyTrainConfig {
        epochs: settings.get(
            "toy.large_margin_epochs",
            a.large_margin_epochs,
            ToyTrainConfig::large_margin(seed).epochs,
        )?,
        ..ToyTrainConfig::large_margin(seed)
    };
    let out_dir = settings.output("toy.out_dir", a.out_dir, "toy")?;
    let mut manifest = Manifest::new("toy-train", Some(seed));

    let data = ToyDataset::synthetic(&data_cfg, seed)?;
    let (model, report) = toy::two_step(&data, loss, &initial, &large_margin)?;
    inputs::create_dir(&out_dir)?;
    let mut emit = |name: &str, text: String| -> Result<(), CliError> {
        let p = out_dir.join(name);
        inputs::write_text(&p, &text)?;
        manifest.outputs.push(p);
        Ok(())
    };
    emit("initial_trace.csv", toy::trace_csv(&report.initial_trace))?;
    emit("large_margin_trace.csv", toy::trace_csv(&report.large_margin_trace))?;
    emit(
        "report.json",
        format!("{}\n", serde_json::to_string_pretty(&report).map_err(|e| CliError::data(e.to_string()))?),
    )?;
    let model_path = out_dir.join("model.svt");
    model.save(&model_path)?;
    manifest.outputs.push(model_path);
    manifest.write(&out_dir, settings.resolved())?;
    eprintln!(
        "svkit toy-train: held-out EER {}% after step 1, {}% after step 2",
        metrics::format_eer_percent(report.eer_after_initial),
        metrics::format_eer_percent(report.eer_after_large_margin)
    );
    print_json(&json!({
        "seed": seed,
        "loss": loss_name,
        "eer_after_initial": report.eer_after_initial,
        "eer_after_large_margin": report.eer_after_large_margin,
        "out_dir": out_dir,
    }));
    Ok(())
}
