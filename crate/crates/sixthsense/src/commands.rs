//! Subcommands of the `sixthsense` tool. Each writes its outputs and a
//! manifest under `--out`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use serde::Serialize;
use sixthsense_core::dataset::{EpisodeHeader, PreparedEpisode, Preprocessor, SampleRef, SplitScheme};
use sixthsense_core::detection::{nms, DEFAULT_THRESHOLD, DEFAULT_WINDOW_DEG};
use sixthsense_core::evaluation::{evaluate, EvalConfig, Evaluation};
use sixthsense_core::model::{init_params, ModelConfig, ModelParams};
use sixthsense_core::rng::derive_seed;
use sixthsense_core::simulator::{EpisodeGenerator, WorldConfig};
use sixthsense_core::training::{LossWeights, TrainConfig};

use crate::checkpoint::{self, CheckpointMeta};
use crate::episode_io::{EpisodeReader, EpisodeWriter};
use crate::error::{io_err, Error, Result};
use crate::experiment::{self, ExperimentConfig, ExperimentOutcome, ModelPlan};
use crate::manifest::RunManifest;
use crate::report::{self, DummyMetrics, MetricsFile, ModelMetrics};

pub const MANIFEST: &str = "manifest.json";

fn positive(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn open_unit(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("expected a value strictly between 0 and 1, got {s:?}")),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn file_stem(path: &Path) -> String {
    path.file_name().and_then(|n| n.to_str()).unwrap_or("episode").trim_end_matches(".jsonl").to_string()
}

/// Episode files of a directory (sorted by name), or the file itself.
pub fn episode_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".jsonl") && !name.ends_with(".ticks.jsonl") && !name.ends_with(".detections.jsonl")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format { path: path.into(), message: "no episode files (*.jsonl)".into() });
    }
    Ok(files)
}

/// Streams an episode file through the preprocessor.
pub fn prepare_file(path: &Path) -> Result<PreparedEpisode> {
    let reader = EpisodeReader::open(path)?;
    let h = reader.header().clone();
    let mut pre = Preprocessor::new(h.world.rig.clone(), h.world.camera);
    let mut frames = Vec::new();
    for record in reader {
        frames.extend(pre.push(&record?)?);
    }
    Ok(PreparedEpisode { environment: h.environment, frames })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    /// World configuration (JSON); defaults to the preset named by --env-name.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment name: corridor, break_area, lab or static_room.
    #[arg(long, default_value = "lab")]
    pub env_name: String,
    /// Seconds of simulated time.
    #[arg(long, value_parser = positive)]
    pub duration: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes `<env>_<seed>.jsonl` and its manifest; returns the episode path.
pub fn simulate(args: &SimulateArgs) -> Result<PathBuf> {
    let world = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            WorldConfig { rng_seed: args.seed, ..serde_json::from_str(&text)? }
        }
        None => WorldConfig::preset(&args.env_name, args.seed)?,
    };
    create_dir(&args.out)?;
    let stem = format!("{}_{}", args.env_name, args.seed);
    let path = args.out.join(format!("{stem}.jsonl"));
    let mut writer = EpisodeWriter::create(&path, &EpisodeHeader::new(&args.env_name, &world, args.duration))?;
    let mut ticks = 0;
    for record in EpisodeGenerator::new(world.clone(), args.duration)? {
        ticks += record.camera.is_some() as usize;
        writer.write(&record)?;
    }
    writer.finish()?;
    info!("{}: {ticks} ticks", path.display());
    let mut m = RunManifest::new("simulate", &serde_json::json!({ "args": args, "world": world }), Some(args.seed))?;
    m.artifact(format!("{stem}.jsonl"));
    m.write(&args.out.join(format!("{stem}.manifest.json")))?;
    Ok(path)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PreprocessArgs {
    /// Episode file.
    #[arg(long)]
    pub episode: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// One JSON line per synchronized tick: fused virtual scan, labels and ground truth.
pub fn preprocess(args: &PreprocessArgs) -> Result<PathBuf> {
    let prepared = prepare_file(&args.episode)?;
    create_dir(&args.out)?;
    let stem = file_stem(&args.episode);
    let path = args.out.join(format!("{stem}.ticks.jsonl"));
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    for f in &prepared.frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    let mut m = RunManifest::new("preprocess", args, None)?;
    m.artifact(format!("{stem}.ticks.jsonl"));
    m.write(&args.out.join(format!("{stem}.manifest.json")))?;
    Ok(path)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    /// Directory of episode files covering the three split environments.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Scan window channels: 30 for History, 1 for No History.
    #[arg(long, default_value_t = 30)]
    pub history: usize,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Weight of the bearing term in the loss (`reproduce` uses 0.2).
    #[arg(long, default_value_t = 1.0)]
    pub bearing_weight: f64,
    /// Samples drawn per epoch; all training samples when absent.
    #[arg(long)]
    pub samples_per_epoch: Option<usize>,
    /// Use every k-th validation sample.
    #[arg(long, default_value_t = 1)]
    pub val_stride: usize,
    #[arg(long, default_value = "corridor")]
    pub train_env: String,
    #[arg(long, default_value = "break_area")]
    pub shared_env: String,
    #[arg(long, default_value = "lab")]
    pub test_env: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn model_name(history: usize) -> String {
    if history == 1 { "no_history".into() } else { "history".into() }
}

fn load_dir(dir: &Path) -> Result<Vec<PreparedEpisode>> {
    let mut out = Vec::new();
    for p in episode_files(dir)? {
        let e = prepare_file(&p)?;
        info!("{}: {} ticks ({})", p.display(), e.frames.len(), e.environment);
        out.push(e);
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, name: &str, seed: u64, epoch: usize, val_loss: Option<f64>) -> Result<()> {
    checkpoint::save(path, params, &CheckpointMeta { label: name.into(), seed, epoch, val_loss })
}

/// Trains one model; writes `model.ckpt`, `training_log.csv` and the manifest.
pub fn train(args: &TrainArgs) -> Result<PathBuf> {
    if !args.data_dir.is_dir() {
        return Err(Error::Format { path: args.data_dir.clone(), message: "data directory not found".into() });
    }
    let episodes = load_dir(&args.data_dir)?;
    let cfg = ExperimentConfig {
        seed: args.seed,
        split: SplitScheme { train: args.train_env.clone(), shared: args.shared_env.clone(), test: args.test_env.clone() },
        models: vec![ModelPlan { name: model_name(args.history), history: args.history }],
        train: TrainConfig {
            epochs: args.epochs,
            learning_rate: args.lr,
            batch_size: args.batch_size,
            samples_per_epoch: args.samples_per_epoch,
            loss_weights: LossWeights { bearing: args.bearing_weight, ..LossWeights::UNIT },
            ..TrainConfig::default()
        },
        val_stride: args.val_stride,
        ..ExperimentConfig::default()
    };
    let (train_refs, val_refs, _) = experiment::split_samples(&episodes, &cfg)?;
    info!("{} training and {} validation samples", train_refs.len(), val_refs.len());
    let plan = &cfg.models[0];
    let (outcome, diverged) = experiment::train_model(plan, &episodes, &train_refs, &val_refs, &cfg, &mut |name, r| {
        info!("{name} epoch {}: train {:.5} val {:.5}", r.epoch, r.train.total, r.val.total)
    })?;
    if let Some(e) = diverged {
        log::warn!("diverged in epoch {e}");
    }
    create_dir(&args.out)?;
    let val_loss = outcome.history.iter().find(|r| r.epoch == outcome.best_epoch).map(|r| r.val.total);
    let ckpt = args.out.join("model.ckpt");
    save_checkpoint(&ckpt, &outcome.best, &plan.name, args.seed, outcome.best_epoch, val_loss)?;
    report::write_training_log(&args.out.join("training_log.csv"), &outcome.history)?;
    let mut m = RunManifest::new("train", &serde_json::json!({ "args": args, "experiment": cfg }), Some(args.seed))?;
    m.artifact("model.ckpt");
    m.artifact("training_log.csv");
    m.write(&args.out.join(MANIFEST))?;
    Ok(ckpt)
}

/// Checkpoint of an untrained model, as training would initialize it.
pub fn initial_params(history: usize, seed: u64) -> Result<ModelParams> {
    let train_seed = derive_seed(seed, &format!("train/{}", model_name(history)));
    Ok(init_params(&ModelConfig::new(history), derive_seed(train_seed, "init"))?)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    /// Checkpoint(s) to evaluate; repeat the flag to compare models.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    /// Episode file or directory of episodes with ground truth.
    #[arg(long)]
    pub test_data: PathBuf,
    /// Operating threshold when 80% recall is never reached.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, value_parser = open_unit)]
    pub threshold: f64,
    /// Match radius (m).
    #[arg(long, default_value_t = 0.5)]
    pub match_radius: f64,
    /// People further than this (m) are not expected to be found.
    #[arg(long, default_value_t = 6.0)]
    pub max_range: f64,
    /// People hit by fewer beams are not expected to be found.
    #[arg(long, default_value_t = 1)]
    pub min_hits: usize,
    /// Evaluate every k-th tick.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes metrics.json, pr_curve.csv, orientation_errors.csv and both plots.
pub fn write_evaluation(out: &Path, evals: &[(String, Evaluation)], dummy: &DummyMetrics, match_radius: f64) -> Result<Vec<&'static str>> {
    create_dir(out)?;
    let metrics = MetricsFile {
        match_radius,
        models: evals.iter().map(|(n, e)| ModelMetrics::from_evaluation(n, e)).collect(),
        dummy: dummy.clone(),
    };
    report::write_metrics(&out.join("metrics.json"), &metrics)?;
    let curves: Vec<(&str, &_)> = evals.iter().map(|(n, e)| (n.as_str(), &e.report.pr_curve)).collect();
    report::write_pr_csv(&out.join("pr_curve.csv"), &curves)?;
    let errors: Vec<(&str, &[f64])> = evals.iter().map(|(n, e)| (n.as_str(), &e.orientation_errors_deg[..])).collect();
    report::write_orientation_errors(&out.join("orientation_errors.csv"), &errors)?;
    report::write_text(&out.join("pr_curve.svg"), &report::pr_curve_svg(&curves))?;
    report::write_text(&out.join("orientation_error_hist.svg"), &report::orientation_hist_svg(&errors))?;
    Ok(vec!["metrics.json", "pr_curve.csv", "orientation_errors.csv", "pr_curve.svg", "orientation_error_hist.svg"])
}

pub fn eval(args: &EvalArgs) -> Result<PathBuf> {
    let models: Vec<(ModelParams, CheckpointMeta)> =
        args.model.iter().map(|p| checkpoint::load(p)).collect::<Result<_>>()?;
    let episodes = load_dir(&args.test_data)?;
    let warmup = models.iter().map(|(p, _)| p.config.in_channels).max().unwrap_or(1);
    let refs: Vec<SampleRef> = episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| ep.sample_indices(warmup).map(move |frame| SampleRef { episode: e, frame }))
        .step_by(args.stride.max(1))
        .collect();
    let cfg = ExperimentConfig {
        eval: EvalConfig { match_radius: args.match_radius, threshold: args.threshold, ..EvalConfig::default() },
        eval_max_range: args.max_range,
        eval_min_hits: args.min_hits,
        ..ExperimentConfig::default()
    };
    let mut evals = Vec::new();
    for (params, meta) in &models {
        let preds = experiment::predictions(params, &episodes, &refs)?;
        let e = evaluate(&experiment::eval_frames(preds, &episodes, &refs, &cfg), &cfg.eval)?;
        info!("{}: P80 {:?}", meta.label, e.report.p80);
        evals.push((meta.label.clone(), e));
    }
    let dummy = DummyMetrics::from(&experiment::dummy_for(&episodes, &refs, &cfg)?);
    let written = write_evaluation(&args.out, &evals, &dummy, args.match_radius)?;
    let mut m = RunManifest::new("eval", args, None)?;
    written.into_iter().for_each(|a| m.artifact(a));
    m.write(&args.out.join(MANIFEST))?;
    Ok(args.out.join("metrics.json"))
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub episode: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, value_parser = open_unit)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct DetectionLine {
    pub ray: usize,
    pub confidence: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct TickDetections {
    pub timestamp: f64,
    pub detections: Vec<DetectionLine>,
}

/// Detections for every tick with a full window, one JSON line each.
pub fn infer(args: &InferArgs) -> Result<PathBuf> {
    let (params, _) = checkpoint::load(&args.model)?;
    let prepared = prepare_file(&args.episode)?;
    create_dir(&args.out)?;
    let stem = file_stem(&args.episode);
    let path = args.out.join(format!("{stem}.detections.jsonl"));
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    let n = params.config.in_channels;
    for i in prepared.sample_indices(n) {
        let window = prepared.window(i, n).expect("index has a full window");
        let pred = sixthsense_core::model::forward(&params, &window)?;
        let line = TickDetections {
            timestamp: window.timestamp,
            detections: nms(&pred, args.threshold, DEFAULT_WINDOW_DEG)
                .into_iter()
                .map(|d| DetectionLine {
                    ray: d.ray_index,
                    confidence: d.confidence,
                    x: d.position.x,
                    y: d.position.y,
                    heading: d.orientation,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    let mut m = RunManifest::new("infer", args, None)?;
    m.artifact(format!("{stem}.detections.jsonl"));
    m.write(&args.out.join(format!("{stem}.manifest.json")))?;
    Ok(path)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PlotArgs {
    /// Directory written by `eval` or `reproduce`.
    #[arg(long)]
    pub eval_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Re-renders both plots from pr_curve.csv and orientation_errors.csv.
pub fn plot(args: &PlotArgs) -> Result<()> {
    let curves = report::read_pr_csv(&args.eval_dir.join("pr_curve.csv"))?;
    let errors = report::read_orientation_errors(&args.eval_dir.join("orientation_errors.csv"))?;
    create_dir(&args.out)?;
    let c: Vec<(&str, &_)> = curves.iter().map(|(n, c)| (n.as_str(), c)).collect();
    let e: Vec<(&str, &[f64])> = errors.iter().map(|(n, v)| (n.as_str(), &v[..])).collect();
    report::write_text(&args.out.join("pr_curve.svg"), &report::pr_curve_svg(&c))?;
    report::write_text(&args.out.join("orientation_error_hist.svg"), &report::orientation_hist_svg(&e))?;
    let mut m = RunManifest::new("plot", args, None)?;
    m.artifact("pr_curve.svg");
    m.artifact("orientation_error_hist.svg");
    m.write(&args.out.join(MANIFEST))?;
    Ok(())
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReproduceArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Multiplies every episode duration (1 = sixty simulated minutes).
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub scale: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long)]
    pub samples_per_epoch: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

impl ReproduceArgs {
    pub fn config(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig { seed: self.seed, ..ExperimentConfig::default() };
        for e in &mut cfg.environments {
            e.episode_duration *= self.scale;
        }
        cfg.train.epochs = self.epochs;
        if self.samples_per_epoch.is_some() {
            cfg.train.samples_per_epoch = self.samples_per_epoch;
        }
        cfg
    }
}

/// The whole synthetic experiment: both models, evaluation and plots.
pub fn reproduce(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    let outcome = experiment::run(cfg, &mut |name, r| {
        info!("{name} epoch {}: train {:.5} val {:.5}", r.epoch, r.train.total, r.val.total)
    })?;
    write_experiment(cfg, &outcome, out)?;
    Ok(outcome)
}

pub fn write_experiment(cfg: &ExperimentConfig, outcome: &ExperimentOutcome, out: &Path) -> Result<()> {
    create_dir(out)?;
    let mut m = RunManifest::new("reproduce", cfg, Some(cfg.seed))?;
    for mo in &outcome.models {
        let dir = out.join(&mo.plan.name);
        create_dir(&dir)?;
        let t = &mo.training;
        let val_loss = t.history.iter().find(|r| r.epoch == t.best_epoch).map(|r| r.val.total);
        save_checkpoint(&dir.join("model.ckpt"), &t.best, &mo.plan.name, cfg.seed, t.best_epoch, val_loss)?;
        report::write_training_log(&dir.join("training_log.csv"), &t.history)?;
        m.artifact(Path::new(&mo.plan.name).join("model.ckpt"));
        m.artifact(Path::new(&mo.plan.name).join("training_log.csv"));
    }
    let evals: Vec<(String, Evaluation)> =
        outcome.models.iter().map(|mo| (mo.plan.name.clone(), mo.evaluation.clone())).collect();
    for a in write_evaluation(out, &evals, &DummyMetrics::from(&outcome.dummy), cfg.eval.match_radius)? {
        m.artifact(a);
    }
    m.write(&out.join(MANIFEST))
}
