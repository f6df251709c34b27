//! The end-to-end synthetic experiment: simulate three environments, split
//! them, train the history and no-history models, evaluate both on the
//! held-out environment against exact ground truth.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sixthsense_core::dataset::{split, GroundTruthPerson, PreparedEpisode, Preprocessor, SampleRef, SampleSet, SplitScheme};
use sixthsense_core::evaluation::{dummy_baseline, evaluate, DummyBaseline, EvalConfig, EvalFrame, Evaluation};
use sixthsense_core::model::{forward, ModelConfig, ModelParams, PredictionTensor};
use sixthsense_core::rng::derive_seed;
use sixthsense_core::simulator::{EpisodeGenerator, WorldConfig};
use sixthsense_core::supervision::PersonObservation;
use sixthsense_core::training::{train_with_observer, EpochReport, LossWeights, TrainConfig, TrainError, TrainOutcome};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentPlan {
    /// Preset name of the simulated environment.
    pub name: String,
    pub episodes: usize,
    /// Seconds per episode.
    pub episode_duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPlan {
    pub name: String,
    /// Channels of the scan window.
    pub history: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub environments: Vec<EnvironmentPlan>,
    pub split: SplitScheme,
    pub models: Vec<ModelPlan>,
    pub train: TrainConfig,
    /// Every k-th validation sample is used for model selection.
    pub val_stride: usize,
    /// Every k-th test sample is evaluated.
    pub test_stride: usize,
    pub eval: EvalConfig,
    /// People further than this (m) are not expected to be found.
    pub eval_max_range: f64,
    /// People hit by fewer beams are not expected to be found.
    pub eval_min_hits: usize,
}

impl Default for ExperimentConfig {
    /// Sixty simulated minutes, 100 epochs.
    fn default() -> Self {
        let env = |name: &str, episodes, episode_duration| EnvironmentPlan { name: name.into(), episodes, episode_duration };
        Self {
            seed: 1,
            environments: vec![env("corridor", 3, 600.0), env("break_area", 2, 600.0), env("lab", 2, 300.0)],
            split: SplitScheme::default(),
            models: vec![
                ModelPlan { name: "history".into(), history: 30 },
                ModelPlan { name: "no_history".into(), history: 1 },
            ],
            train: TrainConfig {
                epochs: 100,
                samples_per_epoch: Some(1024),
                learning_rate: 1e-3,
                loss_weights: LossWeights { bearing: 0.2, ..LossWeights::UNIT },
                ..Default::default()
            },
            val_stride: 10,
            test_stride: 2,
            eval: EvalConfig::default(),
            eval_max_range: 6.0,
            eval_min_hits: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn simulated_seconds(&self) -> f64 {
        self.environments.iter().map(|e| e.episodes as f64 * e.episode_duration).sum()
    }

    fn warmup(&self) -> usize {
        self.models.iter().map(|m| m.history).max().unwrap_or(1)
    }
}

/// World of episode `k` of an environment.
pub fn episode_world(name: &str, seed: u64, k: usize) -> Result<WorldConfig> {
    Ok(WorldConfig::preset(name, derive_seed(seed, &format!("episode/{name}/{k}")))?)
}

/// Simulates and preprocesses every planned episode, without keeping raw scans.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Vec<PreparedEpisode>> {
    let mut out = Vec::new();
    for env in &cfg.environments {
        for k in 0..env.episodes {
            let world = episode_world(&env.name, cfg.seed, k)?;
            let mut pre = Preprocessor::new(world.rig.clone(), world.camera);
            let mut frames = Vec::new();
            for record in EpisodeGenerator::new(world, env.episode_duration)? {
                frames.extend(pre.push(&record)?);
            }
            info!("{} episode {k}: {} ticks ({} skipped)", env.name, frames.len(), pre.skipped());
            out.push(PreparedEpisode { environment: env.name.clone(), frames });
        }
    }
    Ok(out)
}

/// Train/val/test sample references; every model sees the same ticks.
pub fn split_samples(episodes: &[PreparedEpisode], cfg: &ExperimentConfig) -> Result<(Vec<SampleRef>, Vec<SampleRef>, Vec<SampleRef>)> {
    let warmup = cfg.warmup();
    let mut groups: Vec<(String, Vec<SampleRef>)> = Vec::new();
    for (e, ep) in episodes.iter().enumerate() {
        let refs = ep.sample_indices(warmup).map(|frame| SampleRef { episode: e, frame }).collect();
        groups.push((ep.environment.clone(), refs));
    }
    let s = split(&groups, &cfg.split)?;
    let val = s.val.into_iter().step_by(cfg.val_stride.max(1)).collect();
    let test = s.test.into_iter().step_by(cfg.test_stride.max(1)).collect();
    Ok((s.train, val, test))
}

/// Splits ground truth into people the detector must find and people it
/// may ignore (too far, or not seen by any beam).
pub fn eval_ground_truth(gts: &[GroundTruthPerson], max_range: f64, min_hits: usize) -> (Vec<PersonObservation>, Vec<PersonObservation>) {
    let (keep, ignore): (Vec<&GroundTruthPerson>, Vec<&GroundTruthPerson>) =
        gts.iter().partition(|g| g.observation().range() <= max_range && g.lidar_hits >= min_hits);
    (keep.iter().map(|g| g.observation()).collect(), ignore.iter().map(|g| g.observation()).collect())
}

pub fn predictions(params: &ModelParams, episodes: &[PreparedEpisode], refs: &[SampleRef]) -> Result<Vec<PredictionTensor>> {
    let n = params.config.in_channels;
    refs.iter()
        .map(|r| {
            let w = episodes[r.episode].window(r.frame, n).expect("sample refs point at full windows");
            Ok(forward(params, &w)?)
        })
        .collect()
}

pub fn eval_frames(
    preds: Vec<PredictionTensor>,
    episodes: &[PreparedEpisode],
    refs: &[SampleRef],
    cfg: &ExperimentConfig,
) -> Vec<EvalFrame> {
    preds
        .into_iter()
        .zip(refs)
        .map(|(prediction, r)| {
            let (ground_truth, ignored) =
                eval_ground_truth(&episodes[r.episode].frames[r.frame].ground_truth, cfg.eval_max_range, cfg.eval_min_hits);
            EvalFrame { prediction, ground_truth, ignored }
        })
        .collect()
}

/// Constant-prediction baseline over every person the detector must find.
pub fn dummy_for(episodes: &[PreparedEpisode], refs: &[SampleRef], cfg: &ExperimentConfig) -> Result<DummyBaseline> {
    let gts: Vec<PersonObservation> = refs
        .iter()
        .flat_map(|r| eval_ground_truth(&episodes[r.episode].frames[r.frame].ground_truth, cfg.eval_max_range, cfg.eval_min_hits).0)
        .collect();
    Ok(dummy_baseline(&gts)?)
}

#[derive(Clone, Debug)]
pub struct ModelOutcome {
    pub plan: ModelPlan,
    pub training: TrainOutcome,
    /// Set when training stopped on a non-finite loss; `training` then holds
    /// the last good state.
    pub diverged_at: Option<usize>,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub models: Vec<ModelOutcome>,
    pub dummy: DummyBaseline,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
}

pub fn train_model(
    plan: &ModelPlan,
    episodes: &[PreparedEpisode],
    train: &[SampleRef],
    val: &[SampleRef],
    cfg: &ExperimentConfig,
    observer: &mut dyn FnMut(&str, &EpochReport),
) -> Result<(TrainOutcome, Option<usize>)> {
    let train_set = SampleSet { episodes, refs: train, n: plan.history };
    let val_set = SampleSet { episodes, refs: val, n: plan.history };
    let tc = TrainConfig { rng_seed: derive_seed(cfg.seed, &format!("train/{}", plan.name)), ..cfg.train.clone() };
    match train_with_observer(&train_set, &val_set, &tc, &ModelConfig::new(plan.history), |r| observer(&plan.name, r)) {
        Ok(o) => Ok((o, None)),
        Err(TrainError::Diverged { epoch, last_good }) => {
            log::warn!("{}: training diverged in epoch {epoch}; keeping the last good weights", plan.name);
            Ok((*last_good, Some(epoch)))
        }
        Err(TrainError::Invalid(e)) => Err(e.into()),
    }
}

pub fn run(cfg: &ExperimentConfig, observer: &mut dyn FnMut(&str, &EpochReport)) -> Result<ExperimentOutcome> {
    let t0 = Instant::now();
    let episodes = prepare(cfg)?;
    let (train, val, test) = split_samples(&episodes, cfg)?;
    info!("samples: {} train, {} val, {} test ({:.0} s)", train.len(), val.len(), test.len(), t0.elapsed().as_secs_f64());
    let mut models = Vec::new();
    for plan in &cfg.models {
        let t = Instant::now();
        let (training, diverged_at) = train_model(plan, &episodes, &train, &val, cfg, observer)?;
        let preds = predictions(&training.best, &episodes, &test)?;
        let evaluation = evaluate(&eval_frames(preds, &episodes, &test, cfg), &cfg.eval)?;
        info!("{}: trained and evaluated in {:.0} s", plan.name, t.elapsed().as_secs_f64());
        models.push(ModelOutcome { plan: plan.clone(), training, diverged_at, evaluation });
    }
    let dummy = dummy_for(&episodes, &test, cfg)?;
    Ok(ExperimentOutcome { models, dummy, train_samples: train.len(), val_samples: val.len(), test_samples: test.len() })
}
