//! Masked squared-error objective, Adam, augmentation and the epoch loop.
//!
//! The loss only looks at rays inside the camera wedge; distance and bearing
//! terms additionally only look at rays labelled as a person.

use alloc::borrow::Cow;
use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::history::ScanWindow;
use crate::lidar::{BINS, D_MAX, D_MIN};
use crate::model::{self, init_params, ModelConfig, ModelParams, PredictionTensor, OUTPUTS};
use crate::rng;
use crate::supervision::LabelTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Standard deviation of the additive range noise (m).
    pub noise_sigma: f64,
    pub mirror_prob: f64,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Cap on samples drawn per epoch (after shuffling); `None` uses all.
    pub samples_per_epoch: Option<usize>,
    pub loss_weights: LossWeights,
}

/// Weights of the three loss terms in the optimized objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub presence: f64,
    pub distance: f64,
    pub bearing: f64,
}

impl LossWeights {
    pub const UNIT: LossWeights = LossWeights { presence: 1.0, distance: 1.0, bearing: 1.0 };

    pub fn objective(&self, l: &LossBreakdown) -> f64 {
        self.presence * l.presence_loss + self.distance * l.distance_loss + self.bearing * l.bearing_loss
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::UNIT
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            noise_sigma: 0.02,
            mirror_prob: 0.5,
            batch_size: 32,
            rng_seed: 0,
            samples_per_epoch: None,
            loss_weights: LossWeights::UNIT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.learning_rate >= 0.0) || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive, learning rate non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.mirror_prob) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("mirror probability or noise out of range".into()));
        }
        let w = &self.loss_weights;
        if [w.presence, w.distance, w.bearing].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub presence_loss: f64,
    pub distance_loss: f64,
    pub bearing_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(presence_loss: f64, distance_loss: f64, bearing_loss: f64) -> Self {
        Self { presence_loss, distance_loss, bearing_loss, total: presence_loss + distance_loss + bearing_loss }
    }

    fn accumulate(&mut self, other: &LossBreakdown) {
        self.presence_loss += other.presence_loss;
        self.distance_loss += other.distance_loss;
        self.bearing_loss += other.bearing_loss;
        self.total += other.total;
    }

    fn scaled(&self, s: f64) -> Self {
        Self::new(self.presence_loss * s, self.distance_loss * s, self.bearing_loss * s)
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Masked loss with distance residuals normalized by the sensor range.
pub fn masked_loss(pred: &PredictionTensor, labels: &LabelTensor) -> LossBreakdown {
    masked_loss_with(pred, labels, D_MAX - D_MIN)
}

pub fn masked_loss_with(pred: &PredictionTensor, labels: &LabelTensor, span: f64) -> LossBreakdown {
    let (mut np, mut nd) = (0usize, 0usize);
    let (mut lp, mut ld, mut lb) = (0.0, 0.0, 0.0);
    for i in 0..labels.len() {
        if labels.mask[i] == 0.0 {
            continue;
        }
        np += 1;
        let e = pred.presence[i] - labels.presence[i];
        lp += e * e;
        if labels.presence[i] == 1.0 {
            nd += 1;
            let ed = (pred.distance[i] - labels.distance[i]) / span;
            ld += ed * ed;
            let es = pred.bearing_sin[i] - labels.bearing_sin[i];
            let ec = pred.bearing_cos[i] - labels.bearing_cos[i];
            lb += es * es + ec * ec;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    LossBreakdown::new(mean(lp, np), mean(ld, nd), mean(lb, nd))
}

/// Gradient of [`masked_loss_with`] (unit weights) with respect to the four
/// output rows (`4 × len`: presence, distance, sine, cosine).
pub fn loss_gradient(pred: &PredictionTensor, labels: &LabelTensor, span: f64) -> Vec<f64> {
    loss_gradient_weighted(pred, labels, span, &LossWeights::UNIT)
}

pub fn loss_gradient_weighted(pred: &PredictionTensor, labels: &LabelTensor, span: f64, w: &LossWeights) -> Vec<f64> {
    let len = labels.len();
    let mut g = vec![0.0; OUTPUTS * len];
    let np = labels.mask.iter().filter(|&&m| m != 0.0).count();
    let nd = (0..len).filter(|&i| labels.mask[i] != 0.0 && labels.presence[i] == 1.0).count();
    for i in 0..len {
        if labels.mask[i] == 0.0 {
            continue;
        }
        g[i] = w.presence * 2.0 * (pred.presence[i] - labels.presence[i]) / np as f64;
        if labels.presence[i] == 1.0 {
            let nd = nd as f64;
            g[len + i] = w.distance * 2.0 * (pred.distance[i] - labels.distance[i]) / (span * span * nd);
            g[2 * len + i] = w.bearing * 2.0 * (pred.bearing_sin[i] - labels.bearing_sin[i]) / nd;
            g[3 * len + i] = w.bearing * 2.0 * (pred.bearing_cos[i] - labels.bearing_cos[i]) / nd;
        }
    }
    g
}

/// Loss and exact parameter gradient (of the unit-weight loss) for one
/// `(input, labels)` pair.
pub fn backward_raw(params: &ModelParams, input: &[f64], labels: &LabelTensor) -> Result<(LossBreakdown, Vec<f64>)> {
    backward_weighted(params, input, labels, &LossWeights::UNIT)
}

/// Unweighted loss terms and the gradient of their weighted sum.
pub fn backward_weighted(
    params: &ModelParams,
    input: &[f64],
    labels: &LabelTensor,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let len = labels.len();
    let cache = model::forward_cached(params, input, len)?;
    let span = params.config.d_max - params.config.d_min;
    let loss = masked_loss_with(cache.prediction(), labels, span);
    let d_out = loss_gradient_weighted(cache.prediction(), labels, span, weights);
    let grads = model::backward(params, &cache, &d_out)?;
    Ok((loss, grads))
}

pub fn backward(params: &ModelParams, window: &ScanWindow, labels: &LabelTensor) -> Result<(LossBreakdown, Vec<f64>)> {
    if window.n != params.config.in_channels {
        return Err(Error::Shape { what: "window channels", expected: params.config.in_channels, actual: window.n });
    }
    backward_raw(params, &window.channels, labels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps taken so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &TrainConfig) {
    assert_eq!(params.len(), grads.len());
    state.t += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - libm::pow(b1, state.t as f64);
    let c2 = 1.0 - libm::pow(b2, state.t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (libm::sqrt(v_hat) + config.adam_eps);
    }
}

/// Random mirroring and additive range noise.
pub fn augment(
    window: &ScanWindow,
    labels: &LabelTensor,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> (ScanWindow, LabelTensor) {
    let mirror = config.mirror_prob > 0.0 && rng.random::<f64>() < config.mirror_prob;
    augment_with(window, labels, mirror, config.noise_sigma, rng)
}

/// Deterministic part of [`augment`]: mirror when asked, then add noise of
/// standard deviation `noise_sigma` (no draws when it is zero).
pub fn augment_with(
    window: &ScanWindow,
    labels: &LabelTensor,
    mirror: bool,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (ScanWindow, LabelTensor) {
    let (mut w, l) = if mirror { (window.mirrored(), labels.mirrored()) } else { (window.clone(), labels.clone()) };
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        for v in &mut w.channels {
            *v = (*v + normal.sample(rng)).clamp(D_MIN, D_MAX);
        }
    }
    (w, l)
}

/// A model input with its labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub window: ScanWindow,
    pub labels: LabelTensor,
}

/// Indexed collection of examples, possibly built on demand.
pub trait ExampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn example(&self, i: usize) -> Cow<'_, TrainingExample>;
}

impl ExampleSource for [TrainingExample] {
    fn len(&self) -> usize {
        <[TrainingExample]>::len(self)
    }

    fn example(&self, i: usize) -> Cow<'_, TrainingExample> {
        Cow::Borrowed(&self[i])
    }
}

impl ExampleSource for Vec<TrainingExample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn example(&self, i: usize) -> Cow<'_, TrainingExample> {
        Cow::Borrowed(&self[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochReport>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize, last_good: Box<TrainOutcome> },
    #[error(transparent)]
    Invalid(#[from] Error),
}

/// Mean unaugmented loss over a set of examples.
pub fn evaluate_loss<S: ExampleSource + ?Sized>(params: &ModelParams, examples: &S) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    for i in 0..examples.len() {
        let ex = examples.example(i);
        let pred = model::forward(params, &ex.window)?;
        acc.accumulate(&masked_loss_with(&pred, &ex.labels, params.config.d_max - params.config.d_min));
    }
    Ok(if examples.is_empty() { acc } else { acc.scaled(1.0 / examples.len() as f64) })
}

/// One optimizer step on a minibatch; returns the summed per-example losses.
pub fn train_step(
    params: &mut ModelParams,
    adam: &mut AdamState,
    batch: &[&TrainingExample],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let mut grads = vec![0.0; params.data.len()];
    let mut loss = LossBreakdown::default();
    for ex in batch {
        let (w, l) = augment(&ex.window, &ex.labels, config, rng);
        if w.n != params.config.in_channels {
            return Err(Error::Shape { what: "window channels", expected: params.config.in_channels, actual: w.n });
        }
        let (sample_loss, g) = backward_weighted(params, &w.channels, &l, &config.loss_weights)?;
        loss.accumulate(&sample_loss);
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grads.iter_mut().for_each(|g| *g *= inv);
    adam_step(&mut params.data, &grads, adam, config);
    if params.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter after update"));
    }
    Ok(loss)
}

/// Trains from scratch and keeps the weights with the lowest validation
/// objective (the weighted sum of the loss terms).
pub fn train<T: ExampleSource + ?Sized, V: ExampleSource + ?Sized>(
    train_set: &T,
    val_set: &V,
    config: &TrainConfig,
    model_config: &ModelConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with_observer(train_set, val_set, config, model_config, |_| {})
}

pub fn train_with_observer<T: ExampleSource + ?Sized, V: ExampleSource + ?Sized>(
    train_set: &T,
    val_set: &V,
    config: &TrainConfig,
    model_config: &ModelConfig,
    mut observer: impl FnMut(&EpochReport),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()).into());
    }
    for ex in [train_set.example(0), val_set.example(0)] {
        if ex.window.n != model_config.in_channels || ex.labels.len() != BINS {
            return Err(Error::Shape { what: "example", expected: model_config.in_channels, actual: ex.window.n }.into());
        }
    }
    let mut params = init_params(model_config, rng::derive_seed(config.rng_seed, "init"))?;
    let mut adam = AdamState::new(params.data.len());
    let mut shuffle_rng = rng::stream(config.rng_seed, "shuffle");
    let mut aug_rng = rng::stream(config.rng_seed, "augment");

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let per_epoch = config.samples_per_epoch.unwrap_or(train_set.len()).min(train_set.len()).max(1);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut train_loss = LossBreakdown::default();
        let mut step_result = Ok(());
        for chunk in order[..per_epoch].chunks(config.batch_size) {
            let owned: Vec<Cow<'_, TrainingExample>> = chunk.iter().map(|&i| train_set.example(i)).collect();
            let batch: Vec<&TrainingExample> = owned.iter().map(|e| e.as_ref()).collect();
            match train_step(&mut params, &mut adam, &batch, config, &mut aug_rng) {
                Ok(l) if l.is_finite() => train_loss.accumulate(&l),
                Ok(_) => step_result = Err(Error::NonFinite("training loss")),
                Err(e) => step_result = Err(e),
            }
            if step_result.is_err() {
                break;
            }
        }
        let val = match step_result.and_then(|_| evaluate_loss(&params, val_set)) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::NonFinite(_)) | Err(Error::NonFiniteActivation { .. }) | Err(Error::NonFiniteGradient(_)) => {
                let last_good = match best {
                    Some((_, best_epoch, best)) => TrainOutcome { best, best_epoch, history },
                    None => TrainOutcome {
                        best: init_params(model_config, rng::derive_seed(config.rng_seed, "init"))?,
                        best_epoch: 0,
                        history,
                    },
                };
                return Err(TrainError::Diverged { epoch, last_good: Box::new(last_good) });
            }
            Err(e) => return Err(e.into()),
        };
        let report = EpochReport { epoch, train: train_loss.scaled(1.0 / per_epoch as f64), val };
        observer(&report);
        history.push(report);
        let objective = config.loss_weights.objective(&val);
        if best.as_ref().is_none_or(|(b, _, _)| objective < *b) {
            best = Some((objective, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, best_epoch, history })
}
