//! Matching detections to ground truth and the metric suite: precision-recall
//! curve, precision at 80% recall, orientation and distance errors, and the
//! constant-prediction baseline.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::detection::{nms, Detection};
use crate::error::{Error, Result};
use crate::geometry::wrap;
use crate::model::PredictionTensor;
use crate::supervision::PersonObservation;

pub const MATCH_RADIUS: f64 = 0.5;
pub const TARGET_RECALL: f64 = 0.8;
/// Lowest threshold swept by the precision-recall curve.
pub const PR_FLOOR: f64 = 0.01;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameEval {
    pub true_positives: Vec<(Detection, PersonObservation)>,
    pub false_positives: Vec<Detection>,
    pub false_negatives: Vec<PersonObservation>,
}

/// Detection order used everywhere: descending confidence, then lower ray.
fn by_confidence(a: &Detection, b: &Detection) -> Ordering {
    b.confidence.partial_cmp(&a.confidence).unwrap_or(Ordering::Equal).then(a.ray_index.cmp(&b.ray_index))
}

/// Greedy one-to-one matching: detections in descending confidence each take
/// the nearest unmatched ground truth closer than `radius`. Orientation plays
/// no part.
pub fn match_frame(dets: &[Detection], gts: &[PersonObservation], radius: f64) -> FrameEval {
    match_frame_ignoring(dets, gts, &[], radius)
}

/// As [`match_frame`], but detections left unmatched that fall within
/// `radius` of an `ignored` person are dropped instead of counting as false
/// positives.
pub fn match_frame_ignoring(
    dets: &[Detection],
    gts: &[PersonObservation],
    ignored: &[PersonObservation],
    radius: f64,
) -> FrameEval {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| by_confidence(a, b));
    let mut taken = alloc::vec![false; gts.len()];
    let mut out = FrameEval::default();
    for det in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, gt) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let d = det.position.distance(&gt.pose.translation());
            if d < radius && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        match best {
            Some((j, _)) => {
                taken[j] = true;
                out.true_positives.push((*det, gts[j]));
            }
            None => {
                let near_ignored = ignored.iter().any(|g| det.position.distance(&g.pose.translation()) < radius);
                if !near_ignored {
                    out.false_positives.push(*det);
                }
            }
        }
    }
    out.false_negatives = gts.iter().zip(&taken).filter(|(_, &t)| !t).map(|(g, _)| *g).collect();
    out
}

/// One evaluated frame: the network output and the people it should find.
/// `ignored` people (e.g. beyond the evaluation range or invisible to the
/// scanners) neither need to be found nor cause false positives.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalFrame {
    pub prediction: PredictionTensor,
    pub ground_truth: Vec<PersonObservation>,
    pub ignored: Vec<PersonObservation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub match_radius: f64,
    pub nms_window_deg: usize,
    pub pr_floor: f64,
    /// Operating threshold used when 80% recall is never reached.
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_radius: MATCH_RADIUS,
            nms_window_deg: crate::detection::DEFAULT_WINDOW_DEG,
            pr_floor: PR_FLOOR,
            threshold: crate::detection::DEFAULT_THRESHOLD,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |t: f64| t > 0.0 && t < 1.0;
        if !unit(self.threshold) || !unit(self.pr_floor) || self.nms_window_deg == 0 || !(self.match_radius > 0.0) {
            return Err(Error::Config("evaluation needs thresholds in (0,1), a window >= 1 and a positive radius".into()));
        }
        Ok(())
    }
}

/// A detection found at the floor threshold, with its fate in matching.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredDetection {
    pub frame: usize,
    pub detection: Detection,
    pub matched: Option<PersonObservation>,
}

/// Runs NMS and matching once per frame at the floor threshold.
///
/// Both NMS and greedy matching visit detections strongest first and only
/// look at what came before, so the outcome at any higher threshold is the
/// confidence-prefix of this one; the whole curve follows from one pass.
pub fn score_frames(frames: &[EvalFrame], cfg: &EvalConfig) -> Vec<ScoredDetection> {
    let mut out = Vec::new();
    for (f, frame) in frames.iter().enumerate() {
        let dets = nms(&frame.prediction, cfg.pr_floor, cfg.nms_window_deg);
        let ev = match_frame_ignoring(&dets, &frame.ground_truth, &frame.ignored, cfg.match_radius);
        out.extend(ev.true_positives.iter().map(|(d, g)| ScoredDetection { frame: f, detection: *d, matched: Some(*g) }));
        out.extend(ev.false_positives.iter().map(|d| ScoredDetection { frame: f, detection: *d, matched: None }));
    }
    out.sort_by(|a, b| by_confidence(&a.detection, &b.detection).then(a.frame.cmp(&b.frame)));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Ascending threshold.
    pub points: Vec<PrPoint>,
    pub total_ground_truth: usize,
    /// No ground truth at all: recall is reported as 1 by convention.
    pub recall_undefined: bool,
}

/// One point per distinct detection confidence.
pub fn pr_curve_from_scored(scored: &[ScoredDetection], total_ground_truth: usize) -> PrCurve {
    let mut points = Vec::new();
    let (mut tp, mut n) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].detection.confidence;
        while i < scored.len() && scored[i].detection.confidence == t {
            n += 1;
            tp += scored[i].matched.is_some() as usize;
            i += 1;
        }
        let recall = if total_ground_truth == 0 { 1.0 } else { tp as f64 / total_ground_truth as f64 };
        points.push(PrPoint { threshold: t, precision: tp as f64 / n as f64, recall });
    }
    points.reverse();
    PrCurve { points, total_ground_truth, recall_undefined: total_ground_truth == 0 }
}

pub fn pr_curve(frames: &[EvalFrame], cfg: &EvalConfig) -> PrCurve {
    let total = frames.iter().map(|f| f.ground_truth.len()).sum();
    pr_curve_from_scored(&score_frames(frames, cfg), total)
}

/// Largest threshold whose recall reaches 80%, with its precision.
pub fn p80_point(curve: &PrCurve) -> Option<PrPoint> {
    curve.points.iter().rev().find(|p| p.recall >= TARGET_RECALL).copied()
}

/// Precision in percent at 80% recall; `None` when never reached.
pub fn p80(curve: &PrCurve) -> Option<f64> {
    p80_point(curve).map(|p| p.precision * 100.0)
}

/// Absolute orientation error in degrees.
pub fn orientation_error_deg(det: &Detection, gt: &PersonObservation) -> f64 {
    wrap(det.orientation - gt.pose.heading).abs().to_degrees()
}

/// Absolute range error in centimeters.
pub fn distance_error_cm(det: &Detection, gt: &PersonObservation) -> f64 {
    (det.range() - gt.range()).abs() * 100.0
}

/// Mean absolute orientation error (degrees) and range error (cm) over
/// matched pairs; `None` without any.
pub fn pose_errors(tps: &[(Detection, PersonObservation)]) -> Option<(f64, f64)> {
    if tps.is_empty() {
        return None;
    }
    let n = tps.len() as f64;
    let eo = tps.iter().map(|(d, g)| orientation_error_deg(d, g)).sum::<f64>() / n;
    let ed = tps.iter().map(|(d, g)| distance_error_cm(d, g)).sum::<f64>() / n;
    Some((eo, ed))
}

/// Circular mean of headings; `None` when the resultant vanishes.
pub fn circular_mean(angles: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut c, mut n) = (0.0, 0.0, 0usize);
    for a in angles {
        let (sa, ca) = libm::sincos(a);
        s += sa;
        c += ca;
        n += 1;
    }
    if n == 0 || libm::hypot(s, c) < 1e-12 * n as f64 {
        return None;
    }
    Some(libm::atan2(s, c))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DummyBaseline {
    pub heading: f64,
    pub range: f64,
    pub mean_abs_orientation_error: f64,
    pub mean_abs_distance_error: f64,
}

/// Always predicts the average heading and range of `gts`, scored on every
/// person as if detection were perfect.
pub fn dummy_baseline(gts: &[PersonObservation]) -> Result<DummyBaseline> {
    if gts.is_empty() {
        return Err(Error::Config("dummy baseline needs ground truth".into()));
    }
    let n = gts.len() as f64;
    // uniform headings have no circular mean; any constant is then equally good
    let heading = circular_mean(gts.iter().map(|g| g.pose.heading)).unwrap_or(0.0);
    let range = gts.iter().map(|g| g.range()).sum::<f64>() / n;
    let eo = gts.iter().map(|g| wrap(heading - g.pose.heading).abs().to_degrees()).sum::<f64>() / n;
    let ed = gts.iter().map(|g| (range - g.range()).abs() * 100.0).sum::<f64>() / n;
    Ok(DummyBaseline { heading, range, mean_abs_orientation_error: eo, mean_abs_distance_error: ed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pr_curve: PrCurve,
    /// Percent; `None` when 80% recall is never reached.
    pub p80: Option<f64>,
    /// Threshold at which pose errors are reported: the 80%-recall threshold,
    /// or the configured one when that does not exist.
    pub operating_threshold: f64,
    pub operating_precision: f64,
    pub operating_recall: f64,
    pub true_positives: usize,
    pub detections: usize,
    pub ground_truth: usize,
    /// Degrees.
    pub mean_abs_orientation_error: Option<f64>,
    /// Centimeters.
    pub mean_abs_distance_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Per matched pair at the operating threshold, in a fixed order.
    pub orientation_errors_deg: Vec<f64>,
}

pub fn evaluate(frames: &[EvalFrame], cfg: &EvalConfig) -> Result<Evaluation> {
    cfg.validate()?;
    let scored = score_frames(frames, cfg);
    let total: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
    let curve = pr_curve_from_scored(&scored, total);
    let p80_pt = p80_point(&curve);
    let threshold = p80_pt.map_or(cfg.threshold, |p| p.threshold);
    let kept: Vec<&ScoredDetection> = scored.iter().filter(|s| s.detection.confidence >= threshold).collect();
    let tps: Vec<(Detection, PersonObservation)> =
        kept.iter().filter_map(|s| s.matched.map(|g| (s.detection, g))).collect();
    let errors = pose_errors(&tps);
    let precision = if kept.is_empty() { 1.0 } else { tps.len() as f64 / kept.len() as f64 };
    let recall = if total == 0 { 1.0 } else { tps.len() as f64 / total as f64 };
    Ok(Evaluation {
        orientation_errors_deg: tps.iter().map(|(d, g)| orientation_error_deg(d, g)).collect(),
        report: MetricsReport {
            p80: p80_pt.map(|p| p.precision * 100.0),
            pr_curve: curve,
            operating_threshold: threshold,
            operating_precision: precision,
            operating_recall: recall,
            true_positives: tps.len(),
            detections: kept.len(),
            ground_truth: total,
            mean_abs_orientation_error: errors.map(|e| e.0),
            mean_abs_distance_error: errors.map(|e| e.1),
        },
    })
}
