//! Discrete detections from per-ray presence: threshold, then greedy
//! angular non-maximum suppression.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::Point2D;
use crate::lidar::bin_angle;
use crate::model::PredictionTensor;
use crate::supervision::heading_from_bearing;

pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const DEFAULT_WINDOW_DEG: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub ray_index: usize,
    pub confidence: f64,
    /// Robot frame, on the ray at the predicted distance.
    pub position: Point2D,
    /// Person heading in the robot frame.
    pub orientation: f64,
}

impl Detection {
    pub fn range(&self) -> f64 {
        self.position.norm()
    }
}

/// Circular distance between two rays of a ring of `len`.
#[inline]
pub fn ray_distance(a: usize, b: usize, len: usize) -> usize {
    let d = a.abs_diff(b) % len;
    d.min(len - d)
}

fn detection_at(pred: &PredictionTensor, i: usize) -> Detection {
    let theta = bin_angle(i);
    let (s, c) = libm::sincos(theta);
    let d = pred.distance[i];
    let bearing = libm::atan2(pred.bearing_sin[i], pred.bearing_cos[i]);
    Detection {
        ray_index: i,
        confidence: pred.presence[i],
        position: Point2D::new(d * c, d * s),
        orientation: heading_from_bearing(theta, bearing),
    }
}

/// Rays with presence at or above `threshold`, strongest first; ties go to
/// the lower ray index.
fn candidates(pred: &PredictionTensor, threshold: f64) -> Vec<usize> {
    let mut c: Vec<usize> = (0..pred.len()).filter(|&i| pred.presence[i] >= threshold).collect();
    c.sort_by(|&a, &b| {
        pred.presence[b].partial_cmp(&pred.presence[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    c
}

/// Greedy suppression: keep the strongest remaining ray and drop every
/// candidate within `window_deg` rays of it (circularly).
pub fn nms(pred: &PredictionTensor, threshold: f64, window_deg: usize) -> Vec<Detection> {
    let len = pred.len();
    let mut suppressed = alloc::vec![false; len];
    let mut out = Vec::new();
    for i in candidates(pred, threshold) {
        if suppressed[i] {
            continue;
        }
        out.push(detection_at(pred, i));
        for k in 0..=window_deg.min(len / 2) {
            suppressed[(i + k) % len] = true;
            suppressed[(i + len - k % len) % len] = true;
        }
    }
    out
}
