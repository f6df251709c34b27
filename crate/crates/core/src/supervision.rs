//! Per-ray training labels derived from camera person detections.
//!
//! The camera only sees a narrow wedge, so every label tensor carries a mask
//! marking the rays inside that wedge; the loss ignores everything else.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap, Point2D, Pose2D};
use crate::lidar::{bin_angle, BINS, D_MAX, D_MIN};

/// Footprint radius used to decide which rays a person covers (m).
pub const PERSON_RADIUS: f64 = 0.25;
/// Head pan limit (rad).
pub const MAX_PAN: f64 = 75.0 * PI / 180.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub hfov: f64,
    pub max_range: f64,
    pub pan: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { hfov: 65f64.to_radians(), max_range: 6.0, pan: 0.0 }
    }
}

impl CameraConfig {
    pub fn with_pan(self, pan: f64) -> Self {
        Self { pan, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hfov > 0.0 && self.hfov <= 2.0 * PI) || !(self.max_range > 0.0) || !(libm::fabs(self.pan) <= MAX_PAN + 1e-12) {
            return Err(Error::Config("camera config out of range".into()));
        }
        Ok(())
    }

    /// Whether base-frame direction `theta` lies inside the camera wedge.
    pub fn sees_direction(&self, theta: f64) -> bool {
        libm::fabs(wrap(theta - self.pan)) <= 0.5 * self.hfov
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationSource {
    CameraDetector,
    GroundTruth,
}

/// Pelvis pose of a person projected on the ground, in the robot base frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonObservation {
    pub pose: Pose2D,
    pub source: ObservationSource,
}

impl PersonObservation {
    pub fn range(&self) -> f64 {
        self.pose.translation().norm()
    }
}

/// Per-ray supervision. `distance` and the bearing pair are zero wherever
/// `presence` is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelTensor {
    pub presence: Vec<f64>,
    pub distance: Vec<f64>,
    pub bearing_sin: Vec<f64>,
    pub bearing_cos: Vec<f64>,
    pub mask: Vec<f64>,
}

impl LabelTensor {
    pub fn empty(len: usize) -> Self {
        Self {
            presence: vec![0.0; len],
            distance: vec![0.0; len],
            bearing_sin: vec![0.0; len],
            bearing_cos: vec![0.0; len],
            mask: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.presence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.presence.is_empty()
    }

    /// Reflection about the forward axis: ray `i` moves to `(len - i) mod len`
    /// and the bearing sine flips sign.
    pub fn mirrored(&self) -> LabelTensor {
        let len = self.len();
        let m = |v: &[f64], sign: f64| (0..len).map(|i| sign * v[(len - i) % len]).collect::<Vec<_>>();
        let mut sin = m(&self.bearing_sin, -1.0);
        // keep undefined entries at +0
        for (s, &p) in sin.iter_mut().zip(&m(&self.presence, 1.0)) {
            if p == 0.0 {
                *s = 0.0;
            }
        }
        LabelTensor {
            presence: m(&self.presence, 1.0),
            distance: m(&self.distance, 1.0),
            bearing_sin: sin,
            bearing_cos: m(&self.bearing_cos, 1.0),
            mask: m(&self.mask, 1.0),
        }
    }

    pub fn rotated(&self, k: usize) -> LabelTensor {
        let len = self.len();
        let r = |v: &[f64]| {
            let mut out = vec![0.0; len];
            crate::history::rotate_into(v, &mut out, k);
            out
        };
        LabelTensor {
            presence: r(&self.presence),
            distance: r(&self.distance),
            bearing_sin: r(&self.bearing_sin),
            bearing_cos: r(&self.bearing_cos),
            mask: r(&self.mask),
        }
    }

    /// Checks the structural invariants of a label tensor.
    pub fn check(&self) -> Result<()> {
        let len = self.len();
        for v in [&self.distance, &self.bearing_sin, &self.bearing_cos, &self.mask] {
            if v.len() != len {
                return Err(Error::Shape { what: "label tensor", expected: len, actual: v.len() });
            }
        }
        for i in 0..len {
            let p = self.presence[i];
            if p != 0.0 && p != 1.0 || self.mask[i] != 0.0 && self.mask[i] != 1.0 {
                return Err(Error::Config("labels must be binary".into()));
            }
            if p == 1.0 {
                let norm = self.bearing_sin[i] * self.bearing_sin[i] + self.bearing_cos[i] * self.bearing_cos[i];
                if !(self.distance[i] >= D_MIN && self.distance[i] <= D_MAX) || libm::fabs(norm - 1.0) > 1e-12 {
                    return Err(Error::Config("inconsistent positive label".into()));
                }
                if self.mask[i] != 1.0 {
                    return Err(Error::Config("positive label outside the mask".into()));
                }
            }
        }
        Ok(())
    }
}

/// Rays inside the (pan-shifted) camera wedge.
pub fn fov_mask(cam: &CameraConfig) -> Vec<f64> {
    (0..BINS).map(|i| if cam.sees_direction(bin_angle(i)) { 1.0 } else { 0.0 }).collect()
}

/// Person heading relative to the ray through the pelvis, wrapped; zero
/// when the person faces the robot.
pub fn relative_bearing(person: &Pose2D) -> Result<f64> {
    let p = person.translation();
    if p.x == 0.0 && p.y == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    Ok(wrap(person.heading - p.angle() - PI))
}

/// Inverse of [`relative_bearing`]: heading of a person seen along `ray_angle`
/// with relative bearing `bearing`.
pub fn heading_from_bearing(ray_angle: f64, bearing: f64) -> f64 {
    wrap(ray_angle + PI + bearing)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelDiagnostics {
    /// People closer than `d_min`.
    pub too_close: usize,
    /// People beyond the camera range (or `d_max`).
    pub too_far: usize,
}

/// Labels for one frame from the people detected by the camera.
pub fn make_labels(people: &[PersonObservation], cam: &CameraConfig) -> LabelTensor {
    make_labels_with(people, cam, PERSON_RADIUS).0
}

pub fn make_labels_with(
    people: &[PersonObservation],
    cam: &CameraConfig,
    person_radius: f64,
) -> (LabelTensor, LabelDiagnostics) {
    let mut labels = LabelTensor::empty(BINS);
    labels.mask = fov_mask(cam);
    let mut diag = LabelDiagnostics::default();
    let mut nearest = vec![f64::INFINITY; BINS];
    let max_range = cam.max_range.min(D_MAX);

    for person in people {
        let center: Point2D = person.pose.translation();
        let range = center.norm();
        if range < D_MIN {
            diag.too_close += 1;
            continue;
        }
        if range > max_range {
            diag.too_far += 1;
            continue;
        }
        let theta = center.angle();
        let half_angle = if range <= person_radius { PI } else { libm::asin(person_radius / range) };
        let bearing = wrap(person.pose.heading - theta - PI);
        let (s, c) = libm::sincos(bearing);
        for i in 0..BINS {
            if labels.mask[i] == 0.0 || range >= nearest[i] {
                continue;
            }
            if libm::fabs(wrap(bin_angle(i) - theta)) <= half_angle {
                nearest[i] = range;
                labels.presence[i] = 1.0;
                labels.distance[i] = range;
                labels.bearing_sin[i] = s;
                labels.bearing_cos[i] = c;
            }
        }
    }
    (labels, diag)
}
