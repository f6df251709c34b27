//! Multi-channel model input: the current virtual scan plus past scans
//! re-expressed in the current base frame through odometry.
//!
//! After reprojection, static structure lands on the same bins in every
//! channel while anything that moved leaves a trail across channels.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{relative_pose, Point2D, Pose2D};
use crate::lidar::{bin_angle, BinAccumulator, VirtualScan, BINS, D_MAX, D_MIN};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryConfig {
    /// Channels in the window, the current scan included.
    pub n: usize,
    pub rate: f64,
}

impl HistoryConfig {
    /// Three seconds of scans at 10 Hz.
    pub const HISTORY: HistoryConfig = HistoryConfig { n: 30, rate: 10.0 };
    /// Current scan only.
    pub const NO_HISTORY: HistoryConfig = HistoryConfig { n: 1, rate: 10.0 };

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !(self.rate > 0.0) {
            return Err(Error::Config("history needs n >= 1 and a positive rate".into()));
        }
        Ok(())
    }
}

impl Default for HistoryConfig {
    fn default() -> Self {
        Self::HISTORY
    }
}

/// `n × 360` ranges, channel-major; channel 0 is the newest scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanWindow {
    pub n: usize,
    pub channels: Vec<f64>,
    pub timestamp: f64,
    pub robot_pose: Pose2D,
}

impl ScanWindow {
    pub fn channel(&self, k: usize) -> &[f64] {
        &self.channels[k * BINS..(k + 1) * BINS]
    }

    /// Ray `i` becomes ray `(360 - i) mod 360` in every channel.
    pub fn mirrored(&self) -> ScanWindow {
        let mut out = self.clone();
        for k in 0..self.n {
            let src = self.channel(k);
            let dst = &mut out.channels[k * BINS..(k + 1) * BINS];
            for (i, d) in dst.iter_mut().enumerate() {
                *d = src[(BINS - i) % BINS];
            }
        }
        out
    }

    /// Ray `i` becomes ray `(i + k) mod 360` in every channel.
    pub fn rotated(&self, k: usize) -> ScanWindow {
        let mut out = self.clone();
        for c in 0..self.n {
            rotate_into(self.channel(c), &mut out.channels[c * BINS..(c + 1) * BINS], k);
        }
        out
    }
}

pub(crate) fn rotate_into(src: &[f64], dst: &mut [f64], k: usize) {
    let len = src.len();
    for (i, &v) in src.iter().enumerate() {
        dst[(i + k) % len] = v;
    }
}

/// Unit vectors of the 360 bin centers.
#[derive(Clone, Debug)]
pub struct BinDirections {
    cs: Vec<(f64, f64)>,
}

impl BinDirections {
    pub fn new() -> Self {
        Self { cs: (0..BINS).map(|i| { let (s, c) = libm::sincos(bin_angle(i)); (c, s) }).collect() }
    }

    #[inline]
    pub fn point(&self, i: usize, r: f64) -> Point2D {
        let (c, s) = self.cs[i];
        Point2D::new(r * c, r * s)
    }
}

impl Default for BinDirections {
    fn default() -> Self {
        Self::new()
    }
}

/// Re-bins the returns of `past` as seen from `current_pose`.
pub fn reproject(past: &VirtualScan, current_pose: &Pose2D) -> Vec<f64> {
    reproject_with(&BinDirections::new(), past, current_pose)
}

pub fn reproject_with(dirs: &BinDirections, past: &VirtualScan, current_pose: &Pose2D) -> Vec<f64> {
    let rel = relative_pose(current_pose, &past.robot_pose);
    let mut acc = BinAccumulator::new(D_MIN, D_MAX);
    for (i, &r) in past.ranges.iter().enumerate() {
        if r < D_MAX {
            acc.add_point(&rel.transform_point(&dirs.point(i, r)));
        }
    }
    acc.into_ranges()
}

/// Builds a window from the `n` newest scans of `buffer` (oldest first).
/// Returns `None` while fewer than `n` scans are available.
pub fn build_window(buffer: &[VirtualScan], n: usize) -> Option<ScanWindow> {
    if n == 0 || buffer.len() < n {
        return None;
    }
    let newest = &buffer[buffer.len() - 1];
    let dirs = BinDirections::new();
    let mut channels = Vec::with_capacity(n * BINS);
    channels.extend_from_slice(&newest.ranges);
    for age in 1..n {
        let past = &buffer[buffer.len() - 1 - age];
        channels.extend(reproject_with(&dirs, past, &newest.robot_pose));
    }
    Some(ScanWindow { n, channels, timestamp: newest.timestamp, robot_pose: newest.robot_pose })
}

/// Single-writer ring buffer of the most recent virtual scans.
#[derive(Clone, Debug)]
pub struct ScanHistory {
    n: usize,
    scans: VecDeque<VirtualScan>,
    dirs: BinDirections,
}

impl ScanHistory {
    pub fn new(n: usize) -> Self {
        Self { n, scans: VecDeque::with_capacity(n + 1), dirs: BinDirections::new() }
    }

    pub fn push(&mut self, scan: VirtualScan) {
        if self.scans.len() == self.n {
            self.scans.pop_front();
        }
        self.scans.push_back(scan);
    }

    pub fn is_warm(&self) -> bool {
        self.n > 0 && self.scans.len() == self.n
    }

    pub fn clear(&mut self) {
        self.scans.clear();
    }

    pub fn window(&self) -> Option<ScanWindow> {
        if !self.is_warm() {
            return None;
        }
        let newest = self.scans.back()?;
        let mut channels = Vec::with_capacity(self.n * BINS);
        channels.extend_from_slice(&newest.ranges);
        for past in self.scans.iter().rev().skip(1) {
            channels.extend(reproject_with(&self.dirs, past, &newest.robot_pose));
        }
        Some(ScanWindow { n: self.n, channels, timestamp: newest.timestamp, robot_pose: newest.robot_pose })
    }
}
