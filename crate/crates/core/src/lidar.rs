//! Virtual omnidirectional scanner built from the front and back planar LiDARs.
//!
//! Each physical beam is projected into the robot base frame and dropped into
//! one of 360 one-degree bins; a bin keeps the closest point that landed in
//! it and falls back to `d_max` when nothing did.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap, Point2D, Pose2D};

/// Number of rays in a virtual scan.
pub const BINS: usize = 360;
/// Shortest range reported by either sensor (m).
pub const D_MIN: f64 = 0.05;
/// Longest range, also the fill value for empty bins (m).
pub const D_MAX: f64 = 10.0;
/// Maximum age of a scan relative to the tick it is paired at (s).
pub const SYNC_TOLERANCE: f64 = 0.1;

const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorId {
    Front,
    Back,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Sensor pose in the robot base frame.
    pub mount_pose: Pose2D,
    pub fov: f64,
    pub angular_resolution: f64,
    pub rate: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl SensorConfig {
    /// Front scanner: 190° field of view at 15 Hz, 0.5° beams, 20 cm ahead of the base center.
    pub fn front() -> Self {
        Self {
            mount_pose: Pose2D::new(0.2, 0.0, 0.0),
            fov: 190f64.to_radians(),
            angular_resolution: 0.5f64.to_radians(),
            rate: 15.0,
            d_min: D_MIN,
            d_max: D_MAX,
        }
    }

    /// Back scanner: 255° field of view at 10 Hz, facing backwards.
    pub fn back() -> Self {
        Self {
            mount_pose: Pose2D::new(-0.2, 0.0, PI),
            fov: 255f64.to_radians(),
            angular_resolution: 0.5f64.to_radians(),
            rate: 10.0,
            d_min: D_MIN,
            d_max: D_MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fov > 0.0
            && self.fov <= 2.0 * PI + 1e-12
            && self.angular_resolution > 0.0
            && self.rate > 0.0
            && self.d_min > 0.0
            && self.d_min < self.d_max
            && self.mount_pose.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config("sensor config out of range".into()))
        }
    }

    pub fn beam_count(&self) -> usize {
        libm::round(self.fov / self.angular_resolution) as usize + 1
    }

    /// Beam direction in the sensor frame; beams sweep counterclockwise
    /// from `-fov/2` to `+fov/2`. Beams `i` and `n-1-i` are exact mirror images.
    pub fn beam_angle(&self, i: usize) -> f64 {
        (i as f64 - 0.5 * (self.beam_count() - 1) as f64) * self.angular_resolution
    }
}

/// The two physical scanners plus the fusion parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarRig {
    pub front: SensorConfig,
    pub back: SensorConfig,
    pub sync_tolerance: f64,
}

impl Default for LidarRig {
    fn default() -> Self {
        Self { front: SensorConfig::front(), back: SensorConfig::back(), sync_tolerance: SYNC_TOLERANCE }
    }
}

impl LidarRig {
    pub fn sensor(&self, id: SensorId) -> &SensorConfig {
        match id {
            SensorId::Front => &self.front,
            SensorId::Back => &self.back,
        }
    }
}

/// One sweep of a physical scanner. A non-finite range means no return.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawScan {
    pub sensor: SensorId,
    pub timestamp: f64,
    #[serde(with = "nullable_ranges")]
    pub ranges: Vec<f64>,
}

/// 360-bin omnidirectional scan in the robot base frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualScan {
    pub timestamp: f64,
    pub ranges: Vec<f64>,
    /// Odometry pose of the base at `timestamp`.
    pub robot_pose: Pose2D,
}

impl VirtualScan {
    pub fn empty(timestamp: f64, robot_pose: Pose2D) -> Self {
        Self { timestamp, ranges: vec![D_MAX; BINS], robot_pose }
    }
}

/// Bin whose center is closest to base-frame direction `theta`.
#[inline]
pub fn bin_index(theta: f64) -> usize {
    let deg = libm::round(wrap(theta) * (180.0 / PI)) as i64;
    deg.rem_euclid(BINS as i64) as usize
}

/// Direction of the center of bin `i`.
#[inline]
pub fn bin_angle(i: usize) -> f64 {
    wrap((i as f64).to_radians())
}

/// Accumulates base-frame points into a closest-per-bin virtual scan.
#[derive(Clone, Debug)]
pub struct BinAccumulator {
    ranges: Vec<f64>,
    d_min: f64,
    d_max: f64,
}

impl BinAccumulator {
    pub fn new(d_min: f64, d_max: f64) -> Self {
        Self { ranges: vec![d_max; BINS], d_min, d_max }
    }

    /// Adds a base-frame point. Returns false when its range is outside
    /// `[d_min, d_max]` and it was dropped.
    #[inline]
    pub fn add_point(&mut self, p: &Point2D) -> bool {
        let r = p.norm();
        if !(r >= self.d_min && r <= self.d_max) {
            return false;
        }
        let b = bin_index(p.angle());
        if r < self.ranges[b] {
            self.ranges[b] = r;
        }
        true
    }

    /// Projects every valid beam of `scan` through `mount` (sensor pose in
    /// the base frame) and bins it.
    pub fn add_scan(&mut self, scan: &RawScan, config: &SensorConfig, mount: &Pose2D) -> Result<()> {
        let expected = config.beam_count();
        if scan.ranges.len() != expected {
            return Err(Error::Shape { what: "raw scan beams", expected, actual: scan.ranges.len() });
        }
        for (i, &r) in scan.ranges.iter().enumerate() {
            if !(r >= config.d_min && r <= config.d_max) {
                continue;
            }
            let (s, c) = libm::sincos(config.beam_angle(i));
            let p = mount.transform_point(&Point2D::new(r * c, r * s));
            self.add_point(&p);
        }
        Ok(())
    }

    pub fn finish(self, timestamp: f64, robot_pose: Pose2D) -> VirtualScan {
        VirtualScan { timestamp, ranges: self.ranges, robot_pose }
    }

    pub fn into_ranges(self) -> Vec<f64> {
        self.ranges
    }
}

/// Fuses two synchronized scans into a virtual scan.
///
/// Scans are matched to their configuration by sensor id, so argument order
/// does not matter. The virtual scan is stamped with the later timestamp.
pub fn fuse(a: &RawScan, b: &RawScan, rig: &LidarRig, odometry_pose: Pose2D) -> Result<VirtualScan> {
    let skew = libm::fabs(a.timestamp - b.timestamp);
    if skew > rig.sync_tolerance + TIME_EPS {
        return Err(Error::Sync { skew, tolerance: rig.sync_tolerance });
    }
    let mut acc = BinAccumulator::new(D_MIN, D_MAX);
    for scan in [a, b] {
        let cfg = rig.sensor(scan.sensor);
        acc.add_scan(scan, cfg, &cfg.mount_pose)?;
    }
    Ok(acc.finish(a.timestamp.max(b.timestamp), odometry_pose))
}

/// Like [`fuse`], but each scan is motion-compensated into the base frame at
/// `timestamp` using the odometry poses at the scan times.
pub fn fuse_compensated(
    scans: [(&RawScan, Pose2D); 2],
    rig: &LidarRig,
    timestamp: f64,
    odometry_pose: Pose2D,
) -> Result<VirtualScan> {
    let mut acc = BinAccumulator::new(D_MIN, D_MAX);
    for (scan, scan_pose) in scans {
        let skew = timestamp - scan.timestamp;
        if libm::fabs(skew) > rig.sync_tolerance + TIME_EPS {
            return Err(Error::Sync { skew: libm::fabs(skew), tolerance: rig.sync_tolerance });
        }
        let cfg = rig.sensor(scan.sensor);
        let mount = odometry_pose.relative_to(&scan_pose).compose(&cfg.mount_pose);
        acc.add_scan(scan, cfg, &mount)?;
    }
    Ok(acc.finish(timestamp, odometry_pose))
}

/// A front/back pair selected for one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanPair {
    pub tick: f64,
    pub front: RawScan,
    pub back: RawScan,
}

/// Pairs the latest scan of each sensor with regularly spaced ticks.
///
/// Scans must be observed in timestamp order; a tick emits a pair only when
/// both sensors have a scan no older than the tolerance.
#[derive(Clone, Debug, Default)]
pub struct Synchronizer {
    tolerance: f64,
    front: Option<RawScan>,
    back: Option<RawScan>,
    skipped: usize,
}

impl Synchronizer {
    pub fn new(tolerance: f64) -> Self {
        Self { tolerance, ..Default::default() }
    }

    pub fn observe(&mut self, scan: RawScan) {
        match scan.sensor {
            SensorId::Front => self.front = Some(scan),
            SensorId::Back => self.back = Some(scan),
        }
    }

    fn fresh<'a>(&self, scan: &'a Option<RawScan>, tick: f64) -> Option<&'a RawScan> {
        scan.as_ref().filter(|s| {
            let age = tick - s.timestamp;
            age >= -TIME_EPS && age <= self.tolerance + TIME_EPS
        })
    }

    pub fn tick(&mut self, tick: f64) -> Option<ScanPair> {
        match (self.fresh(&self.front, tick), self.fresh(&self.back, tick)) {
            (Some(f), Some(b)) => Some(ScanPair { tick, front: f.clone(), back: b.clone() }),
            _ => {
                self.skipped += 1;
                None
            }
        }
    }

    /// Ticks that produced no pair so far.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SyncOutput {
    pub pairs: Vec<ScanPair>,
    pub ticks: usize,
    pub skipped: usize,
}

/// Pairs two timestamp-ordered streams on a tick grid at `rate` Hz starting
/// at the earliest scan and ending at the latest one.
pub fn synchronize(front: &[RawScan], back: &[RawScan], rate: f64, tolerance: f64) -> SyncOutput {
    let first = front.iter().chain(back).map(|s| s.timestamp).fold(f64::INFINITY, f64::min);
    let last = front.iter().chain(back).map(|s| s.timestamp).fold(f64::NEG_INFINITY, f64::max);
    let mut out = SyncOutput::default();
    if !first.is_finite() || rate <= 0.0 {
        return out;
    }
    let mut sync = Synchronizer::new(tolerance);
    let (mut fi, mut bi) = (0, 0);
    let mut k = 0u64;
    loop {
        let tick = first + k as f64 / rate;
        if tick > last + TIME_EPS {
            break;
        }
        while fi < front.len() && front[fi].timestamp <= tick + TIME_EPS {
            sync.observe(front[fi].clone());
            fi += 1;
        }
        while bi < back.len() && back[bi].timestamp <= tick + TIME_EPS {
            sync.observe(back[bi].clone());
            bi += 1;
        }
        if let Some(p) = sync.tick(tick) {
            out.pairs.push(p);
        }
        out.ticks += 1;
        k += 1;
    }
    out.skipped = sync.skipped();
    out
}

/// Serializes non-finite ranges (no return) as `null`.
pub(crate) mod nullable_ranges {
    use alloc::vec::Vec;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|&r| r.is_finite().then_some(r)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|r| r.unwrap_or(f64::INFINITY)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity_sensor(fov_deg: f64) -> SensorConfig {
        SensorConfig { mount_pose: Pose2D::IDENTITY, fov: fov_deg.to_radians(), ..SensorConfig::front() }
    }

    fn empty_scan(sensor: SensorId, cfg: &SensorConfig, t: f64) -> RawScan {
        RawScan { sensor, timestamp: t, ranges: vec![f64::INFINITY; cfg.beam_count()] }
    }

    fn identity_rig() -> LidarRig {
        LidarRig { front: identity_sensor(190.0), back: identity_sensor(190.0), sync_tolerance: SYNC_TOLERANCE }
    }

    #[test]
    fn bin_rounding() {
        assert_eq!(bin_index(0.0), 0);
        assert_eq!(bin_index(0.4f64.to_radians()), 0);
        assert_eq!(bin_index(-0.4f64.to_radians()), 0);
        assert_eq!(bin_index(-1.0f64.to_radians()), 359);
        assert_eq!(bin_index(PI), 180);
        assert_eq!(bin_index(-PI), 180);
        assert_eq!(bin_index(179.6f64.to_radians()), 180);
        for i in 0..BINS {
            assert_eq!(bin_index(bin_angle(i)), i);
        }
    }

    #[test]
    fn default_sensor_constants() {
        let f = SensorConfig::front();
        let b = SensorConfig::back();
        assert_eq!(f.beam_count(), 381);
        assert_eq!(b.beam_count(), 511);
        assert_eq!((f.d_min, f.d_max, b.d_min, b.d_max), (0.05, 10.0, 0.05, 10.0));
        assert_eq!((f.rate, b.rate), (15.0, 10.0));
        f.validate().unwrap();
        b.validate().unwrap();
    }

    #[test]
    fn closest_point_wins_in_a_bin() {
        let rig = identity_rig();
        let mut front = empty_scan(SensorId::Front, &rig.front, 0.0);
        // beam 190 points straight ahead
        front.ranges[190] = 2.0;
        let mut back = empty_scan(SensorId::Back, &rig.back, 0.05);
        back.ranges[190] = 1.5;
        let v = fuse(&front, &back, &rig, Pose2D::IDENTITY).unwrap();
        assert_eq!(v.ranges[0], 1.5);
        assert!(v.ranges[1..].iter().all(|&r| r == D_MAX));
    }

    #[test]
    fn all_discarded_gives_default_fill() {
        let rig = LidarRig::default();
        let mut front = empty_scan(SensorId::Front, &rig.front, 0.0);
        front.ranges[3] = 0.01;
        front.ranges[7] = 25.0;
        let back = empty_scan(SensorId::Back, &rig.back, 0.0);
        let v = fuse(&front, &back, &rig, Pose2D::IDENTITY).unwrap();
        assert_eq!(v.ranges.len(), BINS);
        assert!(v.ranges.iter().all(|&r| r == 10.0));
    }

    #[test]
    fn single_forward_beam() {
        let rig = identity_rig();
        let mut front = empty_scan(SensorId::Front, &rig.front, 0.0);
        front.ranges[190] = 3.0;
        let back = empty_scan(SensorId::Back, &rig.back, 0.0);
        let v = fuse(&front, &back, &rig, Pose2D::IDENTITY).unwrap();
        assert_eq!(v.ranges[0], 3.0);
        assert_eq!(v.ranges.iter().filter(|&&r| r == 10.0).count(), 359);
    }

    #[test]
    fn fuse_errors() {
        let rig = LidarRig::default();
        let front = empty_scan(SensorId::Front, &rig.front, 0.0);
        let back = empty_scan(SensorId::Back, &rig.back, 0.25);
        assert!(matches!(fuse(&front, &back, &rig, Pose2D::IDENTITY), Err(Error::Sync { .. })));
        let short = RawScan { sensor: SensorId::Back, timestamp: 0.0, ranges: vec![1.0; 10] };
        assert!(matches!(fuse(&front, &short, &rig, Pose2D::IDENTITY), Err(Error::Shape { .. })));
    }

    fn stream(sensor: SensorId, cfg: &SensorConfig, times: impl Iterator<Item = f64>) -> Vec<RawScan> {
        times.map(|t| empty_scan(sensor, cfg, t)).collect()
    }

    #[test]
    fn sync_pairs_at_first_tick_covering_both() {
        let rig = LidarRig::default();
        let f = stream(SensorId::Front, &rig.front, [0.0].into_iter());
        let b = stream(SensorId::Back, &rig.back, [0.02].into_iter());
        // extend the grid to 0.1 with a later front scan
        let mut f2 = f.clone();
        f2.push(empty_scan(SensorId::Front, &rig.front, 0.1));
        let out = synchronize(&f2, &b, 10.0, SYNC_TOLERANCE);
        assert_eq!(out.pairs.len(), 1);
        assert!((out.pairs[0].tick - 0.1).abs() < 1e-12);
        assert_eq!(out.pairs[0].back.timestamp, 0.02);
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn sync_without_back_stream_skips_every_tick() {
        let rig = LidarRig::default();
        let f = stream(SensorId::Front, &rig.front, (0..15).map(|i| i as f64 / 15.0));
        let out = synchronize(&f, &[], 10.0, SYNC_TOLERANCE);
        assert!(out.pairs.is_empty());
        assert_eq!(out.skipped, out.ticks);
        assert_eq!(out.ticks, 10);
    }

    #[test]
    fn sync_15_and_10_hz_over_one_second() {
        // Ticks at 0.0, 0.1, ..., 0.9 (the last scan is the front one at 14/15 s).
        // Each tick has a back scan at the same instant and a front scan at most 1/15 s old.
        let rig = LidarRig::default();
        let f = stream(SensorId::Front, &rig.front, (0..15).map(|i| i as f64 / 15.0));
        let b = stream(SensorId::Back, &rig.back, (0..10).map(|i| i as f64 / 10.0));
        let out = synchronize(&f, &b, 10.0, SYNC_TOLERANCE);
        assert_eq!(out.pairs.len(), 10);
        assert_eq!(out.skipped, 0);
    }

    #[test]
    fn compensation_with_static_pose_equals_plain_fusion() {
        let rig = LidarRig::default();
        let mut front = empty_scan(SensorId::Front, &rig.front, 0.0);
        let mut back = empty_scan(SensorId::Back, &rig.back, 0.05);
        for i in (0..front.ranges.len()).step_by(7) {
            front.ranges[i] = 1.0 + i as f64 * 0.01;
        }
        for i in (0..back.ranges.len()).step_by(5) {
            back.ranges[i] = 2.0 + i as f64 * 0.01;
        }
        let pose = Pose2D::new(1.0, 2.0, 0.3);
        let a = fuse(&front, &back, &rig, pose).unwrap();
        let b = fuse_compensated([(&front, pose), (&back, pose)], &rig, 0.05, pose).unwrap();
        for (x, y) in a.ranges.iter().zip(&b.ranges) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn random_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        let rig = LidarRig::default();
        let range = prop_oneof![Just(f64::INFINITY), 0.0..12.0f64];
        (
            proptest::collection::vec(range.clone(), rig.front.beam_count()),
            proptest::collection::vec(range, rig.back.beam_count()),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fusion_is_order_independent((fr, br) in random_pair()) {
            let rig = LidarRig::default();
            let f = RawScan { sensor: SensorId::Front, timestamp: 0.0, ranges: fr };
            let b = RawScan { sensor: SensorId::Back, timestamp: 0.03, ranges: br };
            let ab = fuse(&f, &b, &rig, Pose2D::IDENTITY).unwrap();
            let ba = fuse(&b, &f, &rig, Pose2D::IDENTITY).unwrap();
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn adding_a_beam_never_raises_a_bin((fr, br) in random_pair(), idx in 0usize..381, r in 0.05..10.0f64) {
            let rig = LidarRig::default();
            let b = RawScan { sensor: SensorId::Back, timestamp: 0.0, ranges: br };
            let mut f = RawScan { sensor: SensorId::Front, timestamp: 0.0, ranges: fr };
            f.ranges[idx] = f64::INFINITY;
            let before = fuse(&f, &b, &rig, Pose2D::IDENTITY).unwrap();
            f.ranges[idx] = r;
            let after = fuse(&f, &b, &rig, Pose2D::IDENTITY).unwrap();
            for (x, y) in before.ranges.iter().zip(&after.ranges) {
                prop_assert!(y <= x);
            }
        }

        #[test]
        fn rotating_points_rotates_bins(k in 0usize..360, pts in proptest::collection::vec((0usize..360, 0.3..9.0f64), 1..40)) {
            let mut a = BinAccumulator::new(D_MIN, D_MAX);
            let mut b = BinAccumulator::new(D_MIN, D_MAX);
            let rot = Pose2D::new(0.0, 0.0, (k as f64).to_radians());
            for (deg, r) in pts {
                // points placed at bin centers so that rotation by whole degrees stays exact up to rounding
                let th = (deg as f64).to_radians();
                let p = Point2D::new(r * libm::cos(th), r * libm::sin(th));
                a.add_point(&p);
                b.add_point(&rot.transform_point(&p));
            }
            let a = a.into_ranges();
            let b = b.into_ranges();
            for i in 0..BINS {
                prop_assert!((a[i] - b[(i + k) % BINS]).abs() < 1e-9);
            }
        }
    }
}
