//! Episodes, per-tick preprocessing into model inputs and labels, and the
//! train/validation/test split.
//!
//! Preprocessing keeps only one virtual scan per tick; windows are rebuilt
//! on demand, which keeps long recordings small in memory.

use alloc::borrow::Cow;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose2D;
use crate::history::{build_window, HistoryConfig, ScanWindow};
use crate::lidar::{fuse_compensated, LidarRig, RawScan, SensorId, VirtualScan};
use crate::simulator::WorldConfig;
use crate::supervision::{make_labels, CameraConfig, LabelTensor, ObservationSource, PersonObservation};
use crate::training::{ExampleSource, TrainingExample};

pub const EPISODE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub format_version: u32,
    pub environment: String,
    pub seed: u64,
    /// Seconds.
    pub duration: f64,
    pub world: WorldConfig,
}

impl EpisodeHeader {
    pub fn new(environment: &str, world: &WorldConfig, duration: f64) -> Self {
        Self {
            format_version: EPISODE_FORMAT_VERSION,
            environment: environment.into(),
            seed: world.rng_seed,
            duration,
            world: world.clone(),
        }
    }
}

/// Camera detector output of one tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub head_pan: f64,
    /// Robot base frame.
    pub detections: Vec<PersonObservation>,
}

/// Exact pelvis pose of one person at a tick, robot base frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthPerson {
    pub pose: Pose2D,
    /// Beams of the latest front and back sweeps that hit this person.
    pub lidar_hits: usize,
}

impl GroundTruthPerson {
    pub fn observation(&self) -> PersonObservation {
        PersonObservation { pose: self.pose, source: ObservationSource::GroundTruth }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub timestamp: f64,
    pub odometry: Pose2D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub front_scan: Option<RawScan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub back_scan: Option<RawScan>,
    /// Present on camera ticks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<GroundTruthPerson>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub header: EpisodeHeader,
    pub records: Vec<EpisodeRecord>,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        if self.header.format_version != EPISODE_FORMAT_VERSION {
            return Err(Error::Config(alloc::format!(
                "episode format version {} (expected {})",
                self.header.format_version,
                EPISODE_FORMAT_VERSION
            )));
        }
        for w in self.records.windows(2) {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(Error::Config(alloc::format!("timestamps not increasing at {}", w[1].timestamp)));
            }
        }
        Ok(())
    }
}

/// Everything kept from one camera tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickFrame {
    pub scan: VirtualScan,
    pub labels: LabelTensor,
    pub ground_truth: Vec<GroundTruthPerson>,
}

/// Streaming tick builder: feed records in time order, get one frame per
/// camera tick whose two scans are fresh enough to fuse.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    rig: LidarRig,
    camera: CameraConfig,
    front: Option<(RawScan, Pose2D)>,
    back: Option<(RawScan, Pose2D)>,
    skipped: usize,
}

impl Preprocessor {
    pub fn new(rig: LidarRig, camera: CameraConfig) -> Self {
        Self { rig, camera, front: None, back: None, skipped: 0 }
    }

    pub fn push(&mut self, record: &EpisodeRecord) -> Result<Option<TickFrame>> {
        for scan in [&record.front_scan, &record.back_scan].into_iter().flatten() {
            let slot = match scan.sensor {
                SensorId::Front => &mut self.front,
                SensorId::Back => &mut self.back,
            };
            *slot = Some((scan.clone(), record.odometry));
        }
        let Some(cam) = &record.camera else {
            return Ok(None);
        };
        let t = record.timestamp;
        let tol = self.rig.sync_tolerance;
        let (Some(front), Some(back)) = (fresh(&self.front, t, tol), fresh(&self.back, t, tol)) else {
            self.skipped += 1;
            return Ok(None);
        };
        let scan = fuse_compensated([(&front.0, front.1), (&back.0, back.1)], &self.rig, t, record.odometry)?;
        let labels = make_labels(&cam.detections, &self.camera.with_pan(cam.head_pan));
        Ok(Some(TickFrame { scan, labels, ground_truth: record.ground_truth.clone().unwrap_or_default() }))
    }

    /// Camera ticks dropped for lack of synchronized scans.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

fn fresh(s: &Option<(RawScan, Pose2D)>, t: f64, tolerance: f64) -> Option<&(RawScan, Pose2D)> {
    s.as_ref().filter(|(scan, _)| {
        let age = t - scan.timestamp;
        age >= -1e-9 && age <= tolerance + 1e-9
    })
}

/// The ticks of one episode, ready for window building.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedEpisode {
    pub environment: String,
    pub frames: Vec<TickFrame>,
}

impl PreparedEpisode {
    pub fn from_records<'a>(
        environment: &str,
        records: impl IntoIterator<Item = &'a EpisodeRecord>,
        rig: &LidarRig,
        camera: &CameraConfig,
    ) -> Result<Self> {
        let mut pre = Preprocessor::new(rig.clone(), *camera);
        let mut frames = Vec::new();
        for r in records {
            if let Some(f) = pre.push(r)? {
                frames.push(f);
            }
        }
        Ok(Self { environment: environment.into(), frames })
    }

    pub fn from_episode(episode: &Episode) -> Result<Self> {
        let w = &episode.header.world;
        Self::from_records(&episode.header.environment, &episode.records, &w.rig, &w.camera)
    }

    /// Frame indices that have a full window of `n` ticks.
    pub fn sample_indices(&self, n: usize) -> core::ops::Range<usize> {
        n.saturating_sub(1).min(self.frames.len())..self.frames.len()
    }

    pub fn window(&self, index: usize, n: usize) -> Option<ScanWindow> {
        if n == 0 || index >= self.frames.len() || index + 1 < n {
            return None;
        }
        let scans: Vec<VirtualScan> = self.frames[index + 1 - n..=index].iter().map(|f| f.scan.clone()).collect();
        build_window(&scans, n)
    }
}

/// Model input, labels and (for evaluation) ground truth of one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub window: ScanWindow,
    pub labels: LabelTensor,
    pub ground_truth: Vec<GroundTruthPerson>,
}

/// Every sample of an episode; the first `n - 1` ticks only warm up the history.
pub fn build_samples(episode: &Episode, history: &HistoryConfig, camera: &CameraConfig) -> Result<Vec<Sample>> {
    history.validate()?;
    let prepared =
        PreparedEpisode::from_records(&episode.header.environment, &episode.records, &episode.header.world.rig, camera)?;
    Ok(prepared
        .sample_indices(history.n)
        .map(|i| {
            let f = &prepared.frames[i];
            Sample {
                window: prepared.window(i, history.n).expect("index has a full window"),
                labels: f.labels.clone(),
                ground_truth: f.ground_truth.clone(),
            }
        })
        .collect())
}

/// A sample addressed by episode and frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub episode: usize,
    pub frame: usize,
}

/// Lazily built training examples over prepared episodes.
#[derive(Clone, Copy, Debug)]
pub struct SampleSet<'a> {
    pub episodes: &'a [PreparedEpisode],
    pub refs: &'a [SampleRef],
    pub n: usize,
}

impl ExampleSource for SampleSet<'_> {
    fn len(&self) -> usize {
        self.refs.len()
    }

    fn example(&self, i: usize) -> Cow<'_, TrainingExample> {
        let r = self.refs[i];
        let ep = &self.episodes[r.episode];
        Cow::Owned(TrainingExample {
            window: ep.window(r.frame, self.n).expect("sample refs point at full windows"),
            labels: ep.frames[r.frame].labels.clone(),
        })
    }
}

/// Which environment goes where.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScheme {
    /// All samples to training.
    pub train: String,
    /// First half (rounded up) to training, second half to validation.
    pub shared: String,
    /// All samples to test.
    pub test: String,
}

impl Default for SplitScheme {
    fn default() -> Self {
        Self { train: "corridor".into(), shared: "break_area".into(), test: "lab".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Splits samples grouped by environment, keeping time order within each
/// group. Groups of the same environment are concatenated in the given order.
pub fn split<T: Clone>(groups: &[(String, Vec<T>)], scheme: &SplitScheme) -> Result<Split<T>> {
    let names = [&scheme.train, &scheme.shared, &scheme.test];
    if names[0] == names[1] || names[0] == names[2] || names[1] == names[2] {
        return Err(Error::Config("the split needs three distinct environments".into()));
    }
    let collect = |name: &str| -> Result<Vec<T>> {
        let mut out = Vec::new();
        let mut found = false;
        for (env, items) in groups {
            if env == name {
                found = true;
                out.extend(items.iter().cloned());
            }
        }
        if found {
            Ok(out)
        } else {
            Err(Error::Config(alloc::format!("environment `{name}` missing from the data")))
        }
    };
    let train_env = collect(&scheme.train)?;
    let mut shared = collect(&scheme.shared)?;
    let test = collect(&scheme.test)?;
    let val = shared.split_off(shared.len().div_ceil(2));
    let mut train = train_env;
    train.extend(shared);
    Ok(Split { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidar::{D_MAX, BINS};
    use crate::simulator::{generate_episode, WorldConfig};
    use alloc::vec;

    fn episode(seed: u64, secs: f64, humans: usize) -> Episode {
        let cfg = WorldConfig { num_humans: humans, rng_seed: seed, ..Default::default() };
        generate_episode(&cfg, "test", secs).unwrap()
    }

    #[test]
    fn sample_counts() {
        let ep = episode(1, 10.0, 3);
        let cam = ep.header.world.camera;
        assert_eq!(build_samples(&ep, &HistoryConfig::HISTORY, &cam).unwrap().len(), 71);
        assert_eq!(build_samples(&ep, &HistoryConfig::NO_HISTORY, &cam).unwrap().len(), 100);
    }

    #[test]
    fn no_people_means_no_presence() {
        let ep = episode(2, 5.0, 0);
        let s = build_samples(&ep, &HistoryConfig::NO_HISTORY, &ep.header.world.camera).unwrap();
        assert!(!s.is_empty());
        for x in &s {
            assert!(x.labels.presence.iter().all(|&p| p == 0.0));
            assert!(x.labels.mask.iter().any(|&m| m == 1.0));
        }
    }

    #[test]
    fn samples_do_not_depend_on_chunking() {
        let ep = episode(3, 6.0, 3);
        let w = &ep.header.world;
        let whole = PreparedEpisode::from_episode(&ep).unwrap();
        let mut pre = Preprocessor::new(w.rig.clone(), w.camera);
        let mut frames = Vec::new();
        for chunk in ep.records.chunks(7) {
            for r in chunk {
                frames.extend(pre.push(r).unwrap());
            }
        }
        assert_eq!(whole.frames, frames);
        assert_eq!(pre.skipped(), 0);
        let a = build_samples(&ep, &HistoryConfig { n: 5, rate: 10.0 }, &w.camera).unwrap();
        let b = build_samples(&ep, &HistoryConfig { n: 5, rate: 10.0 }, &w.camera).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unsynchronized_ticks_are_skipped() {
        let mut ep = episode(4, 3.0, 0);
        for r in &mut ep.records {
            r.back_scan = None;
        }
        let p = PreparedEpisode::from_episode(&ep).unwrap();
        assert!(p.frames.is_empty());
    }

    #[test]
    fn windows_have_the_expected_shape() {
        let ep = episode(5, 5.0, 2);
        let p = PreparedEpisode::from_episode(&ep).unwrap();
        let w = p.window(40, 30).unwrap();
        assert_eq!(w.channels.len(), 30 * BINS);
        assert_eq!(w.channel(0), &p.frames[40].scan.ranges[..]);
        assert!(w.channels.iter().all(|r| *r > 0.0 && *r <= D_MAX));
        assert!(p.window(28, 30).is_none());
        assert_eq!(p.sample_indices(30), 29..p.frames.len());
    }

    fn groups(a: usize, b: usize, c: usize) -> Vec<(String, Vec<usize>)> {
        vec![
            ("corridor".into(), (0..a).collect()),
            ("break_area".into(), (a..a + b).collect()),
            ("lab".into(), (a + b..a + b + c).collect()),
        ]
    }

    #[test]
    fn split_sizes() {
        let s = split(&groups(36_000, 12_000, 7_000), &SplitScheme::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (42_000, 6_000, 7_000));

        let s = split(&groups(10, 7, 3), &SplitScheme::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (14, 3));
        // chronological: the validation part is the end of the shared environment
        assert_eq!(s.val, vec![14, 15, 16]);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn split_needs_all_environments() {
        let only: Vec<(String, Vec<usize>)> = vec![("corridor".into(), vec![1, 2, 3])];
        assert!(split(&only, &SplitScheme::default()).is_err());
        let scheme = SplitScheme { train: "a".into(), shared: "a".into(), test: "b".into() };
        assert!(split(&groups(1, 1, 1), &scheme).is_err());
    }

    #[test]
    fn episode_validation() {
        let mut ep = episode(6, 1.0, 0);
        assert!(ep.validate().is_ok());
        ep.records.swap(0, 1);
        assert!(ep.validate().is_err());
        let mut ep = episode(6, 1.0, 0);
        ep.header.format_version = 99;
        assert!(ep.validate().is_err());
    }
}
