//! Deterministic 2D world standing in for the robot, its two scanners and
//! the camera person detector.
//!
//! People are a pelvis reference point plus two leg circles: the scanners
//! see the legs, the camera reports the pelvis. The world advances in
//! substeps of 1/30 s so that the 15 Hz front scanner, the 10 Hz back
//! scanner and the 10 Hz camera ticks all land on the same clock.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CameraFrame, Episode, EpisodeHeader, EpisodeRecord, GroundTruthPerson};
use crate::error::{Error, Result};
use crate::geometry::{relative_pose, wrap, Point2D, Pose2D};
use crate::lidar::{LidarRig, RawScan, SensorConfig, SensorId};
use crate::rng;
use crate::supervision::{CameraConfig, ObservationSource, PersonObservation, MAX_PAN};

/// Simulation clock rate (Hz).
pub const SUBSTEP_RATE: f64 = 30.0;
/// Substeps per camera tick (10 Hz).
const TICK_EVERY: u64 = 3;
/// Substeps per front scan (15 Hz).
const FRONT_EVERY: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point2D,
    pub radius: f64,
}

impl Circle {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Self { center: Point2D::new(x, y), radius }
    }

    /// First intersection of the ray `o + t·u` (`u` unit) with `t > 0`.
    pub fn ray_hit(&self, o: &Point2D, u: &Point2D) -> Option<f64> {
        let (ox, oy) = (o.x - self.center.x, o.y - self.center.y);
        let b = ox * u.x + oy * u.y;
        let c = ox * ox + oy * oy - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let sq = libm::sqrt(disc);
        let t0 = -b - sq;
        if t0 > 0.0 {
            return Some(t0);
        }
        let t1 = -b + sq;
        (t1 > 0.0).then_some(t1)
    }

    /// Distance from `p` to the circle's surface (negative inside).
    pub fn surface_distance(&self, p: &Point2D) -> f64 {
        p.distance(&self.center) - self.radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point2D,
    pub b: Point2D,
}

impl Segment {
    pub fn new(ax: f64, ay: f64, bx: f64, by: f64) -> Self {
        Self { a: Point2D::new(ax, ay), b: Point2D::new(bx, by) }
    }

    /// Measured from the midpoint so that swapping the endpoints gives the
    /// bit-identical answer.
    pub fn ray_hit(&self, o: &Point2D, u: &Point2D) -> Option<f64> {
        let e = Point2D::new(self.b.x - self.a.x, self.b.y - self.a.y);
        let denom = cross(u, &e);
        if denom == 0.0 {
            return None;
        }
        let w = Point2D::new(0.5 * (self.a.x + self.b.x) - o.x, 0.5 * (self.a.y + self.b.y) - o.y);
        let t = cross(&w, &e) / denom;
        let s = cross(&w, u) / denom;
        (t > 0.0 && (-0.5..=0.5).contains(&s)).then_some(t)
    }

    pub fn distance(&self, p: &Point2D) -> f64 {
        point_segment_distance(p, &self.a, &self.b)
    }

    fn intersects(&self, other: &Segment) -> bool {
        let d1 = orient(&other.a, &other.b, &self.a);
        let d2 = orient(&other.a, &other.b, &self.b);
        let d3 = orient(&self.a, &self.b, &other.a);
        let d4 = orient(&self.a, &self.b, &other.b);
        d1 * d2 < 0.0 && d3 * d4 < 0.0
    }

    /// Smallest distance between two segments.
    pub fn segment_distance(&self, other: &Segment) -> f64 {
        if self.intersects(other) {
            return 0.0;
        }
        self.distance(&other.a).min(self.distance(&other.b)).min(other.distance(&self.a)).min(other.distance(&self.b))
    }
}

fn cross(a: &Point2D, b: &Point2D) -> f64 {
    a.x * b.y - a.y * b.x
}

fn orient(a: &Point2D, b: &Point2D, c: &Point2D) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn point_segment_distance(p: &Point2D, a: &Point2D, b: &Point2D) -> f64 {
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let len2 = ex * ex + ey * ey;
    let t = if len2 == 0.0 { 0.0 } else { (((p.x - a.x) * ex + (p.y - a.y) * ey) / len2).clamp(0.0, 1.0) };
    p.distance(&Point2D::new(a.x + t * ex, a.y + t * ey))
}

/// Axis-aligned rectangle; its boundary is a wall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub min: Point2D,
    pub max: Point2D,
}

impl Arena {
    pub fn new(width: f64, height: f64) -> Self {
        Self { min: Point2D::new(0.0, 0.0), max: Point2D::new(width, height) }
    }

    pub fn walls(&self) -> [Segment; 4] {
        let (a, b) = (self.min, self.max);
        [
            Segment::new(a.x, a.y, b.x, a.y),
            Segment::new(b.x, a.y, b.x, b.y),
            Segment::new(b.x, b.y, a.x, b.y),
            Segment::new(a.x, b.y, a.x, a.y),
        ]
    }

    pub fn contains(&self, p: &Point2D) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraNoise {
    /// Pelvis position jitter per axis (m), truncated at 3σ radially.
    pub position_sigma: f64,
    /// Heading jitter (rad), truncated at 3σ.
    pub heading_sigma: f64,
    /// Probability of missing a visible person in one frame.
    pub dropout: f64,
}

impl Default for CameraNoise {
    fn default() -> Self {
        Self { position_sigma: 0.03, heading_sigma: 5f64.to_radians(), dropout: 0.05 }
    }
}

impl CameraNoise {
    pub const NONE: CameraNoise = CameraNoise { position_sigma: 0.0, heading_sigma: 0.0, dropout: 0.0 };
}

/// Per-substep odometry noise (σ of x, y in m and heading in rad), applied
/// to the body-frame increment whenever the base moves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdometryNoise {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl OdometryNoise {
    pub const NONE: OdometryNoise = OdometryNoise { x: 0.0, y: 0.0, heading: 0.0 };

    fn is_zero(&self) -> bool {
        self.x == 0.0 && self.y == 0.0 && self.heading == 0.0
    }
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self { x: 1e-3, y: 1e-3, heading: 5e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub arena: Arena,
    /// Walls besides the arena boundary.
    pub walls: Vec<Segment>,
    /// Visible to the scanners; block motion and the camera's line of sight.
    pub obstacles: Vec<Circle>,
    /// Invisible regions nobody walks through, e.g. table tops above the legs.
    pub keep_out: Vec<Circle>,
    pub num_humans: usize,
    /// Walking speed range (m/s).
    pub human_speed: (f64, f64),
    /// Chance of stopping for a while on reaching a waypoint.
    pub human_pause_prob: f64,
    /// Pause length range (s).
    pub human_pause: (f64, f64),
    pub leg_radius: f64,
    pub leg_separation: f64,
    /// Fore-aft leg excursion at full walking speed (m).
    pub gait_amplitude: f64,
    /// Distance covered per gait cycle (m).
    pub stride_length: f64,
    /// Minimum distance from a pelvis to any obstacle surface (m).
    pub human_clearance: f64,
    pub robot_radius: f64,
    /// Robot cruise speed range (m/s).
    pub robot_speed: (f64, f64),
    /// Maximum robot turn rate (rad/s).
    pub robot_turn_rate: f64,
    pub robot_pause_prob: f64,
    pub robot_pause: (f64, f64),
    /// Head pan random walk intensity (rad/√s), reflected at ±75°.
    pub pan_sigma: f64,
    pub odometry_noise: OdometryNoise,
    /// Range noise σ (m) added to every return.
    pub range_noise: f64,
    /// Returns are rounded to this step (m); 0 disables.
    pub range_quantum: f64,
    pub camera: CameraConfig,
    pub camera_noise: CameraNoise,
    pub rig: LidarRig,
    pub rng_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            arena: Arena::new(10.0, 8.0),
            walls: Vec::new(),
            obstacles: Vec::new(),
            keep_out: Vec::new(),
            num_humans: 3,
            human_speed: (0.3, 1.4),
            human_pause_prob: 0.2,
            human_pause: (0.5, 3.0),
            leg_radius: 0.07,
            leg_separation: 0.25,
            gait_amplitude: 0.15,
            stride_length: 1.3,
            human_clearance: 0.3,
            robot_radius: 0.3,
            robot_speed: (0.2, 0.6),
            robot_turn_rate: 1.0,
            robot_pause_prob: 0.3,
            robot_pause: (1.0, 4.0),
            pan_sigma: 0.5,
            odometry_noise: OdometryNoise::default(),
            range_noise: 0.01,
            range_quantum: 0.001,
            camera: CameraConfig::default(),
            camera_noise: CameraNoise::default(),
            rig: LidarRig::default(),
            rng_seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: (f64, f64)| r.0 >= 0.0 && r.0 <= r.1 && r.1.is_finite();
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let ok = self.arena.max.x > self.arena.min.x
            && self.arena.max.y > self.arena.min.y
            && range_ok(self.human_speed)
            && range_ok(self.robot_speed)
            && range_ok(self.human_pause)
            && range_ok(self.robot_pause)
            && prob(self.human_pause_prob)
            && prob(self.robot_pause_prob)
            && prob(self.camera_noise.dropout)
            && self.leg_radius > 0.0
            && self.leg_separation >= 0.0
            && self.gait_amplitude >= 0.0
            && self.stride_length > 0.0
            && self.human_clearance > 0.0
            && self.robot_radius > 0.0
            && self.robot_turn_rate >= 0.0
            && self.pan_sigma >= 0.0
            && self.range_noise >= 0.0
            && self.range_quantum >= 0.0
            && self.camera_noise.position_sigma >= 0.0
            && self.camera_noise.heading_sigma >= 0.0
            && [self.odometry_noise.x, self.odometry_noise.y, self.odometry_noise.heading].iter().all(|s| *s >= 0.0);
        if !ok {
            return Err(Error::Config("world config out of range".into()));
        }
        let inside = |p: &Point2D| {
            p.x >= self.arena.min.x && p.x <= self.arena.max.x && p.y >= self.arena.min.y && p.y <= self.arena.max.y
        };
        let geometry_inside = self.walls.iter().all(|w| inside(&w.a) && inside(&w.b))
            && self.obstacles.iter().chain(&self.keep_out).all(|c| inside(&c.center) && c.radius > 0.0);
        if !geometry_inside {
            return Err(Error::Config("world geometry must lie inside the arena".into()));
        }
        self.camera.validate()?;
        self.rig.front.validate()?;
        self.rig.back.validate()
    }

    /// Walls including the arena boundary.
    pub fn all_walls(&self) -> Vec<Segment> {
        let mut w: Vec<Segment> = self.arena.walls().to_vec();
        w.extend_from_slice(&self.walls);
        w
    }

    /// Named environment preset. The three presets stand in for a
    /// corridor, a break area with tables and chairs, and a lab.
    pub fn preset(name: &str, seed: u64) -> Result<WorldConfig> {
        let mut cfg = match name {
            "corridor" => corridor(),
            "break_area" => break_area(),
            "lab" => lab(),
            "static_room" => static_room(),
            _ => return Err(Error::Config(alloc::format!("unknown environment `{name}`"))),
        };
        cfg.rng_seed = seed;
        Ok(cfg)
    }

    pub const PRESETS: [&'static str; 3] = ["corridor", "break_area", "lab"];
}

fn table(obstacles: &mut Vec<Circle>, keep_out: &mut Vec<Circle>, x: f64, y: f64, w: f64, d: f64, leg: f64) {
    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        obstacles.push(Circle::new(x + sx * (w / 2.0 - 0.05), y + sy * (d / 2.0 - 0.05), leg));
    }
    keep_out.push(Circle::new(x, y, libm::hypot(w, d) / 2.0));
}

fn railing(obstacles: &mut Vec<Circle>, x0: f64, x1: f64, y: f64, spacing: f64) {
    let n = libm::floor((x1 - x0) / spacing) as usize;
    for k in 0..=n {
        obstacles.push(Circle::new(x0 + k as f64 * spacing, y, 0.02));
    }
}

fn corridor() -> WorldConfig {
    let mut obstacles = Vec::new();
    let mut keep_out = Vec::new();
    // railing bars along part of one side, pillars along the other
    railing(&mut obstacles, 4.0, 12.0, 0.25, 0.15);
    for x in [3.0, 9.0, 15.0, 21.0, 27.0] {
        obstacles.push(Circle::new(x, 3.2, 0.15));
    }
    table(&mut obstacles, &mut keep_out, 18.0, 0.6, 1.2, 0.6, 0.025);
    let walls = alloc::vec![Segment::new(0.0, 2.0, 0.0, 3.5)];
    WorldConfig { arena: Arena::new(30.0, 3.5), walls, obstacles, keep_out, num_humans: 5, ..Default::default() }
}

fn break_area() -> WorldConfig {
    let mut obstacles = Vec::new();
    let mut keep_out = Vec::new();
    for (x, y) in [(3.0, 3.0), (3.0, 7.0), (7.0, 5.0), (10.0, 2.5), (10.0, 7.5)] {
        table(&mut obstacles, &mut keep_out, x, y, 1.2, 0.8, 0.03);
    }
    // chairs
    for (x, y) in [(3.0, 4.1), (7.0, 6.0), (10.9, 2.5), (2.0, 7.0)] {
        table(&mut obstacles, &mut keep_out, x, y, 0.45, 0.45, 0.015);
    }
    obstacles.push(Circle::new(6.0, 9.0, 0.25));
    let walls = alloc::vec![Segment::new(12.0, 0.0, 12.0, 1.0), Segment::new(0.0, 9.0, 1.5, 9.0)];
    WorldConfig {
        arena: Arena::new(13.0, 10.0),
        walls,
        obstacles,
        keep_out,
        num_humans: 5,
        human_pause_prob: 0.3,
        ..Default::default()
    }
}

fn lab() -> WorldConfig {
    let mut obstacles = Vec::new();
    let mut keep_out = Vec::new();
    table(&mut obstacles, &mut keep_out, 2.0, 6.5, 1.6, 0.8, 0.03);
    table(&mut obstacles, &mut keep_out, 8.0, 6.5, 1.6, 0.8, 0.03);
    table(&mut obstacles, &mut keep_out, 5.0, 1.5, 0.8, 0.8, 0.02);
    obstacles.push(Circle::new(5.0, 4.5, 0.2));
    obstacles.push(Circle::new(1.0, 1.0, 0.1));
    railing(&mut obstacles, 7.0, 9.0, 2.0, 0.2);
    WorldConfig { arena: Arena::new(10.0, 8.0), obstacles, keep_out, num_humans: 4, ..Default::default() }
}

fn static_room() -> WorldConfig {
    let mut obstacles = Vec::new();
    let mut keep_out = Vec::new();
    table(&mut obstacles, &mut keep_out, 2.0, 2.0, 1.2, 0.8, 0.03);
    obstacles.push(Circle::new(5.5, 4.0, 0.3));
    obstacles.push(Circle::new(3.5, 5.5, 0.1));
    let walls = alloc::vec![Segment::new(7.0, 0.0, 7.0, 2.0)];
    WorldConfig { arena: Arena::new(8.0, 6.0), walls, obstacles, keep_out, num_humans: 0, ..Default::default() }
}

/// Waypoint walker with a two-leg gait.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanState {
    /// Pelvis pose in the world; heading follows the walking direction.
    pub pose: Pose2D,
    /// Gait phase (rad).
    pub phase: f64,
    /// Current speed (m/s).
    pub speed: f64,
    /// +1 or -1: which side the first leg is on. Flips under mirroring.
    pub handedness: f64,
    pub target: Point2D,
    pub cruise_speed: f64,
    pub pause_left: f64,
    pub blocked_for: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub target: Point2D,
    pub cruise_speed: f64,
    pub pause_left: f64,
    pub blocked_for: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    /// True base pose.
    pub robot: Pose2D,
    pub odometry: Pose2D,
    pub head_pan: f64,
    pub humans: Vec<HumanState>,
    pub robot_agent: RobotState,
}

impl WorldState {
    /// The state reflected across the world x axis.
    pub fn mirrored(&self) -> WorldState {
        let mut s = self.clone();
        s.robot = self.robot.mirrored();
        s.odometry = self.odometry.mirrored();
        s.head_pan = -self.head_pan;
        s.robot_agent.target = Point2D::new(self.robot_agent.target.x, -self.robot_agent.target.y);
        for h in &mut s.humans {
            h.pose = h.pose.mirrored();
            h.handedness = -h.handedness;
            h.target = Point2D::new(h.target.x, -h.target.y);
        }
        s
    }
}

impl WorldConfig {
    /// The configuration reflected across the world x axis.
    pub fn mirrored(&self) -> WorldConfig {
        let m = |p: &Point2D| Point2D::new(p.x, -p.y);
        let mut c = self.clone();
        c.arena = Arena { min: Point2D::new(self.arena.min.x, -self.arena.max.y), max: Point2D::new(self.arena.max.x, -self.arena.min.y) };
        c.walls = self.walls.iter().map(|w| Segment { a: m(&w.a), b: m(&w.b) }).collect();
        c.obstacles = self.obstacles.iter().map(|o| Circle { center: m(&o.center), ..*o }).collect();
        c.keep_out = self.keep_out.iter().map(|o| Circle { center: m(&o.center), ..*o }).collect();
        c
    }
}

/// What a beam hit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Hit {
    Wall(usize),
    Obstacle(usize),
    Leg { human: usize, leg: usize },
}

/// Leg circle centers of a human.
pub fn leg_positions(h: &HumanState, cfg: &WorldConfig) -> [Point2D; 2] {
    let (s, c) = libm::sincos(h.pose.heading);
    let amp = cfg.gait_amplitude * h.speed.min(1.0);
    let fwd = amp * libm::sin(h.phase);
    let lat = 0.5 * cfg.leg_separation * h.handedness;
    let (x, y) = (h.pose.x, h.pose.y);
    [
        Point2D::new(x - s * lat + c * fwd, y + c * lat + s * fwd),
        Point2D::new(x + s * lat - c * fwd, y - c * lat - s * fwd),
    ]
}

/// Scene geometry frozen for one sweep.
pub struct Scene<'a> {
    walls: Vec<Segment>,
    obstacles: &'a [Circle],
    legs: Vec<(Circle, usize, usize)>,
}

impl<'a> Scene<'a> {
    pub fn new(cfg: &'a WorldConfig, state: &WorldState) -> Self {
        let legs = state
            .humans
            .iter()
            .enumerate()
            .flat_map(|(i, h)| {
                leg_positions(h, cfg).into_iter().enumerate().map(move |(l, p)| (Circle { center: p, radius: cfg.leg_radius }, i, l))
            })
            .collect();
        Self { walls: cfg.all_walls(), obstacles: &cfg.obstacles, legs }
    }

    /// Nearest hit along a unit-direction ray.
    pub fn cast(&self, o: &Point2D, u: &Point2D) -> Option<(f64, Hit)> {
        let mut best: Option<(f64, Hit)> = None;
        let mut consider = |t: Option<f64>, hit: Hit| {
            if let Some(t) = t {
                if best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, hit));
                }
            }
        };
        for (i, w) in self.walls.iter().enumerate() {
            consider(w.ray_hit(o, u), Hit::Wall(i));
        }
        for (i, c) in self.obstacles.iter().enumerate() {
            consider(c.ray_hit(o, u), Hit::Obstacle(i));
        }
        for (c, human, leg) in &self.legs {
            consider(c.ray_hit(o, u), Hit::Leg { human: *human, leg: *leg });
        }
        best
    }

    /// Whether the straight line between two points crosses a wall or an obstacle.
    pub fn occluded(&self, a: &Point2D, b: &Point2D) -> bool {
        let d = a.distance(b);
        if d == 0.0 {
            return false;
        }
        let u = Point2D::new((b.x - a.x) / d, (b.y - a.y) / d);
        self.walls.iter().any(|w| w.ray_hit(a, &u).is_some_and(|t| t < d))
            || self.obstacles.iter().any(|c| c.ray_hit(a, &u).is_some_and(|t| t < d))
    }
}

/// Noise-free sweep of `sensor` from the true robot pose. Ranges below the
/// sensor minimum are clamped to it; nothing within the maximum is no return.
pub fn raycast(cfg: &WorldConfig, state: &WorldState, id: SensorId, sensor: &SensorConfig) -> (RawScan, Vec<Option<Hit>>) {
    raycast_in(&Scene::new(cfg, state), &state.robot, state.time, id, sensor)
}

pub fn raycast_in(
    scene: &Scene,
    robot: &Pose2D,
    time: f64,
    id: SensorId,
    sensor: &SensorConfig,
) -> (RawScan, Vec<Option<Hit>>) {
    let pose = robot.compose(&sensor.mount_pose);
    let o = pose.translation();
    let n = sensor.beam_count();
    let mut ranges = Vec::with_capacity(n);
    let mut hits = Vec::with_capacity(n);
    for i in 0..n {
        let (s, c) = libm::sincos(pose.heading + sensor.beam_angle(i));
        match scene.cast(&o, &Point2D::new(c, s)) {
            Some((t, hit)) if t <= sensor.d_max => {
                ranges.push(t.max(sensor.d_min));
                hits.push(Some(hit));
            }
            _ => {
                ranges.push(f64::INFINITY);
                hits.push(None);
            }
        }
    }
    (RawScan { sensor: id, timestamp: time, ranges }, hits)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

/// The world plus its random streams.
#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    pub state: WorldState,
    walls: Vec<Segment>,
    motion_rng: ChaCha8Rng,
    odometry_rng: ChaCha8Rng,
    camera_rng: ChaCha8Rng,
    sensor_rng: ChaCha8Rng,
}

impl World {
    /// Places the robot and the people at random free positions.
    pub fn new(config: WorldConfig) -> Result<World> {
        config.validate()?;
        let seed = config.rng_seed;
        let walls = config.all_walls();
        let robot_agent = RobotState { target: Point2D::new(0.0, 0.0), cruise_speed: 0.0, pause_left: 0.0, blocked_for: 0.0 };
        let state = WorldState {
            time: 0.0,
            robot: Pose2D::IDENTITY,
            odometry: Pose2D::IDENTITY,
            head_pan: 0.0,
            humans: Vec::new(),
            robot_agent,
        };
        let mut world = World {
            config,
            state,
            walls,
            motion_rng: rng::stream(seed, "motion"),
            odometry_rng: rng::stream(seed, "odometry"),
            camera_rng: rng::stream(seed, "camera"),
            sensor_rng: rng::stream(seed, "lidar"),
        };
        world.place_agents()?;
        Ok(world)
    }

    /// A world in the given state, e.g. a scripted or mirrored one.
    pub fn with_state(config: WorldConfig, state: WorldState) -> Result<World> {
        let mut w = World::new(WorldConfig { num_humans: 0, ..config.clone() })?;
        w.config = config;
        w.state = state;
        Ok(w)
    }

    fn place_agents(&mut self) -> Result<()> {
        let robot_margin = self.config.robot_radius + 0.1;
        let p = self
            .sample_free(robot_margin, |_, _| true)
            .ok_or_else(|| Error::Config("no free space for the robot".into()))?;
        let heading = self.motion_rng.random_range(-PI..PI);
        self.state.robot = Pose2D::new(p.x, p.y, heading);
        self.state.odometry = self.state.robot;
        self.state.head_pan = self.motion_rng.random_range(-MAX_PAN..MAX_PAN);
        self.new_robot_goal();
        let cfg = self.config.clone();
        for _ in 0..cfg.num_humans {
            let robot = self.state.robot.translation();
            let placed: Vec<Point2D> = self.state.humans.iter().map(|h| h.pose.translation()).collect();
            let p = self
                .sample_free(cfg.human_clearance, |_, q| {
                    q.distance(&robot) >= cfg.robot_radius + cfg.human_clearance + 0.5
                        && placed.iter().all(|o| q.distance(o) >= 2.0 * cfg.human_clearance)
                })
                .ok_or_else(|| Error::Config("no free space for a person".into()))?;
            let heading = self.motion_rng.random_range(-PI..PI);
            let handedness = if self.motion_rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let phase = self.motion_rng.random_range(0.0..2.0 * PI);
            let mut h = HumanState {
                pose: Pose2D::new(p.x, p.y, heading),
                phase,
                speed: 0.0,
                handedness,
                target: p,
                cruise_speed: 0.0,
                pause_left: 0.0,
                blocked_for: 0.0,
            };
            self.new_human_goal(&mut h);
            self.state.humans.push(h);
        }
        Ok(())
    }

    /// Distance from `p` to the nearest static surface (walls, obstacles,
    /// keep-out regions).
    fn static_clearance(&self, p: &Point2D) -> f64 {
        let w = self.walls.iter().map(|w| w.distance(p)).fold(f64::INFINITY, f64::min);
        let o = self.config.obstacles.iter().chain(&self.config.keep_out).map(|c| c.surface_distance(p)).fold(f64::INFINITY, f64::min);
        w.min(o)
    }

    fn path_clearance(&self, a: &Point2D, b: &Point2D) -> f64 {
        let path = Segment { a: *a, b: *b };
        let w = self.walls.iter().map(|w| w.segment_distance(&path)).fold(f64::INFINITY, f64::min);
        let o = self
            .config
            .obstacles
            .iter()
            .chain(&self.config.keep_out)
            .map(|c| point_segment_distance(&c.center, a, b) - c.radius)
            .fold(f64::INFINITY, f64::min);
        w.min(o)
    }

    fn sample_free(&mut self, margin: f64, extra: impl Fn(&World, &Point2D) -> bool) -> Option<Point2D> {
        let a = self.config.arena;
        for _ in 0..1000 {
            let p = Point2D::new(
                self.motion_rng.random_range(a.min.x..a.max.x),
                self.motion_rng.random_range(a.min.y..a.max.y),
            );
            if self.static_clearance(&p) >= margin && extra(self, &p) {
                return Some(p);
            }
        }
        None
    }

    /// A reachable waypoint in a straight line from `from`, or `from` itself.
    fn sample_goal(&mut self, from: &Point2D, margin: f64) -> Point2D {
        for _ in 0..50 {
            if let Some(p) = self.sample_free(margin, |_, _| true) {
                if self.path_clearance(from, &p) >= margin {
                    return p;
                }
            }
        }
        *from
    }

    fn new_human_goal(&mut self, h: &mut HumanState) {
        let from = h.pose.translation();
        h.target = self.sample_goal(&from, self.config.human_clearance);
        h.cruise_speed = uniform(&mut self.motion_rng, self.config.human_speed);
        h.blocked_for = 0.0;
    }

    fn new_robot_goal(&mut self) {
        let from = self.state.robot.translation();
        let margin = self.config.robot_radius + 0.1;
        self.state.robot_agent.target = self.sample_goal(&from, margin);
        self.state.robot_agent.cruise_speed = uniform(&mut self.motion_rng, self.config.robot_speed);
        self.state.robot_agent.blocked_for = 0.0;
    }

    fn human_position_ok(&self, idx: usize, p: &Point2D) -> bool {
        let cfg = &self.config;
        self.static_clearance(p) >= cfg.human_clearance
            && p.distance(&self.state.robot.translation()) >= cfg.robot_radius + cfg.human_clearance
            && self
                .state
                .humans
                .iter()
                .enumerate()
                .all(|(j, o)| j == idx || p.distance(&o.pose.translation()) >= 2.0 * cfg.human_clearance)
    }

    fn robot_position_ok(&self, p: &Point2D) -> bool {
        let cfg = &self.config;
        self.static_clearance(p) >= cfg.robot_radius + 0.05
            && self.state.humans.iter().all(|h| p.distance(&h.pose.translation()) >= cfg.robot_radius + cfg.human_clearance)
    }

    /// Advances people, robot, odometry and head pan by `dt` seconds.
    pub fn step(&mut self, dt: f64) {
        for i in 0..self.state.humans.len() {
            self.step_human(i, dt);
        }
        self.step_robot(dt);
        self.step_pan(dt);
        self.state.time += dt;
    }

    fn step_human(&mut self, i: usize, dt: f64) {
        let mut h = self.state.humans[i].clone();
        let cfg = &self.config;
        if h.pause_left > 0.0 {
            h.pause_left -= dt;
            h.speed = 0.0;
            self.state.humans[i] = h;
            return;
        }
        let pos = h.pose.translation();
        if pos.distance(&h.target) < 0.2 {
            h.speed = 0.0;
            if self.motion_rng.random_bool(cfg.human_pause_prob) {
                h.pause_left = uniform(&mut self.motion_rng, cfg.human_pause);
            }
            self.new_human_goal(&mut h);
            self.state.humans[i] = h;
            return;
        }
        let desired = libm::atan2(h.target.y - pos.y, h.target.x - pos.x);
        let err = wrap(desired - h.pose.heading);
        let max_turn = 2.5 * dt;
        let heading = wrap(h.pose.heading + err.clamp(-max_turn, max_turn));
        let speed = h.cruise_speed * libm::cos(err).max(0.0);
        let (s, c) = libm::sincos(heading);
        let next = Point2D::new(pos.x + speed * dt * c, pos.y + speed * dt * s);
        if speed == 0.0 || self.human_position_ok(i, &next) {
            h.pose = Pose2D::new(next.x, next.y, heading);
            h.speed = speed;
            h.phase = (h.phase + 2.0 * PI * speed * dt / self.config.stride_length) % (2.0 * PI);
            h.blocked_for = 0.0;
        } else {
            h.pose = Pose2D::new(pos.x, pos.y, heading);
            h.speed = 0.0;
            h.blocked_for += dt;
            if h.blocked_for > 1.0 {
                self.new_human_goal(&mut h);
            }
        }
        self.state.humans[i] = h;
    }

    fn step_robot(&mut self, dt: f64) {
        let prev = self.state.robot;
        let agent = &mut self.state.robot_agent;
        if agent.pause_left > 0.0 {
            agent.pause_left -= dt;
        } else if prev.translation().distance(&agent.target) < 0.2 {
            if self.motion_rng.random_bool(self.config.robot_pause_prob) {
                self.state.robot_agent.pause_left = uniform(&mut self.motion_rng, self.config.robot_pause);
            }
            self.new_robot_goal();
        } else {
            let target = agent.target;
            let cruise = agent.cruise_speed;
            let desired = libm::atan2(target.y - prev.y, target.x - prev.x);
            let err = wrap(desired - prev.heading);
            let max_turn = self.config.robot_turn_rate * dt;
            let dh = (3.0 * err * dt).clamp(-max_turn, max_turn);
            let v = if libm::fabs(err) < 0.5 { cruise * libm::cos(err) } else { 0.0 };
            let mid = prev.heading + 0.5 * dh;
            let (s, c) = libm::sincos(mid);
            let next = Point2D::new(prev.x + v * dt * c, prev.y + v * dt * s);
            if v == 0.0 || self.robot_position_ok(&next) {
                self.state.robot = Pose2D::new(next.x, next.y, prev.heading + dh);
                self.state.robot_agent.blocked_for = 0.0;
            } else {
                self.state.robot = Pose2D::new(prev.x, prev.y, prev.heading + dh);
                self.state.robot_agent.blocked_for += dt;
                if self.state.robot_agent.blocked_for > 2.0 {
                    self.new_robot_goal();
                }
            }
        }
        self.update_odometry(&prev);
    }

    fn update_odometry(&mut self, prev: &Pose2D) {
        let now = self.state.robot;
        if now == *prev {
            return;
        }
        let noise = self.config.odometry_noise;
        if noise.is_zero() {
            self.state.odometry = now;
            return;
        }
        let d = relative_pose(prev, &now);
        let r = &mut self.odometry_rng;
        let noisy = Pose2D::new(d.x + noise.x * normal(r), d.y + noise.y * normal(r), d.heading + noise.heading * normal(r));
        self.state.odometry = self.state.odometry.compose(&noisy);
    }

    fn step_pan(&mut self, dt: f64) {
        if self.config.pan_sigma == 0.0 {
            return;
        }
        let mut p = self.state.head_pan + self.config.pan_sigma * libm::sqrt(dt) * normal(&mut self.motion_rng);
        // reflect into the pan limits
        for _ in 0..4 {
            if p > MAX_PAN {
                p = 2.0 * MAX_PAN - p;
            } else if p < -MAX_PAN {
                p = -2.0 * MAX_PAN - p;
            }
        }
        self.state.head_pan = p.clamp(-MAX_PAN, MAX_PAN);
    }

    /// Camera configuration at the current head pan.
    pub fn camera(&self) -> CameraConfig {
        self.config.camera.with_pan(self.state.head_pan)
    }

    /// Exact pelvis poses of everyone, in the true robot frame.
    pub fn ground_truth(&self) -> Vec<PersonObservation> {
        let inv = self.state.robot.inverse();
        self.state
            .humans
            .iter()
            .map(|h| PersonObservation { pose: inv.compose(&h.pose), source: ObservationSource::GroundTruth })
            .collect()
    }

    /// People inside the camera wedge, within range and in line of sight.
    pub fn visible_humans(&self) -> Vec<usize> {
        let scene = Scene::new(&self.config, &self.state);
        let cam = self.camera();
        let robot = self.state.robot.translation();
        self.ground_truth()
            .iter()
            .enumerate()
            .filter(|(i, g)| {
                let p = g.pose.translation();
                p.norm() <= cam.max_range
                    && cam.sees_direction(p.angle())
                    && !scene.occluded(&robot, &self.state.humans[*i].pose.translation())
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Simulated camera detector output in the robot frame.
    pub fn camera_detect(&mut self) -> Vec<PersonObservation> {
        let gt = self.ground_truth();
        let noise = self.config.camera_noise;
        let mut out = Vec::new();
        for i in self.visible_humans() {
            let r = &mut self.camera_rng;
            if r.random_bool(noise.dropout) {
                continue;
            }
            let (dx, dy) = loop {
                let (dx, dy) = (noise.position_sigma * normal(r), noise.position_sigma * normal(r));
                if libm::hypot(dx, dy) <= 3.0 * noise.position_sigma {
                    break (dx, dy);
                }
            };
            let dh = loop {
                let dh = noise.heading_sigma * normal(r);
                if libm::fabs(dh) <= 3.0 * noise.heading_sigma {
                    break dh;
                }
            };
            let p = gt[i].pose;
            out.push(PersonObservation {
                pose: Pose2D::new(p.x + dx, p.y + dy, p.heading + dh),
                source: ObservationSource::CameraDetector,
            });
        }
        out
    }

    /// A sweep with range noise and quantization, as recorded.
    pub fn sense(&mut self, id: SensorId) -> (RawScan, Vec<Option<Hit>>) {
        let sensor = self.config.rig.sensor(id).clone();
        let (mut scan, hits) = raycast(&self.config, &self.state, id, &sensor);
        let (sigma, q) = (self.config.range_noise, self.config.range_quantum);
        for r in scan.ranges.iter_mut().filter(|r| r.is_finite()) {
            let mut v = *r + sigma * normal(&mut self.sensor_rng);
            if q > 0.0 {
                v = libm::round(v / q) * q;
            }
            *r = v.clamp(sensor.d_min, sensor.d_max);
        }
        (scan, hits)
    }
}

/// Streams the records of an episode, one per substep with any sensor output.
pub struct EpisodeGenerator {
    world: World,
    substep: u64,
    total: u64,
    last_hits: [Vec<usize>; 2],
}

impl EpisodeGenerator {
    pub fn new(config: WorldConfig, duration: f64) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::Config("duration must be positive".into()));
        }
        let total = libm::round(duration * SUBSTEP_RATE) as u64;
        let world = World::new(config)?;
        let humans = world.state.humans.len();
        Ok(Self { world, substep: 0, total, last_hits: [alloc::vec![0; humans], alloc::vec![0; humans]] })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    fn count_hits(&self, hits: &[Option<Hit>]) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.world.state.humans.len()];
        for h in hits.iter().flatten() {
            if let Hit::Leg { human, .. } = h {
                counts[*human] += 1;
            }
        }
        counts
    }
}

impl Iterator for EpisodeGenerator {
    type Item = EpisodeRecord;

    fn next(&mut self) -> Option<EpisodeRecord> {
        while self.substep < self.total {
            let k = self.substep;
            self.substep += 1;
            let front = k % FRONT_EVERY == 0;
            let back = k % TICK_EVERY == 1;
            let tick = k % TICK_EVERY == 2;
            if !(front || back || tick) {
                self.world.step(1.0 / SUBSTEP_RATE);
                continue;
            }
            self.world.state.time = k as f64 / SUBSTEP_RATE;
            let mut record = EpisodeRecord {
                timestamp: self.world.state.time,
                odometry: self.world.state.odometry,
                front_scan: None,
                back_scan: None,
                camera: None,
                ground_truth: None,
            };
            if front {
                let (scan, hits) = self.world.sense(SensorId::Front);
                self.last_hits[0] = self.count_hits(&hits);
                record.front_scan = Some(scan);
            }
            if back {
                let (scan, hits) = self.world.sense(SensorId::Back);
                self.last_hits[1] = self.count_hits(&hits);
                record.back_scan = Some(scan);
            }
            if tick {
                let head_pan = self.world.state.head_pan;
                let detections = self.world.camera_detect();
                record.camera = Some(CameraFrame { head_pan, detections });
                let gt = self.world.ground_truth();
                record.ground_truth = Some(
                    gt.into_iter()
                        .enumerate()
                        .map(|(i, p)| GroundTruthPerson { pose: p.pose, lidar_hits: self.last_hits[0][i] + self.last_hits[1][i] })
                        .collect(),
                );
            }
            self.world.step(1.0 / SUBSTEP_RATE);
            return Some(record);
        }
        None
    }
}

/// Simulates `duration` seconds of `config` into an in-memory episode.
pub fn generate_episode(config: &WorldConfig, environment: &str, duration: f64) -> Result<Episode> {
    let header = EpisodeHeader::new(environment, config, duration);
    let records = EpisodeGenerator::new(config.clone(), duration)?.collect();
    Ok(Episode { header, records })
}
