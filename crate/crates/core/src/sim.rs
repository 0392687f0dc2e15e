//! Deterministic synthetic data: wall worlds, the two reference trajectory
//! families, and lidar / IMU / altimeter sensor models.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Pose2, Pose3, Trajectory};
use crate::scan::LaserScan;

pub const TRUTH_RATE_HZ: f64 = 240.0;
pub const SCAN_RATE_HZ: f64 = 10.0;
pub const IMU_RATE_HZ: f64 = 100.0;
pub const ALT_RATE_HZ: f64 = 100.0;

pub const LIDAR_RANGE_MIN: f64 = 0.15;
pub const LIDAR_RANGE_MAX: f64 = 12.0;
pub const ALTIMETER_MIN: f64 = 0.30;
pub const ALTIMETER_MAX: f64 = 12.0;
pub const ALTIMETER_OFFSET: f64 = 0.08;

pub const NOMINAL_SPEED: f64 = 1.0;
pub const FAST_SPEED: f64 = 2.0;

/// Round to the microsecond so timestamps survive a text round trip exactly.
pub fn quantize_time(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Self { a, b }
    }

    /// Distance along the ray `origin + t·dir` to this segment, if hit.
    fn intersect(&self, origin: [f64; 2], dir: [f64; 2]) -> Option<f64> {
        let e = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let denom = dir[0] * e[1] - dir[1] * e[0];
        if denom.abs() < 1e-12 {
            return None;
        }
        let w = [self.a[0] - origin[0], self.a[1] - origin[1]];
        let t = (w[0] * e[1] - w[1] * e[0]) / denom;
        let u = (w[0] * dir[1] - w[1] * dir[0]) / denom;
        (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
    }

    fn distance_to(&self, p: [f64; 2]) -> f64 {
        let e = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let len2 = e[0] * e[0] + e[1] * e[1];
        let s = if len2 > 0.0 {
            (((p[0] - self.a[0]) * e[0] + (p[1] - self.a[1]) * e[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p[0] - self.a[0] - s * e[0]).hypot(p[1] - self.a[1] - s * e[1])
    }
}

/// Closed set of wall segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub name: String,
    pub segments: Vec<Segment>,
}

/// Sensor positions closer than this to a wall count as inside it.
const WALL_HALF_THICKNESS: f64 = 1e-3;

fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Segment> {
    vec![
        Segment::new([x0, y0], [x1, y0]),
        Segment::new([x1, y0], [x1, y1]),
        Segment::new([x1, y1], [x0, y1]),
        Segment::new([x0, y1], [x0, y0]),
    ]
}

impl World {
    pub fn new(name: impl Into<String>, segments: Vec<Segment>) -> Result<Self> {
        if segments.len() < 3 {
            return Err(Error::InvalidArgument(format!("a world needs at least 3 segments, got {}", segments.len())));
        }
        Ok(Self { name: name.into(), segments })
    }

    /// 6 m × 6 m square room centered on the origin.
    pub fn lab() -> Self {
        Self { name: "lab".into(), segments: rectangle(-3.0, -3.0, 3.0, 3.0) }
    }

    /// 30 m × 6 m corridor along x, closed at both ends, centered on the origin.
    pub fn tunnel() -> Self {
        Self { name: "tunnel".into(), segments: rectangle(-15.0, -3.0, 15.0, 3.0) }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "lab" => Some(Self::lab()),
            "tunnel" => Some(Self::tunnel()),
            _ => None,
        }
    }

    /// Load `{"name": ..., "segments": [{"a": [x, y], "b": [x, y]}, ...]}`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let world: World =
            serde_json::from_str(&text).map_err(|e| Error::data(path.display(), e.line(), e.to_string()))?;
        Self::new(world.name, world.segments)
    }

    pub fn distance_to_nearest_wall(&self, p: [f64; 2]) -> f64 {
        self.segments.iter().map(|s| s.distance_to(p)).fold(f64::INFINITY, f64::min)
    }

    /// Nearest intersection along the ray, ignoring sensor limits.
    pub fn trace(&self, origin: [f64; 2], direction: f64) -> Option<f64> {
        let dir = [direction.cos(), direction.sin()];
        self.segments
            .iter()
            .filter_map(|s| s.intersect(origin, dir))
            .fold(None, |best, t| Some(best.map_or(t, |b: f64| b.min(t))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RayResult {
    Hit(f64),
    /// Nothing within `range_max`.
    NoHit,
    /// Closer than `range_min`.
    TooClose(f64),
}

pub fn ray_cast(world: &World, origin: [f64; 2], direction: f64, range_min: f64, range_max: f64) -> RayResult {
    match world.trace(origin, direction) {
        Some(d) if d > range_max => RayResult::NoHit,
        Some(d) if d < range_min => RayResult::TooClose(d),
        Some(d) => RayResult::Hit(d),
        None => RayResult::NoHit,
    }
}

/// Planar scanner model; defaults follow the RPLidar A1 datasheet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub beams: usize,
    pub angle_min: f64,
    pub range_min: f64,
    pub range_max: f64,
    /// Standard deviation of additive Gaussian range noise.
    pub sigma: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self { beams: 360, angle_min: 0.0, range_min: LIDAR_RANGE_MIN, range_max: LIDAR_RANGE_MAX, sigma: 0.02 }
    }
}

impl ScanParams {
    pub fn angle_increment(&self) -> f64 {
        TAU / self.beams as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScan {
    pub scan: LaserScan,
    /// The sensor sat inside a wall; every beam is invalid.
    pub degenerate: bool,
}

/// Simulate one 360° sweep from `pose`. Noise draws come from `rng`, so the
/// output is a pure function of its inputs and the generator state.
pub fn generate_scan(world: &World, pose: &Pose2, t: f64, params: &ScanParams, rng: &mut ChaCha8Rng) -> GeneratedScan {
    let inc = params.angle_increment();
    let n = params.beams;
    let origin = [pose.x, pose.y];
    if world.distance_to_nearest_wall(origin) < WALL_HALF_THICKNESS {
        return GeneratedScan {
            scan: LaserScan {
                timestamp: t,
                angle_min: params.angle_min,
                angle_increment: inc,
                range_min: params.range_min,
                range_max: params.range_max,
                ranges: vec![0.0; n],
                valid: vec![false; n],
            },
            degenerate: true,
        };
    }
    let noise = (params.sigma > 0.0).then(|| Normal::new(0.0, params.sigma).expect("finite sigma"));
    let mut ranges = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let angle = pose.yaw + params.angle_min + inc * i as f64;
        match ray_cast(world, origin, angle, params.range_min, params.range_max) {
            RayResult::Hit(d) => {
                let r = match &noise {
                    Some(dist) => d + dist.sample(rng),
                    None => d,
                };
                let ok = r >= params.range_min && r <= params.range_max;
                ranges.push(if ok { r } else { 0.0 });
                valid.push(ok);
            }
            RayResult::NoHit | RayResult::TooClose(_) => {
                ranges.push(0.0);
                valid.push(false);
            }
        }
    }
    GeneratedScan {
        scan: LaserScan {
            timestamp: t,
            angle_min: params.angle_min,
            angle_increment: inc,
            range_min: params.range_min,
            range_max: params.range_max,
            ranges,
            valid,
        },
        degenerate: false,
    }
}

/// Continuous closed paths parameterized by arc length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PathShape {
    /// Axis-aligned `length × width` rectangle whose bottom edge is centered
    /// on the origin: straight out along +x, then counter-clockwise around
    /// the rectangle and back along the bottom edge. Heading stays at 0.
    Rectangle { length: f64, width: f64 },
    /// Two tangent circles meeting at the origin, centers at `(0, ±r)`; the
    /// upper loop runs counter-clockwise, the lower one clockwise, both
    /// leaving the origin heading +x. Heading follows the velocity.
    Figure8 { radius: f64 },
}

impl PathShape {
    pub const DEFAULT_RECTANGLE: PathShape = PathShape::Rectangle { length: 4.0, width: 2.0 };
    pub const DEFAULT_FIGURE8: PathShape = PathShape::Figure8 { radius: 1.25 };

    pub fn length(&self) -> f64 {
        match *self {
            PathShape::Rectangle { length, width } => 2.0 * (length + width),
            PathShape::Figure8 { radius } => 4.0 * PI * radius,
        }
    }

    /// Pose and planar velocity direction at arc length `s`.
    pub fn pose_at(&self, s: f64) -> Pose2 {
        let s = s.clamp(0.0, self.length());
        match *self {
            PathShape::Rectangle { length, width } => {
                let half = length / 2.0;
                // Legs: origin → (half,0) → (half,w) → (-half,w) → (-half,0) → origin.
                let legs = [
                    ([0.0, 0.0], [half, 0.0]),
                    ([half, 0.0], [half, width]),
                    ([half, width], [-half, width]),
                    ([-half, width], [-half, 0.0]),
                    ([-half, 0.0], [0.0, 0.0]),
                ];
                let mut rem = s;
                for (k, (a, b)) in legs.iter().enumerate() {
                    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                    if rem <= len || k == legs.len() - 1 {
                        let f = if len > 0.0 { (rem / len).min(1.0) } else { 0.0 };
                        return Pose2::new(a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), 0.0);
                    }
                    rem -= len;
                }
                unreachable!()
            }
            PathShape::Figure8 { radius } => {
                let circ = TAU * radius;
                if s <= circ {
                    // Counter-clockwise about (0, r), leaving the origin heading +x.
                    let phi = s / radius;
                    Pose2::new(radius * phi.sin(), radius - radius * phi.cos(), phi)
                } else {
                    // Clockwise about (0, -r), again leaving the origin heading +x.
                    let phi = (s - circ) / radius;
                    Pose2::new(radius * phi.sin(), -radius + radius * phi.cos(), -phi)
                }
            }
        }
    }

    /// Sample the path at `speed` on the `rate_hz` clock, appending the exact
    /// end point when the clock does not land on it.
    pub fn sample(&self, speed: f64, rate_hz: f64) -> Result<Trajectory<Pose2>> {
        if !(speed > 0.0) {
            return Err(Error::InvalidArgument(format!("speed must be positive, got {speed}")));
        }
        match *self {
            PathShape::Rectangle { length, width } if !(length > 0.0 && width > 0.0) => {
                return Err(Error::InvalidArgument("rectangle dimensions must be positive".into()))
            }
            PathShape::Figure8 { radius } if !(radius > 0.0) => {
                return Err(Error::InvalidArgument("figure-8 radius must be positive".into()))
            }
            _ => {}
        }
        let duration = self.length() / speed;
        let mut traj = Trajectory::new();
        let n = (duration * rate_hz).floor() as usize;
        for i in 0..=n {
            let t = quantize_time(i as f64 / rate_hz);
            if t > duration {
                break;
            }
            traj.push(t, self.pose_at(t * speed))?;
        }
        let end = quantize_time(duration);
        if traj.last().is_some_and(|l| end > l.t) {
            traj.push(end, self.pose_at(self.length()))?;
        }
        Ok(traj)
    }
}

pub fn rectangle_trajectory(speed: f64, length: f64, width: f64) -> Result<Trajectory<Pose2>> {
    PathShape::Rectangle { length, width }.sample(speed, TRUTH_RATE_HZ)
}

pub fn figure8_trajectory(speed: f64, radius: f64) -> Result<Trajectory<Pose2>> {
    PathShape::Figure8 { radius }.sample(speed, TRUTH_RATE_HZ)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub timestamp: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AltSample {
    pub timestamp: f64,
    pub range: f64,
    pub valid: bool,
    /// The true slant range was below the sensor minimum and got clamped.
    pub saturated: bool,
}

/// Downward rangefinder mounted `ALTIMETER_OFFSET` below the vehicle
/// reference. Out-of-range readings above the maximum are invalid; readings
/// below the minimum saturate at the minimum.
pub fn sample_altimeter(t: f64, true_altitude: f64, roll: f64, pitch: f64, noise: f64) -> AltSample {
    let slant = (true_altitude - ALTIMETER_OFFSET) / (roll.cos() * pitch.cos()) + noise;
    if !slant.is_finite() || slant > ALTIMETER_MAX {
        return AltSample { timestamp: t, range: 0.0, valid: false, saturated: false };
    }
    if slant < ALTIMETER_MIN {
        return AltSample { timestamp: t, range: ALTIMETER_MIN, valid: true, saturated: true };
    }
    AltSample { timestamp: t, range: slant, valid: true, saturated: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Keep,
    Drop,
    /// No attitude sample close enough in time; the scan is kept.
    KeepUnsynced,
}

impl GateDecision {
    pub fn keep(self) -> bool {
        self != GateDecision::Drop
    }
}

/// Reject scans taken while the platform is tilted beyond `threshold`.
pub fn gate_scan(scan: &LaserScan, imu: Option<&ImuSample>, threshold: f64, tolerance: f64) -> GateDecision {
    match imu {
        Some(s) if (s.timestamp - scan.timestamp).abs() <= tolerance => {
            if s.roll.abs() > threshold || s.pitch.abs() > threshold {
                GateDecision::Drop
            } else {
                GateDecision::Keep
            }
        }
        _ => GateDecision::KeepUnsynced,
    }
}

/// The four reference runs: two path families at two speeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    RectNominal,
    RectFast,
    Fig8Nominal,
    Fig8Fast,
}

impl Scenario {
    pub const ALL: [Scenario; 4] =
        [Scenario::RectNominal, Scenario::Fig8Nominal, Scenario::RectFast, Scenario::Fig8Fast];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::RectNominal => "rect_nominal",
            Scenario::RectFast => "rect_fast",
            Scenario::Fig8Nominal => "fig8_nominal",
            Scenario::Fig8Fast => "fig8_fast",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn shape(&self) -> PathShape {
        match self {
            Scenario::RectNominal | Scenario::RectFast => PathShape::DEFAULT_RECTANGLE,
            Scenario::Fig8Nominal | Scenario::Fig8Fast => PathShape::DEFAULT_FIGURE8,
        }
    }

    pub fn speed(&self) -> f64 {
        match self {
            Scenario::RectNominal | Scenario::Fig8Nominal => NOMINAL_SPEED,
            Scenario::RectFast | Scenario::Fig8Fast => FAST_SPEED,
        }
    }
}

/// Everything that determines a simulated record.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub name: String,
    pub shape: PathShape,
    pub speed: f64,
    pub world: World,
    pub seed: u64,
    pub scan: ScanParams,
    /// Flight altitude of the vehicle reference point.
    pub altitude: f64,
    /// Peak roll/pitch of the slow attitude wobble.
    pub tilt_amplitude: f64,
    pub altimeter_sigma: f64,
    pub imu_sigma: f64,
    /// Intervals `[start, end]` during which ground truth repeats its last
    /// value, as when the motion-capture link drops out.
    pub truth_gaps: Vec<(f64, f64)>,
}

impl SimConfig {
    pub fn for_scenario(scenario: Scenario, world: World, seed: u64, sigma: f64) -> Self {
        Self {
            name: scenario.name().to_string(),
            shape: scenario.shape(),
            speed: scenario.speed(),
            world,
            seed,
            scan: ScanParams { sigma, ..ScanParams::default() },
            altitude: 1.0,
            tilt_amplitude: 3f64.to_radians(),
            altimeter_sigma: 0.01,
            imu_sigma: 0.2f64.to_radians(),
            truth_gaps: Vec::new(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.shape.length() / self.speed
    }

    fn stream_rng(&self, stream: u64) -> ChaCha8Rng {
        // FNV-1a of the name mixed with the seed; each sensor gets its own
        // ChaCha stream so adding samples to one never perturbs another.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        rng.set_stream(stream);
        rng
    }

    fn attitude(&self, t: f64) -> (f64, f64) {
        let a = self.tilt_amplitude;
        (a * (TAU * 0.23 * t).sin(), a * (TAU * 0.17 * t + 0.7).sin())
    }

    fn in_gap(&self, t: f64) -> bool {
        self.truth_gaps.iter().any(|(a, b)| t >= *a && t <= *b)
    }
}

/// Ground truth plus all timestamped sensor streams of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRecord {
    pub ground_truth: Trajectory<Pose3>,
    pub scans: Vec<LaserScan>,
    pub imu: Vec<ImuSample>,
    pub alt: Vec<AltSample>,
}

impl ScenarioRecord {
    /// Attitude sample nearest in time to `t`.
    pub fn nearest_imu(&self, t: f64) -> Option<&ImuSample> {
        nearest_by_time(&self.imu, t, |s| s.timestamp)
    }

    pub fn nearest_alt(&self, t: f64) -> Option<&AltSample> {
        nearest_by_time(&self.alt, t, |s| s.timestamp)
    }
}

pub(crate) fn nearest_by_time<T>(items: &[T], t: f64, key: impl Fn(&T) -> f64) -> Option<&T> {
    let idx = items.partition_point(|s| key(s) < t);
    let candidates = [idx.checked_sub(1), (idx < items.len()).then_some(idx)];
    candidates.into_iter().flatten().map(|i| &items[i]).min_by(|a, b| (key(a) - t).abs().total_cmp(&(key(b) - t).abs()))
}

fn clock(duration: f64, rate_hz: f64) -> impl Iterator<Item = f64> {
    let n = (duration * rate_hz + 1e-9).floor() as usize;
    (0..=n).map(move |i| quantize_time(i as f64 / rate_hz))
}

/// Run the simulator. Output is a pure function of `cfg`.
pub fn simulate(cfg: &SimConfig) -> Result<ScenarioRecord> {
    let path = cfg.shape.sample(cfg.speed, TRUTH_RATE_HZ)?;
    let start = path.first().map(|s| s.pose).unwrap_or_default();
    if cfg.world.distance_to_nearest_wall([start.x, start.y]) > cfg.scan.range_max {
        return Err(Error::Config(format!(
            "world '{}' has no wall within lidar range of the start pose",
            cfg.world.name
        )));
    }
    let duration = cfg.duration();
    let speed = cfg.speed;
    let pose_at = |t: f64| cfg.shape.pose_at(t * speed);

    let mut truth = Trajectory::new();
    let mut held: Option<Pose3> = None;
    for s in path.iter() {
        let (roll, pitch) = cfg.attitude(s.t);
        let actual = Pose3::new(s.pose.x, s.pose.y, cfg.altitude, roll, pitch, s.pose.yaw);
        let reported = match held {
            Some(h) if cfg.in_gap(s.t) => h,
            _ => actual,
        };
        held = Some(reported);
        truth.push(s.t, reported)?;
    }

    let mut scan_rng = cfg.stream_rng(1);
    let scans = clock(duration, SCAN_RATE_HZ)
        .map(|t| generate_scan(&cfg.world, &pose_at(t), t, &cfg.scan, &mut scan_rng).scan)
        .collect();

    let mut imu_rng = cfg.stream_rng(2);
    let imu_noise = Normal::new(0.0, cfg.imu_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let imu = clock(duration, IMU_RATE_HZ)
        .map(|t| {
            let (roll, pitch) = cfg.attitude(t);
            let yaw = pose_at(t).yaw;
            ImuSample {
                timestamp: t,
                roll: normalize_angle(roll + imu_noise.sample(&mut imu_rng)),
                pitch: normalize_angle(pitch + imu_noise.sample(&mut imu_rng)),
                yaw: normalize_angle(yaw + imu_noise.sample(&mut imu_rng)),
            }
        })
        .collect();

    let mut alt_rng = cfg.stream_rng(3);
    let alt_noise = Normal::new(0.0, cfg.altimeter_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let alt = clock(duration, ALT_RATE_HZ)
        .map(|t| {
            let (roll, pitch) = cfg.attitude(t);
            sample_altimeter(t, cfg.altitude, roll, pitch, alt_noise.sample(&mut alt_rng))
        })
        .collect();

    Ok(ScenarioRecord { ground_truth: truth, scans, imu, alt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::angular_diff;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn ray_cast_examples() {
        let lab = World::lab();
        assert_eq!(ray_cast(&lab, [0.0, 0.0], 0.0, 0.15, 12.0), RayResult::Hit(3.0));
        match ray_cast(&lab, [0.0, 0.0], PI / 4.0, 0.15, 12.0) {
            RayResult::Hit(d) => assert!((d - 3.0 * 2f64.sqrt()).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        match ray_cast(&lab, [2.9, 0.0], 0.0, 0.15, 12.0) {
            RayResult::TooClose(d) => assert!((d - 0.1).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        assert_eq!(ray_cast(&World::tunnel(), [0.0, 0.0], 0.0, 0.15, 12.0), RayResult::NoHit);
    }

    #[test]
    fn world_needs_three_segments() {
        assert!(World::new("x", rectangle(0.0, 0.0, 1.0, 1.0)[..2].to_vec()).is_err());
    }

    #[test]
    fn noiseless_scan_in_square_room() {
        let params = ScanParams { sigma: 0.0, ..Default::default() };
        let g = generate_scan(&World::lab(), &Pose2::IDENTITY, 0.0, &params, &mut rng());
        assert!(!g.degenerate);
        assert_eq!(g.scan.len(), 360);
        assert!((g.scan.ranges[0] - 3.0).abs() < 1e-12);
        for i in 0..360 {
            let j = (i + 90) % 360;
            assert!((g.scan.ranges[i] - g.scan.ranges[j]).abs() < 1e-9, "beam {i}");
        }
    }

    #[test]
    fn scan_rotation_permutes_beams() {
        let params = ScanParams { sigma: 0.0, ..Default::default() };
        let lab = World::lab();
        let a = generate_scan(&lab, &Pose2::new(0.4, -0.2, 0.0), 0.0, &params, &mut rng()).scan;
        let shift = 17;
        let b = generate_scan(
            &lab,
            &Pose2::new(0.4, -0.2, shift as f64 * params.angle_increment()),
            0.0,
            &params,
            &mut rng(),
        )
        .scan;
        for i in 0..360 {
            assert!((b.ranges[i] - a.ranges[(i + shift) % 360]).abs() < 1e-9);
        }
    }

    #[test]
    fn noisy_scan_is_deterministic() {
        let params = ScanParams::default();
        let a = generate_scan(&World::lab(), &Pose2::new(0.3, 0.2, 0.1), 1.0, &params, &mut rng());
        let b = generate_scan(&World::lab(), &Pose2::new(0.3, 0.2, 0.1), 1.0, &params, &mut rng());
        assert_eq!(a, b);
        let noiseless = generate_scan(
            &World::lab(),
            &Pose2::new(0.3, 0.2, 0.1),
            1.0,
            &ScanParams { sigma: 0.0, ..params },
            &mut rng(),
        );
        assert_ne!(a.scan.ranges, noiseless.scan.ranges);
    }

    #[test]
    fn scan_inside_wall_is_degenerate() {
        let g = generate_scan(&World::lab(), &Pose2::new(3.0, 0.0, 0.0), 0.0, &ScanParams::default(), &mut rng());
        assert!(g.degenerate);
        assert_eq!(g.scan.valid_count(), 0);
    }

    #[test]
    fn rectangle_examples() {
        let tr = rectangle_trajectory(1.0, 4.0, 2.0).unwrap();
        let first = tr.first().unwrap();
        let last = tr.last().unwrap();
        assert_eq!(first.t, 0.0);
        assert_eq!(first.pose, Pose2::IDENTITY);
        assert!(last.pose.translation_norm() < 1e-9 && last.pose.yaw == 0.0);
        assert!((last.t - 12.0).abs() < 1e-9);
        assert!(tr.iter().all(|s| s.pose.yaw == 0.0));
        assert!(rectangle_trajectory(0.0, 4.0, 2.0).is_err());
        // Ground truth clock.
        let dt = tr[1].t - tr[0].t;
        assert!((dt - 1.0 / 240.0).abs() < 1e-6);
    }

    #[test]
    fn figure8_is_closed_and_heading_follows_velocity() {
        let tr = figure8_trajectory(1.0, 1.25).unwrap();
        assert!(tr.first().unwrap().pose.translation_norm() < 1e-12);
        assert!(tr.last().unwrap().pose.translation_norm() < 1e-9);
        let shape = PathShape::Figure8 { radius: 1.25 };
        let h = 1e-6;
        for s in tr.iter().step_by(7) {
            let d = s.t;
            if d < h || d > shape.length() - h {
                continue;
            }
            let a = shape.pose_at(d - h);
            let b = shape.pose_at(d + h);
            let fd_yaw = (b.y - a.y).atan2(b.x - a.x);
            assert!(angular_diff(s.pose.yaw, fd_yaw).abs() < 1e-3, "at s={d}");
        }
    }

    #[test]
    fn trajectories_fit_the_lab() {
        let lab = World::lab();
        for shape in [PathShape::DEFAULT_RECTANGLE, PathShape::DEFAULT_FIGURE8] {
            let tr = shape.sample(1.0, 50.0).unwrap();
            for s in tr.iter() {
                assert!(lab.distance_to_nearest_wall([s.pose.x, s.pose.y]) >= 0.5 - 1e-9);
            }
        }
    }

    #[test]
    fn altimeter_examples() {
        let a = sample_altimeter(0.0, 1.08, 0.0, 0.0, 0.0);
        assert!((a.range - 1.0).abs() < 1e-12 && a.valid && !a.saturated);
        let a = sample_altimeter(0.0, 0.20, 0.0, 0.0, 0.0);
        assert_eq!(a.range, 0.30);
        assert!(a.saturated && a.valid);
        let a = sample_altimeter(0.0, 1.08, 60f64.to_radians(), 0.0, 0.0);
        assert!((a.range - 2.0).abs() < 1e-12);
        assert!(!sample_altimeter(0.0, 20.0, 0.0, 0.0, 0.0).valid);
    }

    #[test]
    fn gate_examples() {
        let scan = LaserScan::from_ranges(1.0, 0.0, 0.1, 0.15, 12.0, vec![1.0]);
        let deg = |d: f64| d.to_radians();
        let imu = |roll: f64| ImuSample { timestamp: 1.0, roll, pitch: 0.0, yaw: 0.0 };
        assert_eq!(gate_scan(&scan, Some(&imu(0.0)), deg(10.0), 0.1), GateDecision::Keep);
        assert_eq!(gate_scan(&scan, Some(&imu(deg(15.0))), deg(10.0), 0.1), GateDecision::Drop);
        assert_eq!(gate_scan(&scan, Some(&imu(deg(10.0))), deg(10.0), 0.1), GateDecision::Keep);
        let late = ImuSample { timestamp: 2.0, roll: deg(40.0), pitch: 0.0, yaw: 0.0 };
        assert_eq!(gate_scan(&scan, Some(&late), deg(10.0), 0.1), GateDecision::KeepUnsynced);
        assert_eq!(gate_scan(&scan, None, deg(10.0), 0.1), GateDecision::KeepUnsynced);
    }

    #[test]
    fn simulate_streams_and_determinism() {
        let cfg = SimConfig::for_scenario(Scenario::RectNominal, World::lab(), 1, 0.02);
        let rec = simulate(&cfg).unwrap();
        assert_eq!(rec, simulate(&cfg).unwrap());
        assert_eq!(rec.scans.len(), 121);
        for (i, s) in rec.scans.iter().enumerate() {
            assert!((s.timestamp - i as f64 * 0.1).abs() < 1e-9);
        }
        assert_eq!(rec.ground_truth.len(), 12 * 240 + 1);
        let other = simulate(&SimConfig { seed: 2, ..cfg.clone() }).unwrap();
        assert_ne!(rec.scans, other.scans);
        assert_eq!(rec.ground_truth, other.ground_truth);
    }

    #[test]
    fn truth_gaps_freeze_the_stream() {
        let mut cfg = SimConfig::for_scenario(Scenario::RectNominal, World::lab(), 1, 0.0);
        cfg.truth_gaps = vec![(2.0, 3.0)];
        let rec = simulate(&cfg).unwrap();
        let frozen: Vec<_> = rec.ground_truth.iter().filter(|s| s.t >= 2.0 && s.t <= 3.0).collect();
        assert!(frozen.windows(2).all(|w| w[0].pose == w[1].pose));
        let before = rec.ground_truth.interpolate_at(1.99).unwrap();
        assert!(before.x > 1.9);
    }

    #[test]
    fn fast_scenario_has_half_the_scans() {
        let n = simulate(&SimConfig::for_scenario(Scenario::Fig8Nominal, World::lab(), 3, 0.02)).unwrap().scans.len();
        let f = simulate(&SimConfig::for_scenario(Scenario::Fig8Fast, World::lab(), 3, 0.02)).unwrap().scans.len();
        assert!((n as i64 - 2 * f as i64).abs() <= 1, "{n} vs {f}");
    }

    #[test]
    fn nearest_lookup() {
        let xs = [0.0, 1.0, 2.0];
        assert_eq!(nearest_by_time(&xs, 1.4, |x| *x), Some(&1.0));
        assert_eq!(nearest_by_time(&xs, 1.6, |x| *x), Some(&2.0));
        assert_eq!(nearest_by_time(&xs, -5.0, |x| *x), Some(&0.0));
        assert_eq!(nearest_by_time::<f64>(&[], 0.0, |x| *x), None);
    }
}
