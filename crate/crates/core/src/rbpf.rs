//! Rao-Blackwellized particle filter SLAM.
//!
//! Every particle carries a pose hypothesis and its own occupancy grid. An
//! update predicts with a constant-velocity surrogate for odometry (the last
//! estimate-to-estimate delta), refines each particle with a few
//! Gauss-Newton steps against its own map, reweights by scan likelihood,
//! resamples only when the effective sample size collapses, and finally
//! inserts the scan into every particle's map.
//!
//! The filter only runs on every `cadence`-th scan and holds its estimate in
//! between, so its output trails the platform by design.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::{Pose2, Trajectory};
use crate::gridmap::{MapPyramid, OccupancyGrid};
use crate::hector::{mean_residual, refine_on_grid, MatchConfig};
use crate::scan::LaserScan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionNoise {
    /// Translational standard deviation per meter (and radian) of motion.
    pub sigma_xy: f64,
    /// Rotational standard deviation per meter (and radian) of motion.
    pub sigma_yaw: f64,
}

impl Default for MotionNoise {
    fn default() -> Self {
        Self { sigma_xy: 0.05, sigma_yaw: 2f64.to_radians() }
    }
}

impl MotionNoise {
    pub const NONE: MotionNoise = MotionNoise { sigma_xy: 0.0, sigma_yaw: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbpfConfig {
    pub particles: usize,
    pub resolution: f64,
    pub extent: f64,
    /// Pyramid depth of each particle's map; refinement runs coarse to fine.
    pub levels: usize,
    pub noise: MotionNoise,
    /// Sharpness of the scan likelihood `exp(-β · mean residual²)`.
    pub beta: f64,
    pub refine_iterations: usize,
    /// Resample when `n_eff < threshold · particles`.
    pub resample_threshold: f64,
    /// Run the filter on every k-th scan.
    pub cadence: usize,
    pub seed: u64,
    pub matcher: MatchConfig,
}

impl Default for RbpfConfig {
    fn default() -> Self {
        Self {
            particles: 30,
            resolution: 0.10,
            extent: crate::gridmap::DEFAULT_EXTENT,
            levels: 3,
            noise: MotionNoise::default(),
            beta: 50.0,
            refine_iterations: 3,
            resample_threshold: 0.5,
            cadence: 3,
            seed: 0,
            matcher: MatchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub pose: Pose2,
    pub weight: f64,
    pub map: MapPyramid,
    pub history: Trajectory<Pose2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub n_eff: f64,
}

/// `1 / Σ wᵢ²` for normalized weights.
pub fn n_eff(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().map(|w| w * w).sum();
    if s > 0.0 {
        1.0 / s
    } else {
        0.0
    }
}

/// Noise generator for particle `index` at update `step`: independent of the
/// order in which particles are processed.
fn particle_rng(seed: u64, step: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index as u64);
    rng
}

impl ParticleSet {
    /// `count` identical particles at `start` with empty maps.
    pub fn new(count: usize, start: Pose2, map: MapPyramid) -> Self {
        let w = 1.0 / count as f64;
        let particles = (0..count)
            .map(|_| Particle { pose: start, weight: w, map: map.clone(), history: Trajectory::new() })
            .collect();
        Self { particles, n_eff: count as f64 }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    fn normalize(&mut self) -> bool {
        let sum: f64 = self.particles.iter().map(|p| p.weight).sum();
        let degenerate = !(sum > 0.0 && sum.is_finite());
        let n = self.particles.len() as f64;
        for p in &mut self.particles {
            p.weight = if degenerate { 1.0 / n } else { p.weight / sum };
        }
        self.n_eff = n_eff(&self.weights()).clamp(1.0, n);
        degenerate
    }

    /// Move every particle by `motion` (robot frame) plus Gaussian noise whose
    /// spread grows with the size of the motion.
    pub fn predict(&mut self, motion: &Pose2, noise: &MotionNoise, seed: u64, step: u64) {
        let scale = motion.translation_norm() + motion.yaw.abs();
        let sxy = noise.sigma_xy * scale;
        let syaw = noise.sigma_yaw * scale;
        self.particles.par_iter_mut().enumerate().for_each(|(i, p)| {
            let mut moved = p.pose.compose(motion);
            if sxy > 0.0 || syaw > 0.0 {
                let mut rng = particle_rng(seed, step, i);
                let nxy = Normal::new(0.0, sxy.max(f64::MIN_POSITIVE)).expect("finite sigma");
                let nyaw = Normal::new(0.0, syaw.max(f64::MIN_POSITIVE)).expect("finite sigma");
                moved = Pose2::new(
                    moved.x + nxy.sample(&mut rng),
                    moved.y + nxy.sample(&mut rng),
                    moved.yaw + nyaw.sample(&mut rng),
                );
            }
            p.pose = moved;
        });
    }

    /// Refine each pose against its own map, then reweight by scan
    /// likelihood. Returns true if every weight vanished and the set was
    /// reset to uniform.
    pub fn refine_and_weight(&mut self, scan: &LaserScan, cfg: &RbpfConfig) -> bool {
        let points = scan.local_points();
        if points.len() >= cfg.matcher.min_valid_beams {
            self.particles.par_iter_mut().for_each(|p| {
                // Coarse levels widen the basin but can also pull a good
                // prediction off; keep whichever end point fits the fine map.
                let fine = p.map.finest();
                let (direct, d) = refine_on_grid(fine, &points, p.pose, &cfg.matcher, cfg.refine_iterations);
                let mut pose = p.pose;
                for level in (0..p.map.len()).rev() {
                    pose = refine_on_grid(p.map.level(level), &points, pose, &cfg.matcher, cfg.refine_iterations).0;
                }
                let r = mean_residual(fine, &points, &pose);
                let (pose, r) = if d.residual <= r { (direct, d.residual) } else { (pose, r) };
                p.pose = pose;
                p.weight *= (-cfg.beta * r).exp();
            });
        }
        self.normalize()
    }

    /// Systematic resampling when `n_eff` drops below `threshold · count`.
    /// Returns whether resampling happened.
    pub fn adaptive_resample(&mut self, threshold: f64, rng: &mut impl Rng) -> bool {
        let n = self.particles.len();
        if n == 0 || self.n_eff >= threshold * n as f64 {
            return false;
        }
        let step = 1.0 / n as f64;
        let start = rng.random::<f64>() * step;
        let mut picks = Vec::with_capacity(n);
        let mut cumulative = self.particles[0].weight;
        let mut i = 0;
        for k in 0..n {
            let u = start + k as f64 * step;
            while u > cumulative && i + 1 < n {
                i += 1;
                cumulative += self.particles[i].weight;
            }
            picks.push(i);
        }
        self.particles = picks.into_iter().map(|i| Particle { weight: step, ..self.particles[i].clone() }).collect();
        self.n_eff = n as f64;
        true
    }

    /// Pose of the heaviest particle; ties go to the lowest index.
    pub fn estimate(&self) -> Pose2 {
        let mut best = 0;
        for (i, p) in self.particles.iter().enumerate() {
            if p.weight > self.particles[best].weight {
                best = i;
            }
        }
        self.particles[best].pose
    }

    pub fn best_index(&self) -> usize {
        let est = self.estimate();
        self.particles.iter().position(|p| p.pose == est).unwrap_or(0)
    }

    pub fn insert_scan(&mut self, scan: &LaserScan) {
        self.particles.par_iter_mut().for_each(|p| {
            p.map.update(&p.pose, scan);
            let _ = p.history.push(scan.timestamp, p.pose);
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub updates: usize,
    pub resamples: usize,
    pub degenerate_resets: usize,
    pub last_n_eff: f64,
}

/// Filter driver implementing the scan cadence and motion surrogate.
#[derive(Debug, Clone)]
pub struct Rbpf {
    cfg: RbpfConfig,
    set: ParticleSet,
    scans_seen: usize,
    estimate: Pose2,
    previous_estimate: Pose2,
    resample_rng: ChaCha8Rng,
    stats: UpdateStats,
}

impl Rbpf {
    pub fn new(cfg: RbpfConfig, start: Pose2) -> Result<Self> {
        let map = MapPyramid::new(cfg.resolution, cfg.extent, &start, cfg.levels)?;
        Ok(Self {
            set: ParticleSet::new(cfg.particles, start, map),
            resample_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d),
            cfg,
            scans_seen: 0,
            estimate: start,
            previous_estimate: start,
            stats: UpdateStats::default(),
        })
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.set
    }

    pub fn stats(&self) -> &UpdateStats {
        &self.stats
    }

    pub fn config(&self) -> &RbpfConfig {
        &self.cfg
    }

    /// Map of the current best particle.
    pub fn best_map(&self) -> &OccupancyGrid {
        self.set.particles[self.set.best_index()].map.finest()
    }

    pub fn estimate(&self) -> Pose2 {
        self.estimate
    }

    /// Feed one scan; returns the (possibly held) estimate.
    pub fn process_scan(&mut self, scan: &LaserScan) -> Pose2 {
        let k = self.scans_seen;
        self.scans_seen += 1;
        if !k.is_multiple_of(self.cfg.cadence.max(1)) {
            return self.estimate;
        }
        if self.stats.updates == 0 {
            if scan.valid_count() > 0 {
                self.set.insert_scan(scan);
                self.stats.updates = 1;
            }
            return self.estimate;
        }
        let motion = self.previous_estimate.between(&self.estimate);
        let step = self.stats.updates as u64;
        self.set.predict(&motion, &self.cfg.noise, self.cfg.seed, step);
        if self.set.refine_and_weight(scan, &self.cfg) {
            self.stats.degenerate_resets += 1;
        }
        self.stats.last_n_eff = self.set.n_eff;
        if self.set.adaptive_resample(self.cfg.resample_threshold, &mut self.resample_rng) {
            self.stats.resamples += 1;
        }
        self.set.insert_scan(scan);
        self.previous_estimate = self.estimate;
        self.estimate = self.set.estimate();
        self.stats.updates += 1;
        self.estimate
    }
}
