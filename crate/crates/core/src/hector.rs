//! Odometry-free scan-to-map matching over a multi-resolution grid pyramid.
//!
//! The matcher minimizes `Σ (1 - M(S_i(ξ)))²`, where `S_i(ξ)` is beam
//! endpoint `i` transformed by the pose `ξ` and `M` is the bilinearly
//! interpolated occupancy probability. Each Gauss-Newton step solves
//! `(H + λI) Δξ = Σ Jᵢᵀ (1 - M(S_i))` with `Jᵢ = ∇M · ∂S_i/∂ξ`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geom::{angular_diff, Pose2};
use crate::gridmap::{MapPyramid, OccupancyGrid};
use crate::scan::LaserScan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Gauss-Newton iterations per pyramid level.
    pub max_iterations: usize,
    pub lambda: f64,
    /// Step halvings tried before an uphill step ends the level.
    pub max_halvings: usize,
    pub converge_xy: f64,
    pub converge_yaw: f64,
    pub min_valid_beams: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            lambda: 1e-6,
            max_halvings: 5,
            converge_xy: 1e-3,
            converge_yaw: 0.057f64.to_radians(),
            min_valid_beams: 10,
        }
    }
}

/// One linearization of the objective around a pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    /// Additive increment `(dx, dy, dyaw)`.
    pub delta: Vector3<f64>,
    /// Mean squared residual at the linearization point.
    pub residual: f64,
    pub hessian: Matrix3<f64>,
    pub singular: bool,
}

/// Sum of squared residuals `1 - M` (not averaged) and the count.
fn residual_sum(grid: &OccupancyGrid, points: &[[f64; 2]], xi: &Pose2) -> f64 {
    let inv_res = 1.0 / grid.resolution();
    let to_map = grid.origin().inverse();
    points
        .iter()
        .map(|p| {
            let m = to_map.transform_point(xi.transform_point(*p));
            let r = 1.0 - grid.interpolate(m[0] * inv_res, m[1] * inv_res).value;
            r * r
        })
        .sum()
}

/// Mean squared residual of `points` (sensor frame) placed at `xi`.
pub fn mean_residual(grid: &OccupancyGrid, points: &[[f64; 2]], xi: &Pose2) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    residual_sum(grid, points, xi) / points.len() as f64
}

/// Per-endpoint residual `1 - M` and its row Jacobian `∂M/∂ξ`.
pub fn residuals_and_jacobians(grid: &OccupancyGrid, points: &[[f64; 2]], xi: &Pose2) -> Vec<(f64, [f64; 3])> {
    let inv_res = 1.0 / grid.resolution();
    let origin = grid.origin();
    let to_map = origin.inverse();
    let (so, co) = origin.yaw.sin_cos();
    let (s, c) = xi.yaw.sin_cos();
    points
        .iter()
        .map(|p| {
            let w = xi.transform_point(*p);
            let m = to_map.transform_point(w);
            let sample = grid.interpolate(m[0] * inv_res, m[1] * inv_res);
            // World-frame gradient: rotate the map gradient back, per meter.
            let gx = (co * sample.gradient[0] - so * sample.gradient[1]) * inv_res;
            let gy = (so * sample.gradient[0] + co * sample.gradient[1]) * inv_res;
            let dwx_dyaw = -s * p[0] - c * p[1];
            let dwy_dyaw = c * p[0] - s * p[1];
            (1.0 - sample.value, [gx, gy, gx * dwx_dyaw + gy * dwy_dyaw])
        })
        .collect()
}

pub(crate) fn gauss_newton_step_points(grid: &OccupancyGrid, points: &[[f64; 2]], xi: &Pose2, lambda: f64) -> Step {
    let mut h = Matrix3::zeros();
    let mut b = Vector3::zeros();
    let mut sum = 0.0;
    for (r, j) in residuals_and_jacobians(grid, points, xi) {
        let jv = Vector3::new(j[0], j[1], j[2]);
        h += jv * jv.transpose();
        b += jv * r;
        sum += r * r;
    }
    let residual = if points.is_empty() { 1.0 } else { sum / points.len() as f64 };
    let regularized = h + Matrix3::identity() * lambda;
    match regularized.cholesky() {
        Some(ch) => {
            let delta = ch.solve(&b);
            let singular = !delta.iter().all(|v| v.is_finite());
            Step { delta: if singular { Vector3::zeros() } else { delta }, residual, hessian: h, singular }
        }
        None => Step { delta: Vector3::zeros(), residual, hessian: h, singular: true },
    }
}

/// One Gauss-Newton linearization of the scan at `xi` against `grid`.
pub fn gauss_newton_step(grid: &OccupancyGrid, scan: &LaserScan, xi: &Pose2, lambda: f64) -> Step {
    gauss_newton_step_points(grid, &scan.local_points(), xi, lambda)
}

fn apply(xi: &Pose2, delta: &Vector3<f64>, scale: f64) -> Pose2 {
    Pose2::new(xi.x + delta[0] * scale, xi.y + delta[1] * scale, xi.yaw + delta[2] * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchDiagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Too few valid beams; the previous pose was returned.
    pub no_match: bool,
    pub singular: bool,
}

/// Damped Gauss-Newton at a single level. Residual never increases across
/// accepted iterations.
pub(crate) fn refine_on_grid(
    grid: &OccupancyGrid,
    points: &[[f64; 2]],
    start: Pose2,
    cfg: &MatchConfig,
    max_iterations: usize,
) -> (Pose2, MatchDiagnostics) {
    let mut xi = start;
    let n = points.len().max(1) as f64;
    let mut current = residual_sum(grid, points, &xi) / n;
    let mut diag = MatchDiagnostics { residual: current, ..Default::default() };
    for _ in 0..max_iterations {
        let step = gauss_newton_step_points(grid, points, &xi, cfg.lambda);
        diag.iterations += 1;
        if step.singular {
            diag.singular = true;
            break;
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let cand = apply(&xi, &step.delta, scale);
            let r = residual_sum(grid, points, &cand) / n;
            if r <= current {
                accepted = Some((cand, r));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, r)) = accepted else { break };
        let moved = [cand.x - xi.x, cand.y - xi.y, angular_diff(cand.yaw, xi.yaw)];
        xi = cand;
        current = r;
        if moved[0].abs() < cfg.converge_xy && moved[1].abs() < cfg.converge_xy && moved[2].abs() < cfg.converge_yaw {
            diag.converged = true;
            break;
        }
    }
    diag.residual = current;
    (xi, diag)
}

/// Coarse-to-fine match of `scan` against `pyramid`, starting from `init`.
pub fn match_scan(
    pyramid: &MapPyramid,
    scan: &LaserScan,
    init: &Pose2,
    cfg: &MatchConfig,
) -> (Pose2, MatchDiagnostics) {
    let points = scan.local_points();
    if points.len() < cfg.min_valid_beams || pyramid.is_empty() {
        return (*init, MatchDiagnostics { no_match: true, residual: 1.0, ..Default::default() });
    }
    let mut xi = *init;
    let mut total = MatchDiagnostics::default();
    for level in (0..pyramid.len()).rev() {
        let (next, diag) = refine_on_grid(pyramid.level(level), &points, xi, cfg, cfg.max_iterations);
        xi = next;
        total.iterations += diag.iterations;
        total.residual = diag.residual;
        total.converged = diag.converged;
        total.singular |= diag.singular;
    }
    (xi, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HectorConfig {
    pub matcher: MatchConfig,
    pub resolution: f64,
    pub extent: f64,
    pub levels: usize,
    /// Map updates are skipped while the pose stays this close to the last
    /// inserted one.
    pub update_min_translation: f64,
    pub update_min_rotation: f64,
}

impl Default for HectorConfig {
    fn default() -> Self {
        Self {
            matcher: MatchConfig::default(),
            resolution: crate::gridmap::DEFAULT_RESOLUTION,
            extent: crate::gridmap::DEFAULT_EXTENT,
            levels: crate::gridmap::DEFAULT_LEVELS,
            update_min_translation: 0.005,
            update_min_rotation: 0.2f64.to_radians(),
        }
    }
}

/// Scan-matching SLAM state: the map pyramid and the current pose.
#[derive(Debug, Clone)]
pub struct HectorState {
    cfg: HectorConfig,
    pyramid: MapPyramid,
    pose: Pose2,
    last_inserted: Option<Pose2>,
    last_match: MatchDiagnostics,
    scans_processed: usize,
}

impl HectorState {
    /// Empty map centered on `start`, which is also the first pose.
    pub fn new(cfg: HectorConfig, start: Pose2) -> Result<Self> {
        let pyramid = MapPyramid::new(cfg.resolution, cfg.extent, &start, cfg.levels)?;
        Ok(Self {
            cfg,
            pyramid,
            pose: start,
            last_inserted: None,
            last_match: MatchDiagnostics::default(),
            scans_processed: 0,
        })
    }

    pub fn with_pyramid(cfg: HectorConfig, pyramid: MapPyramid, pose: Pose2) -> Self {
        Self {
            cfg,
            pyramid,
            pose,
            last_inserted: Some(pose),
            last_match: MatchDiagnostics::default(),
            scans_processed: 1,
        }
    }

    pub fn pose(&self) -> Pose2 {
        self.pose
    }

    pub fn pyramid(&self) -> &MapPyramid {
        &self.pyramid
    }

    pub fn last_match(&self) -> &MatchDiagnostics {
        &self.last_match
    }

    pub fn config(&self) -> &HectorConfig {
        &self.cfg
    }

    /// Match against the current map from the current pose without updating
    /// anything.
    pub fn match_scan(&self, scan: &LaserScan) -> (Pose2, MatchDiagnostics) {
        match_scan(&self.pyramid, scan, &self.pose, &self.cfg.matcher)
    }

    /// Consume the next scan: the first one seeds the map, later ones are
    /// matched and then inserted unless the pose barely moved.
    pub fn process_scan(&mut self, scan: &LaserScan) -> Pose2 {
        self.scans_processed += 1;
        if self.last_inserted.is_none() {
            if scan.valid_count() == 0 {
                self.last_match = MatchDiagnostics { no_match: true, ..Default::default() };
                return self.pose;
            }
            self.pyramid.update(&self.pose, scan);
            self.last_inserted = Some(self.pose);
            self.last_match = MatchDiagnostics::default();
            return self.pose;
        }
        let (pose, diag) = self.match_scan(scan);
        self.last_match = diag;
        if diag.no_match {
            return self.pose;
        }
        self.pose = pose;
        let last = self.last_inserted.expect("seeded above");
        if pose.distance(&last) >= self.cfg.update_min_translation
            || angular_diff(pose.yaw, last.yaw).abs() >= self.cfg.update_min_rotation
        {
            self.pyramid.update(&pose, scan);
            self.last_inserted = Some(pose);
        }
        pose
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scan, ScanParams, World};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless() -> ScanParams {
        ScanParams { sigma: 0.0, ..Default::default() }
    }

    fn scan_at(world: &World, pose: &Pose2) -> LaserScan {
        generate_scan(world, pose, 0.0, &noiseless(), &mut ChaCha8Rng::seed_from_u64(0)).scan
    }

    fn lab_state(at: &Pose2) -> HectorState {
        let mut st = HectorState::new(HectorConfig::default(), Pose2::IDENTITY).unwrap();
        st.pyramid.update(at, &scan_at(&World::lab(), at));
        st.last_inserted = Some(*at);
        st.pose = *at;
        st
    }

    #[test]
    fn fixed_point_when_all_endpoints_saturated() {
        let mut g = OccupancyGrid::new(0.1, Pose2::IDENTITY, 40, 40).unwrap();
        for j in 0..40 {
            for i in 0..40 {
                g.set_log_odds(i, j, 4.0);
            }
        }
        // Fully-occupied neighbourhood: residual is the clamp floor, gradient zero.
        let pts: Vec<[f64; 2]> = (0..30).map(|k| [1.0 + 0.05 * k as f64, 1.5]).collect();
        let step = gauss_newton_step_points(&g, &pts, &Pose2::IDENTITY, 1e-6);
        assert!(step.delta.norm() < 1e-12);
        assert!(step.residual < 4e-4);
    }

    #[test]
    fn ramp_in_x_moves_only_x() {
        let mut g = OccupancyGrid::new(0.1, Pose2::IDENTITY, 40, 40).unwrap();
        for j in 0..40 {
            for i in 0..40 {
                g.set_log_odds(i, j, (i as f64 - 20.0) * 0.15);
            }
        }
        // Endpoints symmetric about the sensor in y so the yaw lever arm cancels.
        let pts = vec![[0.0, -0.7], [0.0, 0.7], [0.0, -0.3], [0.0, 0.3]];
        let xi = Pose2::new(2.0, 2.0, 0.0);
        let step = gauss_newton_step_points(&g, &pts, &xi, 1e-6);
        assert!(step.delta[0] > 0.0);
        assert!(step.delta[1].abs() < 1e-9);
        assert!(step.delta[2].abs() < 1e-9);
    }

    /// Gauss-Newton Hessian against `JᵀJ` with a central-difference Jacobian.
    #[test]
    fn hessian_matches_finite_difference_jacobian() {
        let world = World::lab();
        let truth = Pose2::new(0.3, -0.2, 0.2);
        let mut g = OccupancyGrid::centered(0.05, 8.0, &Pose2::IDENTITY).unwrap();
        g.insert_scan(&truth, &scan_at(&world, &truth));
        g.insert_scan(&Pose2::new(0.1, 0.1, 0.0), &scan_at(&world, &Pose2::new(0.1, 0.1, 0.0)));
        let pts = scan_at(&world, &truth).local_points();
        let xi = Pose2::new(0.3123, -0.2071, 0.2034);
        let step = gauss_newton_step_points(&g, &pts, &xi, 0.0);
        let h = 1e-6;
        let mut fd = Matrix3::<f64>::zeros();
        for p in &pts {
            let r = |pose: Pose2| {
                let m = g.origin().inverse().transform_point(pose.transform_point(*p));
                g.interpolate(m[0] / 0.05, m[1] / 0.05).value
            };
            let j = Vector3::new(
                (r(Pose2 { x: xi.x + h, ..xi }) - r(Pose2 { x: xi.x - h, ..xi })) / (2.0 * h),
                (r(Pose2 { y: xi.y + h, ..xi }) - r(Pose2 { y: xi.y - h, ..xi })) / (2.0 * h),
                (r(Pose2 { yaw: xi.yaw + h, ..xi }) - r(Pose2 { yaw: xi.yaw - h, ..xi })) / (2.0 * h),
            );
            fd += j * j.transpose();
        }
        let rel = (step.hessian - fd).norm() / fd.norm();
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn zero_offset_recovery() {
        let at = Pose2::new(0.2, 0.1, 0.05);
        let st = lab_state(&at);
        let (pose, diag) = st.match_scan(&scan_at(&World::lab(), &at));
        assert!(!diag.no_match);
        assert!(pose.distance(&at) < 1e-3, "{pose:?}");
        assert!(angular_diff(pose.yaw, at.yaw).abs() < 0.06f64.to_radians());
    }

    #[test]
    fn small_translation_recovered() {
        let st = lab_state(&Pose2::IDENTITY);
        let truth = Pose2::new(0.05, 0.0, 0.0);
        let (pose, _) = st.match_scan(&scan_at(&World::lab(), &truth));
        assert!(pose.distance(&truth) < 0.01, "{pose:?}");
    }

    #[test]
    fn too_few_beams_is_no_match() {
        let st = lab_state(&Pose2::IDENTITY);
        let mut scan = scan_at(&World::lab(), &Pose2::IDENTITY);
        for v in scan.valid.iter_mut().skip(5) {
            *v = false;
        }
        let (pose, diag) = st.match_scan(&scan);
        assert!(diag.no_match);
        assert_eq!(pose, st.pose());
    }

    #[test]
    fn residual_never_increases() {
        let world = World::lab();
        let st = lab_state(&Pose2::IDENTITY);
        let pts = scan_at(&world, &Pose2::new(0.12, -0.08, 0.06)).local_points();
        let grid = st.pyramid().finest();
        let cfg = MatchConfig::default();
        let mut xi = Pose2::IDENTITY;
        let mut last = mean_residual(grid, &pts, &xi);
        for _ in 0..8 {
            let (next, diag) = refine_on_grid(grid, &pts, xi, &cfg, 1);
            assert!(diag.residual <= last + 1e-15);
            last = diag.residual;
            xi = next;
        }
    }

    #[test]
    fn first_scan_initializes_at_start() {
        let mut st = HectorState::new(HectorConfig::default(), Pose2::IDENTITY).unwrap();
        let pose = st.process_scan(&scan_at(&World::lab(), &Pose2::IDENTITY));
        assert_eq!(pose, Pose2::IDENTITY);
        assert!(!st.pyramid().finest().is_uniform());
    }

    #[test]
    fn stationary_sensor_stays_put() {
        let world = World::lab();
        let mut st = HectorState::new(HectorConfig::default(), Pose2::IDENTITY).unwrap();
        let scan = scan_at(&world, &Pose2::IDENTITY);
        let mut pose = Pose2::IDENTITY;
        for _ in 0..100 {
            pose = st.process_scan(&scan);
        }
        assert!(pose.translation_norm() < 1e-3);
        assert!(pose.yaw.abs() < 0.06f64.to_radians());
    }

    #[test]
    fn translation_equivariance() {
        let world = World::lab();
        let cfg = HectorConfig::default();
        let truth = Pose2::new(0.07, -0.04, 0.03);
        let scan = scan_at(&world, &truth);
        let seed_scan = scan_at(&world, &Pose2::IDENTITY);
        let shift = 3.0 * cfg.resolution * 4.0; // whole cells on every level
        let mut a = MapPyramid::new(cfg.resolution, cfg.extent, &Pose2::IDENTITY, cfg.levels).unwrap();
        a.update(&Pose2::IDENTITY, &seed_scan);
        let moved = Pose2::new(shift, -shift, 0.0);
        let mut b = MapPyramid::new(cfg.resolution, cfg.extent, &moved, cfg.levels).unwrap();
        b.update(&moved, &seed_scan);
        let (pa, _) = match_scan(&a, &scan, &Pose2::IDENTITY, &cfg.matcher);
        let (pb, _) = match_scan(&b, &scan, &moved, &cfg.matcher);
        assert!((pb.x - pa.x - shift).abs() < 1e-6 && (pb.y - pa.y + shift).abs() < 1e-6);
        assert!(angular_diff(pa.yaw, pb.yaw).abs() < 1e-6);
    }

    #[test]
    fn deterministic() {
        let st = lab_state(&Pose2::IDENTITY);
        let scan = scan_at(&World::lab(), &Pose2::new(0.1, 0.1, 0.1));
        assert_eq!(st.match_scan(&scan), st.match_scan(&scan));
    }
}
