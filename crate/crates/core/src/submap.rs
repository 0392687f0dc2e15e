//! Submap SLAM: local scan-to-submap matching, correlative loop-closure
//! search against finished submaps, and pose-graph relaxation.
//!
//! Graph variables are the global poses of scan nodes and of submap frames.
//! Each node is tied to the submap it was matched in by the local pose the
//! front end measured. When a submap finishes, its nodes are searched
//! against every other finished submap nearby; hits add closure constraints
//! and trigger a dense Gauss-Newton solve with the first node held fixed.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{angular_diff, normalize_angle, Pose2, Stamped, Trajectory};
use crate::gridmap::{Submap, SubmapState, DEFAULT_EXTENT, DEFAULT_LEVELS, DEFAULT_RESOLUTION, DEFAULT_SUBMAP_SCANS};
use crate::hector::{match_scan, refine_on_grid, MatchConfig};
use crate::scan::LaserScan;

pub const INTRA_WEIGHT: f64 = 1e4;
pub const LOW_CONFIDENCE_WEIGHT: f64 = 1e2;
pub const CLOSURE_WEIGHT: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchWindow {
    /// Half-width of the translational window; stepped at map resolution.
    pub xy: f64,
    /// Half-width of the angular window.
    pub yaw: f64,
    pub yaw_step: f64,
}

impl Default for SearchWindow {
    fn default() -> Self {
        Self { xy: 0.5, yaw: 15f64.to_radians(), yaw_step: 1f64.to_radians() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub max_iterations: usize,
    /// Stop once the update's norm falls below this.
    pub tolerance: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubmapConfig {
    pub resolution: f64,
    pub extent: f64,
    pub levels: usize,
    pub finish_threshold: usize,
    pub matcher: MatchConfig,
    pub window: SearchWindow,
    /// Minimum fraction of endpoints on occupied cells for a closure.
    pub min_score: f64,
    /// Probability above which a cell counts as occupied during search.
    pub occupied: f64,
    /// Only submaps whose origin lies this close to a node are searched.
    pub closure_gate: f64,
    pub loop_closure: bool,
    pub optimizer: OptimizeConfig,
    /// Simulated front-end drift: every submap handoff misplaces the new
    /// submap frame by this increment per scan of the finished submap.
    pub drift_per_scan: Pose2,
}

impl Default for SubmapConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            extent: DEFAULT_EXTENT,
            levels: DEFAULT_LEVELS,
            finish_threshold: DEFAULT_SUBMAP_SCANS,
            matcher: MatchConfig::default(),
            window: SearchWindow::default(),
            min_score: 0.6,
            occupied: 0.55,
            closure_gate: 3.0,
            loop_closure: true,
            optimizer: OptimizeConfig::default(),
            drift_per_scan: Pose2::IDENTITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseGraphNode {
    pub id: usize,
    pub timestamp: f64,
    /// Global pose estimate.
    pub pose: Pose2,
    /// Submap the node was matched and inserted in.
    pub submap: usize,
    /// Index of the node's scan in the SLAM's scan store.
    pub scan: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Node(usize),
    Submap(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// Local match inside the submap (or the handoff into a new one).
    Intra,
    LoopClosure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub from: Endpoint,
    pub to: usize,
    /// Measured pose of `to` in the frame of `from`.
    pub relative: Pose2,
    /// Per-component weights for (x, y, yaw).
    pub weight: [f64; 3],
    pub kind: ConstraintKind,
}

impl Constraint {
    pub fn new(from: Endpoint, to: usize, relative: Pose2, weight: [f64; 3], kind: ConstraintKind) -> Result<Self> {
        if weight.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("constraint weights must be positive, got {weight:?}")));
        }
        Ok(Self { from, to, relative, weight, kind })
    }
}

#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    pub nodes: Vec<PoseGraphNode>,
    pub submaps: Vec<Submap>,
    pub constraints: Vec<Constraint>,
}

/// One relative-pose edge between variables `i` and `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub relative: Pose2,
    pub weight: [f64; 3],
}

/// Residual of `relative` against the poses: the translation error in the
/// frame of `a`, then the wrapped yaw error.
pub fn edge_residual(a: &Pose2, b: &Pose2, relative: &Pose2) -> [f64; 3] {
    let (s, c) = a.yaw.sin_cos();
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    [c * dx + s * dy - relative.x, -s * dx + c * dy - relative.y, angular_diff(b.yaw - a.yaw, relative.yaw)]
}

/// Total weighted squared residual.
pub fn graph_cost(poses: &[Pose2], edges: &[Edge]) -> f64 {
    edges
        .iter()
        .map(|e| {
            let r = edge_residual(&poses[e.i], &poses[e.j], &e.relative);
            (0..3).map(|k| e.weight[k] * r[k] * r[k]).sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

/// Variables not reachable from `fixed` through the edges.
fn unreachable(n: usize, edges: &[Edge], fixed: usize) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.i].push(e.j);
        adj[e.j].push(e.i);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([fixed]);
    seen[fixed] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    (0..n).filter(|&v| !seen[v]).collect()
}

/// Gauss-Newton over all poses but `fixed`. The cost never increases: an
/// uphill step is halved until it is not, or the solve stops.
pub fn optimize_poses(
    poses: &mut [Pose2],
    edges: &[Edge],
    fixed: usize,
    cfg: &OptimizeConfig,
) -> Result<OptimizeReport> {
    let n = poses.len();
    if n == 0 {
        return Ok(OptimizeReport::default());
    }
    if fixed >= n || edges.iter().any(|e| e.i >= n || e.j >= n) {
        return Err(Error::InvalidArgument("edge or fixed index out of range".into()));
    }
    let lost = unreachable(n, edges, fixed);
    if !lost.is_empty() {
        return Err(Error::Disconnected(format!("variables {lost:?} have no path to the fixed pose")));
    }
    // Column of variable v, skipping the fixed one.
    let col = |v: usize| if v < fixed { 3 * v } else { 3 * (v - 1) };
    let dim = 3 * (n - 1);
    let mut cost = graph_cost(poses, edges);
    let mut report = OptimizeReport { iterations: 0, initial_cost: cost, final_cost: cost };
    if dim == 0 {
        return Ok(report);
    }
    for _ in 0..cfg.max_iterations {
        report.iterations += 1;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        for e in edges {
            let (a, b) = (&poses[e.i], &poses[e.j]);
            let r = edge_residual(a, b, &e.relative);
            let (s, c) = a.yaw.sin_cos();
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let ja = [[-c, -s, -s * dx + c * dy], [s, -c, -c * dx - s * dy], [0.0, 0.0, -1.0]];
            let jb = [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]];
            let blocks = [(e.i, ja), (e.j, jb)];
            for &(u, ju) in &blocks {
                if u == fixed {
                    continue;
                }
                for p in 0..3 {
                    for k in 0..3 {
                        g[col(u) + p] += ju[k][p] * e.weight[k] * r[k];
                    }
                }
                for &(v, jv) in &blocks {
                    if v == fixed {
                        continue;
                    }
                    for p in 0..3 {
                        for q in 0..3 {
                            let mut acc = 0.0;
                            for k in 0..3 {
                                acc += ju[k][p] * e.weight[k] * jv[k][q];
                            }
                            h[(col(u) + p, col(v) + q)] += acc;
                        }
                    }
                }
            }
        }
        let delta = match h.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => match h.lu().solve(&(-&g)) {
                Some(d) => d,
                None => break,
            },
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let trial: Vec<Pose2> = (0..n)
                .map(|v| {
                    if v == fixed {
                        return poses[v];
                    }
                    let c0 = col(v);
                    Pose2::new(
                        poses[v].x + scale * delta[c0],
                        poses[v].y + scale * delta[c0 + 1],
                        normalize_angle(poses[v].yaw + scale * delta[c0 + 2]),
                    )
                })
                .collect();
            let trial_cost = graph_cost(&trial, edges);
            if trial_cost <= cost {
                poses.copy_from_slice(&trial);
                cost = trial_cost;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || scale * delta.norm() < cfg.tolerance {
            break;
        }
    }
    report.final_cost = cost;
    Ok(report)
}

impl PoseGraph {
    fn variable(&self, ep: Endpoint) -> usize {
        match ep {
            Endpoint::Node(i) => i,
            Endpoint::Submap(j) => self.nodes.len() + j,
        }
    }

    fn check(&self) -> Result<()> {
        for c in &self.constraints {
            let ok_from = match c.from {
                Endpoint::Node(i) => i < self.nodes.len(),
                Endpoint::Submap(j) => j < self.submaps.len(),
            };
            if !ok_from || c.to >= self.nodes.len() {
                return Err(Error::InvalidArgument(format!("constraint {:?} -> {} has no endpoint", c.from, c.to)));
            }
        }
        Ok(())
    }

    /// Relax node and submap poses with the first node held fixed.
    pub fn optimize(&mut self, cfg: &OptimizeConfig) -> Result<OptimizeReport> {
        self.check()?;
        if self.nodes.is_empty() {
            return Ok(OptimizeReport::default());
        }
        let mut poses: Vec<Pose2> =
            self.nodes.iter().map(|n| n.pose).chain(self.submaps.iter().map(|s| s.origin_global)).collect();
        let edges: Vec<Edge> = self
            .constraints
            .iter()
            .map(|c| Edge { i: self.variable(c.from), j: c.to, relative: c.relative, weight: c.weight })
            .collect();
        let report = optimize_poses(&mut poses, &edges, 0, cfg).map_err(|e| match e {
            Error::Disconnected(_) => {
                let n = self.nodes.len();
                let lost: Vec<String> = unreachable(poses.len(), &edges, 0)
                    .into_iter()
                    .map(|v| if v < n { format!("node {v}") } else { format!("submap {}", v - n) })
                    .collect();
                Error::Disconnected(format!("unreachable from node 0: {}", lost.join(", ")))
            }
            other => other,
        })?;
        let n = self.nodes.len();
        for (node, p) in self.nodes.iter_mut().zip(&poses[..n]) {
            node.pose = *p;
        }
        for (sm, p) in self.submaps.iter_mut().zip(&poses[n..]) {
            sm.origin_global = *p;
        }
        Ok(report)
    }

    /// Whether `node` already has a local constraint into `submap`.
    fn is_member(&self, node: usize, submap: usize) -> bool {
        self.nodes[node].submap == submap
            || self
                .constraints
                .iter()
                .any(|c| c.to == node && c.from == Endpoint::Submap(submap) && c.kind == ConstraintKind::Intra)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct SubmapOut {
            id: usize,
            origin: Pose2,
            state: SubmapState,
            scans: usize,
        }
        #[derive(Serialize)]
        struct Out<'a> {
            nodes: &'a [PoseGraphNode],
            submaps: Vec<SubmapOut>,
            constraints: &'a [Constraint],
        }
        let out = Out {
            nodes: &self.nodes,
            submaps: self
                .submaps
                .iter()
                .map(|s| SubmapOut { id: s.id, origin: s.origin_global, state: s.state(), scans: s.scans_inserted() })
                .collect(),
            constraints: &self.constraints,
        };
        serde_json::to_string_pretty(&out).expect("graph serializes") + "\n"
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    /// Best pose in the submap frame.
    pub pose: Pose2,
    /// Fraction of valid endpoints on occupied cells.
    pub score: f64,
}

/// Exhaustive search of `window` around `center` (submap frame) for the pose
/// putting the most beam endpoints on occupied cells of a finished submap.
/// Ties go to the lowest (yaw, x, y) step index. `None` below `min_score`.
pub fn correlative_search(
    submap: &Submap,
    scan: &LaserScan,
    center: &Pose2,
    window: &SearchWindow,
    occupied: f64,
    min_score: f64,
) -> Result<Option<SearchHit>> {
    if !submap.is_finished() {
        return Err(Error::InvalidArgument(format!("submap {} is still active", submap.id)));
    }
    let points = scan.local_points();
    if points.is_empty() {
        return Ok(None);
    }
    let grid = submap.grid();
    let res = grid.resolution();
    let nxy = (window.xy / res + 1e-9).floor() as i64;
    let nyaw = if window.yaw_step > 0.0 { (window.yaw / window.yaw_step + 1e-9).floor() as i64 } else { 0 };
    let per_yaw: Vec<(u64, i64, i64, i64)> = (-nyaw..=nyaw)
        .into_par_iter()
        .map(|a| {
            let yaw = center.yaw + a as f64 * window.yaw_step;
            let rot = Pose2::new(center.x, center.y, yaw);
            let cells: Vec<(i64, i64)> =
                points.iter().map(|p| grid.world_to_map(rot.transform_point(*p)).cell()).collect();
            let mut best = (0u64, a, -nxy, -nxy);
            let mut first = true;
            for kx in -nxy..=nxy {
                for ky in -nxy..=nxy {
                    let hits =
                        cells.iter().filter(|(i, j)| grid.cell_probability(i + kx, j + ky) > occupied).count() as u64;
                    if first || hits > best.0 {
                        best = (hits, a, kx, ky);
                        first = false;
                    }
                }
            }
            best
        })
        .collect();
    let mut best = per_yaw[0];
    for cand in &per_yaw[1..] {
        if cand.0 > best.0 {
            best = *cand;
        }
    }
    let score = best.0 as f64 / points.len() as f64;
    if score < min_score {
        return Ok(None);
    }
    // Translating by whole cells moves every endpoint by exactly k cells.
    let (s, c) = grid.origin().yaw.sin_cos();
    let (dx, dy) = (best.2 as f64 * res, best.3 as f64 * res);
    Ok(Some(SearchHit {
        pose: Pose2::new(
            center.x + c * dx - s * dy,
            center.y + s * dx + c * dy,
            center.yaw + best.1 as f64 * window.yaw_step,
        ),
        score,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SubmapStats {
    pub closures: usize,
    pub optimizations: usize,
    pub low_confidence: usize,
}

/// Incremental driver.
#[derive(Debug, Clone)]
pub struct SubmapSlam {
    cfg: SubmapConfig,
    start: Pose2,
    graph: PoseGraph,
    scans: Vec<LaserScan>,
    online: Vec<Pose2>,
    active: usize,
    finalized: bool,
    stats: SubmapStats,
}

impl SubmapSlam {
    pub fn new(cfg: SubmapConfig, start: Pose2) -> Result<Self> {
        if cfg.finish_threshold == 0 || cfg.levels == 0 || !(cfg.resolution > 0.0) {
            return Err(Error::Config(format!("invalid submap configuration {cfg:?}")));
        }
        Ok(Self {
            cfg,
            start,
            graph: PoseGraph::default(),
            scans: Vec::new(),
            online: Vec::new(),
            active: 0,
            finalized: false,
            stats: SubmapStats::default(),
        })
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    pub fn config(&self) -> &SubmapConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &SubmapStats {
        &self.stats
    }

    pub fn active_submap(&self) -> Option<&Submap> {
        self.graph.submaps.get(self.active)
    }

    /// Node poses as currently optimized.
    pub fn trajectory(&self) -> Trajectory<Pose2> {
        let samples = self.graph.nodes.iter().map(|n| Stamped { t: n.timestamp, pose: n.pose }).collect();
        Trajectory::from_samples(samples).expect("node timestamps increase")
    }

    /// Poses as returned when each scan was processed.
    pub fn online_trajectory(&self) -> Trajectory<Pose2> {
        let samples =
            self.graph.nodes.iter().zip(&self.online).map(|(n, p)| Stamped { t: n.timestamp, pose: *p }).collect();
        Trajectory::from_samples(samples).expect("node timestamps increase")
    }

    fn new_submap(&self, origin: Pose2) -> Result<Submap> {
        Submap::with_levels(
            self.graph.submaps.len(),
            origin,
            self.cfg.resolution,
            self.cfg.extent,
            self.cfg.levels,
            self.cfg.finish_threshold,
        )
    }

    fn add(&mut self, c: Constraint) {
        self.graph.constraints.push(c);
    }

    /// Match, insert and (on submap finish) close loops for one scan.
    /// Returns the latest node pose.
    pub fn process_scan(&mut self, scan: &LaserScan) -> Result<Pose2> {
        if self.finalized {
            return Err(Error::InvalidArgument("scan after finalize".into()));
        }
        if let Some(last) = self.graph.nodes.last() {
            if scan.timestamp <= last.timestamp {
                return Err(Error::InvalidArgument(format!(
                    "scan at {} does not follow {}",
                    scan.timestamp, last.timestamp
                )));
            }
        }
        let id = self.graph.nodes.len();
        let (local, weight) = if id == 0 {
            let sm = self.new_submap(self.start)?;
            self.graph.submaps.push(sm);
            self.active = 0;
            (Pose2::IDENTITY, INTRA_WEIGHT)
        } else {
            let last = self.graph.nodes[id - 1].pose;
            let prev = if id >= 2 { self.graph.nodes[id - 2].pose } else { last };
            let predicted = last.compose(&prev.between(&last));
            let active = &self.graph.submaps[self.active];
            let init = active.to_local(&predicted);
            let (local, diag) = match_scan(active.pyramid(), scan, &init, &self.cfg.matcher);
            if diag.no_match {
                self.stats.low_confidence += 1;
                (init, LOW_CONFIDENCE_WEIGHT)
            } else {
                (local, INTRA_WEIGHT)
            }
        };
        let active = &mut self.graph.submaps[self.active];
        let pose = active.to_global(&local);
        active.insert(&local, scan);
        let finished = active.is_finished();
        self.graph.nodes.push(PoseGraphNode { id, timestamp: scan.timestamp, pose, submap: self.active, scan: id });
        self.scans.push(scan.clone());
        self.add(Constraint::new(Endpoint::Submap(self.active), id, local, [weight; 3], ConstraintKind::Intra)?);
        if finished {
            self.close_loops(self.active)?;
            self.open_after(id)?;
        }
        let pose = self.graph.nodes[id].pose;
        self.online.push(pose);
        Ok(pose)
    }

    /// Start the next submap at node `id`, re-inserting its scan so the new
    /// submap is never empty.
    fn open_after(&mut self, id: usize) -> Result<()> {
        let node = self.graph.nodes[id];
        let n = self.graph.submaps[node.submap].scans_inserted() as f64;
        let d = self.cfg.drift_per_scan;
        let drift = Pose2::new(d.x * n, d.y * n, d.yaw * n);
        let mut sm = self.new_submap(node.pose.compose(&drift))?;
        sm.insert(&Pose2::IDENTITY, &self.scans[node.scan]);
        self.active = sm.id;
        self.add(Constraint::new(
            Endpoint::Submap(sm.id),
            id,
            drift.inverse(),
            [INTRA_WEIGHT; 3],
            ConstraintKind::Intra,
        )?);
        self.graph.submaps.push(sm);
        Ok(())
    }

    /// Closure constraints for one node against every finished submap it
    /// does not belong to within the distance gate.
    pub fn find_loop_closures(&self, node: usize) -> Result<Vec<Constraint>> {
        let n = &self.graph.nodes[node];
        let scan = &self.scans[n.scan];
        let points = scan.local_points();
        let candidates: Vec<&Submap> = self
            .graph
            .submaps
            .iter()
            .filter(|s| s.is_finished() && !self.graph.is_member(node, s.id))
            .filter(|s| s.origin_global.distance(&n.pose) <= self.cfg.closure_gate)
            .collect();
        let hits: Vec<Option<Constraint>> = candidates
            .par_iter()
            .map(|s| {
                let center = s.to_local(&n.pose);
                let hit =
                    correlative_search(s, scan, &center, &self.cfg.window, self.cfg.occupied, self.cfg.min_score)?;
                Ok(match hit {
                    Some(h) => {
                        let (refined, _) = refine_on_grid(
                            s.grid(),
                            &points,
                            h.pose,
                            &self.cfg.matcher,
                            self.cfg.matcher.max_iterations,
                        );
                        Some(Constraint::new(
                            Endpoint::Submap(s.id),
                            node,
                            refined,
                            [CLOSURE_WEIGHT; 3],
                            ConstraintKind::LoopClosure,
                        )?)
                    }
                    None => None,
                })
            })
            .collect::<Result<_>>()?;
        Ok(hits.into_iter().flatten().collect())
    }

    fn close_loops(&mut self, submap: usize) -> Result<()> {
        if !self.cfg.loop_closure {
            return Ok(());
        }
        let members: Vec<usize> = self.graph.nodes.iter().filter(|n| n.submap == submap).map(|n| n.id).collect();
        let mut added = 0;
        for id in members {
            for c in self.find_loop_closures(id)? {
                self.add(c);
                added += 1;
            }
        }
        if added > 0 {
            self.stats.closures += added;
            self.graph.optimize(&self.cfg.optimizer)?;
            self.stats.optimizations += 1;
        }
        Ok(())
    }

    /// Finish the trailing submap and run its loop closures. Further scans
    /// are rejected.
    pub fn finalize(&mut self) -> Result<()> {
        if self.finalized {
            return Ok(());
        }
        self.finalized = true;
        let Some(sm) = self.graph.submaps.get_mut(self.active) else { return Ok(()) };
        if sm.is_finished() {
            return Ok(());
        }
        sm.finish();
        self.close_loops(self.active)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scan, ScanParams, Segment, World};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scan_at(world: &World, pose: &Pose2, t: f64) -> LaserScan {
        let params = ScanParams { sigma: 0.0, ..Default::default() };
        generate_scan(world, pose, t, &params, &mut ChaCha8Rng::seed_from_u64(1)).scan
    }

    fn finished_lab_submap() -> Submap {
        let mut sm = Submap::new(0, Pose2::IDENTITY, 0.05, 12.0, 1).unwrap();
        sm.insert(&Pose2::IDENTITY, &scan_at(&World::lab(), &Pose2::IDENTITY, 0.0));
        assert!(sm.is_finished());
        sm
    }

    /// Levenberg-Marquardt on numerically differentiated, stacked residuals.
    fn dense_oracle(poses: &mut [Pose2], edges: &[Edge], fixed: usize) {
        let free: Vec<usize> = (0..poses.len()).filter(|&v| v != fixed).collect();
        let stack = |p: &[Pose2]| -> DVector<f64> {
            let mut r = Vec::new();
            for e in edges {
                let res = edge_residual(&p[e.i], &p[e.j], &e.relative);
                r.extend(e.weight.iter().zip(res).map(|(w, v)| w.sqrt() * v));
            }
            DVector::from_vec(r)
        };
        let perturb = |p: &[Pose2], idx: usize, h: f64| -> Vec<Pose2> {
            let mut q = p.to_vec();
            let v = free[idx / 3];
            match idx % 3 {
                0 => q[v].x += h,
                1 => q[v].y += h,
                _ => q[v].yaw += h,
            }
            q
        };
        let mut mu = 1e-3;
        for _ in 0..500 {
            let r0 = stack(poses);
            let mut j = DMatrix::zeros(r0.len(), 3 * free.len());
            for c in 0..3 * free.len() {
                let h = 1e-6;
                let col = (stack(&perturb(poses, c, h)) - stack(&perturb(poses, c, -h))) / (2.0 * h);
                j.set_column(c, &col);
            }
            let a = j.transpose() * &j + DMatrix::identity(3 * free.len(), 3 * free.len()) * mu;
            let step = a.svd(true, true).solve(&(-(j.transpose() * &r0)), 1e-15).unwrap();
            let mut trial = poses.to_vec();
            for (k, &v) in free.iter().enumerate() {
                trial[v].x += step[3 * k];
                trial[v].y += step[3 * k + 1];
                trial[v].yaw += step[3 * k + 2];
            }
            if stack(&trial).norm_squared() <= r0.norm_squared() {
                poses.copy_from_slice(&trial);
                mu = (mu * 0.3).max(1e-15);
                if step.norm() < 1e-13 {
                    break;
                }
            } else {
                mu *= 10.0;
            }
        }
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Pose2>, Vec<Pose2>, Vec<Edge>) {
        let truth: Vec<Pose2> = (0..n)
            .map(|_| Pose2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            .collect();
        let mut edges = Vec::new();
        let noisy = |rng: &mut ChaCha8Rng, p: Pose2| {
            Pose2::new(
                p.x + rng.random_range(-0.05..0.05),
                p.y + rng.random_range(-0.05..0.05),
                p.yaw + rng.random_range(-0.05..0.05),
            )
        };
        for i in 1..n {
            let a = rng.random_range(0..i);
            let rel = truth[a].between(&truth[i]);
            let w = [rng.random_range(1.0..100.0), rng.random_range(1.0..100.0), rng.random_range(1.0..100.0)];
            edges.push(Edge { i: a, j: i, relative: noisy(rng, rel), weight: w });
        }
        for _ in 0..n {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a != b {
                let rel = truth[a].between(&truth[b]);
                edges.push(Edge { i: a, j: b, relative: noisy(rng, rel), weight: [10.0, 10.0, 10.0] });
            }
        }
        let init: Vec<Pose2> = truth.iter().map(|p| Pose2::new(p.x + 0.1, p.y - 0.1, p.yaw + 0.05)).collect();
        (truth, init, edges)
    }

    #[test]
    fn optimize_matches_dense_oracle() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..=10);
            let (truth, mut ours, edges) = random_graph(&mut rng, n);
            ours[0] = truth[0];
            let mut oracle = ours.clone();
            let cfg = OptimizeConfig { max_iterations: 50, tolerance: 1e-12 };
            let report = optimize_poses(&mut ours, &edges, 0, &cfg).unwrap();
            assert!(report.final_cost <= report.initial_cost);
            dense_oracle(&mut oracle, &edges, 0);
            for (a, b) in ours.iter().zip(&oracle) {
                assert!((a.x - b.x).abs() < 1e-6, "seed {seed}: {a:?} vs {b:?}");
                assert!((a.y - b.y).abs() < 1e-6, "seed {seed}");
                assert!(angular_diff(a.yaw, b.yaw).abs() < 1e-6, "seed {seed}");
            }
        }
    }

    #[test]
    fn consistent_graph_is_a_fixed_point() {
        let poses = [Pose2::IDENTITY, Pose2::new(1.0, 0.0, 0.5), Pose2::new(1.5, 1.0, 2.0)];
        let edges: Vec<Edge> = [(0, 1), (1, 2), (0, 2)]
            .iter()
            .map(|&(i, j)| Edge { i, j, relative: poses[i].between(&poses[j]), weight: [1.0; 3] })
            .collect();
        let mut out = poses;
        optimize_poses(&mut out, &edges, 0, &OptimizeConfig::default()).unwrap();
        for (a, b) in out.iter().zip(&poses) {
            assert!(a.distance(b) < 1e-9 && angular_diff(a.yaw, b.yaw).abs() < 1e-9);
        }
    }

    #[test]
    fn contradictory_chain_matches_oracle() {
        let mut ours = vec![Pose2::IDENTITY, Pose2::new(1.0, 0.0, 0.0), Pose2::new(2.0, 0.0, 0.0)];
        let edges = vec![
            Edge { i: 0, j: 1, relative: Pose2::new(1.0, 0.0, 0.0), weight: [1.0; 3] },
            Edge { i: 1, j: 2, relative: Pose2::new(1.0, 0.0, 0.0), weight: [1.0; 3] },
            Edge { i: 0, j: 2, relative: Pose2::new(1.7, 0.2, 0.1), weight: [1.0; 3] },
        ];
        let mut oracle = ours.clone();
        optimize_poses(&mut ours, &edges, 0, &OptimizeConfig { tolerance: 1e-12, ..Default::default() }).unwrap();
        dense_oracle(&mut oracle, &edges, 0);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6 && (a.yaw - b.yaw).abs() < 1e-6);
        }
        assert!(ours[2].x < 2.0);
    }

    #[test]
    fn single_node_and_disconnected_graphs() {
        let mut one = vec![Pose2::new(1.0, 2.0, 0.3)];
        optimize_poses(&mut one, &[], 0, &OptimizeConfig::default()).unwrap();
        assert_eq!(one[0], Pose2::new(1.0, 2.0, 0.3));
        let mut poses = vec![Pose2::IDENTITY; 4];
        let edges = vec![
            Edge { i: 0, j: 1, relative: Pose2::IDENTITY, weight: [1.0; 3] },
            Edge { i: 2, j: 3, relative: Pose2::IDENTITY, weight: [1.0; 3] },
        ];
        let err = optimize_poses(&mut poses, &edges, 0, &OptimizeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Disconnected(ref m) if m.contains('2') && m.contains('3')));
    }

    #[test]
    fn constraint_weights_must_be_positive() {
        assert!(Constraint::new(Endpoint::Node(0), 1, Pose2::IDENTITY, [1.0, 0.0, 1.0], ConstraintKind::Intra).is_err());
    }

    #[test]
    fn correlative_search_examples() {
        let sm = finished_lab_submap();
        let truth = Pose2::new(0.2, -0.1, 5f64.to_radians());
        let scan = scan_at(&World::lab(), &truth, 0.0);
        let w = SearchWindow::default();
        let hit = correlative_search(&sm, &scan, &Pose2::IDENTITY, &w, 0.55, 0.6).unwrap().unwrap();
        assert!((hit.pose.x - truth.x).abs() <= 0.05 + 1e-9 && (hit.pose.y - truth.y).abs() <= 0.05 + 1e-9);
        assert!(angular_diff(hit.pose.yaw, truth.yaw).abs() <= 1f64.to_radians() + 1e-9);

        let tiny = SearchWindow { xy: 0.0, yaw: 0.0, yaw_step: 1f64.to_radians() };
        let at_truth = scan_at(&World::lab(), &Pose2::IDENTITY, 0.0);
        let hit = correlative_search(&sm, &at_truth, &Pose2::IDENTITY, &tiny, 0.55, 0.6).unwrap().unwrap();
        assert_eq!(hit.pose, Pose2::IDENTITY);

        let corners = [[-0.6, -0.6], [0.6, -0.6], [0.6, 0.6], [-0.6, 0.6]];
        let closet =
            World::new("closet", (0..4).map(|k| Segment::new(corners[k], corners[(k + 1) % 4])).collect()).unwrap();
        let far = scan_at(&closet, &Pose2::IDENTITY, 0.0);
        assert!(correlative_search(&sm, &far, &Pose2::IDENTITY, &w, 0.55, 0.6).unwrap().is_none());

        let active = Submap::new(1, Pose2::IDENTITY, 0.05, 4.0, 5).unwrap();
        assert!(correlative_search(&active, &scan, &Pose2::IDENTITY, &w, 0.55, 0.6).is_err());
    }

    #[test]
    fn first_scan_initializes_graph() {
        let start = Pose2::new(0.5, -0.5, 0.2);
        let mut slam = SubmapSlam::new(SubmapConfig::default(), start).unwrap();
        let p = slam.process_scan(&scan_at(&World::lab(), &start, 0.0)).unwrap();
        assert_eq!(p, start);
        assert_eq!(slam.graph().submaps[0].origin_global, start);
        assert_eq!(slam.graph().nodes[0].pose, start);
        assert!(slam.find_loop_closures(0).unwrap().is_empty());
    }

    #[test]
    fn stationary_sensor_and_submap_lifecycle() {
        let mut slam = SubmapSlam::new(SubmapConfig::default(), Pose2::IDENTITY).unwrap();
        let base = scan_at(&World::lab(), &Pose2::IDENTITY, 0.0);
        let mut frozen = None;
        for i in 0..100 {
            let mut s = base.clone();
            s.timestamp = i as f64 * 0.1;
            let p = slam.process_scan(&s).unwrap();
            assert!(p.translation_norm() < 1e-3 && p.yaw.abs() < 0.06f64.to_radians(), "scan {i}: {p:?}");
            if i == 88 {
                assert!(!slam.graph().submaps[0].is_finished());
            }
            if i == 89 {
                assert!(slam.graph().submaps[0].is_finished());
                frozen = Some(slam.graph().submaps[0].content_hash());
            }
        }
        assert_eq!(slam.graph().submaps[0].content_hash(), frozen.unwrap());
        assert_eq!(slam.graph().submaps.len(), 2);
        slam.finalize().unwrap();
        assert!(slam.stats().closures > 0);
        assert!(slam.process_scan(&base).is_err());
    }

    #[test]
    fn distant_node_finds_no_closures() {
        let mut slam =
            SubmapSlam::new(SubmapConfig { finish_threshold: 2, ..Default::default() }, Pose2::IDENTITY).unwrap();
        let s = scan_at(&World::lab(), &Pose2::IDENTITY, 0.0);
        slam.process_scan(&s).unwrap();
        let mut s1 = s.clone();
        s1.timestamp = 0.1;
        slam.process_scan(&s1).unwrap();
        slam.graph.nodes[1].pose = Pose2::new(10.0, 0.0, 0.0);
        let mut s2 = s.clone();
        s2.timestamp = 0.2;
        slam.process_scan(&s2).unwrap();
        slam.graph.nodes[2].pose = Pose2::new(10.0, 0.0, 0.0);
        assert!(slam.find_loop_closures(2).unwrap().is_empty());
    }

    #[test]
    fn graph_json_lists_everything() {
        let mut slam =
            SubmapSlam::new(SubmapConfig { finish_threshold: 3, ..Default::default() }, Pose2::IDENTITY).unwrap();
        let s = scan_at(&World::lab(), &Pose2::IDENTITY, 0.0);
        for i in 0..5 {
            let mut si = s.clone();
            si.timestamp = i as f64 * 0.1;
            slam.process_scan(&si).unwrap();
        }
        let v: serde_json::Value = serde_json::from_str(&slam.graph().to_json()).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), 5);
        assert_eq!(v["submaps"].as_array().unwrap().len(), 3);
        assert!(v["constraints"].as_array().unwrap().iter().any(|c| c["kind"] == "loop_closure"));
    }

    proptest! {
        #[test]
        fn optimize_never_increases_cost(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..=8);
            let (_, mut poses, edges) = random_graph(&mut rng, n);
            let report = optimize_poses(&mut poses, &edges, 0, &OptimizeConfig::default()).unwrap();
            prop_assert!(report.final_cost <= report.initial_cost + 1e-12);
            let again = optimize_poses(&mut poses.clone(), &edges, 0, &OptimizeConfig::default()).unwrap();
            prop_assert!((again.final_cost - report.final_cost).abs() <= 1e-9 * (1.0 + report.final_cost));
        }
    }
}
