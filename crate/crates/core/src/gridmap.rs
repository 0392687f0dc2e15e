//! Log-odds occupancy grids, multi-resolution pyramids and submaps.
//!
//! Cell `(i, j)` is the lattice sample at continuous map coordinate `(i, j)`;
//! it owns the square `[i - 0.5, i + 0.5) × [j - 0.5, j + 0.5)`. A world point
//! is assigned to the nearest lattice sample, and bilinear interpolation
//! blends the four samples surrounding a continuous coordinate.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose2;
use crate::scan::LaserScan;

/// `ln(0.7 / 0.3)`.
pub const LOG_ODDS_HIT: f64 = 0.847_297_860_387_203_8;
/// `ln(0.4 / 0.6)`.
pub const LOG_ODDS_MISS: f64 = -0.405_465_108_108_164_4;
pub const LOG_ODDS_CLAMP: f64 = 4.0;

pub const DEFAULT_RESOLUTION: f64 = 0.05;
pub const DEFAULT_EXTENT: f64 = 24.0;
pub const DEFAULT_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Hit,
    Miss,
}

/// Continuous map coordinates plus whether the nearest cell is on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapCoord {
    pub x: f64,
    pub y: f64,
    pub in_bounds: bool,
}

impl MapCoord {
    pub fn cell(&self) -> (i64, i64) {
        (self.x.round() as i64, self.y.round() as i64)
    }
}

/// Bilinear map sample: occupancy probability and its gradient per cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub gradient: [f64; 2],
}

impl Sample {
    const UNKNOWN: Sample = Sample { value: 0.5, gradient: [0.0, 0.0] };
}

pub fn probability(log_odds: f64) -> f64 {
    1.0 / (1.0 + (-log_odds).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    origin: Pose2,
    width: usize,
    height: usize,
    log_odds: Vec<f64>,
    prob: Vec<f64>,
    dropped_updates: u64,
}

impl OccupancyGrid {
    /// All-unknown grid. `origin` is the world pose of lattice point (0, 0).
    pub fn new(resolution: f64, origin: Pose2, width: usize, height: usize) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidArgument(format!("resolution must be positive, got {resolution}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("grid dimensions must be non-zero".into()));
        }
        let n = width * height;
        Ok(Self { resolution, origin, width, height, log_odds: vec![0.0; n], prob: vec![0.5; n], dropped_updates: 0 })
    }

    /// Square grid of side `extent` meters centered on `center`'s position,
    /// axis-aligned with the world.
    pub fn centered(resolution: f64, extent: f64, center: &Pose2) -> Result<Self> {
        let cells = (extent / resolution).round() as usize + 1;
        let half = (cells - 1) as f64 * resolution / 2.0;
        let origin = Pose2::new(center.x - half, center.y - half, 0.0);
        Self::new(resolution, origin, cells, cells)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Pose2 {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Updates ignored because their cell was off the grid.
    pub fn dropped_updates(&self) -> u64 {
        self.dropped_updates
    }

    pub fn in_bounds(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }

    fn index(&self, i: i64, j: i64) -> Option<usize> {
        self.in_bounds(i, j).then(|| j as usize * self.width + i as usize)
    }

    pub fn log_odds(&self, i: i64, j: i64) -> Option<f64> {
        self.index(i, j).map(|k| self.log_odds[k])
    }

    /// Occupancy probability of a cell; 0.5 off the grid.
    pub fn cell_probability(&self, i: i64, j: i64) -> f64 {
        self.index(i, j).map_or(0.5, |k| self.prob[k])
    }

    pub fn set_log_odds(&mut self, i: i64, j: i64, l: f64) {
        if let Some(k) = self.index(i, j) {
            let l = l.clamp(-LOG_ODDS_CLAMP, LOG_ODDS_CLAMP);
            self.log_odds[k] = l;
            self.prob[k] = probability(l);
        }
    }

    /// Raw log-odds in row-major order (row `j` = map y).
    pub fn cells(&self) -> &[f64] {
        &self.log_odds
    }

    pub fn is_uniform(&self) -> bool {
        self.log_odds.iter().all(|l| *l == self.log_odds[0])
    }

    pub fn world_to_map(&self, p: [f64; 2]) -> MapCoord {
        let local = self.origin.inverse().transform_point(p);
        let x = local[0] / self.resolution;
        let y = local[1] / self.resolution;
        let (i, j) = (x.round() as i64, y.round() as i64);
        MapCoord { x, y, in_bounds: self.in_bounds(i, j) }
    }

    pub fn map_to_world(&self, x: f64, y: f64) -> [f64; 2] {
        self.origin.transform_point([x * self.resolution, y * self.resolution])
    }

    /// Bilinear occupancy probability at a continuous map coordinate with its
    /// analytic gradient. Points whose four neighbours are not all on the grid
    /// read as unknown with zero gradient.
    pub fn interpolate(&self, x: f64, y: f64) -> Sample {
        if !(x.is_finite() && y.is_finite()) {
            return Sample::UNKNOWN;
        }
        let fx = x.floor();
        let fy = y.floor();
        let (i, j) = (fx as i64, fy as i64);
        if i < 0 || j < 0 || i as usize + 1 >= self.width || j as usize + 1 >= self.height {
            return Sample::UNKNOWN;
        }
        let k = j as usize * self.width + i as usize;
        let p00 = self.prob[k];
        let p10 = self.prob[k + 1];
        let p01 = self.prob[k + self.width];
        let p11 = self.prob[k + self.width + 1];
        let dx = x - fx;
        let dy = y - fy;
        let bottom = p00 + dx * (p10 - p00);
        let top = p01 + dx * (p11 - p01);
        Sample {
            value: bottom + dy * (top - bottom),
            gradient: [(1.0 - dy) * (p10 - p00) + dy * (p11 - p01), top - bottom],
        }
    }

    /// Apply one inverse-sensor-model increment. Returns false (and counts a
    /// dropped update) when the cell is off the grid.
    pub fn update_cell(&mut self, i: i64, j: i64, obs: Observation) -> bool {
        match self.index(i, j) {
            Some(k) => {
                let inc = match obs {
                    Observation::Hit => LOG_ODDS_HIT,
                    Observation::Miss => LOG_ODDS_MISS,
                };
                let l = (self.log_odds[k] + inc).clamp(-LOG_ODDS_CLAMP, LOG_ODDS_CLAMP);
                self.log_odds[k] = l;
                self.prob[k] = probability(l);
                true
            }
            None => {
                self.dropped_updates += 1;
                false
            }
        }
    }

    /// Ray-trace every valid beam from the sensor cell: cells strictly before
    /// the endpoint are missed, the endpoint cell is hit.
    pub fn insert_scan(&mut self, pose: &Pose2, scan: &LaserScan) {
        let start = self.world_to_map([pose.x, pose.y]).cell();
        for p in scan.world_points(pose) {
            let end = self.world_to_map(p).cell();
            for (i, j) in Bresenham::new(start, end) {
                self.update_cell(i, j, Observation::Miss);
            }
            self.update_cell(end.0, end.1, Observation::Hit);
        }
    }

    /// FNV-1a over the raw cell bits; used to prove immutability.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.log_odds {
            for b in l.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Write the grid as a plain-text graymap (P2) with the top row at max y,
    /// each pixel `round(255 · p)`, plus a `<stem>.yaml`-style sidecar with the
    /// geometry.
    pub fn export_pgm(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.width * self.height * 4 + 64);
        let _ = writeln!(out, "P2\n{} {}\n255", self.width, self.height);
        for j in (0..self.height).rev() {
            let row = &self.prob[j * self.width..(j + 1) * self.width];
            let line: Vec<String> = row.iter().map(|p| ((p * 255.0).round() as u8).to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let meta = format!(
            "resolution: {:.6}\norigin: [{:.6}, {:.6}, {:.6}]\nwidth: {}\nheight: {}\n",
            self.resolution, self.origin.x, self.origin.y, self.origin.yaw, self.width, self.height
        );
        let meta_path = path.with_extension("meta");
        fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path, e))
    }
}

/// Integer line traversal from `start` to `end`, excluding `end`.
pub struct Bresenham {
    x: i64,
    y: i64,
    end: (i64, i64),
    dx: i64,
    dy: i64,
    sx: i64,
    sy: i64,
    err: i64,
}

impl Bresenham {
    pub fn new(start: (i64, i64), end: (i64, i64)) -> Self {
        let dx = (end.0 - start.0).abs();
        let dy = -(end.1 - start.1).abs();
        Self {
            x: start.0,
            y: start.1,
            end,
            dx,
            dy,
            sx: if start.0 < end.0 { 1 } else { -1 },
            sy: if start.1 < end.1 { 1 } else { -1 },
            err: dx + dy,
        }
    }
}

impl Iterator for Bresenham {
    type Item = (i64, i64);

    fn next(&mut self) -> Option<(i64, i64)> {
        if (self.x, self.y) == self.end {
            return None;
        }
        let cur = (self.x, self.y);
        let e2 = 2 * self.err;
        if e2 >= self.dy {
            self.err += self.dy;
            self.x += self.sx;
        }
        if e2 <= self.dx {
            self.err += self.dx;
            self.y += self.sy;
        }
        Some(cur)
    }
}

/// Grids at resolutions `base · 2^k` over the same world extent, each
/// updated independently.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPyramid {
    levels: Vec<OccupancyGrid>,
}

impl MapPyramid {
    pub fn new(base_resolution: f64, extent: f64, center: &Pose2, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidArgument("a pyramid needs at least one level".into()));
        }
        let levels = (0..levels)
            .map(|k| {
                let res = base_resolution * (1u64 << k) as f64;
                let cells = (extent / res).round() as usize + 1;
                let half = (cells - 1) as f64 * res / 2.0;
                OccupancyGrid::new(res, Pose2::new(center.x - half, center.y - half, 0.0), cells, cells)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    pub fn with_defaults(center: &Pose2) -> Result<Self> {
        Self::new(DEFAULT_RESOLUTION, DEFAULT_EXTENT, center, DEFAULT_LEVELS)
    }

    pub fn levels(&self) -> &[OccupancyGrid] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &OccupancyGrid {
        &self.levels[k]
    }

    pub fn finest(&self) -> &OccupancyGrid {
        &self.levels[0]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn update(&mut self, pose: &Pose2, scan: &LaserScan) {
        for grid in &mut self.levels {
            grid.insert_scan(pose, scan);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmapState {
    Active,
    Finished,
}

pub const DEFAULT_SUBMAP_SCANS: usize = 90;

/// Locally consistent grid built from a bounded run of scans. The grid is
/// expressed in the submap's own frame; `origin_global` places that frame in
/// the world and is the only thing pose-graph optimization moves.
#[derive(Debug, Clone, PartialEq)]
pub struct Submap {
    pub id: usize,
    grids: MapPyramid,
    pub origin_global: Pose2,
    state: SubmapState,
    scans_inserted: usize,
    finish_threshold: usize,
}

impl Submap {
    pub fn new(id: usize, origin_global: Pose2, resolution: f64, extent: f64, finish_threshold: usize) -> Result<Self> {
        Self::with_levels(id, origin_global, resolution, extent, 1, finish_threshold)
    }

    /// Like [`Submap::new`] but keeps `levels` coarser copies for matching.
    pub fn with_levels(
        id: usize,
        origin_global: Pose2,
        resolution: f64,
        extent: f64,
        levels: usize,
        finish_threshold: usize,
    ) -> Result<Self> {
        if finish_threshold == 0 {
            return Err(Error::InvalidArgument("finish threshold must be positive".into()));
        }
        Ok(Self {
            id,
            grids: MapPyramid::new(resolution, extent, &Pose2::IDENTITY, levels)?,
            origin_global,
            state: SubmapState::Active,
            scans_inserted: 0,
            finish_threshold,
        })
    }

    pub fn grid(&self) -> &OccupancyGrid {
        self.grids.finest()
    }

    pub fn pyramid(&self) -> &MapPyramid {
        &self.grids
    }

    /// Hash over every level; unchanged once the submap is finished.
    pub fn content_hash(&self) -> u64 {
        self.grids
            .levels()
            .iter()
            .fold(0xcbf2_9ce4_8422_2325, |h, g| (h ^ g.content_hash()).wrapping_mul(0x100_0000_01b3))
    }

    pub fn state(&self) -> SubmapState {
        self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state == SubmapState::Finished
    }

    pub fn scans_inserted(&self) -> usize {
        self.scans_inserted
    }

    pub fn finish_threshold(&self) -> usize {
        self.finish_threshold
    }

    pub fn to_local(&self, global: &Pose2) -> Pose2 {
        self.origin_global.between(global)
    }

    pub fn to_global(&self, local: &Pose2) -> Pose2 {
        self.origin_global.compose(local)
    }

    /// Insert a scan taken at `local_pose` (submap frame). Returns false and
    /// leaves the submap untouched once it is finished. The submap finishes
    /// itself when the insertion count reaches the threshold.
    pub fn insert(&mut self, local_pose: &Pose2, scan: &LaserScan) -> bool {
        if self.is_finished() {
            return false;
        }
        self.grids.update(local_pose, scan);
        self.scans_inserted += 1;
        if self.scans_inserted >= self.finish_threshold {
            self.state = SubmapState::Finished;
        }
        true
    }

    pub fn finish(&mut self) {
        self.state = SubmapState::Finished;
    }
}
