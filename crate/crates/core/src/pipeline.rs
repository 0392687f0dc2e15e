//! Run one SLAM front end over a scenario record.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{Fuser, FusionConfig};
use crate::geom::{Pose2, Pose3, Stamped, Trajectory};
use crate::gridmap::{OccupancyGrid, DEFAULT_EXTENT, DEFAULT_RESOLUTION};
use crate::hector::{HectorConfig, HectorState};
use crate::rbpf::{Rbpf, RbpfConfig};
use crate::scan::LaserScan;
use crate::sim::{gate_scan, GateDecision, ScenarioRecord, SCAN_RATE_HZ};
use crate::submap::{SubmapConfig, SubmapSlam};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Hector,
    Rbpf,
    Submap,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Hector, Algorithm::Rbpf, Algorithm::Submap];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Hector => "hector",
            Algorithm::Rbpf => "rbpf",
            Algorithm::Submap => "submap",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?} (expected hector, rbpf or submap)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Lift the planar estimate to 3D with the altimeter and IMU.
    pub fusion: Option<FusionConfig>,
    pub gate_threshold: f64,
    /// Largest scan-to-IMU time offset accepted for gating.
    pub gate_tolerance: f64,
    pub start: Pose2,
}

impl PipelineConfig {
    pub fn new(algorithm: Algorithm, seed: u64) -> Self {
        Self {
            algorithm,
            seed,
            fusion: None,
            gate_threshold: 10f64.to_radians(),
            gate_tolerance: 1.0 / SCAN_RATE_HZ,
            start: Pose2::IDENTITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GateStats {
    pub kept: usize,
    pub dropped: usize,
    /// Kept without an IMU sample close enough in time.
    pub unsynced: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// One pose per kept scan; z, roll and pitch are zero without fusion.
    pub estimate: Trajectory<Pose3>,
    pub map: OccupancyGrid,
    pub gate: GateStats,
    pub blind_zone_samples: usize,
    pub stale_altitude_samples: usize,
    /// Pose graph as JSON for the submap front end.
    pub graph_json: Option<String>,
}

enum Frontend {
    Hector(Box<HectorState>),
    Rbpf(Box<Rbpf>),
    Submap(Box<SubmapSlam>),
}

/// Gate scans against attitude, run the chosen front end in timestamp
/// order, then optionally fuse altitude. The submap estimate is the
/// optimized trajectory after the final loop-closure pass.
pub fn run_pipeline(record: &ScenarioRecord, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let mut frontend = match cfg.algorithm {
        Algorithm::Hector => Frontend::Hector(Box::new(HectorState::new(HectorConfig::default(), cfg.start)?)),
        Algorithm::Rbpf => {
            Frontend::Rbpf(Box::new(Rbpf::new(RbpfConfig { seed: cfg.seed, ..Default::default() }, cfg.start)?))
        }
        Algorithm::Submap => Frontend::Submap(Box::new(SubmapSlam::new(SubmapConfig::default(), cfg.start)?)),
    };
    let mut gate = GateStats::default();
    let mut kept: Vec<&LaserScan> = Vec::new();
    let mut planar: Vec<Stamped<Pose2>> = Vec::new();
    for scan in &record.scans {
        match gate_scan(scan, record.nearest_imu(scan.timestamp), cfg.gate_threshold, cfg.gate_tolerance) {
            GateDecision::Drop => {
                gate.dropped += 1;
                continue;
            }
            GateDecision::KeepUnsynced => gate.unsynced += 1,
            GateDecision::Keep => {}
        }
        gate.kept += 1;
        kept.push(scan);
        let pose = match &mut frontend {
            Frontend::Hector(h) => h.process_scan(scan),
            Frontend::Rbpf(f) => f.process_scan(scan),
            Frontend::Submap(s) => s.process_scan(scan)?,
        };
        planar.push(Stamped { t: scan.timestamp, pose });
    }
    let (planar, map, graph_json) = match frontend {
        Frontend::Hector(h) => (planar, h.pyramid().finest().clone(), None),
        Frontend::Rbpf(f) => (planar, f.best_map().clone(), None),
        Frontend::Submap(mut s) => {
            s.finalize()?;
            let traj = s.trajectory();
            // Submap grids live in their own frames; render one global map
            // from the optimized node poses instead.
            let mut map = OccupancyGrid::centered(DEFAULT_RESOLUTION, DEFAULT_EXTENT, &cfg.start)?;
            for (scan, node) in kept.iter().zip(traj.iter()) {
                map.insert_scan(&node.pose, scan);
            }
            (traj.samples().to_vec(), map, Some(s.graph().to_json()))
        }
    };
    if planar.is_empty() {
        return Err(Error::data("record", 0, "no scans survived gating"));
    }
    let mut out = PipelineOutput {
        estimate: Trajectory::new(),
        map,
        gate,
        blind_zone_samples: 0,
        stale_altitude_samples: 0,
        graph_json,
    };
    let mut fuser = cfg.fusion.map(Fuser::new).transpose()?;
    let mut samples = Vec::with_capacity(planar.len());
    for s in planar {
        let pose = match &mut fuser {
            Some(f) => {
                let fused = f.fuse(&s.pose, record.nearest_alt(s.t), record.nearest_imu(s.t));
                out.blind_zone_samples += fused.blind_zone as usize;
                out.stale_altitude_samples += fused.stale as usize;
                fused.pose
            }
            None => Pose3::from_planar(&s.pose),
        };
        samples.push(Stamped { t: s.t, pose });
    }
    out.estimate = Trajectory::from_samples(samples)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, Scenario, SimConfig, World};

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!(matches!("gmapping".parse::<Algorithm>(), Err(Error::Config(_))));
    }

    #[test]
    fn one_estimate_row_per_kept_scan() {
        let rec = simulate(&SimConfig::for_scenario(Scenario::RectFast, World::lab(), 1, 0.0)).unwrap();
        let out = run_pipeline(&rec, &PipelineConfig::new(Algorithm::Hector, 1)).unwrap();
        assert_eq!(out.gate.dropped, 0);
        assert_eq!(out.estimate.len(), rec.scans.len());
        assert!(out.graph_json.is_none());
    }

    #[test]
    fn tilted_scans_are_dropped() {
        let mut rec = simulate(&SimConfig::for_scenario(Scenario::RectFast, World::lab(), 1, 0.0)).unwrap();
        for s in rec.imu.iter_mut().filter(|s| s.timestamp > 2.0 && s.timestamp < 3.0) {
            s.roll = 20f64.to_radians();
        }
        let out = run_pipeline(&rec, &PipelineConfig::new(Algorithm::Hector, 1)).unwrap();
        assert!(out.gate.dropped >= 9);
        assert_eq!(out.estimate.len(), rec.scans.len() - out.gate.dropped);
    }

    #[test]
    fn fusion_fills_altitude() {
        let rec = simulate(&SimConfig::for_scenario(Scenario::RectFast, World::lab(), 1, 0.0)).unwrap();
        let mut cfg = PipelineConfig::new(Algorithm::Submap, 1);
        cfg.fusion = Some(FusionConfig::default());
        let out = run_pipeline(&rec, &cfg).unwrap();
        assert!(out.graph_json.is_some());
        for s in out.estimate.iter() {
            assert!((s.pose.z - 1.0).abs() < 0.1, "{:?}", s.pose);
        }
    }
}
