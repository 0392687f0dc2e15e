//! Planar lidar SLAM toolkit and simulation benchmark.
//!
//! Three SLAM front ends share one occupancy-grid core:
//!
//! * [`hector`]: odometry-free Gauss-Newton scan-to-map matching over a
//!   multi-resolution map pyramid.
//! * [`rbpf`]: a Rao-Blackwellized particle filter with scan-match refined
//!   proposals and adaptive resampling.
//! * [`submap`]: submap-based local matching with correlative loop-closure
//!   search and pose-graph optimization.
//!
//! [`sim`] produces deterministic synthetic scenario records, [`fusion`]
//! lifts planar poses to 3D with a downward rangefinder, and [`eval`] scores
//! estimates against ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geom;
pub mod gridmap;
pub mod hector;
pub mod pipeline;
pub mod rbpf;
pub mod record;
pub mod scan;
pub mod sim;
pub mod submap;

pub use error::{Error, Result};
pub use geom::{Pose2, Pose3, Trajectory};
pub use scan::LaserScan;
