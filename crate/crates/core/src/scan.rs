use serde::{Deserialize, Serialize};

use crate::geom::Pose2;

/// One sweep of a planar range finder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserScan {
    pub timestamp: f64,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub ranges: Vec<f64>,
    pub valid: Vec<bool>,
}

impl LaserScan {
    /// Build a scan, marking a beam valid iff its range is finite and within
    /// `[range_min, range_max]`.
    pub fn from_ranges(
        timestamp: f64,
        angle_min: f64,
        angle_increment: f64,
        range_min: f64,
        range_max: f64,
        ranges: Vec<f64>,
    ) -> Self {
        let valid = ranges.iter().map(|r| r.is_finite() && *r >= range_min && *r <= range_max).collect();
        Self { timestamp, angle_min, angle_increment, range_min, range_max, ranges, valid }
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angle_min + self.angle_increment * i as f64
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Endpoints of valid beams in the sensor frame.
    pub fn local_points(&self) -> Vec<[f64; 2]> {
        self.ranges
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter(|(_, (_, v))| **v)
            .map(|(i, (r, _))| {
                let (s, c) = self.beam_angle(i).sin_cos();
                [r * c, r * s]
            })
            .collect()
    }

    /// Endpoints of valid beams mapped through `pose`.
    pub fn world_points(&self, pose: &Pose2) -> Vec<[f64; 2]> {
        self.local_points().into_iter().map(|p| pose.transform_point(p)).collect()
    }
}
