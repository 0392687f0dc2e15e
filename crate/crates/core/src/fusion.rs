//! Lift planar SLAM poses to 3D with a downward rangefinder and IMU attitude.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Pose2, Pose3};
use crate::sim::{AltSample, ImuSample, ALTIMETER_MAX, ALTIMETER_MIN, ALTIMETER_OFFSET};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Distance of the rangefinder below the vehicle reference point.
    pub sensor_offset: f64,
    pub alt_min: f64,
    pub alt_max: f64,
    /// Project the slant range onto the vertical using roll and pitch.
    pub tilt_compensation: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            sensor_offset: ALTIMETER_OFFSET,
            alt_min: ALTIMETER_MIN,
            alt_max: ALTIMETER_MAX,
            tilt_compensation: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alt_min < self.alt_max) || !(self.sensor_offset >= 0.0) {
            return Err(Error::Config(format!(
                "fusion needs alt_min < alt_max and a non-negative offset, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Altitudes of the vehicle reference the rangefinder can resolve.
    pub fn effective_range(&self) -> (f64, f64) {
        (self.alt_min + self.sensor_offset, self.alt_max + self.sensor_offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPose {
    pub pose: Pose3,
    /// Altitude is at or below the resolvable floor and was clamped to it.
    pub blind_zone: bool,
    /// No valid altimeter reading; `z` is the last valid value.
    pub stale: bool,
}

/// Stateful only in the last valid altitude it holds across dropouts.
#[derive(Debug, Clone)]
pub struct Fuser {
    cfg: FusionConfig,
    last_z: Option<f64>,
}

impl Fuser {
    pub fn new(cfg: FusionConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, last_z: None })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    pub fn fuse(&mut self, pose: &Pose2, alt: Option<&AltSample>, imu: Option<&ImuSample>) -> FusedPose {
        let (roll, pitch) = imu.map_or((0.0, 0.0), |s| (s.roll, s.pitch));
        let (floor, ceiling) = self.cfg.effective_range();
        let (z, blind_zone, stale) = match alt {
            Some(a) if a.valid => {
                let vertical = if self.cfg.tilt_compensation { a.range * roll.cos() * pitch.cos() } else { a.range };
                let z = self.cfg.sensor_offset + vertical;
                if a.saturated || z <= floor {
                    (floor, true, false)
                } else {
                    (z, false, false)
                }
            }
            _ => (self.last_z.unwrap_or(ceiling), false, true),
        };
        if !stale {
            self.last_z = Some(z);
        }
        FusedPose { pose: Pose3::new(pose.x, pose.y, z, roll, pitch, pose.yaw), blind_zone, stale }
    }
}
