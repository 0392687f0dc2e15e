//! Planar and spatial poses, angle arithmetic and timestamped pose series.

use std::f64::consts::PI;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wrap an angle into `(-π, π]`.
///
/// Non-finite input is passed through unchanged; use [`try_normalize_angle`]
/// where it must be rejected.
pub fn normalize_angle(theta: f64) -> f64 {
    if !theta.is_finite() {
        return theta;
    }
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid maps -π to π already; -0.0 and tiny negatives land near 2π.
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

pub fn try_normalize_angle(theta: f64) -> Result<f64> {
    if theta.is_finite() {
        Ok(normalize_angle(theta))
    } else {
        Err(Error::InvalidArgument(format!("angle must be finite, got {theta}")))
    }
}

/// Signed shortest rotation taking `b` onto `a`.
pub fn angular_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

/// Rigid planar transform. `yaw` is measured from +x toward +y.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, yaw: 0.0 };

    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: normalize_angle(yaw) }
    }

    /// `self ⊕ other`: `other` is expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(self.x + c * other.x - s * other.y, self.y + s * other.x + c * other.y, self.yaw + other.yaw)
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(-c * self.x - s * self.y, s * self.x - c * self.y, -self.yaw)
    }

    /// `self⁻¹ ⊕ other`, the pose of `other` seen from `self`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    /// Map a point given in this pose's frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn translation_norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Spatial pose. Roll and pitch are carried through from the IMU; the planar
/// SLAM pipelines never estimate them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose3 {
    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { x, y, z, roll: normalize_angle(roll), pitch: normalize_angle(pitch), yaw: normalize_angle(yaw) }
    }

    pub fn from_planar(p: &Pose2) -> Self {
        Self { x: p.x, y: p.y, yaw: p.yaw, ..Default::default() }
    }

    pub fn planar(&self) -> Pose2 {
        Pose2 { x: self.x, y: self.y, yaw: self.yaw }
    }
}

/// Poses that can be blended between two timestamps.
pub trait Interpolate: Copy {
    /// `alpha = 0` returns `self`, `alpha = 1` returns `other`. Angles follow
    /// the shortest arc.
    fn interpolate(&self, other: &Self, alpha: f64) -> Self;
}

fn lerp(a: f64, b: f64, alpha: f64) -> f64 {
    a + (b - a) * alpha
}

fn slerp_angle(a: f64, b: f64, alpha: f64) -> f64 {
    normalize_angle(a + angular_diff(b, a) * alpha)
}

impl Interpolate for Pose2 {
    fn interpolate(&self, other: &Self, alpha: f64) -> Self {
        Pose2 {
            x: lerp(self.x, other.x, alpha),
            y: lerp(self.y, other.y, alpha),
            yaw: slerp_angle(self.yaw, other.yaw, alpha),
        }
    }
}

impl Interpolate for Pose3 {
    fn interpolate(&self, other: &Self, alpha: f64) -> Self {
        Pose3 {
            x: lerp(self.x, other.x, alpha),
            y: lerp(self.y, other.y, alpha),
            z: lerp(self.z, other.z, alpha),
            roll: slerp_angle(self.roll, other.roll, alpha),
            pitch: slerp_angle(self.pitch, other.pitch, alpha),
            yaw: slerp_angle(self.yaw, other.yaw, alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stamped<P> {
    pub t: f64,
    pub pose: P,
}

/// Time-ordered pose series with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<P> {
    samples: Vec<Stamped<P>>,
}

impl<P> Default for Trajectory<P> {
    fn default() -> Self {
        Self { samples: Vec::new() }
    }
}

impl<P: Copy> Trajectory<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<Stamped<P>>) -> Result<Self> {
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(Error::InvalidArgument(format!(
                    "trajectory timestamps must strictly increase (sample {} at {} after {})",
                    i + 1,
                    w[1].t,
                    w[0].t
                )));
            }
        }
        Ok(Self { samples })
    }

    /// Append a sample; rejects timestamps that do not advance.
    pub fn push(&mut self, t: f64, pose: P) -> Result<()> {
        if let Some(last) = self.samples.last() {
            if !(t > last.t) {
                return Err(Error::InvalidArgument(format!("timestamp {t} does not advance past {}", last.t)));
            }
        }
        self.samples.push(Stamped { t, pose });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Stamped<P>] {
        &self.samples
    }

    pub fn iter(&self) -> impl Iterator<Item = &Stamped<P>> {
        self.samples.iter()
    }

    pub fn first(&self) -> Option<&Stamped<P>> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&Stamped<P>> {
        self.samples.last()
    }

    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }

    pub fn map<Q: Copy>(&self, f: impl Fn(&P) -> Q) -> Trajectory<Q> {
        Trajectory { samples: self.samples.iter().map(|s| Stamped { t: s.t, pose: f(&s.pose) }).collect() }
    }

    /// Index of the last sample with `t_i <= t`, if any.
    pub fn bracket(&self, t: f64) -> Option<usize> {
        let idx = self.samples.partition_point(|s| s.t <= t);
        idx.checked_sub(1)
    }
}

impl<P: Interpolate> Trajectory<P> {
    /// Pose at `t`, linearly interpolated; `None` outside the sampled span.
    pub fn interpolate_at(&self, t: f64) -> Option<P> {
        let (t0, t1) = self.span()?;
        if t < t0 || t > t1 {
            return None;
        }
        let i = self.bracket(t)?;
        let a = &self.samples[i];
        if a.t == t || i + 1 == self.samples.len() {
            return Some(a.pose);
        }
        let b = &self.samples[i + 1];
        let alpha = (t - a.t) / (b.t - a.t);
        Some(a.pose.interpolate(&b.pose, alpha))
    }
}

impl<P> Index<usize> for Trajectory<P> {
    type Output = Stamped<P>;
    fn index(&self, i: usize) -> &Stamped<P> {
        &self.samples[i]
    }
}
