//! C ABI over `lidar2d`.
//!
//! Front ends are opaque handles created by `*_new` and released by
//! `*_free`. Every fallible call returns an [`L2dStatus`]; on failure
//! [`l2d_last_error`] describes the problem until the next call on the same
//! thread. No function unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use lidar2d::eval::{align, Metric, RmseMode, DEFAULT_STALE_WINDOW};
use lidar2d::fusion::{Fuser, FusionConfig};
use lidar2d::geom::{Pose2, Pose3, Stamped, Trajectory};
use lidar2d::hector::{HectorConfig, HectorState};
use lidar2d::rbpf::{Rbpf, RbpfConfig};
use lidar2d::sim::{AltSample, ImuSample};
use lidar2d::submap::{SubmapConfig, SubmapSlam};
use lidar2d::{Error, LaserScan};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Alignment = 5,
    Evaluation = 6,
    Disconnected = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2dRmseMode {
    ErrorNorm = 0,
    LiteralDiff = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2dMetric {
    Planar = 0,
    Spatial = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct L2dPose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct L2dPose3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// A pose with its timestamp in seconds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct L2dStampedPose3 {
    pub t: f64,
    pub pose: L2dPose3,
}

/// One sweep. `ranges` points to `count` values; beams outside
/// `[range_min, range_max]` or non-finite are treated as invalid.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct L2dScan {
    pub timestamp: f64,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub ranges: *const f64,
    pub count: usize,
}

pub struct L2dHector(HectorState);
pub struct L2dRbpf(Rbpf);
pub struct L2dSubmap(SubmapSlam);

impl From<L2dPose2> for Pose2 {
    fn from(p: L2dPose2) -> Self {
        Pose2::new(p.x, p.y, p.yaw)
    }
}

impl From<Pose2> for L2dPose2 {
    fn from(p: Pose2) -> Self {
        L2dPose2 { x: p.x, y: p.y, yaw: p.yaw }
    }
}

impl From<L2dPose3> for Pose3 {
    fn from(p: L2dPose3) -> Self {
        Pose3::new(p.x, p.y, p.z, p.roll, p.pitch, p.yaw)
    }
}

impl From<Pose3> for L2dPose3 {
    fn from(p: Pose3) -> Self {
        L2dPose3 { x: p.x, y: p.y, z: p.z, roll: p.roll, pitch: p.pitch, yaw: p.yaw }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(L2dStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => L2dStatus::InvalidArgument,
            Error::Config(_) => L2dStatus::Config,
            Error::Data { .. } => L2dStatus::Data,
            Error::Alignment(_) => L2dStatus::Alignment,
            Error::Evaluation(_) => L2dStatus::Evaluation,
            Error::Disconnected(_) => L2dStatus::Disconnected,
            Error::Io { .. } => L2dStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(L2dStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, record any failure and convert it to a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> L2dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            L2dStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            L2dStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn to_scan(scan: *const L2dScan) -> Result<LaserScan, Failure> {
    let s = deref(scan, "scan")?;
    let ranges = slice(s.ranges, s.count, "scan.ranges")?.to_vec();
    if !(s.angle_increment.is_finite() && s.angle_increment != 0.0 && s.timestamp.is_finite()) {
        return Err(Failure(
            L2dStatus::InvalidArgument,
            "scan needs a finite timestamp and non-zero angle increment".into(),
        ));
    }
    Ok(LaserScan::from_ranges(s.timestamp, s.angle_min, s.angle_increment, s.range_min, s.range_max, ranges))
}

unsafe fn start_pose(start: *const L2dPose2) -> Pose2 {
    start.as_ref().map_or(Pose2::IDENTITY, |p| Pose2::from(*p))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    let slot = deref_mut(out, "out")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn l2d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn l2d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create a Gauss-Newton scan-matching front end. `start` may be null for
/// the origin.
///
/// # Safety
/// `start` must be null or valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_hector_new(start: *const L2dPose2, out: *mut *mut L2dHector) -> L2dStatus {
    guard(|| emit(out, L2dHector(HectorState::new(HectorConfig::default(), start_pose(start))?)))
}

/// # Safety
/// `handle` must come from [`l2d_hector_new`]; `scan` and `pose` must be valid.
#[no_mangle]
pub unsafe extern "C" fn l2d_hector_process_scan(
    handle: *mut L2dHector,
    scan: *const L2dScan,
    pose: *mut L2dPose2,
) -> L2dStatus {
    guard(|| {
        let h = deref_mut(handle, "handle")?;
        let scan = to_scan(scan)?;
        let out = deref_mut(pose, "pose")?;
        *out = h.0.process_scan(&scan).into();
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`l2d_hector_new`], and not be used again.
#[no_mangle]
pub unsafe extern "C" fn l2d_hector_free(handle: *mut L2dHector) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Create a particle filter front end with default settings and `seed`.
///
/// # Safety
/// `start` must be null or valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_rbpf_new(seed: u64, start: *const L2dPose2, out: *mut *mut L2dRbpf) -> L2dStatus {
    guard(|| emit(out, L2dRbpf(Rbpf::new(RbpfConfig { seed, ..Default::default() }, start_pose(start))?)))
}

/// # Safety
/// `handle` must come from [`l2d_rbpf_new`]; `scan` and `pose` must be valid.
#[no_mangle]
pub unsafe extern "C" fn l2d_rbpf_process_scan(
    handle: *mut L2dRbpf,
    scan: *const L2dScan,
    pose: *mut L2dPose2,
) -> L2dStatus {
    guard(|| {
        let h = deref_mut(handle, "handle")?;
        let scan = to_scan(scan)?;
        let out = deref_mut(pose, "pose")?;
        *out = h.0.process_scan(&scan).into();
        Ok(())
    })
}

/// Effective sample size of the current particle weights.
///
/// # Safety
/// `handle` must come from [`l2d_rbpf_new`]; `n_eff` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_rbpf_n_eff(handle: *const L2dRbpf, n_eff: *mut f64) -> L2dStatus {
    guard(|| {
        let h = deref(handle, "handle")?;
        *deref_mut(n_eff, "n_eff")? = lidar2d::rbpf::n_eff(&h.0.particles().weights());
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`l2d_rbpf_new`], and not be used again.
#[no_mangle]
pub unsafe extern "C" fn l2d_rbpf_free(handle: *mut L2dRbpf) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Create a submap and pose-graph front end with default settings.
///
/// # Safety
/// `start` must be null or valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_submap_new(start: *const L2dPose2, out: *mut *mut L2dSubmap) -> L2dStatus {
    guard(|| emit(out, L2dSubmap(SubmapSlam::new(SubmapConfig::default(), start_pose(start))?)))
}

/// Online pose for `scan`. Fails once the handle has been finalized.
///
/// # Safety
/// `handle` must come from [`l2d_submap_new`]; `scan` and `pose` must be valid.
#[no_mangle]
pub unsafe extern "C" fn l2d_submap_process_scan(
    handle: *mut L2dSubmap,
    scan: *const L2dScan,
    pose: *mut L2dPose2,
) -> L2dStatus {
    guard(|| {
        let h = deref_mut(handle, "handle")?;
        let scan = to_scan(scan)?;
        let out = deref_mut(pose, "pose")?;
        *out = h.0.process_scan(&scan)?.into();
        Ok(())
    })
}

/// Finish the trailing submap and run a last loop-closure pass.
///
/// # Safety
/// `handle` must come from [`l2d_submap_new`].
#[no_mangle]
pub unsafe extern "C" fn l2d_submap_finalize(handle: *mut L2dSubmap) -> L2dStatus {
    guard(|| Ok(deref_mut(handle, "handle")?.0.finalize()?))
}

/// Copy the optimized trajectory, one pose per processed scan. Call with
/// `capacity` 0 to query the length through `len`.
///
/// # Safety
/// `handle` must come from [`l2d_submap_new`]; `poses` must hold `capacity`
/// entries; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_submap_trajectory(
    handle: *const L2dSubmap,
    poses: *mut L2dPose2,
    capacity: usize,
    len: *mut usize,
) -> L2dStatus {
    guard(|| {
        let h = deref(handle, "handle")?;
        let traj = h.0.trajectory();
        *deref_mut(len, "len")? = traj.len();
        if capacity == 0 {
            return Ok(());
        }
        if capacity < traj.len() {
            return Err(Failure(
                L2dStatus::BufferTooSmall,
                format!("need {} poses, buffer holds {capacity}", traj.len()),
            ));
        }
        if poses.is_null() {
            return Err(null("poses"));
        }
        for (k, s) in traj.iter().enumerate() {
            *poses.add(k) = s.pose.into();
        }
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or come from [`l2d_submap_new`], and not be used again.
#[no_mangle]
pub unsafe extern "C" fn l2d_submap_free(handle: *mut L2dSubmap) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

unsafe fn trajectory(p: *const L2dStampedPose3, n: usize, what: &str) -> Result<Trajectory<Pose3>, Failure> {
    let samples = slice(p, n, what)?.iter().map(|s| Stamped { t: s.t, pose: s.pose.into() }).collect();
    Ok(Trajectory::from_samples(samples)?)
}

/// Position RMSE in centimeters of `est` against `truth`, both sorted by
/// strictly increasing time.
///
/// # Safety
/// `truth` and `est` must hold `n_truth` and `n_est` entries; `rmse_cm`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_rmse(
    truth: *const L2dStampedPose3,
    n_truth: usize,
    est: *const L2dStampedPose3,
    n_est: usize,
    mode: L2dRmseMode,
    metric: L2dMetric,
    rmse_cm: *mut f64,
) -> L2dStatus {
    guard(|| {
        let truth = trajectory(truth, n_truth, "truth")?;
        let est = trajectory(est, n_est, "est")?;
        let out = deref_mut(rmse_cm, "rmse_cm")?;
        let mode = match mode {
            L2dRmseMode::ErrorNorm => RmseMode::ErrorNorm,
            L2dRmseMode::LiteralDiff => RmseMode::LiteralDiff,
        };
        let metric = match metric {
            L2dMetric::Planar => Metric::Planar,
            L2dMetric::Spatial => Metric::Spatial,
        };
        *out = lidar2d::eval::rmse(&align(&truth, &est, DEFAULT_STALE_WINDOW)?, mode, metric)?;
        Ok(())
    })
}

/// Mean of `n` per-scenario RMSE values.
///
/// # Safety
/// `values` must hold `n` entries; `mean` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_aggregate(values: *const f64, n: usize, mean: *mut f64) -> L2dStatus {
    guard(|| {
        let v = slice(values, n, "values")?;
        *deref_mut(mean, "mean")? = lidar2d::eval::aggregate(v)?;
        Ok(())
    })
}

/// Vehicle altitudes the default altimeter setup can resolve.
///
/// # Safety
/// `min` and `max` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_effective_range(min: *mut f64, max: *mut f64) -> L2dStatus {
    guard(|| {
        let (lo, hi) = FusionConfig::default().effective_range();
        *deref_mut(min, "min")? = lo;
        *deref_mut(max, "max")? = hi;
        Ok(())
    })
}

/// Lift one planar pose to 3D from a single altimeter reading and attitude,
/// with the default fusion settings. `saturated` marks a reading pinned at
/// the sensor minimum.
///
/// # Safety
/// `pose` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2d_fuse(
    pose: *const L2dPose2,
    range: f64,
    saturated: bool,
    roll: f64,
    pitch: f64,
    out: *mut L2dPose3,
) -> L2dStatus {
    guard(|| {
        let p = Pose2::from(*deref(pose, "pose")?);
        let out = deref_mut(out, "out")?;
        let mut fuser = Fuser::new(FusionConfig::default())?;
        let alt = AltSample { timestamp: 0.0, range, valid: range.is_finite(), saturated };
        let imu = ImuSample { timestamp: 0.0, roll, pitch, yaw: p.yaw };
        *out = fuser.fuse(&p, Some(&alt), Some(&imu)).pose.into();
        Ok(())
    })
}
