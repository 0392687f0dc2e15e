//! Trajectory error evaluation: truth alignment, displacement RMSE, yaw
//! error, delay estimation and per-approach aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{angular_diff, Pose3, Trajectory};

pub const DEFAULT_STALE_WINDOW: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedPair {
    pub timestamp: f64,
    pub truth: Pose3,
    pub estimate: Pose3,
    /// Truth was frozen around this instant; excluded from every metric.
    pub stale: bool,
}

/// Which coordinates enter the displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// x and y only.
    #[default]
    Planar,
    /// x, y and z.
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RmseMode {
    /// Root mean square of the per-pair position error norm.
    #[default]
    ErrorNorm,
    /// Root mean square of the difference between the truth's and the
    /// estimate's distances from the coordinate origin.
    LiteralDiff,
}

impl RmseMode {
    pub fn name(&self) -> &'static str {
        match self {
            RmseMode::ErrorNorm => "error_norm",
            RmseMode::LiteralDiff => "literal_diff",
        }
    }
}

pub fn displacement2(truth: &Pose3, est: &Pose3) -> f64 {
    (truth.x - est.x).hypot(truth.y - est.y)
}

pub fn displacement3(truth: &Pose3, est: &Pose3) -> f64 {
    let (dx, dy, dz) = (truth.x - est.x, truth.y - est.y, truth.z - est.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub fn displacement(metric: Metric, truth: &Pose3, est: &Pose3) -> f64 {
    match metric {
        Metric::Planar => displacement2(truth, est),
        Metric::Spatial => displacement3(truth, est),
    }
}

fn origin_distance(metric: Metric, p: &Pose3) -> f64 {
    displacement(metric, p, &Pose3::default())
}

/// Lengths of runs of bit-identical consecutive truth poses, indexed by sample.
fn frozen_run_durations(truth: &Trajectory<Pose3>) -> Vec<f64> {
    let s = truth.samples();
    let mut out = vec![0.0; s.len()];
    let mut start = 0;
    for i in 1..=s.len() {
        if i == s.len() || s[i].pose != s[start].pose {
            let dur = s[i - 1].t - s[start].t;
            out[start..i].fill(dur);
            start = i;
        }
    }
    out
}

/// Pair every estimate inside the truth span with the truth interpolated at
/// its timestamp. A pair is stale when the truth sample at or before it
/// belongs to a run of identical samples lasting longer than `stale_window`.
pub fn align(truth: &Trajectory<Pose3>, est: &Trajectory<Pose3>, stale_window: f64) -> Result<Vec<AlignedPair>> {
    let (t0, t1) = truth.span().ok_or_else(|| Error::Alignment("ground truth is empty".into()))?;
    let (e0, e1) = est.span().ok_or_else(|| Error::Alignment("estimate is empty".into()))?;
    if e1 < t0 || e0 > t1 {
        return Err(Error::Alignment(format!(
            "no temporal overlap: truth spans [{t0:.6}, {t1:.6}] s, estimate [{e0:.6}, {e1:.6}] s"
        )));
    }
    let frozen = frozen_run_durations(truth);
    let pairs: Vec<AlignedPair> = est
        .iter()
        .filter_map(|s| {
            let truth_pose = truth.interpolate_at(s.t)?;
            let i = truth.bracket(s.t)?;
            Some(AlignedPair { timestamp: s.t, truth: truth_pose, estimate: s.pose, stale: frozen[i] > stale_window })
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::Alignment("no estimate falls inside the ground-truth span".into()));
    }
    Ok(pairs)
}

fn usable(pairs: &[AlignedPair]) -> Result<Vec<&AlignedPair>> {
    let ok: Vec<_> = pairs.iter().filter(|p| !p.stale).collect();
    if ok.is_empty() {
        return Err(Error::Evaluation(format!("no usable pairs ({} stale)", pairs.len())));
    }
    Ok(ok)
}

/// Position RMSE in centimeters.
pub fn rmse(pairs: &[AlignedPair], mode: RmseMode, metric: Metric) -> Result<f64> {
    let ok = usable(pairs)?;
    let sum: f64 = ok
        .iter()
        .map(|p| {
            let d = match mode {
                RmseMode::ErrorNorm => displacement(metric, &p.truth, &p.estimate),
                RmseMode::LiteralDiff => origin_distance(metric, &p.truth) - origin_distance(metric, &p.estimate),
            };
            d * d
        })
        .sum();
    Ok((sum / ok.len() as f64).sqrt() * 100.0)
}

/// Yaw RMSE in degrees.
pub fn yaw_rmse(pairs: &[AlignedPair]) -> Result<f64> {
    let ok = usable(pairs)?;
    let sum: f64 = ok.iter().map(|p| angular_diff(p.truth.yaw, p.estimate.yaw).powi(2)).sum();
    Ok((sum / ok.len() as f64).sqrt().to_degrees())
}

/// Remove 2π jumps so the series is continuous.
pub fn unwrap_angles(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for (i, a) in series.iter().enumerate() {
        if i == 0 {
            acc = *a;
        } else {
            acc += angular_diff(*a, series[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// Truth yaw sampled at `times` (which must lie in the truth span).
pub fn resample_yaw(truth: &Trajectory<Pose3>, times: &[f64]) -> Vec<f64> {
    times.iter().filter_map(|t| truth.interpolate_at(*t).map(|p| p.yaw)).collect()
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    (va > 1e-18 && vb > 1e-18).then(|| cov / (va * vb).sqrt())
}

/// Lag (seconds, ≥ 0) by which `est_yaw` trails `truth_yaw`, both sampled on
/// the same uniform grid of spacing `dt`: the integer lag in `[0, max_lag]`
/// maximizing the correlation of the unwrapped series. Ties go to the
/// smaller lag. `None` when no lag has non-zero variance on both sides.
pub fn estimate_delay(truth_yaw: &[f64], est_yaw: &[f64], dt: f64, max_lag: f64) -> Option<f64> {
    let n = truth_yaw.len().min(est_yaw.len());
    if n < 3 || !(dt > 0.0) {
        return None;
    }
    let truth = unwrap_angles(&truth_yaw[..n]);
    let est = unwrap_angles(&est_yaw[..n]);
    let max_k = ((max_lag / dt).round() as usize).min(n - 2);
    let mut best: Option<(usize, f64)> = None;
    for k in 0..=max_k {
        if let Some(c) = pearson(&truth[..n - k], &est[k..]) {
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((k, c));
            }
        }
    }
    best.map(|(k, _)| k as f64 * dt)
}

/// Arithmetic mean of the per-scenario RMSE values.
pub fn aggregate(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Evaluation("nothing to aggregate".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub approach: String,
    pub rmse_cm: f64,
    pub yaw_rmse_deg: f64,
    /// `None` when the yaw series is flat and the lag is undefined.
    pub delay_s: Option<f64>,
    pub pairs: usize,
    pub stale_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: RmseMode,
    pub metric: Metric,
    pub results: Vec<ScenarioResult>,
    /// Mean RMSE (cm) per approach over the scenarios present.
    pub averages: BTreeMap<String, f64>,
}

/// Lag search horizon used by [`evaluate`].
pub const DEFAULT_MAX_LAG: f64 = 2.0;

/// Score one estimate against its ground truth.
pub fn evaluate(
    scenario: &str,
    approach: &str,
    truth: &Trajectory<Pose3>,
    est: &Trajectory<Pose3>,
    mode: RmseMode,
    metric: Metric,
) -> Result<(ScenarioResult, Vec<AlignedPair>)> {
    let pairs = align(truth, est, DEFAULT_STALE_WINDOW)?;
    let rmse_cm = rmse(&pairs, mode, metric)?;
    let yaw = yaw_rmse(&pairs)?;
    let ok: Vec<_> = pairs.iter().filter(|p| !p.stale).collect();
    let dt = if ok.len() > 1 { (ok[ok.len() - 1].timestamp - ok[0].timestamp) / (ok.len() - 1) as f64 } else { 0.0 };
    let truth_yaw: Vec<f64> = ok.iter().map(|p| p.truth.yaw).collect();
    let est_yaw: Vec<f64> = ok.iter().map(|p| p.estimate.yaw).collect();
    let delay = estimate_delay(&truth_yaw, &est_yaw, dt, DEFAULT_MAX_LAG);
    Ok((
        ScenarioResult {
            scenario: scenario.to_string(),
            approach: approach.to_string(),
            rmse_cm,
            yaw_rmse_deg: yaw,
            delay_s: delay,
            pairs: pairs.len(),
            stale_pairs: pairs.len() - ok.len(),
        },
        pairs,
    ))
}

impl EvalReport {
    pub fn new(mode: RmseMode, metric: Metric, results: Vec<ScenarioResult>) -> Result<Self> {
        let mut by_approach: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &results {
            by_approach.entry(r.approach.clone()).or_default().push(r.rmse_cm);
        }
        let averages = by_approach.into_iter().map(|(k, v)| aggregate(&v).map(|m| (k, m))).collect::<Result<_>>()?;
        Ok(Self { mode, metric, results, averages })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Approaches as rows, scenarios as columns, plus the average column.
    pub fn to_table(&self) -> String {
        let mut scenarios: Vec<&str> = Vec::new();
        for r in &self.results {
            if !scenarios.contains(&r.scenario.as_str()) {
                scenarios.push(&r.scenario);
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "RMSE (cm), mode {}, {:?} displacement", self.mode.name(), self.metric);
        let _ = write!(out, "{:<14}", "approach");
        for s in &scenarios {
            let _ = write!(out, "{:>14}", s);
        }
        let _ = writeln!(out, "{:>10}", "average");
        for (approach, avg) in &self.averages {
            let _ = write!(out, "{:<14}", approach);
            for s in &scenarios {
                match self.results.iter().find(|r| &r.approach == approach && r.scenario == *s) {
                    Some(r) => {
                        let _ = write!(out, "{:>14.2}", r.rmse_cm);
                    }
                    None => {
                        let _ = write!(out, "{:>14}", "-");
                    }
                }
            }
            let _ = writeln!(out, "{:>10.2}", avg);
        }
        out
    }
}

/// Per-pair CSV for external plotting.
pub fn write_pairs_csv(path: &Path, pairs: &[AlignedPair], metric: Metric) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let header = [
        "t",
        "truth_x",
        "truth_y",
        "truth_z",
        "truth_yaw",
        "est_x",
        "est_y",
        "est_z",
        "est_yaw",
        "displacement",
        "stale",
    ];
    w.write_record(header).map_err(|e| Error::io(path, e.into()))?;
    for p in pairs {
        let f = |v: f64| format!("{v:.6}");
        let row = [
            f(p.timestamp),
            f(p.truth.x),
            f(p.truth.y),
            f(p.truth.z),
            f(p.truth.yaw),
            f(p.estimate.x),
            f(p.estimate.y),
            f(p.estimate.z),
            f(p.estimate.yaw),
            f(displacement(metric, &p.truth, &p.estimate)),
            (p.stale as u8).to_string(),
        ];
        w.write_record(&row).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn p3(x: f64, y: f64, z: f64) -> Pose3 {
        Pose3 { x, y, z, ..Default::default() }
    }

    fn pair(truth: Pose3, estimate: Pose3) -> AlignedPair {
        AlignedPair { timestamp: 0.0, truth, estimate, stale: false }
    }

    fn line_truth() -> Trajectory<Pose3> {
        let mut t = Trajectory::new();
        for i in 0..=240 {
            t.push(i as f64 / 240.0, p3(i as f64 / 240.0, 0.0, 0.0)).unwrap();
        }
        t
    }

    #[test]
    fn align_examples() {
        let truth = line_truth();
        let mut est = Trajectory::new();
        est.push(0.25, Pose3::default()).unwrap();
        est.push(0.5 + 0.5 / 240.0, Pose3::default()).unwrap();
        let pairs = align(&truth, &est, 0.5).unwrap();
        assert_eq!(pairs[0].truth.x, 0.25);
        assert!((pairs[1].truth.x - (0.5 + 0.5 / 240.0)).abs() < 1e-12);

        let mut two = Trajectory::new();
        two.push(0.0, p3(0.0, 0.0, 0.0)).unwrap();
        two.push(1.0, p3(1.0, 0.0, 0.0)).unwrap();
        let mut mid = Trajectory::new();
        mid.push(0.5, Pose3::default()).unwrap();
        let pairs = align(&two, &mid, 2.0).unwrap();
        assert!((pairs[0].truth.x - 0.5).abs() < 1e-12 && pairs[0].truth.y == 0.0);
    }

    #[test]
    fn align_requires_overlap() {
        let truth = line_truth();
        let mut est = Trajectory::new();
        est.push(5.0, Pose3::default()).unwrap();
        assert!(matches!(align(&truth, &est, 0.5), Err(Error::Alignment(_))));
        assert!(align(&Trajectory::new(), &est, 0.5).is_err());
    }

    #[test]
    fn frozen_truth_marks_pairs_stale() {
        let mut truth = Trajectory::new();
        for i in 0..=480 {
            let t = i as f64 / 240.0;
            let x = if (0.5..=1.5).contains(&t) { 0.5 } else { t };
            truth.push(t, p3(x, 0.0, 0.0)).unwrap();
        }
        let mut est = Trajectory::new();
        for t in [0.2, 1.0, 1.8] {
            est.push(t, Pose3::default()).unwrap();
        }
        let pairs = align(&truth, &est, 0.5).unwrap();
        assert_eq!(pairs.iter().map(|p| p.stale).collect::<Vec<_>>(), vec![false, true, false]);
    }

    #[test]
    fn displacement_examples() {
        let o = p3(0.0, 0.0, 0.0);
        assert_eq!(displacement2(&o, &o), 0.0);
        assert_eq!(displacement2(&p3(1.0, 2.0, 0.0), &p3(4.0, 6.0, 0.0)), 5.0);
        assert_eq!(displacement2(&o, &p3(0.0, -2.0, 0.0)), 2.0);
        assert_eq!(displacement3(&o, &o), 0.0);
        assert_eq!(displacement3(&o, &p3(1.0, 2.0, 2.0)), 3.0);
        assert!((displacement3(&o, &p3(0.0, 0.0, 0.38)) - 0.38).abs() < 1e-15);
    }

    #[test]
    fn rmse_examples() {
        let o = p3(0.0, 0.0, 0.0);
        let same = vec![pair(o, o); 3];
        assert_eq!(rmse(&same, RmseMode::ErrorNorm, Metric::Planar).unwrap(), 0.0);
        let pairs = vec![pair(o, p3(0.03, 0.0, 0.0)), pair(o, p3(0.0, 0.04, 0.0))];
        let r = rmse(&pairs, RmseMode::ErrorNorm, Metric::Planar).unwrap();
        assert!((r - (12.5f64).sqrt()).abs() < 1e-9);
        let stale = vec![AlignedPair { stale: true, ..pairs[0] }];
        assert!(matches!(rmse(&stale, RmseMode::ErrorNorm, Metric::Planar), Err(Error::Evaluation(_))));
    }

    /// Radial drift keeps the estimate on the ray through the truth, so the
    /// difference of origin distances equals the error norm exactly.
    #[test]
    fn rmse_modes_agree_on_radial_drift() {
        let pairs: Vec<_> = (1..50)
            .map(|i| {
                let a = i as f64 * 0.37;
                let r = 0.1 * i as f64;
                let scale = 1.0 + 0.01 * i as f64;
                pair(p3(r * a.cos(), r * a.sin(), 0.0), p3(scale * r * a.cos(), scale * r * a.sin(), 0.0))
            })
            .collect();
        // Brute force: direct per-pair |d_t - d_e| against the error norm.
        for p in &pairs {
            let lit = (p.truth.x.hypot(p.truth.y) - p.estimate.x.hypot(p.estimate.y)).abs();
            assert!((lit - displacement2(&p.truth, &p.estimate)).abs() < 1e-12);
        }
        let a = rmse(&pairs, RmseMode::ErrorNorm, Metric::Planar).unwrap();
        let b = rmse(&pairs, RmseMode::LiteralDiff, Metric::Planar).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn yaw_rmse_examples() {
        let yaw = |a: f64| Pose3 { yaw: a, ..Default::default() };
        let deg = |d: f64| d.to_radians();
        assert_eq!(yaw_rmse(&[pair(yaw(0.3), yaw(0.3))]).unwrap(), 0.0);
        let pairs: Vec<_> = (0..7).map(|i| pair(yaw(0.1 * i as f64), yaw(0.1 * i as f64 + deg(10.0)))).collect();
        assert!((yaw_rmse(&pairs).unwrap() - 10.0).abs() < 1e-9);
        let pairs = [pair(yaw(0.0), yaw(deg(90.0))), pair(yaw(0.0), yaw(deg(-90.0)))];
        assert!((yaw_rmse(&pairs).unwrap() - 90.0).abs() < 1e-9);
        // Errors wrap across the seam.
        let pairs = [pair(yaw(PI - 0.01), yaw(-PI + 0.01))];
        assert!((yaw_rmse(&pairs).unwrap() - 0.02f64.to_degrees()).abs() < 1e-9);
    }

    fn wiggle(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.05).sin() * 1.5 + (i as f64 * 0.013).cos()).collect()
    }

    #[test]
    fn delay_examples() {
        let s = wiggle(200);
        assert_eq!(estimate_delay(&s, &s, 0.1, 2.0), Some(0.0));
        let mut shifted = vec![s[0]; 5];
        shifted.extend_from_slice(&s[..195]);
        let d = estimate_delay(&s, &shifted, 0.1, 2.0).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        assert_eq!(estimate_delay(&[1.0; 50], &[1.0; 50], 0.1, 2.0), None);
    }

    #[test]
    fn unwrap_removes_seam_jumps() {
        let u = unwrap_angles(&[PI - 0.1, -PI + 0.1, -PI + 0.3]);
        assert!((u[1] - (PI + 0.1)).abs() < 1e-12 && (u[2] - (PI + 0.3)).abs() < 1e-12);
    }

    #[test]
    fn aggregate_examples() {
        let hector = aggregate(&[9.39, 14.83, 11.47, 24.69]).unwrap();
        assert!((hector - 15.09).abs() <= 0.01);
        let carto = aggregate(&[16.70, 14.94, 15.95, 24.56]).unwrap();
        assert!((carto - 18.04).abs() <= 0.01);
        assert_eq!(aggregate(&[19.08]).unwrap(), 19.08);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn report_table_has_average_column() {
        let mk = |s: &str, a: &str, v: f64| ScenarioResult {
            scenario: s.into(),
            approach: a.into(),
            rmse_cm: v,
            yaw_rmse_deg: 0.0,
            delay_s: None,
            pairs: 1,
            stale_pairs: 0,
        };
        let report = EvalReport::new(
            RmseMode::ErrorNorm,
            Metric::Planar,
            vec![mk("a", "hector", 1.0), mk("b", "hector", 3.0), mk("a", "rbpf", 5.0)],
        )
        .unwrap();
        assert_eq!(report.averages["hector"], 2.0);
        let table = report.to_table();
        assert!(table.contains("average"));
        assert!(table.lines().any(|l| l.starts_with("rbpf") && l.contains('-')));
        let back: EvalReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }
}
