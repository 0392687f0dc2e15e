//! On-disk formats: scenario records as JSON lines and estimates as CSV.
//!
//! A record holds one JSON object per line, merged across streams in time
//! order. Every line carries `type` (`truth`, `imu`, `alt` or `scan`) and
//! `t`, the timestamp in seconds written with six decimals:
//!
//! ```text
//! {"type":"truth","t":0.000000,"x":0.0,"y":0.0,"z":1.0,"roll":0.0,"pitch":0.0,"yaw":0.0}
//! {"type":"imu","t":0.000000,"roll":0.001,"pitch":-0.002,"yaw":0.0}
//! {"type":"alt","t":0.000000,"range":0.92,"valid":true,"saturated":false}
//! {"type":"scan","t":0.000000,"angle_min":0.0,"angle_increment":0.0174,"range_min":0.15,"range_max":12.0,"ranges":[3.0, ...]}
//! ```
//!
//! A scan beam is valid iff its range lies within `[range_min, range_max]`;
//! dropped beams are stored as `0.0`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::geom::{Pose3, Stamped, Trajectory};
use crate::scan::LaserScan;
use crate::sim::{AltSample, ImuSample, ScenarioRecord};

fn stamp(t: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{t:.6}")).expect("formatted float is valid JSON")
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LineOut<'a> {
    Truth { t: Box<RawValue>, x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64 },
    Imu { t: Box<RawValue>, roll: f64, pitch: f64, yaw: f64 },
    Alt { t: Box<RawValue>, range: f64, valid: bool, saturated: bool },
    Scan { t: Box<RawValue>, angle_min: f64, angle_increment: f64, range_min: f64, range_max: f64, ranges: &'a [f64] },
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum LineIn {
    Truth { t: f64, x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64 },
    Imu { t: f64, roll: f64, pitch: f64, yaw: f64 },
    Alt { t: f64, range: f64, valid: bool, saturated: bool },
    Scan { t: f64, angle_min: f64, angle_increment: f64, range_min: f64, range_max: f64, ranges: Vec<f64> },
}

impl LineIn {
    fn t(&self) -> f64 {
        match self {
            LineIn::Truth { t, .. } | LineIn::Imu { t, .. } | LineIn::Alt { t, .. } | LineIn::Scan { t, .. } => *t,
        }
    }
}

/// Serialize a record. Streams are merged by time; at equal times truth
/// comes first, then IMU, altimeter and scan.
pub fn write_record(w: &mut impl Write, rec: &ScenarioRecord) -> std::io::Result<()> {
    let mut lines: Vec<(f64, u8, usize)> = Vec::new();
    lines.extend(rec.ground_truth.iter().enumerate().map(|(i, s)| (s.t, 0, i)));
    lines.extend(rec.imu.iter().enumerate().map(|(i, s)| (s.timestamp, 1, i)));
    lines.extend(rec.alt.iter().enumerate().map(|(i, s)| (s.timestamp, 2, i)));
    lines.extend(rec.scans.iter().enumerate().map(|(i, s)| (s.timestamp, 3, i)));
    lines.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, kind, i) in lines {
        let line = match kind {
            0 => {
                let s = &rec.ground_truth.samples()[i];
                let p = s.pose;
                LineOut::Truth { t: stamp(s.t), x: p.x, y: p.y, z: p.z, roll: p.roll, pitch: p.pitch, yaw: p.yaw }
            }
            1 => {
                let s = &rec.imu[i];
                LineOut::Imu { t: stamp(s.timestamp), roll: s.roll, pitch: s.pitch, yaw: s.yaw }
            }
            2 => {
                let s = &rec.alt[i];
                LineOut::Alt { t: stamp(s.timestamp), range: s.range, valid: s.valid, saturated: s.saturated }
            }
            _ => {
                let s = &rec.scans[i];
                LineOut::Scan {
                    t: stamp(s.timestamp),
                    angle_min: s.angle_min,
                    angle_increment: s.angle_increment,
                    range_min: s.range_min,
                    range_max: s.range_max,
                    ranges: &s.ranges,
                }
            }
        };
        serde_json::to_writer(&mut *w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_record(path: &Path, rec: &ScenarioRecord) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_record(&mut w, rec).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Parse a record, reporting the offending line (1-based) for malformed
/// JSON, unknown types and timestamps that go backwards.
pub fn read_record(r: impl BufRead, source: &str) -> Result<ScenarioRecord> {
    let mut truth = Vec::new();
    let mut scans = Vec::new();
    let mut imu = Vec::new();
    let mut alt = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (idx, line) in r.lines().enumerate() {
        let n = idx + 1;
        let line = line.map_err(|e| Error::data(source, n, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LineIn = serde_json::from_str(&line).map_err(|e| Error::data(source, n, e.to_string()))?;
        let t = parsed.t();
        if !t.is_finite() {
            return Err(Error::data(source, n, "timestamp is not finite"));
        }
        if t < last {
            return Err(Error::data(
                source,
                n,
                format!("timestamp {t:.6} is earlier than the previous line ({last:.6})"),
            ));
        }
        last = t;
        let strictly_after = |prev: Option<f64>| prev.is_none_or(|p| t > p);
        match parsed {
            LineIn::Truth { x, y, z, roll, pitch, yaw, .. } => {
                if !strictly_after(truth.last().map(|s: &Stamped<Pose3>| s.t)) {
                    return Err(Error::data(source, n, "duplicate truth timestamp"));
                }
                truth.push(Stamped { t, pose: Pose3::new(x, y, z, roll, pitch, yaw) });
            }
            LineIn::Imu { roll, pitch, yaw, .. } => imu.push(ImuSample { timestamp: t, roll, pitch, yaw }),
            LineIn::Alt { range, valid, saturated, .. } => {
                alt.push(AltSample { timestamp: t, range, valid, saturated })
            }
            LineIn::Scan { angle_min, angle_increment, range_min, range_max, ranges, .. } => {
                if !strictly_after(scans.last().map(|s: &LaserScan| s.timestamp)) {
                    return Err(Error::data(source, n, "duplicate scan timestamp"));
                }
                scans.push(LaserScan::from_ranges(t, angle_min, angle_increment, range_min, range_max, ranges));
            }
        }
    }
    if truth.is_empty() {
        return Err(Error::data(source, 0, "record has no ground truth"));
    }
    let ground_truth = Trajectory::from_samples(truth).map_err(|e| Error::data(source, 0, e.to_string()))?;
    Ok(ScenarioRecord { ground_truth, scans, imu, alt })
}

pub fn load_record(path: &Path) -> Result<ScenarioRecord> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_record(BufReader::new(file), &path.display().to_string())
}

/// Write `t,x,y,yaw` rows, plus `z,roll,pitch` when `spatial`.
pub fn write_estimate_csv(path: &Path, est: &Trajectory<Pose3>, spatial: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["t", "x", "y", "yaw"];
    if spatial {
        header.extend(["z", "roll", "pitch"]);
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for s in est.iter() {
        let p = s.pose;
        let mut row = vec![s.t, p.x, p.y, p.yaw];
        if spatial {
            row.extend([p.z, p.roll, p.pitch]);
        }
        w.write_record(row.iter().map(|v| format!("{v:.6}"))).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read an estimate CSV; a planar file yields zero z, roll and pitch.
/// Returns the trajectory and whether the spatial columns were present.
pub fn read_estimate_csv(path: &Path) -> Result<(Trajectory<Pose3>, bool)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
    let spatial = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["t", "x", "y", "yaw"] => false,
        ["t", "x", "y", "yaw", "z", "roll", "pitch"] => true,
        _ => return Err(Error::data(path.display(), 1, format!("unexpected header {header:?}"))),
    };
    let mut samples: Vec<Stamped<Pose3>> = Vec::new();
    for (i, row) in r.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::data(path.display(), line, e.to_string()))?;
        let v: Vec<f64> = row
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::data(path.display(), line, e.to_string()))?;
        let pose = if spatial {
            Pose3::new(v[1], v[2], v[4], v[5], v[6], v[3])
        } else {
            Pose3::new(v[1], v[2], 0.0, 0.0, 0.0, v[3])
        };
        if samples.last().is_some_and(|s| v[0] <= s.t) {
            return Err(Error::data(path.display(), line, format!("timestamp {} does not increase", v[0])));
        }
        samples.push(Stamped { t: v[0], pose });
    }
    if samples.is_empty() {
        return Err(Error::data(path.display(), 1, "no estimate rows"));
    }
    Ok((Trajectory::from_samples(samples).map_err(|e| Error::data(path.display(), 0, e.to_string()))?, spatial))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::data(path.display(), line, format!("{other:?}")),
    }
}
