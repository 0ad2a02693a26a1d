//! Range-bearing logs: wheel odometry, landmark detections, ground truth and
//! a landmark survey, each a CSV file with a header row.
//!
//! | file               | columns                        |
//! |--------------------|--------------------------------|
//! | `odometry.csv`     | `t,v,omega`                    |
//! | `detections.csv`   | `t,landmark,range,bearing`     |
//! | `ground_truth.csv` | `t,x,y,heading`                |
//! | `landmarks.csv`    | `id,x,y`                       |
//!
//! Times are seconds, angles radians, lengths metres. Velocities are held
//! constant from their timestamp until the next one.

use crate::error::{Error, Result};
use crate::geometry::{exp_se2, Pose2, Rotation2, Tangent2};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const ODOMETRY_FILE: &str = "odometry.csv";
pub const DETECTIONS_FILE: &str = "detections.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const LANDMARKS_FILE: &str = "landmarks.csv";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdometrySample {
    pub t: f64,
    /// Forward speed.
    pub v: f64,
    pub omega: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub t: f64,
    /// Surveyed identity. Used for noise estimation and scoring only.
    pub landmark: usize,
    pub range: f64,
    pub bearing: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl GroundTruthSample {
    pub fn pose(&self) -> Pose2<f64> {
        Pose2::from_xy_angle(self.x, self.y, self.heading)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct LandmarkRow {
    id: usize,
    x: f64,
    y: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawLog {
    pub odometry: Vec<OdometrySample>,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruthSample>,
    pub landmarks: BTreeMap<usize, Vector2<f64>>,
}

fn strictly_increasing(ts: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for t in ts {
        if !t.is_finite() || t <= prev {
            return Err(Error::Log(format!(
                "{what} timestamps must be finite and strictly increasing (at t = {t})"
            )));
        }
        prev = t;
    }
    Ok(())
}

impl RawLog {
    pub fn validate(&self) -> Result<()> {
        if self.odometry.len() < 2 {
            return Err(Error::Log("need at least two odometry samples".into()));
        }
        strictly_increasing(self.odometry.iter().map(|s| s.t), "odometry")?;
        strictly_increasing(self.ground_truth.iter().map(|s| s.t), "ground-truth")?;
        if self.detections.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::Log("detections must be sorted by time".into()));
        }
        if let Some(d) = self
            .detections
            .iter()
            .find(|d| !self.landmarks.contains_key(&d.landmark))
        {
            return Err(Error::Log(format!(
                "detection of unknown landmark {}",
                d.landmark
            )));
        }
        if let Some(d) = self.detections.iter().find(|d| !(d.range >= 0.0)) {
            return Err(Error::Log(format!(
                "negative range {} at t = {}",
                d.range, d.t
            )));
        }
        Ok(())
    }

    /// First and last odometry timestamps.
    pub fn time_range(&self) -> (f64, f64) {
        (
            self.odometry.first().map_or(0.0, |s| s.t),
            self.odometry.last().map_or(0.0, |s| s.t),
        )
    }

    /// Half the median odometry sampling interval; detections and ground
    /// truth within this of a pose time belong to it.
    pub fn match_tolerance(&self) -> f64 {
        let mut dts: Vec<f64> = self.odometry.windows(2).map(|w| w[1].t - w[0].t).collect();
        if dts.is_empty() {
            return 0.0;
        }
        dts.sort_by(f64::total_cmp);
        0.5 * dts[dts.len() / 2]
    }

    /// Ground-truth pose at `t`, interpolated linearly in position and along
    /// the shorter arc in heading.
    pub fn ground_truth_at(&self, t: f64) -> Result<Pose2<f64>> {
        let gt = &self.ground_truth;
        let (Some(first), Some(last)) = (gt.first(), gt.last()) else {
            return Err(Error::Log("log has no ground truth".into()));
        };
        let tol = 1e-9 * (1.0 + t.abs());
        if t < first.t - tol || t > last.t + tol {
            return Err(Error::OutOfRange {
                t0: t,
                t1: t,
                start: first.t,
                end: last.t,
            });
        }
        let k = gt.partition_point(|s| s.t <= t);
        if k == 0 {
            return Ok(first.pose());
        }
        let a = &gt[k - 1];
        if k == gt.len() || (t - a.t).abs() <= tol {
            return Ok(a.pose());
        }
        let b = &gt[k];
        let u = (t - a.t) / (b.t - a.t);
        let dh = Rotation2::from_angle(a.heading)
            .inverse()
            .mul(&Rotation2::from_angle(b.heading))
            .angle();
        Ok(Pose2::from_xy_angle(
            a.x + u * (b.x - a.x),
            a.y + u * (b.y - a.y),
            a.heading + u * dh,
        ))
    }

    /// Detections whose timestamp lies within the match tolerance of `t`.
    pub fn detections_at(&self, t: f64) -> &[Detection] {
        let tol = self.match_tolerance();
        let lo = self.detections.partition_point(|d| d.t < t - tol);
        let hi = self.detections.partition_point(|d| d.t <= t + tol);
        &self.detections[lo..hi]
    }
}

/// Relative position `(range cos bearing, range sin bearing)` in the robot
/// frame.
pub fn range_bearing_to_position(range: f64, bearing: f64) -> Vector2<f64> {
    Vector2::new(range * bearing.cos(), range * bearing.sin())
}

/// Inverse of [`range_bearing_to_position`].
pub fn position_to_range_bearing(y: &Vector2<f64>) -> (f64, f64) {
    (y.norm(), y.y.atan2(y.x))
}

/// Relative pose from chaining `exp((omega dt, (v dt, 0)))` over every
/// sample interval overlapping `[t0, t1]`.
pub fn integrate_increment(log: &RawLog, t0: f64, t1: f64) -> Result<Pose2<f64>> {
    let (start, end) = log.time_range();
    let tol = 1e-9 * (1.0 + end.abs());
    if log.odometry.len() < 2 || t0 < start - tol || t1 > end + tol || t1 < t0 {
        return Err(Error::OutOfRange { t0, t1, start, end });
    }
    let mut pose = Pose2::identity();
    for w in log.odometry.windows(2) {
        let (a, b) = (w[0].t.max(t0), w[1].t.min(t1));
        if b <= a {
            if w[0].t >= t1 {
                break;
            }
            continue;
        }
        let dt = b - a;
        pose = pose.compose(&exp_se2(&Tangent2::new(w[0].omega * dt, w[0].v * dt, 0.0)));
    }
    Ok(pose)
}

fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(dir: &Path) -> Result<RawLog> {
    let landmarks: Vec<LandmarkRow> = read_rows(&dir.join(LANDMARKS_FILE))?;
    let log = RawLog {
        odometry: read_rows(&dir.join(ODOMETRY_FILE))?,
        detections: read_rows(&dir.join(DETECTIONS_FILE))?,
        ground_truth: read_rows(&dir.join(GROUND_TRUTH_FILE))?,
        landmarks: landmarks
            .into_iter()
            .map(|l| (l.id, Vector2::new(l.x, l.y)))
            .collect(),
    };
    log.validate()?;
    Ok(log)
}

pub fn write_log(log: &RawLog, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(&dir.join(ODOMETRY_FILE), &log.odometry)?;
    write_rows(&dir.join(DETECTIONS_FILE), &log.detections)?;
    write_rows(&dir.join(GROUND_TRUTH_FILE), &log.ground_truth)?;
    let lms: Vec<LandmarkRow> = log
        .landmarks
        .iter()
        .map(|(&id, p)| LandmarkRow { id, x: p.x, y: p.y })
        .collect();
    write_rows(&dir.join(LANDMARKS_FILE), &lms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, SQRT_2};

    fn constant(v: f64, omega: f64, duration: f64, dt: f64) -> RawLog {
        let n = (duration / dt).round() as usize;
        RawLog {
            odometry: (0..=n)
                .map(|k| OdometrySample {
                    t: k as f64 * dt,
                    v,
                    omega,
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn range_bearing_conversions() {
        assert!((range_bearing_to_position(1.0, 0.0) - Vector2::new(1.0, 0.0)).norm() < 1e-15);
        assert!(
            (range_bearing_to_position(2.0, FRAC_PI_2) - Vector2::new(0.0, 2.0)).norm() < 1e-15
        );
        assert!(
            (range_bearing_to_position(SQRT_2, FRAC_PI_4) - Vector2::new(1.0, 1.0)).norm() < 1e-15
        );
        let (r, b) = position_to_range_bearing(&Vector2::new(-1.0, 2.0));
        assert!((range_bearing_to_position(r, b) - Vector2::new(-1.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn straight_line() {
        let p = integrate_increment(&constant(1.0, 0.0, 2.0, 0.01), 0.0, 1.0).unwrap();
        assert!((p.pos - Vector2::new(1.0, 0.0)).norm() < 1e-12);
        assert!(p.rot.angle().abs() < 1e-12);
    }

    #[test]
    fn pure_spin() {
        let p = integrate_increment(&constant(0.0, FRAC_PI_2, 1.0, 0.01), 0.0, 1.0).unwrap();
        assert!((p.rot.angle() - FRAC_PI_2).abs() < 1e-12);
        assert!(p.pos.norm() < 1e-12);
    }

    #[test]
    fn quarter_arc() {
        let p = integrate_increment(&constant(1.0, FRAC_PI_2, 1.0, 0.01), 0.0, 1.0).unwrap();
        let r = 2.0 / std::f64::consts::PI;
        assert!((p.pos - Vector2::new(r, r)).norm() < 1e-12);
    }

    #[test]
    fn partial_intervals_are_clipped() {
        let log = constant(1.0, 0.0, 1.0, 0.1);
        let p = integrate_increment(&log, 0.05, 0.33).unwrap();
        assert!((p.pos.x - 0.28).abs() < 1e-12);
    }

    #[test]
    fn window_outside_log_is_rejected() {
        let log = constant(1.0, 0.0, 1.0, 0.1);
        assert!(matches!(
            integrate_increment(&log, 0.5, 1.5),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            integrate_increment(&log, -0.5, 0.5),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn ground_truth_interpolates_heading_on_short_arc() {
        let log = RawLog {
            ground_truth: vec![
                GroundTruthSample {
                    t: 0.0,
                    x: 0.0,
                    y: 0.0,
                    heading: 3.0,
                },
                GroundTruthSample {
                    t: 1.0,
                    x: 2.0,
                    y: 0.0,
                    heading: -3.0,
                },
            ],
            ..Default::default()
        };
        let p = log.ground_truth_at(0.5).unwrap();
        assert!((p.pos.x - 1.0).abs() < 1e-12);
        assert!((p.rot.angle().abs() - std::f64::consts::PI).abs() < 1e-9);
        assert!(log.ground_truth_at(1.5).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = constant(0.5, 0.1, 1.0, 0.5);
        log.landmarks.insert(7, Vector2::new(1.0, 2.0));
        log.detections.push(Detection {
            t: 0.5,
            landmark: 7,
            range: 1.5,
            bearing: -0.2,
        });
        log.ground_truth.push(GroundTruthSample {
            t: 0.0,
            x: 0.1,
            y: 0.2,
            heading: 0.3,
        });
        write_log(&log, dir.path()).unwrap();
        assert_eq!(read_log(dir.path()).unwrap(), log);
    }

    #[test]
    fn unsorted_odometry_is_rejected() {
        let mut log = constant(1.0, 0.0, 1.0, 0.1);
        log.odometry.swap(2, 3);
        assert!(matches!(log.validate(), Err(Error::Log(_))));
    }
}
