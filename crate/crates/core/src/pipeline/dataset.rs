//! Problem instances cut from a range-bearing log.
//!
//! Windows of `n_poses` poses spaced `dt` apart start at the log start plus
//! the offset; each window begins where the previous one ends, `n_poses * dt`
//! later, and is kept while its last pose lies inside the log.

use super::log::{integrate_increment, range_bearing_to_position, RawLog};
use super::sim::VARIANCE_FLOOR;
use crate::error::{Error, Result};
use crate::geometry::Trajectory;
use crate::problem::{
    AssociationAssignment, LandmarkMap, PriorMeasurement, ProblemInstance, RelPoseMeasurement,
    UdaMeasurement,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Prior weights on the first pose of every extracted window.
pub const DATASET_PRIOR_KAPPA: f64 = 100.0;
pub const DATASET_PRIOR_SIGMA2: f64 = 0.01;

/// Concentration reported when rotation residuals show no dispersion.
pub const KAPPA_CAP: f64 = 1e6;

/// Fewest residuals of each kind the noise estimator accepts.
pub const MIN_NOISE_SAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsequenceSpec {
    pub n_poses: usize,
    pub n_landmarks: usize,
    /// Pose spacing in seconds.
    pub dt: f64,
    /// Seconds after the first odometry timestamp at which the first window
    /// starts.
    pub start_offset: f64,
}

impl SubsequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_poses == 0 || self.n_landmarks == 0 {
            return Err(Error::Config(
                "subsequences need at least one pose and one landmark".into(),
            ));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() || !(self.start_offset >= 0.0) {
            return Err(Error::Config(
                "pose spacing must be positive and the offset non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Pose times of every window that fits in the log.
    pub fn windows(&self, log: &RawLog) -> Vec<Vec<f64>> {
        let (start, end) = log.time_range();
        let base = start + self.start_offset;
        let stride = self.n_poses as f64 * self.dt;
        let tol = 1e-9 * (1.0 + end.abs());
        let mut out = Vec::new();
        for w in 0usize.. {
            let t0 = base + w as f64 * stride;
            let times: Vec<f64> = (0..self.n_poses).map(|i| t0 + i as f64 * self.dt).collect();
            if *times.last().expect("n_poses > 0") > end + tol {
                break;
            }
            out.push(times);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Relative rotation concentration; `1 / kappa` is the angle variance.
    pub kappa: f64,
    pub sigma2_r: f64,
    pub sigma2_landmark: f64,
    pub odometry_samples: usize,
    pub landmark_samples: usize,
}

/// Mean of the two per-axis unbiased sample variances.
pub fn isotropic_sample_variance(residuals: &[nalgebra::Vector2<f64>]) -> f64 {
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<nalgebra::Vector2<f64>>() / n;
    let ss = residuals
        .iter()
        .map(|r| (r - mean).component_mul(&(r - mean)))
        .sum::<nalgebra::Vector2<f64>>();
    0.5 * (ss.x + ss.y) / (n - 1.0)
}

/// Concentration whose wrapped-Gaussian angle has the observed mean cosine:
/// `E[cos e] = exp(-1 / (2 kappa))`, capped at [`KAPPA_CAP`].
pub fn kappa_from_angles(angles: &[f64]) -> f64 {
    let mean_cos = angles.iter().map(|a| a.cos()).sum::<f64>() / angles.len() as f64;
    if mean_cos >= 1.0 {
        return KAPPA_CAP;
    }
    (-0.5 / mean_cos.max(f64::MIN_POSITIVE).ln()).min(KAPPA_CAP)
}

/// Noise levels from integrated odometry and detections against ground
/// truth. Odometry residuals come from consecutive pose pairs `dt` apart
/// across the whole log; landmark residuals from every detection with ground
/// truth.
pub fn estimate_noise_params(log: &RawLog, spec: &SubsequenceSpec) -> Result<NoiseParams> {
    spec.validate()?;
    let (start, end) = log.time_range();
    let (gt_start, gt_end) = match (log.ground_truth.first(), log.ground_truth.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(Error::Log("log has no ground truth".into())),
    };
    let (lo, hi) = (start.max(gt_start), end.min(gt_end));
    let tol = 1e-9 * (1.0 + hi.abs());

    let mut angles = Vec::new();
    let mut trans = Vec::new();
    let mut t0 = start + spec.start_offset;
    while t0 < lo - tol {
        t0 += spec.dt;
    }
    while t0 + spec.dt <= hi + tol {
        let t1 = t0 + spec.dt;
        let measured = integrate_increment(log, t0, t1.min(end))?;
        let truth = log
            .ground_truth_at(t0)?
            .between(&log.ground_truth_at(t1.min(gt_end))?);
        angles.push(truth.rot.inverse().mul(&measured.rot).angle());
        trans.push(measured.pos - truth.pos);
        t0 = t1;
    }

    let mut lm = Vec::new();
    for d in &log.detections {
        if d.t < gt_start - tol || d.t > gt_end + tol {
            continue;
        }
        let landmark = log
            .landmarks
            .get(&d.landmark)
            .ok_or_else(|| Error::Log(format!("unknown landmark {}", d.landmark)))?;
        let pose = log.ground_truth_at(d.t)?;
        lm.push(
            range_bearing_to_position(d.range, d.bearing)
                - pose.inverse().transform_point(landmark),
        );
    }

    let found = trans.len().min(lm.len());
    if found < MIN_NOISE_SAMPLES {
        return Err(Error::InsufficientData {
            found,
            needed: MIN_NOISE_SAMPLES,
        });
    }
    Ok(NoiseParams {
        kappa: kappa_from_angles(&angles),
        sigma2_r: isotropic_sample_variance(&trans),
        sigma2_landmark: isotropic_sample_variance(&lm),
        odometry_samples: trans.len(),
        landmark_samples: lm.len(),
    })
}

/// Integrated relative pose from `t0` to `t1`, weighted with `noise`.
/// Indices are `0 -> 1`; callers renumber.
pub fn integrate_odometry(
    log: &RawLog,
    t0: f64,
    t1: f64,
    noise: &NoiseParams,
) -> Result<RelPoseMeasurement<f64>> {
    let d = integrate_increment(log, t0, t1)?;
    Ok(RelPoseMeasurement {
        from: 0,
        to: 1,
        delta_rot: d.rot,
        delta_pos: d.pos,
        kappa: noise.kappa.min(1.0 / VARIANCE_FLOOR),
        sigma2: noise.sigma2_r.max(VARIANCE_FLOOR),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subsequence {
    pub instance: ProblemInstance<f64>,
    pub truth: Trajectory<f64>,
    /// Associations implied by the surveyed detection identities.
    pub associations: AssociationAssignment,
    pub times: Vec<f64>,
    /// Log identity of each instance landmark.
    pub landmark_ids: Vec<usize>,
}

/// The `n` landmarks seen at the most pose times, fewer sightings breaking
/// to the smaller identity, returned in increasing identity order.
fn most_visible(log: &RawLog, times: &[f64], n: usize) -> Vec<usize> {
    let mut seen: BTreeMap<usize, usize> = log.landmarks.keys().map(|&id| (id, 0)).collect();
    for &t in times {
        let mut ids: Vec<usize> = log.detections_at(t).iter().map(|d| d.landmark).collect();
        ids.sort_unstable();
        ids.dedup();
        for id in ids {
            *seen.entry(id).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(usize, usize)> = seen.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut ids: Vec<usize> = ranked.into_iter().take(n).map(|(id, _)| id).collect();
    ids.sort_unstable();
    ids
}

/// One instance per window that fits. Detection identities select the
/// landmarks and score the result; every measurement keeps all selected
/// landmarks as candidates.
pub fn extract_subsequences(log: &RawLog, spec: &SubsequenceSpec) -> Result<Vec<Subsequence>> {
    spec.validate()?;
    log.validate()?;
    let windows = spec.windows(log);
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let noise = estimate_noise_params(log, spec)?;
    windows
        .into_iter()
        .map(|times| build_window(log, spec, &noise, times))
        .collect()
}

fn build_window(
    log: &RawLog,
    spec: &SubsequenceSpec,
    noise: &NoiseParams,
    times: Vec<f64>,
) -> Result<Subsequence> {
    let ids = most_visible(log, &times, spec.n_landmarks);
    let index: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let truth = Trajectory::new(
        times
            .iter()
            .map(|&t| log.ground_truth_at(t))
            .collect::<Result<_>>()?,
    );

    let odometry = times
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            integrate_odometry(log, w[0], w[1], noise).map(|mut m| {
                m.from = i;
                m.to = i + 1;
                m
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut uda = Vec::new();
    let mut associations = AssociationAssignment::new();
    for (i, &t) in times.iter().enumerate() {
        let mut k = 0;
        for d in log.detections_at(t) {
            let Some(&j) = index.get(&d.landmark) else {
                continue;
            };
            uda.push(UdaMeasurement {
                timestep: i,
                meas_index: k,
                y: range_bearing_to_position(d.range, d.bearing),
                sigma2: noise.sigma2_landmark.max(VARIANCE_FLOOR),
                candidates: (0..ids.len()).collect(),
            });
            associations.insert(i, k, j);
            k += 1;
        }
    }

    let p0 = truth.poses[0];
    let prior = PriorMeasurement {
        rot: p0.rot,
        pos: p0.pos,
        kappa: DATASET_PRIOR_KAPPA,
        sigma2: DATASET_PRIOR_SIGMA2,
    };
    let landmarks = LandmarkMap::new(ids.iter().map(|id| log.landmarks[id]).collect());
    let instance = ProblemInstance::new(spec.n_poses, landmarks, prior, odometry, uda)
        .map_err(|e| Error::ExtractionFailed(format!("window at t = {}: {e}", times[0])))?;
    Ok(Subsequence {
        instance,
        truth,
        associations,
        times,
        landmark_ids: ids,
    })
}
