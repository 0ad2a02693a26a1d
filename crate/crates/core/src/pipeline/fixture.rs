//! Synthetic range-bearing logs with known noise.
//!
//! The robot drives `windows` segments of `window_dt` seconds. Each segment's
//! measured relative pose is the true one with a wrapped-Gaussian angle error
//! and an additive isotropic translation error, and the logged velocities
//! realize it exactly as spin, straight drive, spin. Ground truth is logged
//! at segment boundaries, which are also the only detection times.

use super::log::{position_to_range_bearing, Detection, GroundTruthSample, OdometrySample, RawLog};
use super::sim::{perturb_rotation, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::geometry::{Pose2, Rotation2};
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogFixtureParams {
    pub windows: usize,
    pub window_dt: f64,
    /// Odometry samples in each of the three legs of a segment.
    pub samples_per_leg: usize,
    pub n_landmarks: usize,
    /// Rotation error variance per segment.
    pub inv_kappa: f64,
    pub sigma2_r: f64,
    pub sigma2_landmark: f64,
    pub sensor_range: f64,
    /// Landmark 0 is detected at every boundary regardless of range.
    pub beacon: bool,
    pub seed: u64,
}

impl Default for LogFixtureParams {
    fn default() -> Self {
        Self {
            windows: 60,
            window_dt: 2.0,
            samples_per_leg: 4,
            n_landmarks: 8,
            inv_kappa: 1e-3,
            sigma2_r: 1e-3,
            sigma2_landmark: 1e-2,
            sensor_range: 8.0,
            beacon: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogFixture {
    pub log: RawLog,
    /// Relative pose each segment's odometry integrates to.
    pub increments: Vec<Pose2<f64>>,
    pub truth: Vec<Pose2<f64>>,
    pub times: Vec<f64>,
}

fn gaussian2(rng: &mut ChaCha8Rng, variance: f64) -> Vector2<f64> {
    if variance <= VARIANCE_FLOOR {
        return Vector2::zeros();
    }
    Vector2::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * variance.sqrt()
}

pub fn generate_log(params: &LogFixtureParams) -> Result<LogFixture> {
    if params.windows == 0
        || params.samples_per_leg == 0
        || !(params.window_dt > 0.0)
        || params.n_landmarks == 0
    {
        return Err(Error::Config(
            "fixture needs windows, samples, landmarks and a positive segment length".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let spl = params.samples_per_leg;
    let per_window = 3 * spl;
    let dt = params.window_dt / per_window as f64;
    let time = |k: usize| k as f64 * dt;

    let mut truth = vec![Pose2::identity()];
    let mut increments = Vec::with_capacity(params.windows);
    let mut odometry = Vec::with_capacity(params.windows * per_window + 1);
    for w in 0..params.windows {
        let true_inc = Pose2::new(
            Rotation2::from_angle(rng.gen_range(-0.6..0.6)),
            Vector2::new(rng.gen_range(1.0..3.0), rng.gen_range(-0.5..0.5)),
        );
        let measured = Pose2::new(
            perturb_rotation(&true_inc.rot, params.inv_kappa, &mut rng),
            true_inc.pos + gaussian2(&mut rng, params.sigma2_r),
        );
        truth.push(truth[w].compose(&true_inc));
        increments.push(measured);

        let heading = measured.pos.y.atan2(measured.pos.x);
        let turn = Rotation2::from_angle(heading)
            .inverse()
            .mul(&measured.rot)
            .angle();
        let leg = spl as f64 * dt;
        let legs = [
            (0.0, heading / leg),
            (measured.pos.norm() / leg, 0.0),
            (0.0, turn / leg),
        ];
        for (l, &(v, omega)) in legs.iter().enumerate() {
            for s in 0..spl {
                odometry.push(OdometrySample {
                    t: time(w * per_window + l * spl + s),
                    v,
                    omega,
                });
            }
        }
    }
    odometry.push(OdometrySample {
        t: time(params.windows * per_window),
        v: 0.0,
        omega: 0.0,
    });
    let times: Vec<f64> = (0..=params.windows).map(|w| time(w * per_window)).collect();

    let landmarks: std::collections::BTreeMap<usize, Vector2<f64>> = (0..params.n_landmarks)
        .map(|j| {
            let anchor = truth[rng.gen_range(0..truth.len())].pos;
            let h = 0.5 * params.sensor_range;
            (
                j,
                anchor + Vector2::new(rng.gen_range(-h..h), rng.gen_range(-h..h)),
            )
        })
        .collect();

    let mut detections = Vec::new();
    for (pose, &t) in truth.iter().zip(&times) {
        for (&j, l) in &landmarks {
            let local = pose.inverse().transform_point(l);
            if local.norm() > params.sensor_range && !(params.beacon && j == 0) {
                continue;
            }
            let (range, bearing) =
                position_to_range_bearing(&(local + gaussian2(&mut rng, params.sigma2_landmark)));
            detections.push(Detection {
                t,
                landmark: j,
                range,
                bearing,
            });
        }
    }

    let ground_truth = truth
        .iter()
        .zip(&times)
        .map(|(p, &t)| GroundTruthSample {
            t,
            x: p.pos.x,
            y: p.pos.y,
            heading: p.rot.angle(),
        })
        .collect();
    let log = RawLog {
        odometry,
        detections,
        ground_truth,
        landmarks,
    };
    log.validate()?;
    Ok(LogFixture {
        log,
        increments,
        truth,
        times,
    })
}
