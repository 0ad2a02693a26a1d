//! Simulated scenarios: random poses, uniformly placed landmarks, noisy
//! odometry and one unknown-association landmark measurement per timestep.

use crate::error::{Error, Result};
use crate::geometry::{exp_se2, Pose2, Rotation2, Tangent2, Trajectory};
use crate::problem::{
    AssociationAssignment, LandmarkMap, PriorMeasurement, ProblemInstance, RelPoseMeasurement,
    UdaMeasurement,
};
use nalgebra::Vector2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Variances at or below this count as noiseless: noise is not sampled and
/// the measurement weight uses this value instead.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub n_poses: usize,
    pub n_landmarks: usize,
    /// Multiplier on both relative-pose noise levels.
    pub noise_scale: f64,
    /// Landmark measurement variance (m^2).
    pub sigma2_landmark: f64,
    /// Rotation noise variance `1/kappa` at unit scale (rad^2).
    pub base_inv_kappa: f64,
    /// Translation noise variance at unit scale (m^2).
    pub base_sigma2_r: f64,
    pub prior_kappa: f64,
    pub prior_sigma2: f64,
    /// Landmarks are uniform on `[0, bound]^2`.
    pub landmark_bound: f64,
    pub measurements_per_timestep: usize,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            n_poses: 3,
            n_landmarks: 2,
            noise_scale: 0.1,
            sigma2_landmark: 0.5,
            base_inv_kappa: 0.01,
            base_sigma2_r: 0.745,
            prior_kappa: 100.0,
            prior_sigma2: 0.01,
            landmark_bound: 10.0,
            measurements_per_timestep: 1,
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_poses == 0 || self.n_landmarks == 0 {
            return bad("n_poses and n_landmarks must be positive");
        }
        if self.measurements_per_timestep > self.n_landmarks {
            return bad("more measurements per timestep than landmarks");
        }
        let scales = [
            self.noise_scale,
            self.sigma2_landmark,
            self.base_inv_kappa,
            self.base_sigma2_r,
            self.prior_kappa,
            self.prior_sigma2,
            self.landmark_bound,
        ];
        if scales.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("noise and scale parameters must be finite and non-negative");
        }
        if self.landmark_bound == 0.0 || self.prior_kappa == 0.0 || self.prior_sigma2 == 0.0 {
            return bad("landmark bound and prior weights must be positive");
        }
        Ok(())
    }

    pub fn inv_kappa(&self) -> f64 {
        self.noise_scale * self.base_inv_kappa
    }

    pub fn sigma2_r(&self) -> f64 {
        self.noise_scale * self.base_sigma2_r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub truth: Trajectory<f64>,
    pub associations: AssociationAssignment,
    pub instance: ProblemInstance<f64>,
}

/// Zero-mean isotropic Gaussian sample with the given variance; exactly zero
/// at or below the floor.
fn gaussian2<R: Rng>(rng: &mut R, variance: f64) -> Vector2<f64> {
    if variance <= VARIANCE_FLOOR {
        return Vector2::zeros();
    }
    let sd = variance.sqrt();
    Vector2::new(
        sd * rng.sample::<f64, _>(StandardNormal),
        sd * rng.sample::<f64, _>(StandardNormal),
    )
}

/// Rotation perturbed by a wrapped-Gaussian angle of variance `inv_kappa`.
pub fn perturb_rotation<R: Rng>(
    rot: &Rotation2<f64>,
    inv_kappa: f64,
    rng: &mut R,
) -> Rotation2<f64> {
    if inv_kappa <= VARIANCE_FLOOR {
        return *rot;
    }
    let noise = Normal::new(0.0, inv_kappa.sqrt())
        .expect("positive variance")
        .sample(rng);
    rot.mul(&Rotation2::from_angle(noise))
}

pub fn generate_scenario(params: &SimParams) -> Result<Scenario> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let two_pi = 2.0 * std::f64::consts::PI;

    let truth = Trajectory::new(
        (0..params.n_poses)
            .map(|_| {
                let phi = rng.gen_range(0.0..two_pi);
                let rho: Vector2<f64> =
                    Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                exp_se2(&Tangent2 { phi, rho })
            })
            .collect(),
    );
    let landmarks: Vec<Vector2<f64>> = (0..params.n_landmarks)
        .map(|_| {
            Vector2::new(
                rng.gen_range(0.0..params.landmark_bound),
                rng.gen_range(0.0..params.landmark_bound),
            )
        })
        .collect();

    let inv_kappa = params.inv_kappa();
    let sigma2_r = params.sigma2_r();
    let odometry = (0..params.n_poses.saturating_sub(1))
        .map(|i| {
            let d = truth.poses[i].between(&truth.poses[i + 1]);
            RelPoseMeasurement {
                from: i,
                to: i + 1,
                delta_rot: perturb_rotation(&d.rot, inv_kappa, &mut rng),
                delta_pos: d.pos + gaussian2(&mut rng, sigma2_r),
                kappa: 1.0 / inv_kappa.max(VARIANCE_FLOOR),
                sigma2: sigma2_r.max(VARIANCE_FLOOR),
            }
        })
        .collect();

    let mut associations = AssociationAssignment::new();
    let mut uda = Vec::new();
    for (i, pose) in truth.poses.iter().enumerate() {
        let chosen = sample(
            &mut rng,
            params.n_landmarks,
            params.measurements_per_timestep,
        );
        for (k, j) in chosen.into_iter().enumerate() {
            associations.insert(i, k, j);
            uda.push(UdaMeasurement {
                timestep: i,
                meas_index: k,
                y: pose.inverse().transform_point(&landmarks[j])
                    + gaussian2(&mut rng, params.sigma2_landmark),
                sigma2: params.sigma2_landmark.max(VARIANCE_FLOOR),
                candidates: (0..params.n_landmarks).collect(),
            });
        }
    }

    let p0: &Pose2<f64> = &truth.poses[0];
    let prior = PriorMeasurement {
        rot: p0.rot,
        pos: p0.pos,
        kappa: params.prior_kappa,
        sigma2: params.prior_sigma2,
    };
    let instance = ProblemInstance::new(
        params.n_poses,
        LandmarkMap::new(landmarks),
        prior,
        odometry,
        uda,
    )?;
    Ok(Scenario {
        truth,
        associations,
        instance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{dead_reckon, evaluate_cost};

    #[test]
    fn zero_noise_dead_reckons_truth() {
        let p = SimParams {
            n_poses: 5,
            n_landmarks: 3,
            noise_scale: 0.0,
            sigma2_landmark: 0.0,
            seed: 4,
            ..Default::default()
        };
        let s = generate_scenario(&p).unwrap();
        let dr = dead_reckon(&s.instance).unwrap();
        for (a, b) in dr.poses.iter().zip(&s.truth.poses) {
            assert!((a.pos - b.pos).norm() < 1e-12);
            assert!((a.rot.matrix() - b.rot.matrix()).norm() < 1e-12);
        }
        assert!(evaluate_cost(&s.instance, &s.truth, &s.associations) < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let p = SimParams {
            seed: 17,
            ..Default::default()
        };
        assert_eq!(
            generate_scenario(&p).unwrap(),
            generate_scenario(&p).unwrap()
        );
        let q = SimParams {
            seed: 18,
            ..Default::default()
        };
        assert_ne!(
            generate_scenario(&p).unwrap(),
            generate_scenario(&q).unwrap()
        );
    }

    #[test]
    fn one_measurement_per_timestep_over_all_candidates() {
        let s = generate_scenario(&SimParams {
            n_poses: 4,
            n_landmarks: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(s.instance.uda_measurements.len(), 4);
        assert!(s
            .instance
            .uda_measurements
            .iter()
            .all(|m| m.candidates == vec![0, 1, 2]));
        assert_eq!(s.associations.len(), 4);
        assert!(s
            .instance
            .landmarks
            .positions
            .iter()
            .all(|l| (0.0..10.0).contains(&l.x) && (0.0..10.0).contains(&l.y)));
    }

    #[test]
    fn noise_statistics_match_nominal() {
        // 10^4 translation and rotation draws against their nominal variance.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let var = 0.745 * 2.0;
        let xs: Vec<Vector2<f64>> = (0..n).map(|_| gaussian2(&mut rng, var)).collect();
        let mean = xs.iter().sum::<Vector2<f64>>() / n as f64;
        let sd_mean = (var / n as f64).sqrt();
        assert!(mean.x.abs() < 3.0 * sd_mean && mean.y.abs() < 3.0 * sd_mean);
        let s2 = xs.iter().map(|v| v.x * v.x).sum::<f64>() / n as f64;
        // Variance of the sample variance of a Gaussian is 2 var^2 / n.
        assert!((s2 - var).abs() < 3.0 * (2.0 * var * var / n as f64).sqrt());

        let ik = 0.05;
        let angles: Vec<f64> = (0..n)
            .map(|_| perturb_rotation(&Rotation2::identity(), ik, &mut rng).angle())
            .collect();
        let m = angles.iter().sum::<f64>() / n as f64;
        assert!(m.abs() < 3.0 * (ik / n as f64).sqrt());
        let v = angles.iter().map(|a| a * a).sum::<f64>() / n as f64;
        assert!((v - ik).abs() < 3.0 * (2.0 * ik * ik / n as f64).sqrt());
    }
}
