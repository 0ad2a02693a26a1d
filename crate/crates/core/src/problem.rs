//! Estimation problem: priors, odometry, landmark map, measurements with
//! unknown association, and the association assignment itself.
//!
//! Timesteps, measurement indices and landmark indices are zero-based.

use crate::error::{Error, Result};
use crate::geometry::{Pose2, Rotation2, Trajectory};
use crate::scalar::Real;
use nalgebra::{Matrix2, Vector2};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkMap<T: Real> {
    pub positions: Vec<Vector2<T>>,
}

impl<T: Real> LandmarkMap<T> {
    pub fn new(positions: Vec<Vector2<T>>) -> Self {
        Self { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Relative pose `T_to = T_from * (delta_rot, delta_pos)` with isotropic weights.
#[derive(Clone, Debug, PartialEq)]
pub struct RelPoseMeasurement<T: Real> {
    pub from: usize,
    pub to: usize,
    pub delta_rot: Rotation2<T>,
    pub delta_pos: Vector2<T>,
    /// Rotation concentration, weight of the Frobenius rotation residual.
    pub kappa: T,
    /// Translation variance.
    pub sigma2: T,
}

impl<T: Real> RelPoseMeasurement<T> {
    pub fn delta(&self) -> Pose2<T> {
        Pose2::new(self.delta_rot, self.delta_pos)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorMeasurement<T: Real> {
    pub rot: Rotation2<T>,
    pub pos: Vector2<T>,
    pub kappa: T,
    pub sigma2: T,
}

impl<T: Real> PriorMeasurement<T> {
    pub fn pose(&self) -> Pose2<T> {
        Pose2::new(self.rot, self.pos)
    }
}

/// Landmark position measured in the robot frame, source landmark unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct UdaMeasurement<T: Real> {
    pub timestep: usize,
    pub meas_index: usize,
    pub y: Vector2<T>,
    pub sigma2: T,
    /// Landmark indices this measurement may have come from.
    pub candidates: Vec<usize>,
}

impl<T: Real> UdaMeasurement<T> {
    pub fn key(&self) -> (usize, usize) {
        (self.timestep, self.meas_index)
    }
}

/// Validated localization problem. Construct with [`ProblemInstance::new`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance<T: Real> {
    pub n_poses: usize,
    pub landmarks: LandmarkMap<T>,
    pub prior: PriorMeasurement<T>,
    /// Sorted by `from`; entry `i` links pose `i` to pose `i + 1`.
    pub odometry: Vec<RelPoseMeasurement<T>>,
    pub uda_measurements: Vec<UdaMeasurement<T>>,
}

/// One association indicator `theta_{i,k,j}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThetaVar {
    /// Index into `uda_measurements`.
    pub group: usize,
    pub timestep: usize,
    pub meas_index: usize,
    pub landmark: usize,
}

impl<T: Real> ProblemInstance<T> {
    pub fn new(
        n_poses: usize,
        landmarks: LandmarkMap<T>,
        prior: PriorMeasurement<T>,
        mut odometry: Vec<RelPoseMeasurement<T>>,
        uda_measurements: Vec<UdaMeasurement<T>>,
    ) -> Result<Self> {
        odometry.sort_by_key(|m| m.from);
        let inst = Self {
            n_poses,
            landmarks,
            prior,
            odometry,
            uda_measurements,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInstance(m));
        if self.n_poses == 0 {
            return bad("at least one pose is required".into());
        }
        if self.landmarks.is_empty() && !self.uda_measurements.is_empty() {
            return bad("measurements present but the landmark map is empty".into());
        }
        if self
            .landmarks
            .positions
            .iter()
            .any(|p| !p.iter().all(|v| v.is_finite()))
        {
            return bad("non-finite landmark position".into());
        }
        let p = &self.prior;
        if !(p.kappa > T::zero() && p.sigma2 > T::zero()) {
            return bad("prior weights must be positive".into());
        }
        if p.rot.unit_defect() > T::lit(1e-6) {
            return bad("prior rotation is not on SO(2)".into());
        }
        for (i, m) in self.odometry.iter().enumerate() {
            if m.from != i {
                return Err(Error::ChainBroken(i, i + 1));
            }
            if m.to != m.from + 1 {
                return bad(format!(
                    "odometry {} -> {} does not link consecutive poses",
                    m.from, m.to
                ));
            }
            if !(m.kappa > T::zero() && m.sigma2 > T::zero()) {
                return bad(format!(
                    "odometry {} -> {} has non-positive weights",
                    m.from, m.to
                ));
            }
            if m.delta_rot.unit_defect() > T::lit(1e-6) {
                return bad(format!(
                    "odometry {} -> {} rotation is not on SO(2)",
                    m.from, m.to
                ));
            }
        }
        if self.odometry.len() > self.n_poses.saturating_sub(1) {
            return bad("more odometry links than consecutive pose pairs".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.uda_measurements {
            if m.timestep >= self.n_poses {
                return bad(format!("measurement timestep {} out of range", m.timestep));
            }
            if !seen.insert(m.key()) {
                return bad(format!("duplicate measurement key {:?}", m.key()));
            }
            if m.candidates.is_empty() {
                return bad(format!("measurement {:?} has no candidates", m.key()));
            }
            if !(m.sigma2 > T::zero()) {
                return bad(format!(
                    "measurement {:?} has non-positive variance",
                    m.key()
                ));
            }
            let mut c = m.candidates.clone();
            c.sort_unstable();
            c.dedup();
            if c.len() != m.candidates.len() || c.iter().any(|&j| j >= self.landmarks.len()) {
                return bad(format!("measurement {:?} has invalid candidates", m.key()));
            }
        }
        Ok(())
    }

    /// True when every consecutive pose pair has an odometry link.
    pub fn chain_complete(&self) -> bool {
        self.odometry.len() + 1 == self.n_poses
    }

    /// All association indicators in canonical order (measurement order, then
    /// candidate order).
    pub fn theta_vars(&self) -> Vec<ThetaVar> {
        self.uda_measurements
            .iter()
            .enumerate()
            .flat_map(|(g, m)| {
                m.candidates.iter().map(move |&j| ThetaVar {
                    group: g,
                    timestep: m.timestep,
                    meas_index: m.meas_index,
                    landmark: j,
                })
            })
            .collect()
    }

    pub fn n_theta(&self) -> usize {
        self.uda_measurements
            .iter()
            .map(|m| m.candidates.len())
            .sum()
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> ProblemInstance<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        let cv = |v: &Vector2<T>| Vector2::new(c(v.x), c(v.y));
        let cr = |r: &Rotation2<T>| Rotation2 {
            c: c(r.c),
            s: c(r.s),
        };
        ProblemInstance {
            n_poses: self.n_poses,
            landmarks: LandmarkMap::new(self.landmarks.positions.iter().map(cv).collect()),
            prior: PriorMeasurement {
                rot: cr(&self.prior.rot),
                pos: cv(&self.prior.pos),
                kappa: c(self.prior.kappa),
                sigma2: c(self.prior.sigma2),
            },
            odometry: self
                .odometry
                .iter()
                .map(|m| RelPoseMeasurement {
                    from: m.from,
                    to: m.to,
                    delta_rot: cr(&m.delta_rot),
                    delta_pos: cv(&m.delta_pos),
                    kappa: c(m.kappa),
                    sigma2: c(m.sigma2),
                })
                .collect(),
            uda_measurements: self
                .uda_measurements
                .iter()
                .map(|m| UdaMeasurement {
                    timestep: m.timestep,
                    meas_index: m.meas_index,
                    y: cv(&m.y),
                    sigma2: c(m.sigma2),
                    candidates: m.candidates.clone(),
                })
                .collect(),
        }
    }
}

/// Rejects covariances that are not a multiple of the identity and returns the
/// scalar variance otherwise.
pub fn isotropic_variance<T: Real>(cov: &Matrix2<T>) -> Result<T> {
    let scale = cov.abs().max().max(T::eps());
    let tol = T::lit(1e-9) * scale;
    if (cov[(0, 1)]).abs() > tol
        || (cov[(1, 0)]).abs() > tol
        || (cov[(0, 0)] - cov[(1, 1)]).abs() > tol
    {
        return Err(Error::Anisotropic(format!("{cov:?}")));
    }
    Ok(cov[(0, 0)])
}

/// Hard data association: `(timestep, meas_index) -> landmark index`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AssociationAssignment {
    pub theta: BTreeMap<(usize, usize), usize>,
}

impl AssociationAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, timestep: usize, meas_index: usize, landmark: usize) {
        self.theta.insert((timestep, meas_index), landmark);
    }

    pub fn get(&self, timestep: usize, meas_index: usize) -> Option<usize> {
        self.theta.get(&(timestep, meas_index)).copied()
    }

    /// Indicator `theta_{i,k,j}`.
    pub fn indicator(&self, timestep: usize, meas_index: usize, landmark: usize) -> bool {
        self.get(timestep, meas_index) == Some(landmark)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Checks that every measurement has exactly one association among its
    /// candidates and no stray keys exist.
    pub fn validate_for<T: Real>(&self, inst: &ProblemInstance<T>) -> Result<()> {
        if self.theta.len() != inst.uda_measurements.len() {
            return Err(Error::InvalidAssignment(format!(
                "{} assignments for {} measurements",
                self.theta.len(),
                inst.uda_measurements.len()
            )));
        }
        for m in &inst.uda_measurements {
            match self.theta.get(&m.key()) {
                Some(j) if m.candidates.contains(j) => {}
                Some(j) => {
                    return Err(Error::InvalidAssignment(format!(
                        "{:?} -> {j} is not a candidate",
                        m.key()
                    )))
                }
                None => {
                    return Err(Error::InvalidAssignment(format!(
                        "{:?} unassigned",
                        m.key()
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Frobenius rotation residual weight times `|C_a - C_b|_F^2`.
pub fn rotation_cost<T: Real>(kappa: T, a: &Rotation2<T>, b: &Rotation2<T>) -> T {
    let dc = a.c - b.c;
    let ds = a.s - b.s;
    // [[dc, -ds], [ds, dc]] has squared Frobenius norm 2 (dc^2 + ds^2).
    kappa * T::lit(2.0) * (dc * dc + ds * ds)
}

/// Weighted squared translation residual.
pub fn translation_cost<T: Real>(sigma2: T, e: &Vector2<T>) -> T {
    e.norm_squared() / sigma2
}

/// Landmark residual `(1/sigma2) |(l - r) - C y|^2`.
pub fn landmark_cost<T: Real>(
    pose: &Pose2<T>,
    landmark: &Vector2<T>,
    y: &Vector2<T>,
    sigma2: T,
) -> T {
    let e = (landmark - pose.pos) - pose.rot.rotate(y);
    translation_cost(sigma2, &e)
}

pub fn prior_cost<T: Real>(prior: &PriorMeasurement<T>, pose: &Pose2<T>) -> T {
    rotation_cost(prior.kappa, &pose.rot, &prior.rot)
        + translation_cost(prior.sigma2, &(pose.pos - prior.pos))
}

pub fn odometry_cost<T: Real>(m: &RelPoseMeasurement<T>, from: &Pose2<T>, to: &Pose2<T>) -> T {
    let predicted = from.compose(&m.delta());
    rotation_cost(m.kappa, &to.rot, &predicted.rot)
        + translation_cost(m.sigma2, &(to.pos - predicted.pos))
}

/// Cost split by factor type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostBreakdown<T> {
    pub prior: T,
    pub odometry: T,
    pub landmark: T,
}

impl<T: Real> CostBreakdown<T> {
    pub fn total(&self) -> T {
        self.prior + self.odometry + self.landmark
    }
}

pub fn cost_breakdown<T: Real>(
    inst: &ProblemInstance<T>,
    traj: &Trajectory<T>,
    theta: &AssociationAssignment,
) -> CostBreakdown<T> {
    let poses = &traj.poses;
    let prior = prior_cost(&inst.prior, &poses[0]);
    let odometry = inst.odometry.iter().fold(T::zero(), |acc, m| {
        acc + odometry_cost(m, &poses[m.from], &poses[m.to])
    });
    let landmark = inst.uda_measurements.iter().fold(T::zero(), |acc, m| {
        m.candidates
            .iter()
            .filter(|&&j| theta.indicator(m.timestep, m.meas_index, j))
            .fold(acc, |acc, &j| {
                acc + landmark_cost(
                    &poses[m.timestep],
                    &inst.landmarks.positions[j],
                    &m.y,
                    m.sigma2,
                )
            })
    });
    CostBreakdown {
        prior,
        odometry,
        landmark,
    }
}

/// Total cost of a trajectory under a hard association.
pub fn evaluate_cost<T: Real>(
    inst: &ProblemInstance<T>,
    traj: &Trajectory<T>,
    theta: &AssociationAssignment,
) -> T {
    cost_breakdown(inst, traj, theta).total()
}

/// Chains odometry from the prior mean.
pub fn dead_reckon<T: Real>(inst: &ProblemInstance<T>) -> Result<Trajectory<T>> {
    let mut poses = Vec::with_capacity(inst.n_poses);
    poses.push(inst.prior.pose());
    for i in 1..inst.n_poses {
        let m = inst
            .odometry
            .get(i - 1)
            .filter(|m| m.from == i - 1 && m.to == i)
            .ok_or(Error::ChainBroken(i - 1, i))?;
        let next = poses[i - 1].compose(&m.delta());
        poses.push(next);
    }
    Ok(Trajectory::new(poses))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    pub fn identity_prior() -> PriorMeasurement<f64> {
        PriorMeasurement {
            rot: Rotation2::identity(),
            pos: Vector2::zeros(),
            kappa: 100.0,
            sigma2: 0.01,
        }
    }

    fn odom(from: usize, delta: Pose2<f64>) -> RelPoseMeasurement<f64> {
        RelPoseMeasurement {
            from,
            to: from + 1,
            delta_rot: delta.rot,
            delta_pos: delta.pos,
            kappa: 10.0,
            sigma2: 0.1,
        }
    }

    #[test]
    fn dead_reckon_hand_composition() {
        let step = Pose2::from_xy_angle(1.0, 0.0, FRAC_PI_2);
        let inst = ProblemInstance::new(
            3,
            LandmarkMap::new(vec![Vector2::new(0.0, 0.0)]),
            identity_prior(),
            vec![odom(0, step), odom(1, step)],
            vec![],
        )
        .unwrap();
        let t = dead_reckon(&inst).unwrap();
        assert_relative_eq!(t.poses[0].pos, Vector2::new(0.0, 0.0));
        assert_relative_eq!(t.poses[1].pos, Vector2::new(1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(t.poses[2].pos, Vector2::new(1.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn dead_reckon_identity_steps_stay_at_prior() {
        let mut prior = identity_prior();
        prior.pos = Vector2::new(2.0, -1.0);
        prior.rot = Rotation2::from_angle(0.4);
        let inst = ProblemInstance::new(
            4,
            LandmarkMap::new(vec![Vector2::zeros()]),
            prior.clone(),
            (0..3).map(|i| odom(i, Pose2::identity())).collect(),
            vec![],
        )
        .unwrap();
        for p in dead_reckon(&inst).unwrap().poses {
            assert_eq!(p, prior.pose());
        }
    }

    #[test]
    fn broken_chain_is_reported() {
        let inst = ProblemInstance::new(
            3,
            LandmarkMap::new(vec![Vector2::zeros()]),
            identity_prior(),
            vec![odom(0, Pose2::identity())],
            vec![],
        )
        .unwrap();
        assert!(matches!(dead_reckon(&inst), Err(Error::ChainBroken(1, 2))));
        let gap = ProblemInstance::new(
            3,
            LandmarkMap::new(vec![Vector2::zeros()]),
            identity_prior(),
            vec![odom(1, Pose2::identity())],
            vec![],
        );
        assert!(matches!(gap, Err(Error::ChainBroken(0, 1))));
    }

    fn single_landmark_instance() -> ProblemInstance<f64> {
        ProblemInstance::new(
            1,
            LandmarkMap::new(vec![Vector2::new(1.0, 0.0), Vector2::new(5.0, 5.0)]),
            identity_prior(),
            vec![],
            vec![UdaMeasurement {
                timestep: 0,
                meas_index: 0,
                y: Vector2::new(1.0, 0.0),
                sigma2: 1.0,
                candidates: vec![0, 1],
            }],
        )
        .unwrap()
    }

    #[test]
    fn landmark_term_by_hand() {
        let inst = single_landmark_instance();
        let mut theta = AssociationAssignment::new();
        theta.insert(0, 0, 0);
        let at_origin = Trajectory::new(vec![Pose2::identity()]);
        assert_eq!(cost_breakdown(&inst, &at_origin, &theta).landmark, 0.0);
        let shifted = Trajectory::new(vec![Pose2::from_xy_angle(0.1, 0.0, 0.0)]);
        assert_relative_eq!(
            cost_breakdown(&inst, &shifted, &theta).landmark,
            0.01,
            epsilon = 1e-15
        );
        // Prior: (1/0.01) * 0.1^2 = 1
        assert_relative_eq!(
            cost_breakdown(&inst, &shifted, &theta).prior,
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn inactive_candidate_does_not_change_cost() {
        let inst = single_landmark_instance();
        let mut only = inst.clone();
        only.uda_measurements[0].candidates = vec![0];
        let mut theta = AssociationAssignment::new();
        theta.insert(0, 0, 0);
        let t = Trajectory::new(vec![Pose2::from_xy_angle(0.3, -0.2, 0.1)]);
        assert_eq!(
            evaluate_cost(&inst, &t, &theta),
            evaluate_cost(&only, &t, &theta)
        );
    }

    #[test]
    fn exact_ground_truth_costs_nothing() {
        let gt = Trajectory::new(vec![Pose2::identity(), Pose2::from_xy_angle(1.0, 2.0, 0.5)]);
        let l = Vector2::new(3.0, 1.0);
        let y = gt.poses[1].rot.rotate_inv(&(l - gt.poses[1].pos));
        let inst = ProblemInstance::new(
            2,
            LandmarkMap::new(vec![l, Vector2::new(-4.0, 0.0)]),
            identity_prior(),
            vec![odom(0, gt.poses[0].between(&gt.poses[1]))],
            vec![UdaMeasurement {
                timestep: 1,
                meas_index: 0,
                y,
                sigma2: 0.5,
                candidates: vec![0, 1],
            }],
        )
        .unwrap();
        let mut theta = AssociationAssignment::new();
        theta.insert(1, 0, 0);
        assert!(evaluate_cost(&inst, &gt, &theta).abs() < 1e-24);
        theta.validate_for(&inst).unwrap();
        theta.insert(1, 0, 1);
        assert!(evaluate_cost(&inst, &gt, &theta) > 1.0);
    }

    #[test]
    fn rotation_cost_matches_frobenius() {
        let a = Rotation2::from_angle(0.3);
        let b = Rotation2::from_angle(-1.1);
        let direct = (a.matrix() - b.matrix()).norm_squared();
        assert_relative_eq!(rotation_cost(1.0, &a, &b), direct, epsilon = 1e-14);
    }

    #[test]
    fn anisotropic_covariance_rejected() {
        assert_eq!(
            isotropic_variance(&Matrix2::new(0.5, 0.0, 0.0, 0.5)).unwrap(),
            0.5
        );
        assert!(matches!(
            isotropic_variance(&Matrix2::new(0.5, 0.1, 0.1, 0.5)),
            Err(Error::Anisotropic(_))
        ));
        assert!(isotropic_variance(&Matrix2::new(1.0, 0.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn assignment_validation() {
        let inst = single_landmark_instance();
        let mut theta = AssociationAssignment::new();
        assert!(theta.validate_for(&inst).is_err());
        theta.insert(0, 0, 1);
        theta.validate_for(&inst).unwrap();
        theta.insert(0, 0, 7);
        assert!(theta.validate_for(&inst).is_err());
    }

    #[test]
    fn single_precision_instance() {
        let inst: ProblemInstance<f32> = single_landmark_instance().cast();
        let mut theta = AssociationAssignment::new();
        theta.insert(0, 0, 0);
        let t = Trajectory::new(vec![Pose2::from_xy_angle(0.1f32, 0.0, 0.0)]);
        assert!((cost_breakdown(&inst, &t, &theta).landmark - 0.01).abs() < 1e-6);
    }
}
