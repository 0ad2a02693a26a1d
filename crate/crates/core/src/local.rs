//! Max-Mixture Gauss-Newton local solver and the brute-force association
//! oracle.
//!
//! Residuals are whitened so the cost is their squared norm. Poses are
//! perturbed on the right, `C <- C Exp(dphi)` and `r <- r + C drho`, three
//! tangent coordinates `(dphi, drho_x, drho_y)` per pose in timestep order.

use crate::error::{Error, Result};
use crate::geometry::{Pose2, Tangent2, Trajectory};
use crate::problem::{evaluate_cost, landmark_cost, AssociationAssignment, ProblemInstance};
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest number of association branches the oracle will visit.
pub const ORACLE_BRANCH_CAP: u128 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnOptions {
    pub max_iters: usize,
    /// Converged when the tangent step norm falls below this.
    pub step_tol: f64,
    /// Converged when the relative cost decrease falls below this.
    pub cost_tol: f64,
    /// First Levenberg damping tried after a failed plain step, relative to
    /// the largest diagonal entry of the normal matrix.
    pub damping_floor: f64,
}

impl Default for GnOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            step_tol: 1e-10,
            cost_tol: 1e-12,
            damping_floor: 1e-8,
        }
    }
}

impl GnOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0
            || [self.step_tol, self.cost_tol, self.damping_floor]
                .iter()
                .any(|v| !(*v > 0.0))
        {
            return Err(Error::Config(
                "Gauss-Newton tolerances and iteration count must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalResult<T: Real> {
    pub trajectory: Trajectory<T>,
    pub cost: T,
    pub converged: bool,
    pub iterations: usize,
    pub associations: AssociationAssignment,
}

/// Association used for each measurement while linearizing.
#[derive(Clone, Copy, Debug)]
pub enum AssociationMode<'a> {
    /// Re-associate every measurement to its cheapest candidate.
    MaxMixture,
    Fixed(&'a AssociationAssignment),
}

/// Cheapest candidate of one measurement; the smallest index wins a tie.
fn best_candidate<T: Real>(
    inst: &ProblemInstance<T>,
    traj: &Trajectory<T>,
    meas: usize,
) -> (usize, T) {
    let m = &inst.uda_measurements[meas];
    let pose = &traj.poses[m.timestep];
    let mut best: Option<(usize, T)> = None;
    let mut cands = m.candidates.clone();
    cands.sort_unstable();
    for j in cands {
        let c = landmark_cost(pose, &inst.landmarks.positions[j], &m.y, m.sigma2);
        if best.map_or(true, |(_, b)| c < b) {
            best = Some((j, c));
        }
    }
    best.expect("candidates are non-empty")
}

/// Per-measurement cheapest candidate.
pub fn recover_associations<T: Real>(
    inst: &ProblemInstance<T>,
    traj: &Trajectory<T>,
) -> AssociationAssignment {
    let mut out = AssociationAssignment::new();
    for (k, m) in inst.uda_measurements.iter().enumerate() {
        out.insert(m.timestep, m.meas_index, best_candidate(inst, traj, k).0);
    }
    out
}

/// Odometry and prior cost plus, per measurement, the cheapest candidate's
/// landmark cost.
pub fn max_mixture_cost<T: Real>(inst: &ProblemInstance<T>, traj: &Trajectory<T>) -> T {
    evaluate_cost(inst, traj, &recover_associations(inst, traj))
}

/// `J v` with `J = [[0, -1], [1, 0]]`.
fn perp<T: Real>(v: &Vector2<T>) -> Vector2<T> {
    Vector2::new(-v.y, v.x)
}

fn rot_vec<T: Real>(p: &Pose2<T>) -> Vector2<T> {
    Vector2::new(p.rot.c, p.rot.s)
}

/// Whitened residuals and their Jacobian in the right-perturbation tangent
/// coordinates.
pub fn residuals_and_jacobian<T: Real>(
    inst: &ProblemInstance<T>,
    traj: &Trajectory<T>,
    theta: &AssociationAssignment,
) -> Result<(DVector<T>, DMatrix<T>)> {
    theta.validate_for(inst)?;
    if traj.len() != inst.n_poses {
        return Err(Error::LengthMismatch(traj.len(), inst.n_poses));
    }
    let rows = 4 + 4 * inst.odometry.len() + 2 * inst.uda_measurements.len();
    let mut r = DVector::zeros(rows);
    let mut jac = DMatrix::zeros(rows, 3 * inst.n_poses);
    let two = T::lit(2.0);
    let mut row = 0;
    let put_rot = |jac: &mut DMatrix<T>, row: usize, col: usize, v: Vector2<T>| {
        jac[(row, col)] += v.x;
        jac[(row + 1, col)] += v.y;
    };
    let put_pos = |jac: &mut DMatrix<T>, row: usize, col: usize, m: Matrix2<T>| {
        for a in 0..2 {
            for b in 0..2 {
                jac[(row + a, col + 1 + b)] += m[(a, b)];
            }
        }
    };

    // Prior: sqrt(2 kappa) (c - c0, s - s0) and (r - r0) / sigma.
    let p = &traj.poses[0];
    let w = (two * inst.prior.kappa).sqrt();
    let d = rot_vec(p) - Vector2::new(inst.prior.rot.c, inst.prior.rot.s);
    r.rows_mut(row, 2).copy_from(&(d * w));
    put_rot(&mut jac, row, 0, perp(&rot_vec(p)) * w);
    row += 2;
    let w = T::one() / inst.prior.sigma2.sqrt();
    r.rows_mut(row, 2)
        .copy_from(&((p.pos - inst.prior.pos) * w));
    put_pos(&mut jac, row, 0, p.rot.matrix() * w);
    row += 2;

    for m in &inst.odometry {
        let (a, b) = (&traj.poses[m.from], &traj.poses[m.to]);
        let pred = a.compose(&m.delta());
        let (ca, cb) = (3 * m.from, 3 * m.to);
        let w = (two * m.kappa).sqrt();
        r.rows_mut(row, 2)
            .copy_from(&((rot_vec(b) - rot_vec(&pred)) * w));
        put_rot(&mut jac, row, cb, perp(&rot_vec(b)) * w);
        put_rot(&mut jac, row, ca, -perp(&rot_vec(&pred)) * w);
        row += 2;
        let w = T::one() / m.sigma2.sqrt();
        r.rows_mut(row, 2).copy_from(&((b.pos - pred.pos) * w));
        put_pos(&mut jac, row, cb, b.rot.matrix() * w);
        put_pos(&mut jac, row, ca, -a.rot.matrix() * w);
        put_rot(&mut jac, row, ca, -a.rot.rotate(&perp(&m.delta_pos)) * w);
        row += 2;
    }

    for m in &inst.uda_measurements {
        let j = theta
            .get(m.timestep, m.meas_index)
            .expect("validated assignment");
        let pose = &traj.poses[m.timestep];
        let col = 3 * m.timestep;
        let w = T::one() / m.sigma2.sqrt();
        let e = (inst.landmarks.positions[j] - pose.pos) - pose.rot.rotate(&m.y);
        r.rows_mut(row, 2).copy_from(&(e * w));
        put_pos(&mut jac, row, col, -pose.rot.matrix() * w);
        put_rot(&mut jac, row, col, -pose.rot.rotate(&perp(&m.y)) * w);
        row += 2;
    }
    Ok((r, jac))
}

/// Applies a stacked tangent step to every pose.
pub fn retract_all<T: Real>(traj: &Trajectory<T>, step: &DVector<T>) -> Trajectory<T> {
    Trajectory::new(
        traj.poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.retract(&Tangent2::new(
                    step[3 * i],
                    step[3 * i + 1],
                    step[3 * i + 2],
                ))
            })
            .collect(),
    )
}

fn cost_under<T: Real>(
    inst: &ProblemInstance<T>,
    traj: &Trajectory<T>,
    mode: AssociationMode<'_>,
) -> T {
    match mode {
        AssociationMode::MaxMixture => max_mixture_cost(inst, traj),
        AssociationMode::Fixed(theta) => evaluate_cost(inst, traj, theta),
    }
}

/// Gauss-Newton from `init`. Each iteration fixes the associations, takes one
/// step on the poses, and accepts it only if the cost does not increase;
/// Levenberg damping is tried when the plain step fails.
pub fn gauss_newton_with<T: Real>(
    inst: &ProblemInstance<T>,
    init: &Trajectory<T>,
    mode: AssociationMode<'_>,
    opts: &GnOptions,
) -> Result<LocalResult<T>> {
    opts.validate()?;
    if init.len() != inst.n_poses {
        return Err(Error::LengthMismatch(init.len(), inst.n_poses));
    }
    let assoc = |traj: &Trajectory<T>| match mode {
        AssociationMode::MaxMixture => recover_associations(inst, traj),
        AssociationMode::Fixed(theta) => theta.clone(),
    };
    let mut traj = init.clone();
    let mut cost = cost_under(inst, &traj, mode);
    let mut converged = false;
    let mut iterations = 0;
    let step_tol = T::lit(opts.step_tol);
    let cost_tol = T::lit(opts.cost_tol);

    'outer: while iterations < opts.max_iters {
        iterations += 1;
        let theta = assoc(&traj);
        let (r, jac) = residuals_and_jacobian(inst, &traj, &theta)?;
        let jt = jac.transpose();
        let h = &jt * &jac;
        let g = &jt * &r;
        let scale = h
            .diagonal()
            .iter()
            .fold(T::zero(), |a, &v| a.max(v))
            .max(T::one());
        let mut lambda = T::zero();
        for _ in 0..16 {
            let mut damped = h.clone();
            for k in 0..damped.nrows() {
                damped[(k, k)] += lambda * scale;
            }
            let step = match damped.clone().cholesky() {
                Some(ch) => -ch.solve(&g),
                None => match damped.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        lambda = if lambda == T::zero() {
                            T::lit(opts.damping_floor)
                        } else {
                            lambda * T::lit(10.0)
                        };
                        continue;
                    }
                },
            };
            let cand = retract_all(&traj, &step);
            let cand_cost = cost_under(inst, &cand, mode);
            if cand_cost <= cost {
                let decrease = cost - cand_cost;
                let small_step = step.norm() < step_tol;
                traj = cand;
                let previous = cost;
                cost = cand_cost;
                if small_step || decrease <= cost_tol * (T::one() + previous) {
                    converged = true;
                    break 'outer;
                }
                continue 'outer;
            }
            if step.norm() < step_tol {
                // The model predicts no further progress.
                converged = true;
                break 'outer;
            }
            lambda = if lambda == T::zero() {
                T::lit(opts.damping_floor)
            } else {
                lambda * T::lit(10.0)
            };
        }
        // Damping exhausted without a decrease.
        break;
    }
    let associations = assoc(&traj);
    Ok(LocalResult {
        trajectory: traj,
        cost,
        converged,
        iterations,
        associations,
    })
}

/// Max-Mixture Gauss-Newton.
pub fn gauss_newton<T: Real>(
    inst: &ProblemInstance<T>,
    init: &Trajectory<T>,
    opts: &GnOptions,
) -> Result<LocalResult<T>> {
    gauss_newton_with(inst, init, AssociationMode::MaxMixture, opts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult<T: Real> {
    pub cost: T,
    pub assignment: AssociationAssignment,
    pub trajectory: Trajectory<T>,
    pub branches: usize,
}

/// Number of hard assignments of an instance.
pub fn branch_count<T: Real>(inst: &ProblemInstance<T>) -> u128 {
    inst.uda_measurements.iter().fold(1u128, |acc, m| {
        acc.saturating_mul(m.candidates.len() as u128)
    })
}

/// Assignment number `index` in mixed radix over the measurements, first
/// measurement least significant.
fn branch<T: Real>(inst: &ProblemInstance<T>, mut index: usize) -> AssociationAssignment {
    let mut out = AssociationAssignment::new();
    for m in &inst.uda_measurements {
        let n = m.candidates.len();
        out.insert(m.timestep, m.meas_index, m.candidates[index % n]);
        index /= n;
    }
    out
}

/// Fixed-association Gauss-Newton from `init` on every hard assignment; the
/// cheapest branch wins, the lowest branch number on ties.
pub fn enumerate_oracle<T: Real>(
    inst: &ProblemInstance<T>,
    init: &Trajectory<T>,
    opts: &GnOptions,
) -> Result<OracleResult<T>> {
    let branches = branch_count(inst);
    if branches > ORACLE_BRANCH_CAP {
        return Err(Error::BranchCapExceeded {
            branches,
            cap: ORACLE_BRANCH_CAP,
        });
    }
    let n = branches as usize;
    let results: Vec<(usize, LocalResult<T>, AssociationAssignment)> = (0..n)
        .into_par_iter()
        .map(|b| {
            let theta = branch(inst, b);
            gauss_newton_with(inst, init, AssociationMode::Fixed(&theta), opts)
                .map(|r| (b, r, theta))
        })
        .collect::<Result<_>>()?;
    let (_, best, assignment) = results
        .into_iter()
        .min_by(|a, b| {
            a.1.cost
                .partial_cmp(&b.1.cost)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        })
        .expect("at least one branch");
    Ok(OracleResult {
        cost: best.cost,
        assignment,
        trajectory: best.trajectory,
        branches: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation2;
    use crate::problem::tests::identity_prior;
    use crate::problem::{LandmarkMap, RelPoseMeasurement, UdaMeasurement};

    fn two_landmark_instance() -> ProblemInstance<f64> {
        let odo = vec![RelPoseMeasurement {
            from: 0,
            to: 1,
            delta_rot: Rotation2::from_angle(0.2),
            delta_pos: Vector2::new(1.0, 0.0),
            kappa: 10.0,
            sigma2: 0.1,
        }];
        let uda = vec![
            UdaMeasurement {
                timestep: 0,
                meas_index: 0,
                y: Vector2::new(1.0, 0.1),
                sigma2: 0.2,
                candidates: vec![0, 1],
            },
            UdaMeasurement {
                timestep: 1,
                meas_index: 0,
                y: Vector2::new(0.5, 1.0),
                sigma2: 0.2,
                candidates: vec![0, 1],
            },
        ];
        let lm = LandmarkMap::new(vec![Vector2::new(1.0, 0.0), Vector2::new(1.5, 1.5)]);
        ProblemInstance::new(2, lm, identity_prior(), odo, uda).unwrap()
    }

    #[test]
    fn recover_prefers_nearest_and_breaks_ties_low() {
        let lm = LandmarkMap::new(vec![Vector2::new(1.0, 0.0), Vector2::new(5.0, 5.0)]);
        let uda = vec![UdaMeasurement {
            timestep: 0,
            meas_index: 0,
            y: Vector2::new(1.0, 0.0),
            sigma2: 1.0,
            candidates: vec![0, 1],
        }];
        let inst = ProblemInstance::new(1, lm, identity_prior(), vec![], uda).unwrap();
        let traj = Trajectory::new(vec![Pose2::identity()]);
        assert_eq!(recover_associations(&inst, &traj).get(0, 0), Some(0));

        let lm = LandmarkMap::new(vec![Vector2::new(0.0, 1.0), Vector2::new(0.0, -1.0)]);
        let uda = vec![UdaMeasurement {
            timestep: 0,
            meas_index: 0,
            y: Vector2::zeros(),
            sigma2: 1.0,
            candidates: vec![1, 0],
        }];
        let inst = ProblemInstance::new(1, lm, identity_prior(), vec![], uda).unwrap();
        assert_eq!(recover_associations(&inst, &traj).get(0, 0), Some(0));
    }

    #[test]
    fn max_mixture_is_minimum_over_assignments() {
        let inst = two_landmark_instance();
        let traj = crate::problem::dead_reckon(&inst).unwrap();
        let mm = max_mixture_cost(&inst, &traj);
        let brute = (0..4)
            .map(|b| evaluate_cost(&inst, &traj, &branch(&inst, b)))
            .fold(f64::INFINITY, f64::min);
        assert!((mm - brute).abs() < 1e-12);
    }

    #[test]
    fn accepted_steps_do_not_increase_cost() {
        let inst = two_landmark_instance();
        let init = crate::problem::dead_reckon(&inst).unwrap();
        let start = max_mixture_cost(&inst, &init);
        let res = gauss_newton(&inst, &init, &GnOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.cost <= start);
        assert!((res.cost - max_mixture_cost(&inst, &res.trajectory)).abs() < 1e-12);
    }

    #[test]
    fn oracle_visits_every_branch_and_beats_max_mixture() {
        let inst = two_landmark_instance();
        let init = crate::problem::dead_reckon(&inst).unwrap();
        let oracle = enumerate_oracle(&inst, &init, &GnOptions::default()).unwrap();
        assert_eq!(oracle.branches, 4);
        let mm = gauss_newton(&inst, &init, &GnOptions::default()).unwrap();
        assert!(oracle.cost <= mm.cost + 1e-9);
    }

    #[test]
    fn oracle_refuses_large_enumerations() {
        let lm = LandmarkMap::new((0..4).map(|j| Vector2::new(j as f64, 0.0)).collect());
        let uda = (0..11)
            .map(|i| UdaMeasurement {
                timestep: 0,
                meas_index: i,
                y: Vector2::zeros(),
                sigma2: 1.0,
                candidates: vec![0, 1, 2, 3],
            })
            .collect();
        let inst = ProblemInstance::new(1, lm, identity_prior(), vec![], uda).unwrap();
        let init = Trajectory::new(vec![Pose2::identity()]);
        assert!(matches!(
            enumerate_oracle(&inst, &init, &GnOptions::default()),
            Err(Error::BranchCapExceeded { .. })
        ));
    }

    #[test]
    fn single_precision_step_descends() {
        let inst = two_landmark_instance().cast::<f32>();
        let init = crate::problem::dead_reckon(&inst).unwrap();
        let start = max_mixture_cost(&inst, &init);
        let opts = GnOptions {
            step_tol: 1e-5,
            cost_tol: 1e-6,
            ..Default::default()
        };
        let res = gauss_newton(&inst, &init, &opts).unwrap();
        assert!(res.cost <= start);
    }
}
