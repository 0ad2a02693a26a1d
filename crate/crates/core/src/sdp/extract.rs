//! Readout of trajectory and associations from a relaxation solution.

use super::SdpSolution;
use crate::error::{Error, Result};
use crate::geometry::{Pose2, Rotation2, Trajectory};
use crate::lifting::{Col, ColumnIndexMap, PosePart};
use crate::problem::AssociationAssignment;
use nalgebra::{DMatrix, Matrix2, Matrix2xX, SymmetricEigen};
use serde::Serialize;
use std::collections::BTreeMap;

/// Eigenvalue ratio above which a solution counts as rank two.
pub const DEFAULT_THRESHOLD: f64 = 1e6;

/// `lambda_3` values at or below this fraction of `lambda_1` count as zero.
const LAMBDA3_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Certificate {
    /// `lambda_2 / lambda_3`, infinite when `lambda_3` is numerically zero.
    pub eig_ratio: f64,
    pub tight: bool,
    /// Every extracted rotation block is closer to a rotation than to a
    /// reflection.
    pub so2_feasible: bool,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractedSolution {
    pub trajectory: Trajectory<f64>,
    pub associations: AssociationAssignment,
    /// Indicator readouts in column-map order.
    pub theta_raw: Vec<f64>,
    pub certificate: Certificate,
    /// A rank-two projection was needed because the solution is not tight.
    pub rounded: bool,
    /// Lifted point normalized so its `H` block is the identity.
    pub lifted: Matrix2xX<f64>,
}

/// Eigenvalue ratio and tightness from eigenvalues sorted largest first.
pub fn certificate(eigenvalues: &[f64], threshold: f64) -> (f64, bool) {
    let ratio = match eigenvalues {
        [l1, l2, l3, ..] if *l3 > LAMBDA3_FLOOR * l1.abs() => l2 / l3,
        _ => f64::INFINITY,
    };
    (ratio, ratio >= threshold)
}

pub fn extract(
    solution: &SdpSolution,
    map: &ColumnIndexMap,
    threshold: f64,
) -> Result<ExtractedSolution> {
    if !solution.status.is_usable() {
        return Err(Error::ExtractionFailed(format!(
            "solver status {}",
            solution.status
        )));
    }
    read_out(&solution.z, &solution.eigenvalues, map, threshold)
}

/// Extraction straight from a Gram matrix.
pub fn extract_from_gram(
    z: &DMatrix<f64>,
    map: &ColumnIndexMap,
    threshold: f64,
) -> Result<ExtractedSolution> {
    let mut eig: Vec<f64> = SymmetricEigen::new(z.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    read_out(z, &eig, map, threshold)
}

fn read_out(
    z: &DMatrix<f64>,
    eigenvalues: &[f64],
    map: &ColumnIndexMap,
    threshold: f64,
) -> Result<ExtractedSolution> {
    if z.nrows() != map.n_x() || z.ncols() != map.n_x() {
        return Err(Error::LengthMismatch(z.nrows(), map.n_x()));
    }
    let (eig_ratio, tight) = certificate(eigenvalues, threshold);
    let (lifted, rounded) = if tight {
        (first_rows(z)?, false)
    } else {
        (rank_two(z)?, true)
    };

    let col = |c: Col| {
        lifted
            .column(map.idx(c).expect("column in map"))
            .into_owned()
    };
    let mut so2_feasible = true;
    let poses = (0..map.n_poses())
        .map(|i| {
            let m = Matrix2::from_columns(&[
                col(Col::Pose(i, PosePart::C1)),
                col(Col::Pose(i, PosePart::C2)),
            ]);
            let (rot, proper): (Rotation2<f64>, bool) = Rotation2::nearest(&m);
            so2_feasible &= proper;
            Pose2::new(rot, col(Col::Pose(i, PosePart::R)))
        })
        .collect();

    let theta_raw: Vec<f64> = (0..map.n_theta())
        .map(|v| 0.5 * (col(Col::Theta(v, 0)).x + col(Col::Theta(v, 1)).y))
        .collect();
    // Argmax per measurement; the earliest candidate wins a tie.
    let mut best: BTreeMap<(usize, usize), (usize, f64)> = BTreeMap::new();
    for (v, t) in map.vars().iter().enumerate() {
        let e = best
            .entry((t.timestep, t.meas_index))
            .or_insert((t.landmark, theta_raw[v]));
        if theta_raw[v] > e.1 {
            *e = (t.landmark, theta_raw[v]);
        }
    }
    let mut associations = AssociationAssignment::new();
    for ((t, k), (j, _)) in best {
        associations.insert(t, k, j);
    }

    Ok(ExtractedSolution {
        trajectory: Trajectory::new(poses),
        associations,
        theta_raw,
        certificate: Certificate {
            eig_ratio,
            tight,
            so2_feasible,
            threshold,
        },
        rounded,
        lifted,
    })
}

/// `H^-1` times a `2 x n` factor whose first block is `H`.
fn normalize(x: Matrix2xX<f64>) -> Result<Matrix2xX<f64>> {
    let h: Matrix2<f64> = x.fixed_columns::<2>(0).into_owned();
    if h.norm() < 0.5 {
        return Err(Error::ExtractionFailed(format!(
            "degenerate homogenization block (norm {:.3e})",
            h.norm()
        )));
    }
    let hinv = h
        .try_inverse()
        .ok_or_else(|| Error::ExtractionFailed("singular homogenization block".into()))?;
    Ok(hinv * x)
}

/// For `Z = X^T X` with `H^T H = I`, the first two rows are `H^T X`.
fn first_rows(z: &DMatrix<f64>) -> Result<Matrix2xX<f64>> {
    let top = Matrix2xX::from_fn(z.ncols(), |r, c| z[(r, c)]);
    let hh: Matrix2<f64> = top.fixed_columns::<2>(0).into_owned();
    if hh.norm() < 0.5 {
        return Err(Error::ExtractionFailed(format!(
            "degenerate homogenization block (norm {:.3e})",
            hh.norm()
        )));
    }
    let inv = hh
        .try_inverse()
        .ok_or_else(|| Error::ExtractionFailed("singular homogenization block".into()))?;
    Ok(inv * top)
}

/// Best rank-two factor from the two leading eigenpairs.
fn rank_two(z: &DMatrix<f64>) -> Result<Matrix2xX<f64>> {
    let eig = SymmetricEigen::new(z.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut x = Matrix2xX::zeros(z.ncols());
    for (row, &k) in order.iter().take(2).enumerate() {
        let scale = eig.eigenvalues[k].max(0.0).sqrt();
        for c in 0..z.ncols() {
            x[(row, c)] = scale * eig.eigenvectors[(c, k)];
        }
    }
    normalize(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{build_feasible_point, random_assignment, random_trajectory};
    use crate::problem::tests::identity_prior;
    use crate::problem::{LandmarkMap, ProblemInstance, UdaMeasurement};
    use nalgebra::Vector2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance() -> ProblemInstance<f64> {
        let uda = (0..2)
            .map(|i| UdaMeasurement {
                timestep: i,
                meas_index: 0,
                y: Vector2::new(1.0, 0.0),
                sigma2: 1.0,
                candidates: vec![0, 1, 2],
            })
            .collect();
        let odo = vec![crate::problem::RelPoseMeasurement {
            from: 0,
            to: 1,
            delta_rot: Rotation2::identity(),
            delta_pos: Vector2::new(1.0, 0.0),
            kappa: 1.0,
            sigma2: 1.0,
        }];
        let lm = LandmarkMap::new(vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(2.0, 0.0),
        ]);
        ProblemInstance::new(2, lm, identity_prior(), odo, uda).unwrap()
    }

    #[test]
    fn ratio_floor_gives_infinity() {
        assert_eq!(certificate(&[4.0, 2.0, 1e-15], 1e6), (f64::INFINITY, true));
        assert_eq!(certificate(&[4.0, 2.0, 1.0], 1e6), (2.0, false));
        assert_eq!(certificate(&[4.0, 2.0, -1e-9], 1e6).0, f64::INFINITY);
    }

    #[test]
    fn gram_round_trip() {
        let inst = instance();
        let map = ColumnIndexMap::new(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..20 {
            let traj = random_trajectory(2, &mut rng);
            let theta = random_assignment(&inst, &mut rng);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let p = build_feasible_point(&traj, &theta, sign, &map).unwrap();
            let out = extract_from_gram(&p.gram(), &map, DEFAULT_THRESHOLD).unwrap();
            assert!(out.certificate.tight && out.certificate.so2_feasible && !out.rounded);
            assert_eq!(out.associations, theta);
            for (a, b) in out.trajectory.poses.iter().zip(&traj.poses) {
                assert!((a.pos - b.pos).norm() < 1e-10);
                assert!((a.rot.matrix() - b.rot.matrix()).norm() < 1e-10);
            }
            let plain = build_feasible_point(&traj, &theta, 1.0, &map).unwrap();
            assert!((out.lifted - plain.x).abs().max() < 1e-10);
        }
    }

    #[test]
    fn rank_two_fallback_reproduces_exact_gram() {
        let inst = instance();
        let map = ColumnIndexMap::new(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let traj = random_trajectory(2, &mut rng);
        let theta = random_assignment(&inst, &mut rng);
        let p = build_feasible_point(&traj, &theta, 1.0, &map).unwrap();
        // Threshold infinity forces the projection path.
        let mut z = p.gram();
        let n = z.nrows();
        z += DMatrix::identity(n, n) * 1e-3;
        let out = extract_from_gram(&z, &map, f64::INFINITY).unwrap();
        assert!(out.rounded && !out.certificate.tight);
        assert_eq!(out.associations, theta);
        for (a, b) in out.trajectory.poses.iter().zip(&traj.poses) {
            assert!((a.pos - b.pos).norm() < 1e-2);
        }
    }

    #[test]
    fn degenerate_h_block_is_rejected() {
        let inst = instance();
        let map = ColumnIndexMap::new(&inst);
        let z = DMatrix::zeros(map.n_x(), map.n_x());
        assert!(matches!(
            extract_from_gram(&z, &map, 1e6),
            Err(Error::ExtractionFailed(_))
        ));
    }
}
