//! Restriction of the relaxation to the face that contains every lifted point.
//!
//! At a feasible point the indicators of one measurement sum to one, so
//! `sum_j Theta_j = H` and `sum_j theta_j * xi = xi` for each pose column of
//! that timestep. Every feasible Gram matrix therefore has the vectors
//! `e_h - sum_j e_Theta_j` and `e_xi - sum_j e_(theta_j xi)` in its kernel
//! and no strictly feasible point exists. Writing the last candidate's columns
//! through the others gives `X = X_r V^T` and `Z = V W V^T`. Solving over `W`
//! keeps every lifted point feasible, so the relaxation stays a lower bound.

use crate::lifting::{Col, ColumnIndexMap, SymmetricMatrix, XiCol};
use nalgebra::DMatrix;
use std::collections::BTreeMap;

/// Sparse `n x r` basis `V` of the face.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceBasis {
    /// Row `a` of `V` as `(reduced column, coefficient)` pairs.
    rows: Vec<Vec<(usize, f64)>>,
    /// Full column index of each reduced column.
    kept: Vec<usize>,
}

impl FaceBasis {
    pub fn identity(n: usize) -> Self {
        Self {
            rows: (0..n).map(|a| vec![(a, 1.0)]).collect(),
            kept: (0..n).collect(),
        }
    }

    /// Eliminates the indicator and lifted columns of the last candidate of
    /// every measurement.
    pub fn from_map(map: &ColumnIndexMap) -> Self {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (v, t) in map.vars().iter().enumerate() {
            groups.entry(t.group).or_default().push(v);
        }
        let last: BTreeMap<usize, &Vec<usize>> = groups
            .values()
            .map(|vs| (*vs.last().expect("non-empty group"), vs))
            .collect();
        let eliminated = |c: &Col| match *c {
            Col::Theta(v, _) | Col::Lifted(v, _) => last.contains_key(&v),
            _ => false,
        };
        let mut reduced = vec![usize::MAX; map.n_x()];
        let mut kept = Vec::new();
        for (k, c) in map.cols().iter().enumerate() {
            if !eliminated(c) {
                reduced[k] = kept.len();
                kept.push(k);
            }
        }
        let col = |c: Col| reduced[map.idx(c).expect("column in map")];
        let rows = map
            .cols()
            .iter()
            .enumerate()
            .map(|(k, c)| match *c {
                Col::Theta(v, d) if last.contains_key(&v) => {
                    let mut r = vec![(col(Col::H(d)), 1.0)];
                    r.extend(
                        last[&v]
                            .iter()
                            .filter(|&&w| w != v)
                            .map(|&w| (col(Col::Theta(w, d)), -1.0)),
                    );
                    r
                }
                Col::Lifted(v, p) if last.contains_key(&v) => {
                    let t = map.vars()[v].timestep;
                    let mut r = vec![(col(Col::from_xi(XiCol::Pose(t, p))), 1.0)];
                    r.extend(
                        last[&v]
                            .iter()
                            .filter(|&&w| w != v)
                            .map(|&w| (col(Col::Lifted(w, p)), -1.0)),
                    );
                    r
                }
                _ => vec![(reduced[k], 1.0)],
            })
            .collect();
        Self { rows, kept }
    }

    /// Full dimension `n`.
    pub fn full_dim(&self) -> usize {
        self.rows.len()
    }

    /// Reduced dimension `r`.
    pub fn dim(&self) -> usize {
        self.kept.len()
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.rows.len(), self.dim());
        for (a, row) in self.rows.iter().enumerate() {
            for &(p, c) in row {
                v[(a, p)] += c;
            }
        }
        v
    }

    /// `V^T A V`.
    pub fn reduce(&self, a: &SymmetricMatrix<f64>) -> SymmetricMatrix<f64> {
        // Only contributions landing at (p, q) with p <= q are summed; the
        // result is symmetric so they already add up to the upper triangle.
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (a_, b, v) in a.entries() {
            for &(p, alpha) in &self.rows[a_] {
                for &(q, beta) in &self.rows[b] {
                    if p <= q {
                        *acc.entry((p, q)).or_insert(0.0) += v * alpha * beta;
                    }
                    if a_ != b && q <= p {
                        *acc.entry((q, p)).or_insert(0.0) += v * alpha * beta;
                    }
                }
            }
        }
        let mut out = SymmetricMatrix::new(self.dim());
        for ((p, q), v) in acc {
            if v != 0.0 {
                out.add_entry(p, q, v);
            }
        }
        out
    }

    /// `V W V^T`.
    pub fn lift(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let v = self.matrix();
        &v * w * v.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{all_constraints, random_feasible_point};
    use crate::geometry::Rotation2;
    use crate::lifting::assemble_cost;
    use crate::problem::tests::identity_prior;
    use crate::problem::{LandmarkMap, ProblemInstance, RelPoseMeasurement, UdaMeasurement};
    use nalgebra::Vector2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(n: usize, n_l: usize) -> ProblemInstance<f64> {
        let odometry = (0..n - 1)
            .map(|i| RelPoseMeasurement {
                from: i,
                to: i + 1,
                delta_rot: Rotation2::from_angle(0.3),
                delta_pos: Vector2::new(1.0, 0.2),
                kappa: 10.0,
                sigma2: 0.5,
            })
            .collect();
        let uda = (0..n)
            .map(|i| UdaMeasurement {
                timestep: i,
                meas_index: 0,
                y: Vector2::new(1.0, i as f64),
                sigma2: 0.5,
                candidates: (0..n_l).collect(),
            })
            .collect();
        let landmarks = LandmarkMap::new((0..n_l).map(|j| Vector2::new(j as f64, 2.0)).collect());
        ProblemInstance::new(n, landmarks, identity_prior(), odometry, uda).unwrap()
    }

    #[test]
    fn reduced_dimensions() {
        let m3 = ColumnIndexMap::new(&instance(3, 2));
        assert_eq!((m3.n_x(), FaceBasis::from_map(&m3).dim()), (41, 26));
        let m5 = ColumnIndexMap::new(&instance(5, 3));
        assert_eq!((m5.n_x(), FaceBasis::from_map(&m5).dim()), (92, 67));
    }

    #[test]
    fn feasible_points_lie_in_the_face() {
        let inst = instance(3, 2);
        let map = ColumnIndexMap::new(&inst);
        let face = FaceBasis::from_map(&map);
        let v = face.matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (_, _, p) = random_feasible_point(&inst, &map, &mut rng);
            // The kept columns reproduce X through V^T.
            let xr = p.x.select_columns(face.kept());
            let back = &xr * v.transpose();
            assert!((back - &p.x).abs().max() < 1e-12);
        }
    }

    #[test]
    fn reduction_preserves_inner_products() {
        let inst = instance(3, 2);
        let map = ColumnIndexMap::new(&inst);
        let face = FaceBasis::from_map(&map);
        let v = face.matrix();
        let q = assemble_cost(&inst, &map).unwrap();
        let w = {
            let b = DMatrix::from_fn(face.dim(), face.dim(), |i, j| {
                ((i * 7 + j * 3) % 11) as f64 - 5.0
            });
            &b * b.transpose()
        };
        let z = &v * &w * v.transpose();
        let lhs = q.inner(&z);
        let rhs = face.reduce(&q).inner(&w);
        assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
        for c in all_constraints(&map).constraints.iter().take(200) {
            let l = c.a.inner(&z);
            let r = face.reduce(&c.a).inner(&w);
            assert!((l - r).abs() <= 1e-9 * l.abs().max(1.0));
        }
    }
}
