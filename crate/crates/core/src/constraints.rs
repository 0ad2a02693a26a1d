//! Redundant-constraint catalog for the lifted problem and a feasible-point
//! sampler that checks every constraint lies in the nullspace of the
//! feasible Gram matrices.

use crate::error::{Error, Result};
use crate::geometry::{Pose2, Rotation2, Trajectory};
use crate::lifting::{xi_column, Col, ColumnIndexMap, PosePart, SymmetricMatrix, XiCol};
use crate::problem::{AssociationAssignment, ProblemInstance};
use crate::scalar::Real;
use nalgebra::{DMatrix, Matrix2xX, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Homogenization,
    Orthonormality,
    DcmStructure,
    DiscreteSum,
    DiscreteBoolean,
    DiscreteProduct,
    DiscretePremulSum,
    CombinedThetaScaled,
    CombinedCrossProduct,
    Moment1,
    Moment2,
    Moment3,
    ColumnStructure,
}

impl Family {
    pub const ALL: [Family; 13] = [
        Family::Homogenization,
        Family::Orthonormality,
        Family::DcmStructure,
        Family::DiscreteSum,
        Family::DiscreteBoolean,
        Family::DiscreteProduct,
        Family::DiscretePremulSum,
        Family::CombinedThetaScaled,
        Family::CombinedCrossProduct,
        Family::Moment1,
        Family::Moment2,
        Family::Moment3,
        Family::ColumnStructure,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Homogenization => "homogenization",
            Family::Orthonormality => "orthonormality",
            Family::DcmStructure => "dcm-structure",
            Family::DiscreteSum => "discrete-sum",
            Family::DiscreteBoolean => "discrete-boolean",
            Family::DiscreteProduct => "discrete-product",
            Family::DiscretePremulSum => "discrete-premul-sum",
            Family::CombinedThetaScaled => "combined-theta-scaled",
            Family::CombinedCrossProduct => "combined-cross-product",
            Family::Moment1 => "moment-1",
            Family::Moment2 => "moment-2",
            Family::Moment3 => "moment-3",
            Family::ColumnStructure => "column-structure",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `<a, Z> = rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintMatrix {
    pub a: SymmetricMatrix<f64>,
    pub rhs: f64,
    pub family: Family,
}

impl ConstraintMatrix {
    /// `<a, X^T X> - rhs`.
    pub fn residual(&self, x: &Matrix2xX<f64>) -> f64 {
        self.a.inner_gram(x) - self.rhs
    }
}

/// A term `coef * Z[a, b]` over continuous columns.
type XiTerm = (XiCol, XiCol, f64);

fn h(m: u8) -> XiCol {
    XiCol::H(m)
}

fn pc(i: usize, p: PosePart) -> XiCol {
    XiCol::Pose(i, p)
}

/// Constraints of one pose: column orthogonality, two unit norms referenced
/// to `Z[h1, h1]`, and the planar `[[c, -s], [s, c]]` pattern relative to `H`.
fn pose_terms(i: usize) -> Vec<(Family, Vec<XiTerm>)> {
    let (c1, c2) = (pc(i, PosePart::C1), pc(i, PosePart::C2));
    vec![
        (Family::Orthonormality, vec![(c1, c2, 1.0)]),
        (
            Family::Orthonormality,
            vec![(c1, c1, 1.0), (h(0), h(0), -1.0)],
        ),
        (
            Family::Orthonormality,
            vec![(c2, c2, 1.0), (h(0), h(0), -1.0)],
        ),
        (
            Family::DcmStructure,
            vec![(c1, h(0), 1.0), (c2, h(1), -1.0)],
        ),
        (Family::DcmStructure, vec![(c1, h(1), 1.0), (c2, h(0), 1.0)]),
    ]
}

/// Orthonormality of `H` itself with `Z[h1, h1]` as reference.
fn h_terms() -> Vec<(Family, Vec<XiTerm>)> {
    vec![
        (
            Family::Homogenization,
            vec![(h(1), h(1), 1.0), (h(0), h(0), -1.0)],
        ),
        (Family::Homogenization, vec![(h(0), h(1), 1.0)]),
    ]
}

struct Emitter<'a> {
    map: &'a ColumnIndexMap,
    out: Vec<ConstraintMatrix>,
}

impl<'a> Emitter<'a> {
    fn new(map: &'a ColumnIndexMap) -> Self {
        Self {
            map,
            out: Vec::new(),
        }
    }

    fn emit(&mut self, family: Family, rhs: f64, terms: &[(usize, usize, f64)]) {
        let mut a = SymmetricMatrix::new(self.map.n_x());
        for &(i, j, v) in terms {
            a.add_term(i, j, v);
        }
        if !a.is_empty() {
            self.out.push(ConstraintMatrix { a, rhs, family });
        }
    }

    fn col(&self, c: Col) -> usize {
        self.map.get(c).expect("column registered")
    }

    fn xi(&self, c: XiCol) -> usize {
        self.col(Col::from_xi(c))
    }

    /// `theta_var * xi`.
    fn scaled(&self, var: usize, c: XiCol) -> usize {
        self.map.scaled(var, c).expect("same-timestep column")
    }

    fn h1(&self) -> usize {
        self.col(Col::H(0))
    }

    fn theta(&self, var: usize, d: u8) -> usize {
        self.col(Col::Theta(var, d))
    }

    fn groups(&self) -> Vec<Vec<usize>> {
        let n_groups = self
            .map
            .vars()
            .iter()
            .map(|t| t.group + 1)
            .max()
            .unwrap_or(0);
        let mut g = vec![Vec::new(); n_groups];
        for (v, t) in self.map.vars().iter().enumerate() {
            g[t.group].push(v);
        }
        g
    }
}

/// Homogenization, `H` orthonormality and per-pose rotation constraints.
pub fn initial_constraints(map: &ColumnIndexMap) -> Vec<ConstraintMatrix> {
    let mut e = Emitter::new(map);
    let h1 = e.h1();
    e.emit(Family::Homogenization, 1.0, &[(h1, h1, 1.0)]);
    let mut families = h_terms();
    for i in 0..map.n_poses() {
        families.extend(pose_terms(i));
    }
    for (fam, terms) in families {
        let t: Vec<_> = terms
            .iter()
            .map(|&(a, b, v)| (e.xi(a), e.xi(b), v))
            .collect();
        e.emit(fam, 0.0, &t);
    }
    e.out
}

/// Quadratic constraints on the association indicators, written on the first
/// column of each indicator block with `h1` standing for the constant 1.
pub fn discrete_constraints(map: &ColumnIndexMap) -> Vec<ConstraintMatrix> {
    let mut e = Emitter::new(map);
    let h1 = e.h1();
    let groups = e.groups();
    for g in &groups {
        let mut sum: Vec<_> = g.iter().map(|&v| (h1, e.theta(v, 0), 1.0)).collect();
        sum.push((h1, h1, -1.0));
        e.emit(Family::DiscreteSum, 0.0, &sum);
    }
    for g in &groups {
        for &v in g {
            let t = e.theta(v, 0);
            e.emit(Family::DiscreteBoolean, 0.0, &[(t, t, 1.0), (h1, t, -1.0)]);
        }
    }
    for g in &groups {
        for (a, &v) in g.iter().enumerate() {
            for &w in &g[a + 1..] {
                e.emit(
                    Family::DiscreteProduct,
                    0.0,
                    &[(e.theta(v, 0), e.theta(w, 0), 1.0)],
                );
            }
        }
    }
    let vars = map.vars();
    for (g1, vs1) in groups.iter().enumerate() {
        for (g2, vs2) in groups.iter().enumerate() {
            if g1 == g2 || vars[vs1[0]].timestep != vars[vs2[0]].timestep {
                continue;
            }
            for &w in vs2 {
                let tw = e.theta(w, 0);
                let mut terms: Vec<_> = vs1.iter().map(|&v| (tw, e.theta(v, 0), 1.0)).collect();
                terms.push((tw, h1, -1.0));
                e.emit(Family::DiscretePremulSum, 0.0, &terms);
            }
        }
    }
    e.out
}

/// Products of discrete and continuous constraints.
///
/// Cross products multiply the boolean and pairwise-product indicator
/// constraints of one measurement by `xi_k^T xi_l` for columns of the same
/// timestep. Theta-scaled constraints multiply each pose and `H` constraint of
/// the measurement's timestep by the indicator.
pub fn combined_constraints(map: &ColumnIndexMap) -> Vec<ConstraintMatrix> {
    let mut e = Emitter::new(map);
    let vars = map.vars().to_vec();
    for (v, t) in vars.iter().enumerate() {
        let mut families = h_terms();
        families.extend(pose_terms(t.timestep));
        for (_, terms) in families {
            let scaled: Vec<_> = terms
                .iter()
                .map(|&(a, b, coef)| match (a, b) {
                    (XiCol::H(_), _) => (e.xi(a), e.scaled(v, b), coef),
                    (_, XiCol::H(_)) => (e.scaled(v, a), e.xi(b), coef),
                    _ => (e.scaled(v, a), e.scaled(v, b), coef),
                })
                .collect();
            e.emit(Family::CombinedThetaScaled, 0.0, &scaled);
        }
    }
    for (v, t) in vars.iter().enumerate() {
        let cols = XiCol::timestep_cols(t.timestep);
        for (k, &xk) in cols.iter().enumerate() {
            for &xl in &cols[k..] {
                // (theta^2 - theta) xi_k . xi_l
                let terms = [
                    (e.scaled(v, xk), e.scaled(v, xl), 1.0),
                    (e.xi(xk), e.scaled(v, xl), -1.0),
                ];
                e.emit(Family::CombinedCrossProduct, 0.0, &terms);
            }
        }
    }
    for g in e.groups() {
        for (a, &v) in g.iter().enumerate() {
            for &w in &g[a + 1..] {
                let cols = XiCol::timestep_cols(vars[v].timestep);
                for &xk in &cols {
                    for &xl in &cols {
                        // theta_v theta_w xi_k . xi_l
                        e.emit(
                            Family::CombinedCrossProduct,
                            0.0,
                            &[(e.scaled(v, xk), e.scaled(w, xl), 1.0)],
                        );
                    }
                }
            }
        }
    }
    e.out
}

/// Equalities between Gram entries that represent the same monomial:
/// `h_m . (theta xi) = Theta_m . xi`, `(theta xi) . Theta_m = (theta xi) . h_m`
/// and `(theta xi) . (theta xi') = xi . (theta xi')`.
pub fn moment_constraints(map: &ColumnIndexMap) -> Vec<ConstraintMatrix> {
    let mut e = Emitter::new(map);
    for (v, t) in map.vars().iter().enumerate() {
        let pose: Vec<XiCol> = PosePart::ALL.iter().map(|&p| pc(t.timestep, p)).collect();
        for &x in &pose {
            for m in 0..2u8 {
                let terms = [
                    (e.xi(h(m)), e.scaled(v, x), 1.0),
                    (e.theta(v, m), e.xi(x), -1.0),
                ];
                e.emit(Family::Moment1, 0.0, &terms);
            }
        }
        for &x in &pose {
            for m in 0..2u8 {
                let terms = [
                    (e.scaled(v, x), e.theta(v, m), 1.0),
                    (e.scaled(v, x), e.xi(h(m)), -1.0),
                ];
                e.emit(Family::Moment2, 0.0, &terms);
            }
        }
        for &x in &pose {
            for &y in &pose {
                let terms = [
                    (e.scaled(v, x), e.scaled(v, y), 1.0),
                    (e.xi(x), e.scaled(v, y), -1.0),
                ];
                e.emit(Family::Moment3, 0.0, &terms);
            }
        }
    }
    e.out
}

/// Indicator blocks are diagonal: entries of different diagonal positions are
/// orthogonal, across distinct variables and within one variable.
pub fn column_structure_constraints(map: &ColumnIndexMap) -> Vec<ConstraintMatrix> {
    let mut e = Emitter::new(map);
    let n = map.n_theta();
    for v in 0..n {
        e.emit(
            Family::ColumnStructure,
            0.0,
            &[(e.theta(v, 0), e.theta(v, 1), 1.0)],
        );
    }
    for v in 0..n {
        for w in v + 1..n {
            e.emit(
                Family::ColumnStructure,
                0.0,
                &[(e.theta(v, 0), e.theta(w, 1), 1.0)],
            );
            e.emit(
                Family::ColumnStructure,
                0.0,
                &[(e.theta(v, 1), e.theta(w, 0), 1.0)],
            );
        }
    }
    e.out
}

/// Full catalog after removing exact duplicates.
#[derive(Clone, Debug)]
pub struct ConstraintCatalog {
    pub constraints: Vec<ConstraintMatrix>,
    /// Exact duplicates dropped, by the family of the dropped copy.
    pub duplicates: BTreeMap<Family, usize>,
}

impl ConstraintCatalog {
    pub fn counts(&self) -> BTreeMap<Family, usize> {
        let mut c = BTreeMap::new();
        for k in &self.constraints {
            *c.entry(k.family).or_insert(0) += 1;
        }
        c
    }
}

fn canonical_key(c: &ConstraintMatrix) -> Vec<(usize, usize, u64)> {
    let mut k: Vec<_> = c.a.entries().map(|(a, b, v)| (a, b, v.to_bits())).collect();
    k.push((usize::MAX, usize::MAX, c.rhs.to_bits()));
    k
}

/// Exact-duplicate removal keeping the first occurrence.
pub fn dedup(list: Vec<ConstraintMatrix>) -> (Vec<ConstraintMatrix>, BTreeMap<Family, usize>) {
    let mut seen = std::collections::HashSet::new();
    let mut dropped = BTreeMap::new();
    let mut out = Vec::with_capacity(list.len());
    for c in list {
        if seen.insert(canonical_key(&c)) {
            out.push(c);
        } else {
            *dropped.entry(c.family).or_insert(0) += 1;
        }
    }
    (out, dropped)
}

/// Every family, concatenated in catalog order and de-duplicated.
pub fn all_constraints(map: &ColumnIndexMap) -> ConstraintCatalog {
    let parts: Vec<Vec<ConstraintMatrix>> = [
        initial_constraints as fn(&ColumnIndexMap) -> Vec<ConstraintMatrix>,
        discrete_constraints,
        moment_constraints,
        column_structure_constraints,
        combined_constraints,
    ]
    .par_iter()
    .map(|f| f(map))
    .collect();
    let (constraints, duplicates) = dedup(parts.into_iter().flatten().collect());
    ConstraintCatalog {
        constraints,
        duplicates,
    }
}

/// Lifted point `X` of a trajectory and association.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasiblePoint<T: Real> {
    pub x: Matrix2xX<T>,
}

impl<T: Real> FeasiblePoint<T> {
    pub fn gram(&self) -> DMatrix<T> {
        self.x.transpose() * &self.x
    }
}

/// Populates every column of `X` from poses and a hard association; the whole
/// matrix is multiplied by `h_sign`, which leaves the Gram matrix unchanged.
pub fn build_feasible_point<T: Real>(
    traj: &Trajectory<T>,
    theta: &AssociationAssignment,
    h_sign: T,
    map: &ColumnIndexMap,
) -> Result<FeasiblePoint<T>> {
    if traj.len() != map.n_poses() {
        return Err(Error::LengthMismatch(traj.len(), map.n_poses()));
    }
    let mut x = Matrix2xX::zeros(map.n_x());
    for (k, col) in map.cols().iter().enumerate() {
        let v: Vector2<T> = match *col {
            Col::H(m) => xi_column(XiCol::H(m), &traj.poses),
            Col::Pose(i, p) => xi_column(XiCol::Pose(i, p), &traj.poses),
            Col::Theta(var, d) => {
                let t = &map.vars()[var];
                let on = theta.indicator(t.timestep, t.meas_index, t.landmark);
                if on {
                    xi_column(XiCol::H(d), &traj.poses)
                } else {
                    Vector2::zeros()
                }
            }
            Col::Lifted(var, p) => {
                let t = &map.vars()[var];
                if theta.indicator(t.timestep, t.meas_index, t.landmark) {
                    xi_column(XiCol::Pose(t.timestep, p), &traj.poses)
                } else {
                    Vector2::zeros()
                }
            }
        };
        x.set_column(k, &(v * h_sign));
    }
    Ok(FeasiblePoint { x })
}

/// Random trajectory with angles in `(-pi, pi)` and positions in `[-10, 10]^2`.
pub fn random_trajectory<R: Rng>(n_poses: usize, rng: &mut R) -> Trajectory<f64> {
    Trajectory::new(
        (0..n_poses)
            .map(|_| {
                Pose2::new(
                    Rotation2::from_angle(
                        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                    ),
                    Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)),
                )
            })
            .collect(),
    )
}

/// Uniformly random valid association.
pub fn random_assignment<T: Real, R: Rng>(
    inst: &ProblemInstance<T>,
    rng: &mut R,
) -> AssociationAssignment {
    let mut a = AssociationAssignment::new();
    for m in &inst.uda_measurements {
        a.insert(
            m.timestep,
            m.meas_index,
            m.candidates[rng.gen_range(0..m.candidates.len())],
        );
    }
    a
}

/// Random trajectory, association and `H` sign, lifted.
pub fn random_feasible_point<R: Rng>(
    inst: &ProblemInstance<f64>,
    map: &ColumnIndexMap,
    rng: &mut R,
) -> (Trajectory<f64>, AssociationAssignment, FeasiblePoint<f64>) {
    let traj = random_trajectory(inst.n_poses, rng);
    let theta = random_assignment(inst, rng);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let p = build_feasible_point(&traj, &theta, sign, map).expect("trajectory sized from instance");
    (traj, theta, p)
}

#[derive(Clone, Debug, Serialize)]
pub struct NullspaceReport {
    pub samples: usize,
    pub tol: f64,
    /// Largest `|<A, X^T X> - b|` seen per family.
    pub max_violation: BTreeMap<Family, f64>,
    pub pass: bool,
}

impl NullspaceReport {
    pub fn worst(&self) -> f64 {
        self.max_violation.values().copied().fold(0.0, f64::max)
    }
}

/// Evaluates every constraint on `n_samples` random feasible points.
pub fn verify_nullspace(
    constraints: &[ConstraintMatrix],
    inst: &ProblemInstance<f64>,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> NullspaceReport {
    let map = ColumnIndexMap::new(inst);
    let per_sample: Vec<BTreeMap<Family, f64>> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
            let (_, _, p) = random_feasible_point(inst, &map, &mut rng);
            let mut worst = BTreeMap::new();
            for c in constraints {
                let r = c.residual(&p.x).abs();
                let e = worst.entry(c.family).or_insert(0.0f64);
                *e = e.max(r);
            }
            worst
        })
        .collect();
    let mut max_violation = BTreeMap::new();
    for w in per_sample {
        for (f, v) in w {
            let e = max_violation.entry(f).or_insert(0.0f64);
            *e = e.max(v);
        }
    }
    let pass = max_violation.values().all(|&v| v <= tol);
    NullspaceReport {
        samples: n_samples,
        tol,
        max_violation,
        pass,
    }
}

/// Numerical rank of the vectorized constraint matrices.
#[derive(Clone, Debug, Serialize)]
pub struct RankReport {
    pub count: usize,
    pub rank: usize,
}

/// Gram matrix `<A_i, A_j>` of a constraint list.
pub fn constraint_gram(list: &[&SymmetricMatrix<f64>]) -> DMatrix<f64> {
    let m = list.len();
    let mut by_entry: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for (k, a) in list.iter().enumerate() {
        for (i, j, v) in a.entries() {
            let w = if i == j {
                v
            } else {
                v * std::f64::consts::SQRT_2
            };
            by_entry.entry((i, j)).or_default().push((k, w));
        }
    }
    let mut g = DMatrix::zeros(m, m);
    for users in by_entry.values() {
        for &(p, vp) in users {
            for &(q, vq) in users {
                g[(p, q)] += vp * vq;
            }
        }
    }
    g
}

/// Indices of a maximal linearly independent subset chosen greedily by a
/// pivoted Cholesky factorization of the Gram matrix, preferring earlier
/// entries among equally large pivots.
pub fn independent_subset(gram: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let m = gram.nrows();
    let mut d: Vec<f64> = (0..m).map(|i| gram[(i, i)]).collect();
    let scale = d.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut l: Vec<Vec<f64>> = Vec::new();
    let mut chosen = Vec::new();
    let mut used = vec![false; m];
    loop {
        // Largest remaining pivot, earliest index on ties.
        let mut best = None;
        for i in 0..m {
            if !used[i]
                && d[i] > rel_tol * scale
                && best.map_or(true, |b: usize| d[i] > d[b] * (1.0 + 1e-12))
            {
                best = Some(i);
            }
        }
        let Some(p) = best else { break };
        used[p] = true;
        let piv = d[p].sqrt();
        let mut col = vec![0.0; m];
        for i in 0..m {
            if used[i] && i != p {
                continue;
            }
            let mut s = gram[(i, p)];
            for (lk, _) in l.iter().zip(0..) {
                s -= lk[i] * lk[p];
            }
            col[i] = s / piv;
        }
        for i in 0..m {
            if !used[i] {
                d[i] -= col[i] * col[i];
            }
        }
        l.push(col);
        chosen.push(p);
    }
    chosen.sort_unstable();
    chosen
}

pub fn rank_report(constraints: &[ConstraintMatrix]) -> RankReport {
    let mats: Vec<&SymmetricMatrix<f64>> = constraints.iter().map(|c| &c.a).collect();
    let rank = independent_subset(&constraint_gram(&mats), 1e-10).len();
    RankReport {
        count: constraints.len(),
        rank,
    }
}

/// Coordinate-triplet dump with one header line per constraint.
pub fn dump_constraints(constraints: &[ConstraintMatrix], map: &ColumnIndexMap) -> String {
    let mut out = String::new();
    for (k, c) in constraints.iter().enumerate() {
        out.push_str(&format!("# {k} {} rhs={}\n", c.family, c.rhs));
        out.push_str(&c.a.triplets(map));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{LandmarkMap, PriorMeasurement, RelPoseMeasurement, UdaMeasurement};

    fn instance(n_poses: usize, n_landmarks: usize, per_step: usize) -> ProblemInstance<f64> {
        let odometry = (0..n_poses - 1)
            .map(|i| RelPoseMeasurement {
                from: i,
                to: i + 1,
                delta_rot: Rotation2::identity(),
                delta_pos: Vector2::new(1.0, 0.0),
                kappa: 1.0,
                sigma2: 1.0,
            })
            .collect();
        let meas = (0..n_poses)
            .flat_map(|i| {
                (0..per_step).map(move |k| UdaMeasurement {
                    timestep: i,
                    meas_index: k,
                    y: Vector2::new(1.0, 0.5),
                    sigma2: 1.0,
                    candidates: (0..n_landmarks).collect(),
                })
            })
            .collect();
        ProblemInstance::new(
            n_poses,
            LandmarkMap::new(
                (0..n_landmarks)
                    .map(|j| Vector2::new(j as f64, 1.0))
                    .collect(),
            ),
            PriorMeasurement {
                rot: Rotation2::identity(),
                pos: Vector2::zeros(),
                kappa: 1.0,
                sigma2: 1.0,
            },
            odometry,
            meas,
        )
        .unwrap()
    }

    #[test]
    fn initial_count_without_measurements() {
        for n in 1..5 {
            let mut inst = instance(n, 1, 1);
            inst.uda_measurements.clear();
            let map = ColumnIndexMap::new(&inst);
            // Homogenization plus two H-orthonormality rows, five per pose.
            assert_eq!(initial_constraints(&map).len(), 3 + 5 * n);
            assert!(discrete_constraints(&map).is_empty());
            assert!(combined_constraints(&map).is_empty());
            assert!(moment_constraints(&map).is_empty());
            assert!(column_structure_constraints(&map).is_empty());
        }
    }

    #[test]
    fn discrete_counts_single_pose_two_landmarks() {
        let map = ColumnIndexMap::new(&instance(1, 2, 1));
        let d = discrete_constraints(&map);
        let count = |f| d.iter().filter(|c| c.family == f).count();
        assert_eq!(count(Family::DiscreteSum), 1);
        assert_eq!(count(Family::DiscreteBoolean), 2);
        assert_eq!(count(Family::DiscreteProduct), 1);
        assert_eq!(count(Family::DiscretePremulSum), 0);
    }

    #[test]
    fn premultiplied_sum_needs_two_measurements_per_step() {
        let map = ColumnIndexMap::new(&instance(1, 2, 2));
        let d = discrete_constraints(&map);
        // Each ordered pair of groups (2) times candidates of the second (2).
        assert_eq!(
            d.iter()
                .filter(|c| c.family == Family::DiscretePremulSum)
                .count(),
            4
        );
    }

    #[test]
    fn column_structure_count() {
        let inst = instance(2, 1, 1);
        let map = ColumnIndexMap::new(&inst);
        assert_eq!(map.n_theta(), 2);
        let cs = column_structure_constraints(&map);
        // One within-variable row per theta plus two per unordered pair.
        assert_eq!(cs.len(), 2 + 2);
    }

    #[test]
    fn golden_counts() {
        let map = ColumnIndexMap::new(&instance(3, 2, 1));
        let cat = all_constraints(&map);
        let counts = cat.counts();
        let total: usize = counts.values().sum();
        assert_eq!(total, cat.constraints.len());
        assert_eq!(counts[&Family::Homogenization], 3);
        assert_eq!(counts[&Family::Orthonormality], 9);
        assert_eq!(counts[&Family::DcmStructure], 6);
        assert_eq!(counts[&Family::DiscreteSum], 3);
        assert_eq!(counts[&Family::DiscreteBoolean], 6);
        assert_eq!(counts[&Family::DiscreteProduct], 3);
        assert_eq!(counts[&Family::CombinedThetaScaled], 6 * 7);
        assert_eq!(counts[&Family::Moment1], 6 * 6);
        assert_eq!(counts[&Family::Moment2], 6 * 6);
        assert_eq!(counts[&Family::Moment3], 6 * 9);
        assert_eq!(counts[&Family::ColumnStructure], 6 + 2 * 15);
        // Cross products: 15 column pairs per boolean row, 25 ordered pairs
        // per product row; copies of earlier families are dropped.
        let dropped: usize = cat.duplicates.values().sum();
        assert_eq!(
            counts[&Family::CombinedCrossProduct] + dropped,
            6 * 15 + 3 * 25
        );
        assert_eq!(
            cat.duplicates.keys().collect::<Vec<_>>(),
            vec![&Family::CombinedCrossProduct]
        );
        // Deterministic across calls.
        assert_eq!(all_constraints(&map).constraints, cat.constraints);
    }

    #[test]
    fn full_catalog_annihilates_feasible_points() {
        let inst = instance(3, 2, 1);
        let map = ColumnIndexMap::new(&inst);
        let cat = all_constraints(&map);
        let report = verify_nullspace(&cat.constraints, &inst, 100, 1e-9, 11);
        assert!(report.pass, "{report:?}");
        for f in Family::ALL {
            if f != Family::DiscretePremulSum {
                assert!(report.max_violation.contains_key(&f), "{f} missing");
            }
        }
    }

    #[test]
    fn multi_measurement_catalog_annihilates_feasible_points() {
        let inst = instance(2, 3, 2);
        let map = ColumnIndexMap::new(&inst);
        let report = verify_nullspace(&all_constraints(&map).constraints, &inst, 50, 1e-9, 5);
        assert!(report.pass, "{report:?}");
        assert!(report
            .max_violation
            .contains_key(&Family::DiscretePremulSum));
    }

    #[test]
    fn empty_list_passes_vacuously() {
        let inst = instance(2, 2, 1);
        assert!(verify_nullspace(&[], &inst, 3, 1e-9, 0).pass);
    }

    #[test]
    fn corrupted_constraint_is_caught() {
        let inst = instance(3, 2, 1);
        let map = ColumnIndexMap::new(&inst);
        let mut list = initial_constraints(&map);
        let r0 = map.idx(Col::Pose(0, PosePart::R)).unwrap();
        list[4].a.add_entry(r0, r0, 1e-3);
        let report = verify_nullspace(&list, &inst, 20, 1e-9, 1);
        assert!(!report.pass);
        assert!(report.worst() > 1e-6);
    }

    #[test]
    fn scaled_rotation_breaks_unit_norm() {
        let inst = instance(1, 2, 1);
        let map = ColumnIndexMap::new(&inst);
        let mut theta = AssociationAssignment::new();
        theta.insert(0, 0, 0);
        let traj = Trajectory::new(vec![Pose2::identity()]);
        let mut p = build_feasible_point(&traj, &theta, 1.0, &map).unwrap();
        for part in [PosePart::C1, PosePart::C2] {
            let k = map.idx(Col::Pose(0, part)).unwrap();
            let col = p.x.column(k) * 2.0;
            p.x.set_column(k, &col);
        }
        let unit = initial_constraints(&map)
            .into_iter()
            .filter(|c| c.family == Family::Orthonormality && c.a.nnz() == 2)
            .collect::<Vec<_>>();
        for c in unit {
            assert!((c.residual(&p.x) - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_active_thetas_violate_product_by_one() {
        let inst = instance(1, 2, 1);
        let map = ColumnIndexMap::new(&inst);
        let mut theta = AssociationAssignment::new();
        theta.insert(0, 0, 0);
        let traj = Trajectory::new(vec![Pose2::identity()]);
        let mut p = build_feasible_point(&traj, &theta, 1.0, &map).unwrap();
        let t1 = map.idx(Col::Theta(1, 0)).unwrap();
        p.x.set_column(t1, &Vector2::new(1.0, 0.0));
        let prod = discrete_constraints(&map)
            .into_iter()
            .find(|c| c.family == Family::DiscreteProduct)
            .unwrap();
        assert!((prod.residual(&p.x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn corrupted_lift_violates_moment_one() {
        let inst = instance(1, 2, 1);
        let map = ColumnIndexMap::new(&inst);
        let mut theta = AssociationAssignment::new();
        theta.insert(0, 0, 1);
        let traj = Trajectory::new(vec![Pose2::from_xy_angle(1.0, 2.0, 0.3)]);
        let mut p = build_feasible_point(&traj, &theta, 1.0, &map).unwrap();
        let k = map.idx(Col::Lifted(1, PosePart::R)).unwrap();
        p.x.set_column(k, &Vector2::new(5.0, 5.0));
        let m1 = moment_constraints(&map);
        assert!(m1
            .iter()
            .filter(|c| c.family == Family::Moment1)
            .any(|c| c.residual(&p.x).abs() > 1.0));
    }

    #[test]
    fn dense_indicator_block_rejected() {
        let inst = instance(2, 1, 1);
        let map = ColumnIndexMap::new(&inst);
        let mut theta = AssociationAssignment::new();
        theta.insert(0, 0, 0);
        theta.insert(1, 0, 0);
        let traj = Trajectory::new(vec![Pose2::identity(); 2]);
        let mut p = build_feasible_point(&traj, &theta, 1.0, &map).unwrap();
        let k = map.idx(Col::Theta(0, 0)).unwrap();
        p.x.set_column(k, &Vector2::new(1.0, 1.0));
        assert!(column_structure_constraints(&map)
            .iter()
            .any(|c| c.residual(&p.x).abs() > 0.5));
    }

    #[test]
    fn theta_scaled_unit_norm_at_zero_and_one() {
        let inst = instance(1, 2, 1);
        let map = ColumnIndexMap::new(&inst);
        let mut theta = AssociationAssignment::new();
        theta.insert(0, 0, 1);
        let traj = Trajectory::new(vec![Pose2::from_xy_angle(0.0, 0.0, 1.0)]);
        let p = build_feasible_point(&traj, &theta, 1.0, &map).unwrap();
        let scaled = combined_constraints(&map);
        for c in scaled
            .iter()
            .filter(|c| c.family == Family::CombinedThetaScaled)
        {
            assert!(c.residual(&p.x).abs() < 1e-14);
        }
        // Variable 0 is inactive: its lifted and indicator columns vanish.
        for col in [
            Col::Theta(0, 0),
            Col::Theta(0, 1),
            Col::Lifted(0, PosePart::C1),
        ] {
            assert_eq!(p.x.column(map.idx(col).unwrap()).norm(), 0.0);
        }
    }

    #[test]
    fn negative_sign_negates_everything() {
        let inst = instance(2, 2, 1);
        let map = ColumnIndexMap::new(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let traj = random_trajectory(2, &mut rng);
        let theta = random_assignment(&inst, &mut rng);
        let a = build_feasible_point(&traj, &theta, 1.0, &map).unwrap();
        let b = build_feasible_point(&traj, &theta, -1.0, &map).unwrap();
        assert_eq!(a.x, -b.x.clone());
        assert_eq!(a.gram(), b.gram());
    }

    #[test]
    fn feasible_gram_has_rank_two() {
        let inst = instance(3, 2, 1);
        let map = ColumnIndexMap::new(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, _, p) = random_feasible_point(&inst, &map, &mut rng);
        let eig = p.gram().symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(ev[1] > 1.0);
        assert!(ev[2].abs() < 1e-10 * ev[0]);
    }

    #[test]
    fn rank_report_sees_dependence() {
        let inst = instance(3, 2, 1);
        let map = ColumnIndexMap::new(&inst);
        let cat = all_constraints(&map);
        let r = rank_report(&cat.constraints);
        assert_eq!(r.count, cat.constraints.len());
        assert!(r.rank < r.count);
        let init = rank_report(&initial_constraints(&map));
        assert_eq!(init.rank, init.count);
    }
}
