//! Quadratic-form lifting of the localization cost.
//!
//! The lifted variable `X` is a `2 x n_x` matrix whose columns are, in order:
//! the homogenization block `H` (`h1`, `h2`), one `2 x 2` indicator block per
//! association variable (`Theta_v = theta_v * H`), the association-scaled pose
//! columns `theta_v * [c1 c2 r]` of the measurement's own timestep, and the
//! pose columns `[c_i1 c_i2 r_i]` of every timestep. Costs and constraints are
//! linear in the Gram matrix `Z = X^T X`, i.e. in dot products of columns.

use crate::error::{Error, Result};
use crate::geometry::{Pose2, Trajectory};
use crate::problem::{PriorMeasurement, ProblemInstance, RelPoseMeasurement, ThetaVar};
use crate::scalar::Real;
use nalgebra::{DMatrix, Matrix2xX, Vector2};
use std::collections::{BTreeMap, HashMap};

/// Column of a single pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PosePart {
    /// First rotation column `(c, s)`.
    C1,
    /// Second rotation column `(-s, c)`.
    C2,
    R,
}

impl PosePart {
    pub const ALL: [PosePart; 3] = [PosePart::C1, PosePart::C2, PosePart::R];
}

/// Column of the continuous variable `[H C_1 r_1 ... C_N r_N]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum XiCol {
    /// Homogenization column `0` or `1`.
    H(u8),
    Pose(usize, PosePart),
}

impl XiCol {
    /// The five continuous columns seen by a measurement at `timestep`.
    pub fn timestep_cols(timestep: usize) -> [XiCol; 5] {
        [
            XiCol::H(0),
            XiCol::H(1),
            XiCol::Pose(timestep, PosePart::C1),
            XiCol::Pose(timestep, PosePart::C2),
            XiCol::Pose(timestep, PosePart::R),
        ]
    }
}

/// Column of the full lifted variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Col {
    H(u8),
    /// Column `d` of the indicator block of association variable `var`.
    Theta(usize, u8),
    /// `theta_var` times a column of the variable's own pose.
    Lifted(usize, PosePart),
    Pose(usize, PosePart),
}

impl Col {
    pub fn from_xi(c: XiCol) -> Col {
        match c {
            XiCol::H(m) => Col::H(m),
            XiCol::Pose(i, p) => Col::Pose(i, p),
        }
    }
}

/// Registry of the lifted columns under the same-timestep sparsity reduction.
#[derive(Clone, Debug)]
pub struct ColumnIndexMap {
    cols: Vec<Col>,
    index: HashMap<Col, usize>,
    names: Vec<String>,
    by_name: HashMap<String, usize>,
    vars: Vec<ThetaVar>,
    n_poses: usize,
}

fn part_name(p: PosePart) -> &'static str {
    match p {
        PosePart::C1 => "c1",
        PosePart::C2 => "c2",
        PosePart::R => "r",
    }
}

impl ColumnIndexMap {
    pub fn new<T: Real>(inst: &ProblemInstance<T>) -> Self {
        Self::from_parts(inst.n_poses, inst.theta_vars())
    }

    pub fn from_parts(n_poses: usize, vars: Vec<ThetaVar>) -> Self {
        let mut cols = vec![Col::H(0), Col::H(1)];
        for v in 0..vars.len() {
            cols.push(Col::Theta(v, 0));
            cols.push(Col::Theta(v, 1));
        }
        for v in 0..vars.len() {
            cols.extend(PosePart::ALL.iter().map(|&p| Col::Lifted(v, p)));
        }
        for i in 0..n_poses {
            cols.extend(PosePart::ALL.iter().map(|&p| Col::Pose(i, p)));
        }
        let index = cols.iter().enumerate().map(|(k, c)| (*c, k)).collect();
        let names: Vec<String> = cols
            .iter()
            .map(|c| match *c {
                Col::H(m) => format!("h{}", m + 1),
                Col::Theta(v, d) => {
                    let t = &vars[v];
                    format!(
                        "Theta[{},{},{}].{}",
                        t.timestep,
                        t.meas_index,
                        t.landmark,
                        d + 1
                    )
                }
                Col::Lifted(v, p) => {
                    let t = &vars[v];
                    format!(
                        "theta[{},{},{}]*{}[{}]",
                        t.timestep,
                        t.meas_index,
                        t.landmark,
                        part_name(p),
                        t.timestep
                    )
                }
                Col::Pose(i, p) => format!("{}[{}]", part_name(p), i),
            })
            .collect();
        let by_name = names
            .iter()
            .enumerate()
            .map(|(k, n)| (n.clone(), k))
            .collect();
        Self {
            cols,
            index,
            names,
            by_name,
            vars,
            n_poses,
        }
    }

    pub fn n_x(&self) -> usize {
        self.cols.len()
    }

    pub fn n_theta(&self) -> usize {
        self.vars.len()
    }

    pub fn n_poses(&self) -> usize {
        self.n_poses
    }

    pub fn vars(&self) -> &[ThetaVar] {
        &self.vars
    }

    pub fn cols(&self) -> &[Col] {
        &self.cols
    }

    pub fn get(&self, col: Col) -> Option<usize> {
        self.index.get(&col).copied()
    }

    pub fn idx(&self, col: Col) -> Result<usize> {
        self.get(col)
            .ok_or_else(|| Error::UnknownColumn(format!("{col:?}")))
    }

    pub fn by_name(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    /// Column holding `theta_var * xi`: indicator block for `H`, lifted pose
    /// column otherwise. Fails if `xi` belongs to another timestep.
    pub fn scaled(&self, var: usize, xi: XiCol) -> Result<usize> {
        match xi {
            XiCol::H(m) => self.idx(Col::Theta(var, m)),
            XiCol::Pose(i, p) => {
                if self.vars.get(var).map(|t| t.timestep) != Some(i) {
                    return Err(Error::UnknownColumn(format!(
                        "theta {var} does not lift pose {i}"
                    )));
                }
                self.idx(Col::Lifted(var, p))
            }
        }
    }

    /// Column count of the unreduced variable where every association
    /// variable lifts every pose.
    pub fn unreduced_n_x(n_poses: usize, n_theta: usize) -> usize {
        2 + 2 * n_theta + 3 * n_poses * (n_theta + 1)
    }
}

/// Sparse symmetric matrix stored as its upper triangle.
///
/// [`SymmetricMatrix::add_term`] adds `v * Z[a, b]` to the linear form
/// `<A, Z>`; for `a != b` this places `v / 2` in both mirrored positions,
/// which is the `(A + A^T) / 2` symmetrization of a one-sided entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix<T> {
    dim: usize,
    entries: BTreeMap<(usize, usize), T>,
}

impl<T: Real> SymmetricMatrix<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Adds `value` at the mirrored pair `(a, b)`, `(b, a)` of the matrix.
    pub fn add_entry(&mut self, a: usize, b: usize, value: T) {
        assert!(a < self.dim && b < self.dim, "index out of range");
        let key = if a <= b { (a, b) } else { (b, a) };
        let e = self.entries.entry(key).or_insert_with(T::zero);
        *e += value;
        if *e == T::zero() {
            self.entries.remove(&key);
        }
    }

    /// Adds `value * Z[a, b]` to the linear form.
    pub fn add_term(&mut self, a: usize, b: usize, value: T) {
        if a == b {
            self.add_entry(a, a, value);
        } else {
            self.add_entry(a, b, value * T::lit(0.5));
        }
    }

    pub fn get(&self, a: usize, b: usize) -> T {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.entries.get(&key).copied().unwrap_or_else(T::zero)
    }

    /// Upper-triangular entries `(row, col, value)` with `row <= col`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.entries.iter().map(|(&(a, b), &v)| (a, b, v))
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scale(&mut self, s: T) {
        for v in self.entries.values_mut() {
            *v *= s;
        }
    }

    pub fn add_matrix(&mut self, other: &Self) {
        for (a, b, v) in other.entries() {
            self.add_entry(a, b, v);
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (a, b, v) in self.entries() {
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
        m
    }

    /// `<A, Z>` for a dense symmetric `Z`.
    pub fn inner(&self, z: &DMatrix<T>) -> T {
        self.entries().fold(T::zero(), |acc, (a, b, v)| {
            if a == b {
                acc + v * z[(a, a)]
            } else {
                acc + T::lit(2.0) * v * z[(a, b)]
            }
        })
    }

    /// `<A, X^T X>` without forming the Gram matrix.
    pub fn inner_gram(&self, x: &Matrix2xX<T>) -> T {
        self.entries().fold(T::zero(), |acc, (a, b, v)| {
            let d = x.column(a).dot(&x.column(b));
            if a == b {
                acc + v * d
            } else {
                acc + T::lit(2.0) * v * d
            }
        })
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> T {
        self.entries().fold(T::zero(), |acc, (a, b, v)| {
            if a == b {
                acc + v * v
            } else {
                acc + T::lit(2.0) * v * v
            }
        })
    }

    /// Coordinate-triplet text, one `row col value` line per stored entry.
    pub fn triplets(&self, map: &ColumnIndexMap) -> String {
        let mut out = String::new();
        for (a, b, v) in self.entries() {
            out.push_str(&format!(
                "{}\t{}\t{:.17e}\n",
                map.name(a),
                map.name(b),
                v.to_f64_lossy()
            ));
        }
        out
    }
}

/// Quadratic form over a handful of continuous columns.
#[derive(Clone, Debug, PartialEq)]
pub struct CostBlock<T> {
    pub cols: Vec<XiCol>,
    pub mat: SymmetricMatrix<T>,
}

impl<T: Real> CostBlock<T> {
    fn over(cols: Vec<XiCol>) -> Self {
        let n = cols.len();
        Self {
            cols,
            mat: SymmetricMatrix::new(n),
        }
    }

    fn slot(&self, c: XiCol) -> usize {
        self.cols
            .iter()
            .position(|&k| k == c)
            .expect("column belongs to block")
    }

    fn term(&mut self, a: XiCol, b: XiCol, v: T) {
        let (i, j) = (self.slot(a), self.slot(b));
        self.mat.add_term(i, j, v);
    }

    /// Constant `v`, spread evenly over the two homogenization diagonals.
    fn constant(&mut self, v: T) {
        let half = v * T::lit(0.5);
        self.term(XiCol::H(0), XiCol::H(0), half);
        self.term(XiCol::H(1), XiCol::H(1), half);
    }

    /// `<block, Xi^T Xi>` with `H = I` and the given trajectory.
    pub fn evaluate(&self, traj: &Trajectory<T>) -> T {
        let vecs: Vec<Vector2<T>> = self
            .cols
            .iter()
            .map(|&c| xi_column(c, &traj.poses))
            .collect();
        self.mat.entries().fold(T::zero(), |acc, (a, b, v)| {
            let d = vecs[a].dot(&vecs[b]);
            if a == b {
                acc + v * d
            } else {
                acc + T::lit(2.0) * v * d
            }
        })
    }
}

/// Value of a continuous column at a feasible point with `H = I`.
pub fn xi_column<T: Real>(c: XiCol, poses: &[Pose2<T>]) -> Vector2<T> {
    match c {
        XiCol::H(0) => Vector2::new(T::one(), T::zero()),
        XiCol::H(_) => Vector2::new(T::zero(), T::one()),
        XiCol::Pose(i, PosePart::C1) => poses[i].rot.col1(),
        XiCol::Pose(i, PosePart::C2) => poses[i].rot.col2(),
        XiCol::Pose(i, PosePart::R) => poses[i].pos,
    }
}

fn h(m: u8) -> XiCol {
    XiCol::H(m)
}

fn c(i: usize, d: usize) -> XiCol {
    XiCol::Pose(i, if d == 0 { PosePart::C1 } else { PosePart::C2 })
}

fn r(i: usize) -> XiCol {
    XiCol::Pose(i, PosePart::R)
}

fn pose_cols(i: usize) -> Vec<XiCol> {
    vec![h(0), h(1), c(i, 0), c(i, 1), r(i)]
}

/// `kappa |C_1 - C_check|_F^2 + (1/sigma2) |r_1 - r_check|^2` on the first pose.
pub fn lift_prior<T: Real>(prior: &PriorMeasurement<T>) -> CostBlock<T> {
    let mut b = CostBlock::over(pose_cols(0));
    let w = T::one() / prior.sigma2;
    let k = prior.kappa;
    let check = prior.rot.matrix();
    // Rotation: kappa (4 - 2 <C_check, C>), <C_check, C> = sum_ab C_check[a,b] h_a . c_b
    b.constant(T::lit(4.0) * k);
    for a in 0..2u8 {
        for d in 0..2 {
            b.term(h(a), c(0, d), -T::lit(2.0) * k * check[(a as usize, d)]);
        }
    }
    // Translation: w (r.r - 2 x.r + x.x)
    b.term(r(0), r(0), w);
    for a in 0..2u8 {
        b.term(h(a), r(0), -T::lit(2.0) * w * prior.pos[a as usize]);
    }
    b.constant(w * prior.pos.norm_squared());
    b
}

/// Odometry factor `kappa |C_to - C_from dC|_F^2 + (1/sigma2) |r_to - r_from - C_from dr|^2`.
pub fn lift_relative_pose<T: Real>(meas: &RelPoseMeasurement<T>) -> CostBlock<T> {
    let (i, j) = (meas.from, meas.to);
    let mut b = CostBlock::over(vec![
        h(0),
        h(1),
        c(i, 0),
        c(i, 1),
        r(i),
        c(j, 0),
        c(j, 1),
        r(j),
    ]);
    let w = T::one() / meas.sigma2;
    let k = meas.kappa;
    let two = T::lit(2.0);
    // Rotation: kappa (4 - 2 <dC, C_i^T C_j>), (C_i^T C_j)[a,b] = c_ia . c_jb
    b.constant(T::lit(4.0) * k);
    let dc = meas.delta_rot.matrix();
    for a in 0..2 {
        for d in 0..2 {
            b.term(c(i, a), c(j, d), -two * k * dc[(a, d)]);
        }
    }
    // Translation: r_j.r_j + r_i.r_i + dr.dr + 2 r_i.C_i dr - 2 r_j.C_i dr - 2 r_i.r_j
    let dr = meas.delta_pos;
    b.term(r(j), r(j), w);
    b.term(r(i), r(i), w);
    b.term(r(i), r(j), -two * w);
    b.constant(w * dr.norm_squared());
    for a in 0..2 {
        b.term(c(i, a), r(i), two * w * dr[a]);
        b.term(c(i, a), r(j), -two * w * dr[a]);
    }
    b
}

/// `(1/sigma2) |(l - r_i) - C_i y|^2` for a landmark at a known position.
pub fn lift_known_landmark<T: Real>(
    timestep: usize,
    ell: &Vector2<T>,
    y: &Vector2<T>,
    sigma2: T,
) -> CostBlock<T> {
    let i = timestep;
    let mut b = CostBlock::over(pose_cols(i));
    let w = T::one() / sigma2;
    let two = T::lit(2.0);
    // l.l + r.r + y.y - 2 l.r - 2 l.C y + 2 r.C y
    b.constant(w * (ell.norm_squared() + y.norm_squared()));
    b.term(r(i), r(i), w);
    for a in 0..2u8 {
        b.term(h(a), r(i), -two * w * ell[a as usize]);
        for d in 0..2 {
            b.term(h(a), c(i, d), -two * w * ell[a as usize] * y[d]);
        }
    }
    for d in 0..2 {
        b.term(c(i, d), r(i), two * w * y[d]);
    }
    b
}

/// Adds a block at its own continuous columns.
pub fn place_block<T: Real>(
    q: &mut SymmetricMatrix<T>,
    block: &CostBlock<T>,
    map: &ColumnIndexMap,
) -> Result<()> {
    let idx: Vec<usize> = block
        .cols
        .iter()
        .map(|&c| map.idx(Col::from_xi(c)))
        .collect::<Result<_>>()?;
    for (a, b, v) in block.mat.entries() {
        q.add_entry(idx[a], idx[b], v);
    }
    Ok(())
}

/// Adds `theta_var * <block, Xi^T Xi>` as `<block, Xi^T (theta_var Xi)>`: entry
/// `(a, b)` of the block lands at `(xi_a, theta_var * xi_b)`.
pub fn place_scaled_block<T: Real>(
    q: &mut SymmetricMatrix<T>,
    block: &CostBlock<T>,
    var: usize,
    map: &ColumnIndexMap,
) -> Result<()> {
    let plain: Vec<usize> = block
        .cols
        .iter()
        .map(|&c| map.idx(Col::from_xi(c)))
        .collect::<Result<_>>()?;
    let scaled: Vec<usize> = block
        .cols
        .iter()
        .map(|&c| map.scaled(var, c))
        .collect::<Result<_>>()?;
    for (a, b, v) in block.mat.entries() {
        q.add_term(plain[a], scaled[b], v);
        if a != b {
            q.add_term(plain[b], scaled[a], v);
        }
    }
    Ok(())
}

/// Global cost matrix `Q` with `<Q, X^T X>` equal to the problem cost at
/// every feasible lifted point.
pub fn assemble_cost<T: Real>(
    inst: &ProblemInstance<T>,
    map: &ColumnIndexMap,
) -> Result<SymmetricMatrix<T>> {
    let mut q = SymmetricMatrix::new(map.n_x());
    place_block(&mut q, &lift_prior(&inst.prior), map)?;
    for m in &inst.odometry {
        place_block(&mut q, &lift_relative_pose(m), map)?;
    }
    for (v, t) in map.vars().iter().enumerate() {
        let m = &inst.uda_measurements[t.group];
        let block = lift_known_landmark(
            m.timestep,
            &inst.landmarks.positions[t.landmark],
            &m.y,
            m.sigma2,
        );
        place_scaled_block(&mut q, &block, v, map)?;
    }
    Ok(q)
}
