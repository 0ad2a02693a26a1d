//! Tightened semidefinite relaxation: assembly, solve, and certified readout.
//!
//! [`build_sdp`] collects the lifted cost and the constraint catalog.
//! [`solve_sdp`] restricts the problem to the face spanned by lifted points
//! (see [`face`]), drops linearly dependent constraints, hands the result to
//! an [`SdpSolver`], and maps the solution back to the full Gram matrix.
//! [`extract`] reads the trajectory and associations from the solution and
//! reports the eigenvalue-ratio certificate.

pub mod extract;
pub mod face;
pub mod ipm;
pub mod polish;

pub use extract::{
    certificate, extract, extract_from_gram, Certificate, ExtractedSolution, DEFAULT_THRESHOLD,
};
pub use face::FaceBasis;
pub use ipm::InteriorPointSolver;

use crate::constraints::{
    all_constraints, constraint_gram, independent_subset, ConstraintMatrix, Family,
};
use crate::error::{Error, Result};
use crate::lifting::{assemble_cost, ColumnIndexMap, SymmetricMatrix};
use crate::problem::ProblemInstance;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative duality gap `|p - d| / max(1, |p|)` for an optimal status.
    pub gap_tol: f64,
    /// Relative primal and dual residuals for an optimal status.
    pub feas_tol: f64,
    /// Residual tolerance for a near-optimal status when progress stops.
    pub near_tol: f64,
    /// Relative gap for a near-optimal status. A run whose gap relative to
    /// the normalized cost meets `gap_tol` also counts.
    pub near_gap_tol: f64,
    pub max_iters: usize,
    pub time_limit_s: Option<f64>,
    /// Solve on the face containing all lifted points.
    pub facial_reduction: bool,
    /// Relative pivot threshold for dropping dependent constraints.
    pub presolve_tol: f64,
    /// Refit the solution on the near-kernel of the dual slack.
    pub polish: bool,
    /// Per-iteration progress on stderr.
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            feas_tol: 1e-9,
            near_tol: 1e-6,
            near_gap_tol: 1e-4,
            max_iters: 150,
            time_limit_s: None,
            facial_reduction: true,
            presolve_tol: 1e-10,
            polish: true,
            verbose: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    NearOptimal,
    Infeasible,
    Timeout,
    /// Progress stopped before the loose tolerance was met.
    NumericalError,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::NearOptimal => "near-optimal",
            Status::Infeasible => "infeasible",
            Status::Timeout => "timeout",
            Status::NumericalError => "numerical-error",
        }
    }

    pub fn is_usable(&self) -> bool {
        matches!(self, Status::Optimal | Status::NearOptimal)
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `min <Q, Z>  s.t.  <A_i, Z> = b_i, Z psd`.
#[derive(Clone, Debug)]
pub struct SdpProblem {
    pub dim: usize,
    pub cost: SymmetricMatrix<f64>,
    pub constraints: Vec<ConstraintMatrix>,
    pub options: SolverOptions,
    /// Face known to contain every feasible point of interest.
    pub face: Option<FaceBasis>,
}

impl SdpProblem {
    pub fn new(
        cost: SymmetricMatrix<f64>,
        constraints: Vec<ConstraintMatrix>,
        options: SolverOptions,
    ) -> Result<Self> {
        let dim = cost.dim();
        if let Some(bad) = constraints.iter().find(|c| c.a.dim() != dim) {
            return Err(Error::Solver(format!(
                "constraint of dimension {} in a problem of dimension {dim}",
                bad.a.dim()
            )));
        }
        Ok(Self {
            dim,
            cost,
            constraints,
            options,
            face: None,
        })
    }

    pub fn rhs(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.rhs).collect()
    }
}

pub fn build_sdp(inst: &ProblemInstance<f64>) -> Result<(SdpProblem, ColumnIndexMap)> {
    build_sdp_with(inst, SolverOptions::default())
}

pub fn build_sdp_with(
    inst: &ProblemInstance<f64>,
    options: SolverOptions,
) -> Result<(SdpProblem, ColumnIndexMap)> {
    let map = ColumnIndexMap::new(inst);
    let cost = assemble_cost(inst, &map)?;
    let catalog = all_constraints(&map);
    let mut problem = SdpProblem::new(cost, catalog.constraints, options)?;
    if options.facial_reduction {
        problem.face = Some(FaceBasis::from_map(&map));
    }
    Ok((problem, map))
}

/// Standard-form data handed to a backend.
#[derive(Clone, Debug)]
pub struct ConicData {
    pub dim: usize,
    pub c: SymmetricMatrix<f64>,
    pub a: Vec<SymmetricMatrix<f64>>,
    pub b: Vec<f64>,
}

/// Backend output in the backend's own variables.
#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub s: DMatrix<f64>,
    pub status: Status,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub gap: f64,
}

/// Any conic backend that solves standard-form problems over one psd cone.
pub trait SdpSolver: Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, data: &ConicData, opts: &SolverOptions) -> Result<ConicSolution>;
}

#[derive(Clone, Debug, Serialize)]
pub struct PresolveReport {
    pub constraints_in: usize,
    /// Constraints that vanish on the face.
    pub vanished: usize,
    pub dependent: usize,
    pub constraints_used: usize,
    pub reduced_dim: usize,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    /// Full `n_x x n_x` Gram matrix.
    pub z: DMatrix<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub status: Status,
    /// Eigenvalues of `z`, largest first.
    pub eigenvalues: Vec<f64>,
    pub iterations: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub gap: f64,
    pub presolve: PresolveReport,
    /// Rank of the accepted low-rank refit, if one was made.
    pub polished_rank: Option<usize>,
}

/// Reduced, independent standard-form data plus the bookkeeping to map back.
pub fn prepare(problem: &SdpProblem) -> Result<(ConicData, FaceBasis, PresolveReport)> {
    let face = problem
        .face
        .clone()
        .unwrap_or_else(|| FaceBasis::identity(problem.dim));
    if face.full_dim() != problem.dim {
        return Err(Error::Solver(format!(
            "face of dimension {} for a problem of dimension {}",
            face.full_dim(),
            problem.dim
        )));
    }
    let mut reduced = Vec::new();
    let mut vanished = 0;
    for c in &problem.constraints {
        let a = face.reduce(&c.a);
        let norm = a.frobenius_sq().sqrt();
        if norm <= 1e-12 * c.a.frobenius_sq().sqrt() {
            if c.rhs.abs() > 1e-12 {
                return Err(Error::Solver(format!(
                    "{} constraint with rhs {} vanishes on the face",
                    c.family, c.rhs
                )));
            }
            vanished += 1;
        } else {
            reduced.push((a, c.rhs));
        }
    }
    let mats: Vec<&SymmetricMatrix<f64>> = reduced.iter().map(|(a, _)| a).collect();
    let gram = constraint_gram(&mats);
    let keep = independent_subset(&gram, problem.options.presolve_tol);
    check_dropped_rhs(
        &gram,
        &keep,
        &reduced.iter().map(|(_, b)| *b).collect::<Vec<_>>(),
    )?;
    let report = PresolveReport {
        constraints_in: problem.constraints.len(),
        vanished,
        dependent: reduced.len() - keep.len(),
        constraints_used: keep.len(),
        reduced_dim: face.dim(),
    };
    let data = ConicData {
        dim: face.dim(),
        c: face.reduce(&problem.cost),
        a: keep.iter().map(|&k| reduced[k].0.clone()).collect(),
        b: keep.iter().map(|&k| reduced[k].1).collect(),
    };
    Ok((data, face, report))
}

/// A dropped row must carry the rhs implied by the kept rows it depends on.
fn check_dropped_rhs(gram: &DMatrix<f64>, keep: &[usize], rhs: &[f64]) -> Result<()> {
    let dropped: Vec<usize> = (0..rhs.len())
        .filter(|k| keep.binary_search(k).is_err())
        .collect();
    if dropped.is_empty()
        || dropped.iter().all(|&d| rhs[d] == 0.0) && keep.iter().all(|&k| rhs[k] == 0.0)
    {
        return Ok(());
    }
    let gkk = gram.select_rows(keep).select_columns(keep);
    let chol = Cholesky::new(gkk)
        .ok_or_else(|| Error::Solver("kept constraints are not independent".into()))?;
    let bk = DVector::from_iterator(keep.len(), keep.iter().map(|&k| rhs[k]));
    for d in dropped {
        let g = DVector::from_iterator(keep.len(), keep.iter().map(|&k| gram[(k, d)]));
        let implied = chol.solve(&g).dot(&bk);
        if (implied - rhs[d]).abs() > 1e-8 * rhs[d].abs().max(1.0) {
            return Err(Error::Solver(format!(
                "dependent constraint has rhs {} but the others imply {implied}",
                rhs[d]
            )));
        }
    }
    Ok(())
}

pub fn solve_sdp(problem: &SdpProblem) -> Result<SdpSolution> {
    solve_sdp_with(problem, &InteriorPointSolver)
}

pub fn solve_sdp_with(problem: &SdpProblem, solver: &dyn SdpSolver) -> Result<SdpSolution> {
    let (data, face, presolve) = prepare(problem)?;
    let mut raw = solver.solve(&data, &problem.options)?;
    let mut polished_rank = None;
    if problem.options.polish && raw.status.is_usable() {
        if let Some(p) = polish::polish(&data, &raw, &problem.options) {
            raw.x = p.x;
            raw.primal_objective = p.primal_objective;
            raw.primal_infeasibility = p.primal_infeasibility;
            polished_rank = Some(p.rank);
        }
    }
    let z = face.lift(&raw.x);
    let z = (&z + z.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(z.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    Ok(SdpSolution {
        z,
        primal_objective: raw.primal_objective,
        dual_objective: raw.dual_objective,
        status: raw.status,
        eigenvalues,
        iterations: raw.iterations,
        primal_infeasibility: raw.primal_infeasibility,
        dual_infeasibility: raw.dual_infeasibility,
        gap: raw.gap,
        presolve,
        polished_rank,
    })
}

/// Plain-text export of `(Q, A_i, b_i)` in the full dimension:
///
/// ```text
/// dim <n>
/// constraints <m>
/// cost <nnz>
/// <row> <col> <value>        (upper triangle, zero-based)
/// constraint <k> <family> <rhs> <nnz>
/// <row> <col> <value>
/// ```
///
/// Entry `(i, j, v)` with `i != j` stands for `v` at both `(i, j)` and
/// `(j, i)`.
pub fn export_sparse(problem: &SdpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "dim {}", problem.dim);
    let _ = writeln!(out, "constraints {}", problem.constraints.len());
    let block = |out: &mut String, a: &SymmetricMatrix<f64>| {
        for (i, j, v) in a.entries() {
            let _ = writeln!(out, "{i} {j} {v:.17e}");
        }
    };
    let _ = writeln!(out, "cost {}", problem.cost.nnz());
    block(&mut out, &problem.cost);
    for (k, c) in problem.constraints.iter().enumerate() {
        let _ = writeln!(
            out,
            "constraint {k} {} {:.17e} {}",
            c.family,
            c.rhs,
            c.a.nnz()
        );
        block(&mut out, &c.a);
    }
    out
}

pub fn write_sparse(problem: &SdpProblem, path: &Path) -> Result<()> {
    std::fs::write(path, export_sparse(problem))?;
    Ok(())
}

fn malformed(what: &str) -> Error {
    Error::Solver(format!("malformed sparse export: {what}"))
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse::<T>().map_err(|_| malformed(s))
}

fn next_line<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Vec<&'a str>> {
    Ok(lines
        .next()
        .ok_or_else(|| malformed("unexpected end"))?
        .split_whitespace()
        .collect())
}

fn header_value<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<usize> {
    match next_line(lines)?.as_slice() {
        [k, v] if *k == key => parse(v),
        other => Err(malformed(&format!(
            "expected `{key}`, found `{}`",
            other.join(" ")
        ))),
    }
}

fn read_block<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    dim: usize,
    nnz: usize,
) -> Result<SymmetricMatrix<f64>> {
    let mut a = SymmetricMatrix::new(dim);
    for _ in 0..nnz {
        let p = next_line(lines)?;
        let [i, j, v] = p.as_slice() else {
            return Err(malformed(&p.join(" ")));
        };
        let (i, j): (usize, usize) = (parse(i)?, parse(j)?);
        if i >= dim || j >= dim {
            return Err(malformed(&p.join(" ")));
        }
        a.add_entry(i, j, parse(v)?);
    }
    Ok(a)
}

/// Parses [`export_sparse`] output back into a problem without a face.
pub fn import_sparse(text: &str, options: SolverOptions) -> Result<SdpProblem> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let dim = header_value(&mut lines, "dim")?;
    let m = header_value(&mut lines, "constraints")?;
    let cost_nnz = header_value(&mut lines, "cost")?;
    let cost = read_block(&mut lines, dim, cost_nnz)?;
    let mut constraints = Vec::with_capacity(m);
    for _ in 0..m {
        let p = next_line(&mut lines)?;
        let ["constraint", _, family, rhs, nnz] = p.as_slice() else {
            return Err(malformed(&p.join(" ")));
        };
        let family = Family::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == *family)
            .ok_or_else(|| malformed(family))?;
        let rhs = parse(rhs)?;
        let a = read_block(&mut lines, dim, parse(nnz)?)?;
        constraints.push(ConstraintMatrix { a, rhs, family });
    }
    SdpProblem::new(cost, constraints, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::random_feasible_point;
    use crate::geometry::{Pose2, Rotation2, Trajectory};
    use crate::problem::tests::identity_prior;
    use crate::problem::{
        evaluate_cost, LandmarkMap, PriorMeasurement, RelPoseMeasurement, UdaMeasurement,
    };
    use nalgebra::Vector2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_instance() -> ProblemInstance<f64> {
        let truth = [
            Pose2::identity(),
            Pose2::from_xy_angle(1.0, 0.5, 0.4),
            Pose2::from_xy_angle(1.5, 1.8, 1.1),
        ];
        let odometry = (0..2)
            .map(|i| {
                let d = truth[i].between(&truth[i + 1]);
                RelPoseMeasurement {
                    from: i,
                    to: i + 1,
                    delta_rot: d.rot,
                    delta_pos: d.pos,
                    kappa: 100.0,
                    sigma2: 0.01,
                }
            })
            .collect();
        let landmarks = vec![Vector2::new(3.0, 1.0), Vector2::new(-1.0, 4.0)];
        let truth_assoc = [0usize, 1, 0];
        let uda = (0..3)
            .map(|i| UdaMeasurement {
                timestep: i,
                meas_index: 0,
                y: truth[i]
                    .inverse()
                    .transform_point(&landmarks[truth_assoc[i]]),
                sigma2: 0.5,
                candidates: vec![0, 1],
            })
            .collect();
        ProblemInstance::new(
            3,
            LandmarkMap::new(landmarks),
            identity_prior(),
            odometry,
            uda,
        )
        .unwrap()
    }

    #[test]
    fn rhs_is_homogenization_only() {
        let (p, map) = build_sdp(&small_instance()).unwrap();
        assert_eq!(map.n_x(), 41);
        let rhs = p.rhs();
        assert_eq!(rhs[0], 1.0);
        assert!(rhs[1..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn no_measurements_leaves_only_initial_families() {
        let mut inst = small_instance();
        inst.uda_measurements.clear();
        let (p, _) = build_sdp(&inst).unwrap();
        assert!(p.constraints.iter().all(|c| matches!(
            c.family,
            Family::Homogenization | Family::Orthonormality | Family::DcmStructure
        )));
    }

    #[test]
    fn prior_only_recovers_prior_gram() {
        let prior = PriorMeasurement {
            rot: Rotation2::from_angle(0.7),
            pos: Vector2::new(1.0, -2.0),
            kappa: 100.0,
            sigma2: 0.01,
        };
        let inst = ProblemInstance::new(1, LandmarkMap::new(vec![]), prior.clone(), vec![], vec![])
            .unwrap();
        let (p, map) = build_sdp(&inst).unwrap();
        let sol = solve_sdp(&p).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!(
            sol.primal_objective.abs() < 1e-7,
            "{}",
            sol.primal_objective
        );
        let traj = Trajectory::new(vec![prior.pose()]);
        let x = crate::constraints::build_feasible_point(&traj, &Default::default(), 1.0, &map)
            .unwrap();
        assert!((&sol.z - x.gram()).abs().max() < 1e-5);
    }

    #[test]
    fn relaxation_is_a_lower_bound() {
        let inst = small_instance();
        let (p, map) = build_sdp(&inst).unwrap();
        let sol = solve_sdp(&p).unwrap();
        assert!(sol.status.is_usable(), "{:?}", sol.status);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (traj, theta, _) = random_feasible_point(&inst, &map, &mut rng);
            assert!(sol.primal_objective <= evaluate_cost(&inst, &traj, &theta) + 1e-6);
        }
    }

    #[test]
    fn solution_satisfies_constraints() {
        let (p, _) = build_sdp(&small_instance()).unwrap();
        let sol = solve_sdp(&p).unwrap();
        for c in &p.constraints {
            assert!((c.a.inner(&sol.z) - c.rhs).abs() < 1e-6, "{}", c.family);
        }
        assert!(*sol.eigenvalues.last().unwrap() > -1e-7);
    }

    #[test]
    fn sparse_export_round_trips() {
        let (p, _) = build_sdp(&small_instance()).unwrap();
        let text = export_sparse(&p);
        let q = import_sparse(&text, SolverOptions::default()).unwrap();
        assert_eq!(q.dim, p.dim);
        assert_eq!(q.cost, p.cost);
        assert_eq!(q.constraints, p.constraints);
    }
}
