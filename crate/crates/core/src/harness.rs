//! Monte Carlo driver, trajectory metrics and report files.
//!
//! Every trial runs three methods on one instance: the relaxation
//! (`sdp`), Max-Mixture Gauss-Newton from dead reckoning (`maxmix-dr`) and
//! from the true poses (`maxmix-gt`). Results become one row per
//! `(cell, seed, method)`.

use crate::error::{Error, Result};
use crate::geometry::Trajectory;
use crate::local::{gauss_newton, GnOptions};
use crate::pipeline::dataset::{extract_subsequences, SubsequenceSpec};
use crate::pipeline::log::read_log;
use crate::pipeline::sim::{generate_scenario, SimParams};
use crate::problem::{dead_reckon, evaluate_cost, AssociationAssignment, ProblemInstance};
use crate::sdp::{build_sdp_with, extract, solve_sdp, SolverOptions, DEFAULT_THRESHOLD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Slack allowed when comparing a relaxation cost with the ground-truth
/// initialized local solution.
pub const LOWER_BOUND_SLACK: f64 = 1e-6;

pub const RAW_FILE: &str = "records.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const AGGREGATE_FILE: &str = "aggregates.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Mean position-error norm.
pub fn ate(est: &Trajectory<f64>, reference: &Trajectory<f64>) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::LengthMismatch(est.len(), reference.len()));
    }
    if est.is_empty() {
        return Ok(0.0);
    }
    Ok(est
        .positions()
        .zip(reference.positions())
        .map(|(a, b)| (a - b).norm())
        .sum::<f64>()
        / est.len() as f64)
}

/// Root-mean-square position error.
pub fn rmse(est: &Trajectory<f64>, reference: &Trajectory<f64>) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::LengthMismatch(est.len(), reference.len()));
    }
    if est.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = est
        .positions()
        .zip(reference.positions())
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok((ss / est.len() as f64).sqrt())
}

pub fn associations_correct(
    est: &AssociationAssignment,
    reference: &AssociationAssignment,
) -> Result<bool> {
    if !est.theta.keys().eq(reference.theta.keys()) {
        return Err(Error::DomainMismatch);
    }
    Ok(est.theta == reference.theta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sdp,
    MaxmixDr,
    MaxmixGt,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sdp, Method::MaxmixDr, Method::MaxmixGt];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Sdp => "sdp",
            Method::MaxmixDr => "maxmix-dr",
            Method::MaxmixGt => "maxmix-gt",
        }
    }
}

/// Which trajectory the position errors are measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreReference {
    /// The local solution initialized at the true poses.
    #[default]
    LocalFromTruth,
    Truth,
}

/// One parameter combination. Simulation cells set the noise fields,
/// dataset cells the pose spacing.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Cell {
    pub n_poses: usize,
    pub n_landmarks: usize,
    pub noise_scale: Option<f64>,
    pub sigma2_landmark: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    pub n_poses: Vec<usize>,
    pub n_landmarks: Vec<usize>,
    pub noise_scale: Vec<f64>,
    pub sigma2_landmark: Vec<f64>,
    /// Everything but the gridded fields and the seed.
    pub base: SimParams,
}

impl SimGrid {
    /// `(3,5) x (2,3) x 8 noise scales x 6 landmark variances`.
    pub fn full() -> Self {
        Self {
            n_poses: vec![3, 5],
            n_landmarks: vec![2, 3],
            noise_scale: vec![0.1, 1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            sigma2_landmark: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
            base: SimParams::default(),
        }
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &n_poses in &self.n_poses {
            for &n_landmarks in &self.n_landmarks {
                for &m in &self.noise_scale {
                    for &s in &self.sigma2_landmark {
                        out.push(Cell {
                            n_poses,
                            n_landmarks,
                            noise_scale: Some(m),
                            sigma2_landmark: Some(s),
                            dt: None,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetGrid {
    pub log_dir: PathBuf,
    pub n_poses: Vec<usize>,
    pub n_landmarks: Vec<usize>,
    pub dt: Vec<f64>,
    #[serde(default)]
    pub start_offset: f64,
}

impl DatasetGrid {
    /// `(3,5) x (2,3) x (20,40,60) s`.
    pub fn full(log_dir: PathBuf) -> Self {
        Self {
            log_dir,
            n_poses: vec![3, 5],
            n_landmarks: vec![2, 3],
            dt: vec![20.0, 40.0, 60.0],
            start_offset: 0.0,
        }
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &n_poses in &self.n_poses {
            for &n_landmarks in &self.n_landmarks {
                for &dt in &self.dt {
                    out.push(Cell {
                        n_poses,
                        n_landmarks,
                        noise_scale: None,
                        sigma2_landmark: None,
                        dt: Some(dt),
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Experiment {
    Simulation(SimGrid),
    Dataset(DatasetGrid),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// Simulation trials per cell; dataset cells use every window.
    pub trials_per_cell: usize,
    /// Trial `k` of every simulation cell uses seed `base_seed + k`.
    pub base_seed: u64,
    /// Eigenvalue ratio at or above which a relaxation counts as tight.
    pub threshold: f64,
    pub solver: SolverOptions,
    pub gn: GnOptions,
    pub score_against: ScoreReference,
}

impl RunConfig {
    pub fn simulation(grid: SimGrid, trials_per_cell: usize) -> Self {
        Self {
            experiment: Experiment::Simulation(grid),
            trials_per_cell,
            base_seed: 0,
            threshold: DEFAULT_THRESHOLD,
            solver: SolverOptions::default(),
            gn: GnOptions::default(),
            score_against: ScoreReference::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cells = match &self.experiment {
            Experiment::Simulation(g) => {
                if self.trials_per_cell == 0 {
                    return Err(Error::Config("trials per cell must be positive".into()));
                }
                g.cells()
            }
            Experiment::Dataset(g) => g.cells(),
        };
        if cells.is_empty() {
            return Err(Error::Config("parameter grid is empty".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config("tightness threshold must be positive".into()));
        }
        self.gn.validate()
    }
}

/// One method's outcome on one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n_poses: usize,
    pub n_landmarks: usize,
    pub noise_scale: Option<f64>,
    pub sigma2_landmark: Option<f64>,
    pub dt: Option<f64>,
    pub seed: u64,
    pub method: Method,
    /// `ok`, a solver status, or the error that stopped the method.
    pub status: String,
    pub cost: Option<f64>,
    /// Mean position-error norm against the score reference.
    pub ate: Option<f64>,
    pub rmse: Option<f64>,
    pub da_correct: Option<bool>,
    pub tight: Option<bool>,
    pub so2_feasible: Option<bool>,
    pub eig_ratio: Option<f64>,
    pub sdp_primal: Option<f64>,
    pub sdp_dual: Option<f64>,
    /// Wall-clock seconds; written to the timings file only, so the raw
    /// records stay reproducible.
    #[serde(skip)]
    pub time_s: f64,
}

impl TrialRecord {
    fn blank(cell: &Cell, seed: u64, method: Method) -> Self {
        Self {
            n_poses: cell.n_poses,
            n_landmarks: cell.n_landmarks,
            noise_scale: cell.noise_scale,
            sigma2_landmark: cell.sigma2_landmark,
            dt: cell.dt,
            seed,
            method,
            status: String::new(),
            cost: None,
            ate: None,
            rmse: None,
            da_correct: None,
            tight: None,
            so2_feasible: None,
            eig_ratio: None,
            sdp_primal: None,
            sdp_dual: None,
            time_s: 0.0,
        }
    }

    pub fn cell(&self) -> Cell {
        Cell {
            n_poses: self.n_poses,
            n_landmarks: self.n_landmarks,
            noise_scale: self.noise_scale,
            sigma2_landmark: self.sigma2_landmark,
            dt: self.dt,
        }
    }
}

/// An instance with what it is scored against.
#[derive(Clone, Debug)]
pub struct Trial {
    pub cell: Cell,
    pub seed: u64,
    pub instance: ProblemInstance<f64>,
    pub truth: Trajectory<f64>,
    pub associations: AssociationAssignment,
}

struct MethodOutput {
    trajectory: Trajectory<f64>,
    associations: AssociationAssignment,
    cost: f64,
    status: String,
}

/// Runs the three methods on one trial. Failures land in the rows.
pub fn run_trial(trial: &Trial, config: &RunConfig) -> Vec<TrialRecord> {
    let inst = &trial.instance;
    let mut rows: Vec<TrialRecord> = Method::ALL
        .iter()
        .map(|&m| TrialRecord::blank(&trial.cell, trial.seed, m))
        .collect();
    let mut outputs: Vec<Option<MethodOutput>> = Vec::with_capacity(3);

    // Relaxation.
    let start = Instant::now();
    let sdp = (|| {
        let (problem, map) = build_sdp_with(inst, config.solver)?;
        let sol = solve_sdp(&problem)?;
        let row = &mut rows[0];
        row.sdp_primal = Some(sol.primal_objective);
        row.sdp_dual = Some(sol.dual_objective);
        row.status = sol.status.as_str().to_string();
        let ex = extract(&sol, &map, config.threshold)?;
        row.tight = Some(ex.certificate.tight);
        row.so2_feasible = Some(ex.certificate.so2_feasible);
        row.eig_ratio = Some(ex.certificate.eig_ratio);
        let cost = evaluate_cost(inst, &ex.trajectory, &ex.associations);
        Ok::<_, Error>(MethodOutput {
            trajectory: ex.trajectory,
            associations: ex.associations,
            cost,
            status: row.status.clone(),
        })
    })();
    rows[0].time_s = start.elapsed().as_secs_f64();
    outputs.push(match sdp {
        Ok(o) => Some(o),
        Err(e) => {
            rows[0].status = format!("error: {e}");
            None
        }
    });

    for (k, init) in [dead_reckon(inst), Ok(trial.truth.clone())]
        .into_iter()
        .enumerate()
    {
        let start = Instant::now();
        let out = init
            .and_then(|init| gauss_newton(inst, &init, &config.gn))
            .map(|r| MethodOutput {
                status: if r.converged {
                    "ok".into()
                } else {
                    "not-converged".into()
                },
                trajectory: r.trajectory,
                associations: r.associations,
                cost: r.cost,
            });
        rows[k + 1].time_s = start.elapsed().as_secs_f64();
        outputs.push(match out {
            Ok(o) => Some(o),
            Err(e) => {
                rows[k + 1].status = format!("error: {e}");
                None
            }
        });
    }

    let reference = match config.score_against {
        ScoreReference::Truth => Some(&trial.truth),
        ScoreReference::LocalFromTruth => outputs[2].as_ref().map(|o| &o.trajectory),
    };
    for (row, out) in rows.iter_mut().zip(&outputs) {
        let Some(out) = out else { continue };
        row.cost = Some(out.cost);
        if row.method != Method::Sdp {
            row.status = out.status.clone();
        }
        if let Some(reference) = reference {
            row.ate = ate(&out.trajectory, reference).ok();
            row.rmse = rmse(&out.trajectory, reference).ok();
        }
        row.da_correct = associations_correct(&out.associations, &trial.associations).ok();
    }
    rows
}

/// Every trial of the configured experiment, in `(cell, seed)` order.
pub fn build_trials(config: &RunConfig) -> Result<Vec<Trial>> {
    config.validate()?;
    match &config.experiment {
        Experiment::Simulation(grid) => {
            let mut jobs = Vec::new();
            for cell in grid.cells() {
                for k in 0..config.trials_per_cell as u64 {
                    jobs.push((cell, config.base_seed + k));
                }
            }
            jobs.into_par_iter()
                .map(|(cell, seed)| {
                    let params = SimParams {
                        n_poses: cell.n_poses,
                        n_landmarks: cell.n_landmarks,
                        noise_scale: cell.noise_scale.unwrap_or(grid.base.noise_scale),
                        sigma2_landmark: cell.sigma2_landmark.unwrap_or(grid.base.sigma2_landmark),
                        seed,
                        ..grid.base.clone()
                    };
                    let s = generate_scenario(&params)?;
                    Ok(Trial {
                        cell,
                        seed,
                        instance: s.instance,
                        truth: s.truth,
                        associations: s.associations,
                    })
                })
                .collect()
        }
        Experiment::Dataset(grid) => {
            let log = read_log(&grid.log_dir)?;
            let mut out = Vec::new();
            for cell in grid.cells() {
                let spec = SubsequenceSpec {
                    n_poses: cell.n_poses,
                    n_landmarks: cell.n_landmarks,
                    dt: cell.dt.expect("dataset cell"),
                    start_offset: grid.start_offset,
                };
                for (w, sub) in extract_subsequences(&log, &spec)?.into_iter().enumerate() {
                    out.push(Trial {
                        cell,
                        seed: w as u64,
                        instance: sub.instance,
                        truth: sub.truth,
                        associations: sub.associations,
                    });
                }
            }
            Ok(out)
        }
    }
}

/// Runs every trial in a work pool; rows come back sorted by cell, seed
/// and method.
pub fn run_experiment(config: &RunConfig) -> Result<Vec<TrialRecord>> {
    let trials = build_trials(config)?;
    let mut rows: Vec<TrialRecord> = trials
        .par_iter()
        .flat_map_iter(|t| run_trial(t, config))
        .collect();
    rows.sort_by(|a, b| {
        a.cell()
            .partial_cmp(&b.cell())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.seed.cmp(&b.seed))
            .then(a.method.cmp(&b.method))
    });
    Ok(rows)
}

/// Median of the finite values, `None` if there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn fraction(flags: impl IntoIterator<Item = bool>) -> Option<f64> {
    let (hits, total) = flags
        .into_iter()
        .fold((0usize, 0usize), |(h, t), f| (h + f as usize, t + 1));
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Per-cell statistics, all recomputable from the raw rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub n_poses: usize,
    pub n_landmarks: usize,
    pub noise_scale: Option<f64>,
    pub sigma2_landmark: Option<f64>,
    pub dt: Option<f64>,
    pub trials: usize,
    /// Fraction of trials whose relaxation is tight. Failed solves count as
    /// not tight.
    pub tight_fraction: f64,
    /// Fraction with at least one wrong association, among tight trials.
    pub sdp_da_error_tight: Option<f64>,
    /// Same over all trials; a failed solve counts as an error.
    pub sdp_da_error_all: f64,
    pub maxmix_dr_da_error: f64,
    pub maxmix_gt_da_error: f64,
    pub sdp_median_ate: Option<f64>,
    pub maxmix_dr_median_ate: Option<f64>,
    pub maxmix_gt_median_ate: Option<f64>,
    pub sdp_median_rmse: Option<f64>,
    pub maxmix_dr_median_rmse: Option<f64>,
    pub maxmix_gt_median_rmse: Option<f64>,
    pub sdp_median_time_s: Option<f64>,
    pub maxmix_dr_median_time_s: Option<f64>,
    pub maxmix_gt_median_time_s: Option<f64>,
}

pub fn aggregate(records: &[TrialRecord]) -> Vec<CellAggregate> {
    let mut cells: Vec<Cell> = Vec::new();
    for r in records {
        if !cells.contains(&r.cell()) {
            cells.push(r.cell());
        }
    }
    cells
        .into_iter()
        .map(|cell| {
            let of = |m: Method| {
                records
                    .iter()
                    .filter(move |r| r.cell() == cell && r.method == m)
            };
            let sdp: Vec<&TrialRecord> = of(Method::Sdp).collect();
            let da_error =
                |m: Method| fraction(of(m).map(|r| r.da_correct != Some(true))).unwrap_or(f64::NAN);
            CellAggregate {
                n_poses: cell.n_poses,
                n_landmarks: cell.n_landmarks,
                noise_scale: cell.noise_scale,
                sigma2_landmark: cell.sigma2_landmark,
                dt: cell.dt,
                trials: sdp.len(),
                tight_fraction: fraction(sdp.iter().map(|r| r.tight == Some(true)))
                    .unwrap_or(f64::NAN),
                sdp_da_error_tight: fraction(
                    sdp.iter()
                        .filter(|r| r.tight == Some(true))
                        .map(|r| r.da_correct != Some(true)),
                ),
                sdp_da_error_all: da_error(Method::Sdp),
                maxmix_dr_da_error: da_error(Method::MaxmixDr),
                maxmix_gt_da_error: da_error(Method::MaxmixGt),
                sdp_median_ate: median(of(Method::Sdp).filter_map(|r| r.ate)),
                maxmix_dr_median_ate: median(of(Method::MaxmixDr).filter_map(|r| r.ate)),
                maxmix_gt_median_ate: median(of(Method::MaxmixGt).filter_map(|r| r.ate)),
                sdp_median_rmse: median(of(Method::Sdp).filter_map(|r| r.rmse)),
                maxmix_dr_median_rmse: median(of(Method::MaxmixDr).filter_map(|r| r.rmse)),
                maxmix_gt_median_rmse: median(of(Method::MaxmixGt).filter_map(|r| r.rmse)),
                sdp_median_time_s: median(of(Method::Sdp).map(|r| r.time_s)),
                maxmix_dr_median_time_s: median(of(Method::MaxmixDr).map(|r| r.time_s)),
                maxmix_gt_median_time_s: median(of(Method::MaxmixGt).map(|r| r.time_s)),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Acceptance checks that apply to any run: a tight relaxation's cost and
/// any relaxation's dual bound may not exceed the ground-truth initialized
/// local cost.
pub fn run_checks(records: &[TrialRecord]) -> Vec<CheckResult> {
    let mut tight_bad = Vec::new();
    let mut bound_bad = Vec::new();
    for sdp in records.iter().filter(|r| r.method == Method::Sdp) {
        let Some(gt) = records
            .iter()
            .find(|r| r.method == Method::MaxmixGt && r.seed == sdp.seed && r.cell() == sdp.cell())
            .and_then(|r| r.cost)
        else {
            continue;
        };
        if sdp.tight == Some(true) {
            if let Some(c) = sdp.cost.filter(|c| *c > gt + LOWER_BOUND_SLACK) {
                tight_bad.push(format!("{:?} seed {}: {c} > {gt}", sdp.cell(), sdp.seed));
            }
        }
        if let Some(d) = sdp.sdp_dual.filter(|d| *d > gt + LOWER_BOUND_SLACK) {
            bound_bad.push(format!("{:?} seed {}: {d} > {gt}", sdp.cell(), sdp.seed));
        }
    }
    let check = |name: &str, bad: Vec<String>| CheckResult {
        name: name.to_string(),
        passed: bad.is_empty(),
        detail: if bad.is_empty() {
            "ok".into()
        } else {
            bad.join("; ")
        },
    };
    vec![
        check("tight-cost-below-local-from-truth", tight_bad),
        check("dual-bound-below-local-from-truth", bound_bad),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub rows: usize,
    pub checks: Vec<CheckResult>,
}

#[derive(Clone, Copy, Debug, Serialize)]
struct TimingRow {
    n_poses: usize,
    n_landmarks: usize,
    noise_scale: Option<f64>,
    sigma2_landmark: Option<f64>,
    dt: Option<f64>,
    seed: u64,
    method: Method,
    time_s: f64,
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the raw rows, timings, the per-cell aggregate table, one
/// `stat_<name>.csv` per aggregate column and the manifest. Returns the
/// checks.
pub fn emit_report(
    records: &[TrialRecord],
    config: &RunConfig,
    out_dir: &Path,
) -> Result<Vec<CheckResult>> {
    if records.is_empty() {
        return Err(Error::Config("no records to report".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    write_csv(&out_dir.join(RAW_FILE), records)?;
    write_csv(
        &out_dir.join(TIMINGS_FILE),
        records.iter().map(|r| TimingRow {
            n_poses: r.n_poses,
            n_landmarks: r.n_landmarks,
            noise_scale: r.noise_scale,
            sigma2_landmark: r.sigma2_landmark,
            dt: r.dt,
            seed: r.seed,
            method: r.method,
            time_s: r.time_s,
        }),
    )?;
    let aggregates = aggregate(records);
    write_csv(&out_dir.join(AGGREGATE_FILE), &aggregates)?;

    // One file per statistic, same cell columns.
    let table: Vec<serde_json::Map<String, serde_json::Value>> = aggregates
        .iter()
        .map(|a| match serde_json::to_value(a) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => unreachable!("aggregates serialize to objects"),
        })
        .collect();
    let keys = [
        "n_poses",
        "n_landmarks",
        "noise_scale",
        "sigma2_landmark",
        "dt",
    ];
    for stat in table[0].keys().filter(|k| !keys.contains(&k.as_str())) {
        let mut w = csv::Writer::from_path(out_dir.join(format!("stat_{stat}.csv")))?;
        w.write_record(keys.iter().copied().chain([stat.as_str()]))?;
        for row in &table {
            let cells: Vec<String> = keys
                .iter()
                .copied()
                .chain([stat.as_str()])
                .map(|k| match &row[k] {
                    serde_json::Value::Null => String::new(),
                    v => v.to_string(),
                })
                .collect();
            w.write_record(&cells)?;
        }
        w.flush()?;
    }

    let checks = run_checks(records);
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seeds,
        rows: records.len(),
        checks: checks.clone(),
    };
    std::fs::write(
        out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2;
    use nalgebra::Vector2;

    fn line(points: &[(f64, f64)]) -> Trajectory<f64> {
        Trajectory::new(
            points
                .iter()
                .map(|&(x, y)| Pose2::from_xy_angle(x, y, 0.0))
                .collect(),
        )
    }

    #[test]
    fn ate_examples() {
        let a = line(&[(0.0, 0.0), (1.0, 0.0), (2.0, 1.0)]);
        assert_eq!(ate(&a, &a).unwrap(), 0.0);
        let shifted = Trajectory::new(
            a.poses
                .iter()
                .map(|p| Pose2::new(p.rot, p.pos + Vector2::new(0.6, 0.8)))
                .collect(),
        );
        assert!((ate(&shifted, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = line(&[(3.0, 0.0), (0.0, 4.0)]);
        let z = line(&[(0.0, 0.0), (0.0, 0.0)]);
        assert!((ate(&b, &z).unwrap() - 3.5).abs() < 1e-12);
        assert!((rmse(&b, &z).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(ate(&a, &z), Err(Error::LengthMismatch(3, 2))));
    }

    #[test]
    fn association_comparison() {
        let mut a = AssociationAssignment::new();
        a.insert(0, 0, 1);
        a.insert(1, 0, 0);
        assert!(associations_correct(&a, &a).unwrap());
        let mut b = a.clone();
        b.insert(1, 0, 1);
        assert!(!associations_correct(&b, &a).unwrap());
        let mut c = a.clone();
        c.insert(2, 0, 0);
        assert!(matches!(
            associations_correct(&c, &a),
            Err(Error::DomainMismatch)
        ));
    }

    #[test]
    fn full_grid_has_1920_trials() {
        let grid = SimGrid::full();
        assert_eq!(grid.cells().len() * 10, 1920);
        assert_eq!(DatasetGrid::full(PathBuf::new()).cells().len(), 12);
    }

    #[test]
    fn median_handles_even_and_empty() {
        assert_eq!(median([3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median([4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median([f64::NAN]), None);
    }
}
