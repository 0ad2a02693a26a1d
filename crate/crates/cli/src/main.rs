use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use udaloc::constraints::{all_constraints, dump_constraints, verify_nullspace};
use udaloc::harness::{
    emit_report, run_experiment, DatasetGrid, Experiment, RunConfig, ScoreReference, SimGrid,
};
use udaloc::io::read_instance;
use udaloc::lifting::ColumnIndexMap;
use udaloc::local::{gauss_newton, GnOptions};
use udaloc::pipeline::fixture::{generate_log, LogFixtureParams};
use udaloc::pipeline::log::write_log;
use udaloc::pipeline::{generate_scenario, SimParams};
use udaloc::problem::{dead_reckon, evaluate_cost};
use udaloc::sdp::{build_sdp_with, extract, solve_sdp, write_sparse, DEFAULT_THRESHOLD};

#[derive(Parser)]
#[command(
    name = "udaloc",
    version,
    about = "Globally optimal planar localization with unknown data associations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo run over simulated scenarios.
    Simulate(SimulateArgs),
    /// Run over windows cut from a range-bearing log directory.
    Dataset(DatasetArgs),
    /// Solve a single instance and print the result as JSON.
    SolveOne(SolveOneArgs),
    /// Check every redundant constraint on random feasible points.
    VerifyConstraints(VerifyArgs),
    /// Write a synthetic range-bearing log with known noise.
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Score {
    /// Local solution initialized at the true poses.
    Local,
    Truth,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; grid and shared flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    gap_tol: Option<f64>,
    #[arg(long)]
    feas_tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, value_enum)]
    score_against: Option<Score>,
    /// Thread count for the trial pool.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Full 1920-trial grid.
    #[arg(long)]
    full_grid: bool,
    #[arg(long, value_delimiter = ',')]
    n_poses: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    n_landmarks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    noise_scale: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sigma2_landmark: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    prior_kappa: Option<f64>,
    #[arg(long)]
    prior_sigma2: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    log_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "3,5")]
    n_poses: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    n_landmarks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "20,40,60")]
    dt: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    start_offset: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SolveOneArgs {
    /// Instance JSON; without it a scenario is simulated.
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    n_poses: usize,
    #[arg(long, default_value_t = 2)]
    n_landmarks: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma2_landmark: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Also write the relaxation as sparse text.
    #[arg(long)]
    export_sdp: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 3)]
    n_poses: usize,
    #[arg(long, default_value_t = 2)]
    n_landmarks: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write every constraint as named triplets.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON fixture parameters; flags override it.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    window_dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn load_config(path: &Option<PathBuf>) -> Result<Option<RunConfig>> {
    path.as_ref()
        .map(|p| {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .transpose()
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if let Some(v) = c.threshold {
        cfg.threshold = v;
    }
    if let Some(v) = c.gap_tol {
        cfg.solver.gap_tol = v;
    }
    if let Some(v) = c.feas_tol {
        cfg.solver.feas_tol = v;
    }
    if let Some(v) = c.max_iters {
        cfg.solver.max_iters = v;
    }
    if let Some(s) = c.score_against {
        cfg.score_against = match s {
            Score::Local => ScoreReference::LocalFromTruth,
            Score::Truth => ScoreReference::Truth,
        };
    }
}

fn run(cfg: &RunConfig, common: &Common) -> Result<ExitCode> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let records = run_experiment(cfg)?;
    let checks = emit_report(&records, cfg, &common.out)?;
    eprintln!("{} rows written to {}", records.len(), common.out.display());
    let mut failed = false;
    for c in &checks {
        eprintln!(
            "check {}: {} ({})",
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            c.detail
        );
        failed |= !c.passed;
    }
    Ok(if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let mut cfg = match load_config(&a.common.config)? {
        Some(c) => c,
        None => {
            let grid = if a.full_grid {
                SimGrid::full()
            } else {
                SimGrid {
                    n_poses: vec![3],
                    n_landmarks: vec![2],
                    noise_scale: vec![0.1],
                    sigma2_landmark: vec![0.5],
                    ..SimGrid::full()
                }
            };
            RunConfig::simulation(grid, 10)
        }
    };
    let Experiment::Simulation(grid) = &mut cfg.experiment else {
        bail!("configuration is not a simulation run")
    };
    if let Some(v) = a.n_poses {
        grid.n_poses = v;
    }
    if let Some(v) = a.n_landmarks {
        grid.n_landmarks = v;
    }
    if let Some(v) = a.noise_scale {
        grid.noise_scale = v;
    }
    if let Some(v) = a.sigma2_landmark {
        grid.sigma2_landmark = v;
    }
    if let Some(v) = a.prior_kappa {
        grid.base.prior_kappa = v;
    }
    if let Some(v) = a.prior_sigma2 {
        grid.base.prior_sigma2 = v;
    }
    if let Some(v) = a.trials {
        cfg.trials_per_cell = v;
    }
    if let Some(v) = a.seed {
        cfg.base_seed = v;
    }
    apply_common(&mut cfg, &a.common);
    run(&cfg, &a.common)
}

fn dataset(a: DatasetArgs) -> Result<ExitCode> {
    let grid = DatasetGrid {
        log_dir: a.log_dir,
        n_poses: a.n_poses,
        n_landmarks: a.n_landmarks,
        dt: a.dt,
        start_offset: a.start_offset,
    };
    let mut cfg = load_config(&a.common.config)?
        .unwrap_or_else(|| RunConfig::simulation(SimGrid::full(), 1));
    cfg.experiment = Experiment::Dataset(grid);
    cfg.score_against = ScoreReference::Truth;
    apply_common(&mut cfg, &a.common);
    run(&cfg, &a.common)
}

fn solve_one(a: SolveOneArgs) -> Result<ExitCode> {
    let (inst, truth) = match &a.instance {
        Some(p) => (read_instance(p)?, None),
        None => {
            let s = generate_scenario(&SimParams {
                n_poses: a.n_poses,
                n_landmarks: a.n_landmarks,
                noise_scale: a.noise_scale,
                sigma2_landmark: a.sigma2_landmark,
                seed: a.seed,
                ..Default::default()
            })?;
            (s.instance, Some((s.truth, s.associations)))
        }
    };
    let mut opts = udaloc::sdp::SolverOptions::default();
    opts.verbose = a.verbose;
    let start = std::time::Instant::now();
    let (problem, map) = build_sdp_with(&inst, opts)?;
    if let Some(p) = &a.export_sdp {
        write_sparse(&problem, p)?;
    }
    let sol = solve_sdp(&problem)?;
    let secs = start.elapsed().as_secs_f64();
    let ex = extract(&sol, &map, a.threshold)?;
    let local = gauss_newton(&inst, &dead_reckon(&inst)?, &GnOptions::default())?;
    let assoc = |t: &udaloc::problem::AssociationAssignment| -> Vec<[usize; 3]> {
        t.theta.iter().map(|(&(i, k), &j)| [i, k, j]).collect()
    };
    let poses = |t: &udaloc::geometry::Trajectory<f64>| -> Vec<[f64; 3]> {
        t.poses
            .iter()
            .map(|p| [p.pos.x, p.pos.y, p.rot.angle()])
            .collect()
    };
    let mut out = serde_json::json!({
        "status": sol.status.as_str(),
        "primal_objective": sol.primal_objective,
        "dual_objective": sol.dual_objective,
        "iterations": sol.iterations,
        "seconds": secs,
        "n_x": map.n_x(),
        "constraints_used": sol.presolve.constraints_used,
        "eig_ratio": if ex.certificate.eig_ratio.is_finite() { serde_json::json!(ex.certificate.eig_ratio) } else { serde_json::json!("inf") },
        "tight": ex.certificate.tight,
        "so2_feasible": ex.certificate.so2_feasible,
        "cost": evaluate_cost(&inst, &ex.trajectory, &ex.associations),
        "trajectory": poses(&ex.trajectory),
        "associations": assoc(&ex.associations),
        "maxmix_dr": { "cost": local.cost, "converged": local.converged, "associations": assoc(&local.associations) },
    });
    if let Some((t, a)) = truth {
        out["truth"] = serde_json::json!({ "trajectory": poses(&t), "associations": assoc(&a) });
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let s = generate_scenario(&SimParams {
        n_poses: a.n_poses,
        n_landmarks: a.n_landmarks,
        seed: a.seed,
        ..Default::default()
    })?;
    let map = ColumnIndexMap::new(&s.instance);
    let catalog = all_constraints(&map);
    if let Some(p) = &a.dump {
        std::fs::write(p, dump_constraints(&catalog.constraints, &map))?;
    }
    let report = verify_nullspace(&catalog.constraints, &s.instance, a.samples, a.tol, a.seed);
    let counts = catalog.counts();
    println!(
        "n_x {} constraints {} samples {} tol {:e}",
        map.n_x(),
        catalog.constraints.len(),
        a.samples,
        a.tol
    );
    for (family, worst) in &report.max_violation {
        println!(
            "{:<28} {:>5} {:.3e}",
            family.as_str(),
            counts.get(family).copied().unwrap_or(0),
            worst
        );
    }
    println!("{}", if report.pass { "pass" } else { "FAIL" });
    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn fixture(a: FixtureArgs) -> Result<ExitCode> {
    let mut params: LogFixtureParams = match &a.params {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => LogFixtureParams::default(),
    };
    if let Some(v) = a.windows {
        params.windows = v;
    }
    if let Some(v) = a.window_dt {
        params.window_dt = v;
    }
    if let Some(v) = a.seed {
        params.seed = v;
    }
    let f = generate_log(&params)?;
    write_log(&f.log, &a.out)?;
    eprintln!(
        "wrote {} odometry samples and {} detections to {}",
        f.log.odometry.len(),
        f.log.detections.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Dataset(a) => dataset(a),
        Command::SolveOne(a) => solve_one(a),
        Command::VerifyConstraints(a) => verify(a),
        Command::Fixture(a) => fixture(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
