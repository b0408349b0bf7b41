use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use frt_reach::analysis::{barrier_residual, fixed_point_check, superlevel};
use frt_reach::cli_io::config::{ConfigError, Engine, Init};
use frt_reach::cli_io::csv::write_text;
use frt_reach::cli_io::runners::{
    run_1d_comparison, run_double_integrator, run_pendulum, run_property_suite, DiOptions, PendulumOptions,
    RunOptions, PENDULUM_GAMMA, PENDULUM_T, PENDULUM_X0,
};
use frt_reach::cli_io::{load_hjf, run_experiment, save_hjf, ExperimentConfig, Manifest, RunError, RunSummary};
use frt_reach::dynamics::ControlAffineSystem;
use frt_reach::grid::ScalarField;
use frt_reach::safety_sim::{safety_audit, simulate, DisturbanceMode, FilterSpec, PendulumSchedule, Policy, SimOptions};
use frt_reach::solver::{levelset_solve_frt, value_iterate, Formulation};
use frt_reach::targets::{build_target, BarrierFunction, Shape};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 7;

pub struct Context {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Context {
    fn run_options(&self) -> RunOptions {
        RunOptions { out_dir: self.out_dir.clone(), seed: self.seed.unwrap_or(DEFAULT_SEED) }
    }

    /// Output directory for commands that always write; defaults to the
    /// working directory.
    fn dir(&self) -> Result<PathBuf, CliError> {
        let d = self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&d).map_err(|e| CliError::Usage(format!("{}: {e}", d.display())))?;
        Ok(d)
    }
}

pub struct Outcome {
    pub report: String,
    /// False when an acceptance check failed.
    pub passed: bool,
}

impl Outcome {
    fn ok(report: String) -> Self {
        Outcome { report, passed: true }
    }

    fn from_summary(s: &RunSummary) -> Self {
        Outcome { report: s.report(), passed: s.passed() }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unusable inputs named on the command line.
    Usage(String),
    Run(RunError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Run(e) => e.fmt(f),
        }
    }
}

impl<E: Into<RunError>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Run(e.into())
    }
}

fn system(name: &str) -> Result<ControlAffineSystem, CliError> {
    ControlAffineSystem::by_name(name).map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// One of frt, brt, brt-nodiscount, cbvf; defaults to the first
    /// formulation in the config.
    #[arg(long)]
    formulation: Option<String>,
    /// Target name when the config defines several.
    #[arg(long)]
    target: Option<String>,
    /// Output field; defaults to `<formulation>.hjf` in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn solve(ctx: &Context, a: &SolveArgs) -> Result<Outcome, CliError> {
    let config = ExperimentConfig::load(&a.config)?;
    let solver = config.solver.clone().ok_or(ConfigError::MissingSection("solver"))?;
    let formulation = match &a.formulation {
        Some(n) => Formulation::from_name(n).ok_or_else(|| CliError::Usage(format!("unknown formulation `{n}`")))?,
        None => solver.formulations[0],
    };
    let (name, spec) = match &a.target {
        Some(t) => config
            .targets
            .iter()
            .find(|(n, _)| n == t)
            .ok_or_else(|| CliError::Usage(format!("no target named `{t}` in the config")))?,
        None => &config.targets[0],
    };
    let mut params = solver.params.clone();
    if let Some(s) = ctx.seed {
        params.seed = s;
    }
    let target = build_target(spec, &config.grid)?;
    let report = match solver.engine {
        Engine::LevelSet if formulation != Formulation::FrtDiscount => {
            return Err(CliError::Usage(format!("the level-set engine only solves frt, not {}", formulation.name())));
        }
        Engine::LevelSet => levelset_solve_frt(&config.system, &target, &params)?,
        Engine::ValueIteration => {
            let v0 = match solver.init {
                Init::Target => target.clone(),
                Init::Constant(c) => ScalarField::constant(config.grid.clone(), c),
            };
            value_iterate(&v0, formulation, &config.system, &target, &params)?
        }
    };
    let out = match &a.out {
        Some(p) => p.clone(),
        None => ctx.dir()?.join(format!("{}.hjf", formulation.name())),
    };
    save_hjf(&out, &report.value)?;
    let residual_path = out.with_extension("residuals.csv");
    let mut csv = String::from("iteration,residual\n");
    for (i, r) in report.residual_history.iter().enumerate() {
        let _ = writeln!(csv, "{},{r}", i + 1);
    }
    write_text(&residual_path, &csv)?;

    let mut m = Manifest::default();
    m.set("formulation", formulation.name());
    m.set("target", name);
    m.set("iterations", report.iterations);
    m.set("converged", report.converged);
    m.set("final_residual", report.final_residual());
    m.set("dt", report.cfl_dt_used);
    m.set("tolerance", report.tolerance);
    m.set("field", out.display());
    m.set("residuals", residual_path.display());
    Ok(Outcome::ok(m.to_string()))
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Value field.
    #[arg(long)]
    value: PathBuf,
    /// Field whose positive superlevel set is compared with the tube.
    #[arg(long)]
    set: PathBuf,
    /// Built-in system: integrator1d, single_integrator1d, double_integrator
    /// or pendulum.
    #[arg(long)]
    system: String,
    /// Discount rate of the barrier constraint.
    #[arg(long)]
    gamma: f64,
    /// The tube is `{V > eps}`.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// Violation threshold for the barrier residual; defaults to
    /// `0.05 gamma` times the range of the set field.
    #[arg(long)]
    tol: Option<f64>,
}

pub fn check(ctx: &Context, a: &CheckArgs) -> Result<Outcome, CliError> {
    let v = load_hjf(&a.value)?;
    let s = load_hjf(&a.set)?;
    let sys = system(&a.system)?;
    if !(a.gamma > 0.0) {
        return Err(CliError::Usage(format!("gamma must be positive, got {}", a.gamma)));
    }
    let fp = fixed_point_check(&superlevel(&s, 0.0)?, &v, a.eps)?;
    let (lo, hi) = s.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let tol = a.tol.unwrap_or(0.05 * a.gamma * (hi - lo));

    let mut m = Manifest::default();
    m.set("verdict", fp.verdict);
    m.set("jaccard", fp.metrics.jaccard);
    m.set("a_minus_b", fp.metrics.a_minus_b_fraction);
    m.set("b_minus_a", fp.metrics.b_minus_a_fraction);
    m.set("hausdorff", fp.metrics.grid_hausdorff);
    let g = v.grid().clone();
    let band = superlevel(&v, 3.0 * g.max_spacing())?;
    let mut csv = String::new();
    for d in 1..=g.ndim() {
        let _ = write!(csv, "x{d},");
    }
    csv.push_str("residual,suspected_kink\n");
    if band.count() > 0 {
        let res = barrier_residual(&v, &sys, a.gamma, &band, tol)?;
        m.set("residual.tolerance", tol);
        m.set("residual.evaluated", res.evaluated_count());
        m.set("residual.min", res.min_residual);
        m.set("residual.violations", res.violations);
        m.set("residual.suspected_kinks", res.kink_count());
        for k in (0..g.len()).filter(|&k| res.evaluated[k] && res.residual.get(k) < -tol) {
            for x in g.point(k) {
                let _ = write!(csv, "{x},");
            }
            let _ = writeln!(csv, "{},{}", res.residual.get(k), res.suspected_kink[k]);
        }
    } else {
        m.set("residual.evaluated", 0);
    }
    let dir = ctx.dir()?;
    let report = m.to_string();
    write_text(&dir.join("check_report.txt"), &report)?;
    write_text(&dir.join("check_violations.csv"), &csv)?;
    Ok(Outcome::ok(report))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Filtered,
    Reference,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DisturbanceArg {
    WorstCase,
    None,
}

#[derive(Debug, Args)]
pub struct PendulumArgs {
    /// Barrier field for a single simulation; without it the full study runs.
    #[arg(long)]
    value: Option<PathBuf>,
    /// Safe-set field. For a single simulation it is the audit reference;
    /// for the study it replaces the kernel and smoothing stages.
    #[arg(long = "h-s")]
    h_s: Option<PathBuf>,
    /// Discount rate of the barrier constraint.
    #[arg(long, default_value_t = PENDULUM_GAMMA)]
    gamma: f64,
    /// Initial state `x1,x2`.
    #[arg(long, value_delimiter = ',', value_name = "X1,X2", default_values_t = PENDULUM_X0)]
    x0: Vec<f64>,
    /// Horizon in seconds.
    #[arg(long = "T", default_value_t = PENDULUM_T)]
    t_final: f64,
    #[arg(long, value_enum, default_value_t = PolicyArg::Filtered)]
    policy: PolicyArg,
    #[arg(long, value_enum, default_value_t = DisturbanceArg::WorstCase)]
    disturbance: DisturbanceArg,
    /// Skip the level-set and far-initialization cross-checks of the study.
    #[arg(long)]
    no_cross_engine: bool,
}

pub fn pendulum(ctx: &Context, a: &PendulumArgs) -> Result<Outcome, CliError> {
    let h_s = a.h_s.as_deref().map(load_hjf).transpose()?;
    let Some(value) = &a.value else {
        let opts = PendulumOptions { h_s, cross_engine: !a.no_cross_engine, ..PendulumOptions::default() };
        let (_, summary) = run_pendulum(&ctx.run_options(), &opts)?;
        return Ok(Outcome::from_summary(&summary));
    };
    if a.x0.len() != 2 {
        return Err(CliError::Usage(format!("--x0 needs two coordinates, got {}", a.x0.len())));
    }
    let v = load_hjf(value)?;
    let sys = system("pendulum")?;
    let filter = FilterSpec::new(BarrierFunction::Field(v.clone()), a.gamma, sys)?;
    let bounds = v.grid().axes().iter().map(|ax| (ax.min, ax.max)).collect();
    let opts = SimOptions::pendulum(a.t_final, bounds);
    let schedule = PendulumSchedule::default();
    let reference = move |t: f64, x: &[f64]| schedule.control(t, x);
    let policy = match a.policy {
        PolicyArg::Filtered => Policy::Filtered,
        PolicyArg::Reference => Policy::Reference,
    };
    let dist = match a.disturbance {
        DisturbanceArg::WorstCase => DisturbanceMode::WorstCase,
        DisturbanceArg::None => DisturbanceMode::None,
    };
    let traj = simulate(&filter, policy, dist, &reference, &a.x0, &opts)?;
    let audit_field = BarrierFunction::Field(h_s.unwrap_or(v));
    let audit = safety_audit(&traj, &audit_field, &Shape::PendulumX)?;

    let dir = ctx.dir()?;
    let csv_path = dir.join("trajectory.csv");
    write_text(&csv_path, &traj.to_csv())?;
    let mut m = Manifest::default();
    m.set("x0", format!("{},{}", a.x0[0], a.x0[1]));
    m.set("steps", traj.len());
    m.set("min_h", audit.min_h);
    m.set("exit_time", audit.exit_time.map_or("none".to_string(), |t| t.to_string()));
    m.set("feasible_fraction", audit.feasible_fraction);
    m.set("min_constraint_lhs", audit.min_constraint_lhs);
    m.set("aborted", traj.aborted);
    m.set("trajectory", csv_path.display());
    let report = m.to_string();
    write_text(&dir.join("audit.txt"), &report)?;
    Ok(Outcome::ok(report))
}

pub fn compare_1d(ctx: &Context) -> Result<Outcome, CliError> {
    let (_, s) = run_1d_comparison(&ctx.run_options())?;
    Ok(Outcome::from_summary(&s))
}

#[derive(Debug, Args)]
pub struct DiArgs {
    /// Skip the level-set and far-initialization cross-checks.
    #[arg(long)]
    no_cross_engine: bool,
}

pub fn di_frt(ctx: &Context, a: &DiArgs) -> Result<Outcome, CliError> {
    let opts = DiOptions { cross_engine: !a.no_cross_engine, ..DiOptions::default() };
    let (_, s) = run_double_integrator(&ctx.run_options(), &opts)?;
    Ok(Outcome::from_summary(&s))
}

pub fn properties(ctx: &Context) -> Result<Outcome, CliError> {
    let (_, s) = run_property_suite(&ctx.run_options())?;
    Ok(Outcome::from_summary(&s))
}

pub fn run(ctx: &Context, path: &Path) -> Result<Outcome, CliError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = ctx.seed {
        config.seed = s;
        if let Some(solver) = &mut config.solver {
            solver.params.seed = s;
        }
    }
    let s = run_experiment(&config, ctx.out_dir.as_deref())?;
    Ok(Outcome::from_summary(&s))
}
