//! Config-driven runs: solve, check and simulate stages.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::analysis::{barrier_residual, fixed_point_check, superlevel};
use crate::grid::{zero_contour_2d, ScalarField};
use crate::safety_sim::{safety_audit, simulate_batch, FilterSpec, SimOptions};
use crate::solver::{levelset_solve_frt, value_iterate, Formulation, SolveReport};
use crate::targets::{build_target, BarrierFunction, TargetKind};

use super::config::{BarrierSource, ConfigError, Engine, ExperimentConfig, Init, Stage};
use super::csv::{contours_csv, fields_csv, write_text};
use super::manifest::WALL_TIME_KEY;
use super::{save_hjf, IoError, RunError, RunSummary};

/// Loads a config file and runs it. `out_dir` overrides the configured
/// directory; without either, nothing is written.
pub fn run_experiment_file(path: &Path, out_dir: Option<&Path>) -> Result<RunSummary, RunError> {
    let config = ExperimentConfig::load(path)?;
    run_experiment(&config, out_dir)
}

struct Solved {
    target_name: String,
    target: ScalarField,
    formulation: Formulation,
    report: SolveReport,
}

fn stem(target_name: &str, formulation: Formulation, single: bool) -> String {
    if single { formulation.name().to_string() } else { format!("{target_name}_{}", formulation.name()) }
}

pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunSummary, RunError> {
    let start = Instant::now();
    let dir: Option<PathBuf> = out_dir.map(Path::to_path_buf).or_else(|| config.output.directory.clone());
    if let Some(d) = &dir {
        fs::create_dir_all(d).map_err(|e| IoError::path(d, e))?;
    }
    let mut summary = RunSummary::default();
    let m = &mut summary.manifest;
    m.set("system", config.system.name());
    m.set("grid.counts", join(config.grid.axes().iter().map(|a| a.count)));
    m.set("stages", join(config.stages.iter().map(|s| s.name())));
    m.set("seed", config.seed);
    let single = config.targets.len() == 1;

    let mut solved: Vec<Solved> = Vec::new();
    if config.stages.contains(&Stage::Solve) {
        let solver = config.solver.as_ref().ok_or(ConfigError::MissingSection("solver"))?;
        m.set("solver.engine", if solver.engine == Engine::LevelSet { "levelset" } else { "value_iteration" });
        m.set("solver.gamma", solver.params.gamma);
        for (name, spec) in &config.targets {
            let target = build_target(spec, &config.grid)?;
            for &formulation in &solver.formulations {
                let v0 = match solver.init {
                    Init::Target => target.clone(),
                    Init::Constant(c) => ScalarField::constant(config.grid.clone(), c),
                };
                let report = match solver.engine {
                    Engine::LevelSet => levelset_solve_frt(&config.system, &target, &solver.params)?,
                    Engine::ValueIteration => {
                        value_iterate(&v0, formulation, &config.system, &target, &solver.params)?
                    }
                };
                let key = format!("solve.{}", stem(name, formulation, single));
                m.set(format!("{key}.iterations"), report.iterations);
                m.set(format!("{key}.converged"), report.converged);
                m.set(format!("{key}.final_residual"), report.final_residual());
                m.set(format!("{key}.dt"), report.cfl_dt_used);
                summary.lines.push(format!(
                    "{} {} iterations, {}, final residual {:.3e}",
                    stem(name, formulation, single),
                    report.iterations,
                    if report.converged { "converged" } else { "not converged" },
                    report.final_residual()
                ));
                solved.push(Solved { target_name: name.clone(), target: target.clone(), formulation, report });
            }
        }
        if let Some(d) = &dir {
            write_solutions(d, config, &solved, single)?;
        }
    }

    if config.stages.contains(&Stage::Check) {
        let eps = config.check_eps;
        m.set("check.eps", eps);
        for s in solved.iter().filter(|s| s.formulation == Formulation::FrtDiscount) {
            let set = superlevel(&s.target, 0.0)?;
            let fp = fixed_point_check(&set, &s.report.value, eps)?;
            let key = format!("check.{}", s.target_name);
            m.set(format!("{key}.verdict"), fp.verdict);
            m.set(format!("{key}.jaccard"), fp.metrics.jaccard);
            m.set(format!("{key}.a_minus_b"), fp.metrics.a_minus_b_fraction);
            m.set(format!("{key}.b_minus_a"), fp.metrics.b_minus_a_fraction);
            let gamma = config.solver.as_ref().map_or(1.0, |c| c.params.gamma);
            let band = superlevel(&s.report.value, 3.0 * config.grid.max_spacing())?;
            if band.count() > 0 {
                let res = barrier_residual(&s.report.value, &config.system, gamma, &band, 0.0)?;
                m.set(format!("{key}.barrier_min_residual"), res.min_residual);
            }
            summary.lines.push(format!("{} {}", s.target_name, fp.verdict));
        }
    }

    if config.stages.contains(&Stage::Simulate) {
        let sim = config.simulation.as_ref().ok_or(ConfigError::MissingSection("simulation"))?;
        let (name, spec) = &config.targets[0];
        let TargetKind::Shape(shape) = &spec.kind else {
            return Err(ConfigError::BadValue {
                section: "target",
                key: "shape",
                msg: "simulation audits need a geometric target".into(),
            }
            .into());
        };
        let target = build_target(spec, &config.grid)?;
        let h = match sim.barrier {
            BarrierSource::Target => target.clone(),
            BarrierSource::Value => solved
                .iter()
                .find(|s| &s.target_name == name && s.formulation == Formulation::FrtDiscount)
                .map(|s| s.report.value.clone())
                .ok_or(ConfigError::BadValue {
                    section: "simulation",
                    key: "barrier",
                    msg: "barrier = value needs an frt solve".into(),
                })?,
        };
        let filter = FilterSpec::new(BarrierFunction::Field(h), sim.gamma, config.system.clone())?;
        let bounds = config.grid.axes().iter().map(|a| (a.min, a.max)).collect();
        let opts = SimOptions { t_final: sim.t_final, dt_ctrl: sim.dt_ctrl, dt_integrator: sim.dt_integrator, bounds };
        let reference = sim.reference;
        let rf = move |t: f64, x: &[f64]| reference.control(t, x);
        let trajs = simulate_batch(&filter, sim.policy, sim.disturbance, &rf, &sim.x0, &opts)?;
        let hs = BarrierFunction::Field(target);
        for (i, t) in trajs.iter().enumerate() {
            let audit = safety_audit(t, &hs, shape)?;
            let key = format!("simulate.{i}");
            m.set(format!("{key}.x0"), join(sim.x0[i].iter()));
            m.set(format!("{key}.min_h"), audit.min_h);
            m.set(format!("{key}.exit_time"), audit.exit_time.map_or("none".to_string(), |t| t.to_string()));
            m.set(format!("{key}.feasible_fraction"), audit.feasible_fraction);
            summary.lines.push(format!(
                "trajectory {i}: min h {:.4}, exit {}, feasible {:.3}",
                audit.min_h,
                audit.exit_time.map_or("none".to_string(), |t| format!("t={t:.2}")),
                audit.feasible_fraction
            ));
            if let Some(d) = &dir {
                write_text(&d.join(format!("trajectory_{i}.csv")), &t.to_csv())?;
            }
        }
    }

    summary.manifest.set(WALL_TIME_KEY, format!("{:.3}", start.elapsed().as_secs_f64()));
    if let Some(d) = &dir {
        summary.manifest.write(&d.join("manifest.txt"))?;
    }
    Ok(summary)
}

fn write_solutions(dir: &Path, config: &ExperimentConfig, solved: &[Solved], single: bool) -> Result<(), RunError> {
    if config.output.hjf {
        for s in solved {
            save_hjf(&dir.join(format!("{}.hjf", stem(&s.target_name, s.formulation, single))), &s.report.value)?;
        }
    }
    if !config.output.csv {
        return Ok(());
    }
    if config.grid.ndim() == 1 {
        let mut names = Vec::new();
        let mut fields: Vec<&ScalarField> = Vec::new();
        let mut seen: Vec<&str> = Vec::new();
        for s in solved {
            if !seen.contains(&s.target_name.as_str()) {
                seen.push(&s.target_name);
                names.push(if single { "target".to_string() } else { format!("{}_target", s.target_name) });
                fields.push(&s.target);
            }
            names.push(stem(&s.target_name, s.formulation, single));
            fields.push(&s.report.value);
        }
        let columns: Vec<(&str, &ScalarField)> = names.iter().map(String::as_str).zip(fields).collect();
        write_text(&dir.join("profiles.csv"), &fields_csv(&columns)?)?;
    } else if config.grid.ndim() == 2 {
        let level = config.check_eps;
        for s in solved {
            let stem = stem(&s.target_name, s.formulation, single);
            let contours = zero_contour_2d(&s.report.value, level).unwrap_or_default();
            write_text(&dir.join(format!("contours_{stem}.csv")), &contours_csv(&contours))?;
        }
        let mut seen: Vec<&str> = Vec::new();
        for s in solved {
            if seen.contains(&s.target_name.as_str()) {
                continue;
            }
            seen.push(&s.target_name);
            let contours = zero_contour_2d(&s.target, 0.0).unwrap_or_default();
            write_text(&dir.join(format!("contours_{}_target.csv", s.target_name)), &contours_csv(&contours))?;
        }
    }
    Ok(())
}

pub(crate) fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
