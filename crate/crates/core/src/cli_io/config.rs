//! Experiment configuration: bracketed sections of `key = value` lines.
//! Comments take whole lines starting with `#` or `;`. Lists are comma
//! separated; point lists separate points with `;`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::dynamics::{BoxSet, Builtin, ControlAffineSystem};
use crate::grid::{Axis, Grid};
use crate::safety_sim::{DisturbanceMode, PendulumSchedule, Policy};
use crate::solver::{Formulation, SolveParams};
use crate::targets::{AnalyticFn, DiSetKind, Shape, TargetSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("key `{0}` appears outside any section")]
    Sectionless(String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("section [{0}] appears twice")]
    DuplicateSection(String),
    #[error("missing section [{0}]")]
    MissingSection(&'static str),
    #[error("unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("key `{key}` appears twice in [{section}]")]
    DuplicateKey { section: String, key: String },
    #[error("missing key `{key}` in [{section}]")]
    MissingKey { section: &'static str, key: &'static str },
    #[error("bad value for `{key}` in [{section}]: {msg}")]
    BadValue { section: &'static str, key: &'static str, msg: String },
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("system", &["name", "u_min", "u_max", "d_min", "d_max"]),
    ("grid", &["min", "max", "count", "periodic"]),
    (
        "target",
        &[
            "shape", "a", "b", "center", "r", "lower", "upper", "sets", "p1", "p2", "offset", "coeffs", "peak",
            "clip_low", "clip_high",
        ],
    ),
    (
        "solver",
        &[
            "formulations", "engine", "gamma", "cfl", "tol_steady", "max_time", "dt_vi", "max_iters", "value_cap",
            "input_samples_per_dim", "init", "init_value",
        ],
    ),
    (
        "simulation",
        &[
            "x0", "t_final", "dt_ctrl", "dt_integrator", "gamma", "policy", "barrier", "disturbance", "reference",
            "k1", "k2", "first_target", "second_target", "switch_time",
        ],
    ),
    ("output", &["directory", "formats"]),
    ("run", &["stages", "check_eps", "seed"]),
];

/// Keys of one section, validated against the known key list.
#[derive(Debug, Clone)]
struct Section {
    name: &'static str,
    entries: Vec<(String, String)>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.trim())
    }

    fn bad(&self, key: &'static str, msg: impl Into<String>) -> ConfigError {
        ConfigError::BadValue { section: self.name, key, msg: msg.into() }
    }

    fn required(&self, key: &'static str) -> Result<&str, ConfigError> {
        self.get(key).ok_or(ConfigError::MissingKey { section: self.name, key })
    }

    fn f64_opt(&self, key: &'static str) -> Result<Option<f64>, ConfigError> {
        self.get(key).map(|v| parse_real(v).map_err(|m| self.bad(key, m))).transpose()
    }

    fn f64_or(&self, key: &'static str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn f64_req(&self, key: &'static str) -> Result<f64, ConfigError> {
        parse_real(self.required(key)?).map_err(|m| self.bad(key, m))
    }

    fn usize_opt(&self, key: &'static str) -> Result<Option<usize>, ConfigError> {
        self.get(key).map(|v| v.parse::<usize>().map_err(|e| self.bad(key, e.to_string()))).transpose()
    }

    fn list_opt(&self, key: &'static str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.get(key).map(|v| parse_list(v).map_err(|m| self.bad(key, m))).transpose()
    }

    fn list_req(&self, key: &'static str) -> Result<Vec<f64>, ConfigError> {
        parse_list(self.required(key)?).map_err(|m| self.bad(key, m))
    }

    fn words(&self, key: &'static str) -> Option<Vec<String>> {
        self.get(key).map(|v| v.split(',').map(|w| w.trim().to_string()).filter(|w| !w.is_empty()).collect())
    }
}

fn parse_real(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{}` is not a number", s.trim()))?;
    if v.is_finite() { Ok(v) } else { Err(format!("`{}` is not finite", s.trim())) }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    let out: Vec<f64> = s.split(',').map(parse_real).collect::<Result<_, _>>()?;
    if out.is_empty() { Err("empty list".into()) } else { Ok(out) }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    LevelSet,
    ValueIteration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Target,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Solve,
    Check,
    Simulate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Solve => "solve",
            Stage::Check => "check",
            Stage::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub formulations: Vec<Formulation>,
    pub engine: Engine,
    pub params: SolveParams,
    pub init: Init,
}

/// Which function the filter enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierSource {
    /// The solved forward-tube value function.
    Value,
    /// The target itself, e.g. a clipped signed distance.
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    Zero,
    Pendulum(PendulumSchedule),
}

impl Reference {
    pub fn control(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Reference::Zero => 0.0,
            Reference::Pendulum(s) => s.control(t, x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub x0: Vec<Vec<f64>>,
    pub t_final: f64,
    pub dt_ctrl: f64,
    pub dt_integrator: f64,
    pub gamma: f64,
    pub policy: Policy,
    pub barrier: BarrierSource,
    pub disturbance: DisturbanceMode,
    pub reference: Reference,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputConfig {
    pub directory: Option<PathBuf>,
    pub hjf: bool,
    pub csv: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub system: ControlAffineSystem,
    pub grid: Arc<Grid>,
    /// Named targets; a single shape is named `target`.
    pub targets: Vec<(String, TargetSpec)>,
    pub solver: Option<SolverConfig>,
    pub simulation: Option<SimulationConfig>,
    pub output: OutputConfig,
    pub stages: Vec<Stage>,
    pub check_eps: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.to_path_buf(), source: e })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let sections = split_sections(text)?;
        let find = |name: &str| sections.iter().find(|s| s.name == name);
        let need = |name: &'static str| find(name).ok_or(ConfigError::MissingSection(name));

        let run = find("run");
        let stages = match run.and_then(|s| s.words("stages")) {
            None => vec![Stage::Solve],
            Some(words) => {
                let mut stages = Vec::new();
                for stage in [Stage::Solve, Stage::Check, Stage::Simulate] {
                    if words.iter().any(|w| w == stage.name()) {
                        stages.push(stage);
                    }
                }
                if let Some(w) = words.iter().find(|w| !["solve", "check", "simulate"].contains(&w.as_str())) {
                    return Err(run.unwrap().bad("stages", format!("unknown stage `{w}`")));
                }
                if stages.is_empty() {
                    return Err(run.unwrap().bad("stages", "no stages listed"));
                }
                stages
            }
        };
        let (check_eps, seed) = match run {
            Some(s) => {
                let eps = s.f64_or("check_eps", 0.0)?;
                if eps < 0.0 {
                    return Err(s.bad("check_eps", "must be nonnegative"));
                }
                (eps, s.usize_opt("seed")?.unwrap_or(0) as u64)
            }
            None => (0.0, 0),
        };

        let system = parse_system(need("system")?)?;
        let grid = parse_grid(need("grid")?)?;
        if grid.ndim() != system.state_dim() {
            return Err(ConfigError::BadValue {
                section: "grid",
                key: "count",
                msg: format!("grid has {} axes but {} has {} states", grid.ndim(), system.name(), system.state_dim()),
            });
        }
        let targets = parse_targets(need("target")?)?;
        let solver = match find("solver") {
            Some(s) => Some(parse_solver(s, seed)?),
            None if stages.contains(&Stage::Solve) => return Err(ConfigError::MissingSection("solver")),
            None => None,
        };
        let simulation = match find("simulation") {
            Some(s) => Some(parse_simulation(s, system.state_dim())?),
            None if stages.contains(&Stage::Simulate) => return Err(ConfigError::MissingSection("simulation")),
            None => None,
        };
        let output = match find("output") {
            Some(s) => parse_output(s)?,
            None => OutputConfig { directory: None, hjf: true, csv: true },
        };
        if stages.contains(&Stage::Check) && !stages.contains(&Stage::Solve) {
            return Err(run.unwrap().bad("stages", "check needs the solve stage"));
        }
        Ok(ExperimentConfig { system, grid, targets, solver, simulation, output, stages, check_eps, seed })
    }
}

fn split_sections(text: &str) -> Result<Vec<Section>, ConfigError> {
    let ini = ini::Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mut out: Vec<Section> = Vec::new();
    for (name, props) in ini.iter() {
        let Some(name) = name else {
            if let Some((k, _)) = props.iter().next() {
                return Err(ConfigError::Sectionless(k.to_string()));
            }
            continue;
        };
        let (canonical, keys) = SECTIONS
            .iter()
            .find(|(s, _)| *s == name)
            .ok_or_else(|| ConfigError::UnknownSection(name.to_string()))?;
        if out.iter().any(|s| s.name == *canonical) {
            return Err(ConfigError::DuplicateSection(name.to_string()));
        }
        let mut entries: Vec<(String, String)> = Vec::new();
        for (k, v) in props.iter() {
            if !keys.contains(&k) {
                return Err(ConfigError::UnknownKey { section: name.to_string(), key: k.to_string() });
            }
            if entries.iter().any(|(e, _)| e == k) {
                return Err(ConfigError::DuplicateKey { section: name.to_string(), key: k.to_string() });
            }
            entries.push((k.to_string(), v.to_string()));
        }
        out.push(Section { name: canonical, entries });
    }
    Ok(out)
}

fn parse_system(s: &Section) -> Result<ControlAffineSystem, ConfigError> {
    let name = s.required("name")?;
    let builtin = Builtin::from_name(name).map_err(|e| s.bad("name", e.to_string()))?;
    let system = builtin.system();
    let (u0, d0) = builtin.default_boxes();
    let pick = |key_lo: &'static str, key_hi: &'static str, default: &BoxSet| -> Result<BoxSet, ConfigError> {
        let lo = s.list_opt(key_lo)?.unwrap_or_else(|| default.lower().to_vec());
        let hi = s.list_opt(key_hi)?.unwrap_or_else(|| default.upper().to_vec());
        BoxSet::new(lo, hi).map_err(|e| s.bad(key_lo, e.to_string()))
    };
    let u = pick("u_min", "u_max", &u0)?;
    let d = pick("d_min", "d_max", &d0)?;
    if u == u0 && d == d0 {
        return Ok(system);
    }
    system.with_boxes(u, d).map_err(|e| s.bad("u_min", e.to_string()))
}

fn parse_grid(s: &Section) -> Result<Arc<Grid>, ConfigError> {
    let min = s.list_req("min")?;
    let max = s.list_req("max")?;
    let count: Vec<usize> = s
        .required("count")?
        .split(',')
        .map(|c| c.trim().parse::<usize>().map_err(|e| s.bad("count", format!("`{}`: {e}", c.trim()))))
        .collect::<Result<_, _>>()?;
    let periodic: Vec<bool> = match s.get("periodic") {
        Some(v) => v.split(',').map(|p| parse_bool(p).map_err(|m| s.bad("periodic", m))).collect::<Result<_, _>>()?,
        None => vec![false; min.len()],
    };
    if max.len() != min.len() || count.len() != min.len() || periodic.len() != min.len() {
        return Err(s.bad("count", "min, max, count and periodic need one entry per axis"));
    }
    let axes = (0..min.len()).map(|d| Axis { min: min[d], max: max[d], count: count[d], periodic: periodic[d] }).collect();
    Grid::shared(axes).map_err(|e| s.bad("count", e.to_string()))
}

fn point2(s: &Section, key: &'static str) -> Result<[f64; 2], ConfigError> {
    let v = s.list_req(key)?;
    if v.len() != 2 {
        return Err(s.bad(key, "expected two coordinates"));
    }
    Ok([v[0], v[1]])
}

fn parse_targets(s: &Section) -> Result<Vec<(String, TargetSpec)>, ConfigError> {
    let clip_low = s.f64_or("clip_low", -1.0)?;
    let clip_high = s.f64_or("clip_high", 1.0)?;
    if !(clip_low < 0.0 && clip_high > 0.0) {
        return Err(s.bad("clip_low", "clip range must contain zero in its interior"));
    }
    let shape = match s.required("shape")? {
        "interval" => Shape::Interval { a: s.f64_req("a")?, b: s.f64_req("b")? },
        "circle" => Shape::Circle { center: point2(s, "center")?, r: s.f64_req("r")? },
        "box" => Shape::AxisBox { lower: s.list_req("lower")?, upper: s.list_req("upper")? },
        "pendulum" => Shape::PendulumX,
        "di_set" => {
            let names = s.words("sets").ok_or(ConfigError::MissingKey { section: "target", key: "sets" })?;
            if names.is_empty() {
                return Err(s.bad("sets", "no sets listed"));
            }
            let (p1, p2, r) = (s.f64_or("p1", 2.0)?, s.f64_or("p2", 3.0)?, s.f64_or("r", 2.5)?);
            let mut out = Vec::new();
            for n in names {
                let kind = DiSetKind::from_name(&n).ok_or_else(|| s.bad("sets", format!("unknown set `{n}`")))?;
                let shape = Shape::DiSet { kind, p1, p2, r };
                shape.validate().map_err(|e| s.bad("sets", e.to_string()))?;
                out.push((kind.name().to_string(), TargetSpec::shape(shape, clip_low, clip_high)));
            }
            return Ok(out);
        }
        "affine" => {
            let f = AnalyticFn::Affine { offset: s.f64_req("offset")?, coeffs: s.list_req("coeffs")? };
            return Ok(vec![("target".into(), TargetSpec::analytic(f, clip_low, clip_high))]);
        }
        "quadratic" => {
            let f = AnalyticFn::Quadratic { peak: s.f64_req("peak")?, center: s.list_req("center")? };
            return Ok(vec![("target".into(), TargetSpec::analytic(f, clip_low, clip_high))]);
        }
        other => return Err(s.bad("shape", format!("unknown shape `{other}`"))),
    };
    shape.validate().map_err(|e| s.bad("shape", e.to_string()))?;
    Ok(vec![("target".into(), TargetSpec::shape(shape, clip_low, clip_high))])
}

fn parse_solver(s: &Section, seed: u64) -> Result<SolverConfig, ConfigError> {
    let formulations = match s.words("formulations") {
        None => vec![Formulation::FrtDiscount],
        Some(words) => words
            .iter()
            .map(|w| Formulation::from_name(w).ok_or_else(|| s.bad("formulations", format!("unknown formulation `{w}`"))))
            .collect::<Result<Vec<_>, _>>()?,
    };
    if formulations.is_empty() {
        return Err(s.bad("formulations", "no formulations listed"));
    }
    let engine = match s.get("engine").unwrap_or("value_iteration") {
        "levelset" => Engine::LevelSet,
        "value_iteration" => Engine::ValueIteration,
        other => return Err(s.bad("engine", format!("unknown engine `{other}`"))),
    };
    if engine == Engine::LevelSet && formulations.iter().any(|&f| f != Formulation::FrtDiscount) {
        return Err(s.bad("engine", "the level-set engine only solves frt"));
    }
    let defaults = SolveParams::default();
    let params = SolveParams {
        gamma: s.f64_or("gamma", defaults.gamma)?,
        cfl: s.f64_or("cfl", defaults.cfl)?,
        tol_steady: s.f64_opt("tol_steady")?,
        max_time: s.f64_or("max_time", defaults.max_time)?,
        dt_vi: s.f64_opt("dt_vi")?,
        max_iters: s.usize_opt("max_iters")?.unwrap_or(defaults.max_iters),
        value_cap: s.f64_opt("value_cap")?,
        input_samples_per_dim: s.usize_opt("input_samples_per_dim")?.unwrap_or(defaults.input_samples_per_dim),
        seed,
        ..defaults
    };
    let init = match s.get("init").unwrap_or("target") {
        "target" => Init::Target,
        "constant" => Init::Constant(s.f64_req("init_value")?),
        other => return Err(s.bad("init", format!("unknown initialization `{other}`"))),
    };
    Ok(SolverConfig { formulations, engine, params, init })
}

fn parse_simulation(s: &Section, n: usize) -> Result<SimulationConfig, ConfigError> {
    let x0: Vec<Vec<f64>> = s
        .required("x0")?
        .split(';')
        .map(|p| parse_list(p).map_err(|m| s.bad("x0", m)))
        .collect::<Result<_, _>>()?;
    if x0.iter().any(|x| x.len() != n) {
        return Err(s.bad("x0", format!("every initial state needs {n} coordinates")));
    }
    let policy = match s.get("policy").unwrap_or("filtered") {
        "filtered" => Policy::Filtered,
        "reference" => Policy::Reference,
        other => return Err(s.bad("policy", format!("unknown policy `{other}`"))),
    };
    let barrier = match s.get("barrier").unwrap_or("value") {
        "value" => BarrierSource::Value,
        "target" => BarrierSource::Target,
        other => return Err(s.bad("barrier", format!("unknown barrier `{other}`"))),
    };
    let disturbance = match s.get("disturbance").unwrap_or("worst_case") {
        "worst_case" => DisturbanceMode::WorstCase,
        "none" => DisturbanceMode::None,
        other => return Err(s.bad("disturbance", format!("unknown disturbance mode `{other}`"))),
    };
    let d = PendulumSchedule::default();
    let reference = match s.get("reference").unwrap_or("pendulum") {
        "zero" => Reference::Zero,
        "pendulum" => Reference::Pendulum(PendulumSchedule {
            first_target: s.f64_or("first_target", d.first_target)?,
            second_target: s.f64_or("second_target", d.second_target)?,
            switch_time: s.f64_or("switch_time", d.switch_time)?,
            k1: s.f64_or("k1", d.k1)?,
            k2: s.f64_or("k2", d.k2)?,
        }),
        other => return Err(s.bad("reference", format!("unknown reference `{other}`"))),
    };
    Ok(SimulationConfig {
        x0,
        t_final: s.f64_req("t_final")?,
        dt_ctrl: s.f64_or("dt_ctrl", 0.01)?,
        dt_integrator: s.f64_or("dt_integrator", 0.0025)?,
        gamma: s.f64_or("gamma", 5.0)?,
        policy,
        barrier,
        disturbance,
        reference,
    })
}

fn parse_output(s: &Section) -> Result<OutputConfig, ConfigError> {
    let formats = s.words("formats").unwrap_or_else(|| vec!["hjf".into(), "csv".into()]);
    if let Some(f) = formats.iter().find(|f| *f != "hjf" && *f != "csv") {
        return Err(s.bad("formats", format!("unknown format `{f}`")));
    }
    Ok(OutputConfig {
        directory: s.get("directory").map(PathBuf::from),
        hjf: formats.iter().any(|f| f == "hjf"),
        csv: formats.iter().any(|f| f == "csv"),
    })
}
