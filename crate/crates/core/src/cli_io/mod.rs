//! Configuration, file formats, canned experiment runners and run records.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::grid::GridError;
use crate::safety_sim::SimError;
use crate::solver::SolveError;
use crate::targets::TargetError;

pub mod config;
pub mod csv;
mod experiment;
pub mod hjf;
pub mod manifest;
pub mod runners;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, run_experiment_file};
pub use hjf::{load_hjf, read_hjf, save_hjf, write_hjf};
pub use manifest::Manifest;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Path { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl IoError {
    pub(crate) fn path(path: &Path, source: std::io::Error) -> Self {
        IoError::Path { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl RunError {
    /// True when a solver diverged or lost contraction.
    pub fn is_divergence(&self) -> bool {
        let solve = match self {
            RunError::Solve(e) | RunError::Analysis(AnalysisError::Solve(e)) => e,
            _ => return false,
        };
        matches!(solve, SolveError::Divergence { .. } | SolveError::ContractionViolated { .. } | SolveError::NonFinite { .. })
    }
}

impl RunError {
    /// True for problems in the configuration or the parameters it sets,
    /// including solver parameters rejected before iterating.
    pub fn is_config_error(&self) -> bool {
        let solve = match self {
            RunError::Config(_) => return true,
            RunError::Solve(e) | RunError::Analysis(AnalysisError::Solve(e)) => e,
            _ => return false,
        };
        matches!(solve, SolveError::InvalidParams(_) | SolveError::FootPoint { .. } | SolveError::Dimension { .. })
    }
}

/// Threshold a measured quantity is held to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Between(f64, f64),
    /// A yes/no outcome; the value is 1 for yes.
    Holds,
}

impl Bound {
    pub fn admits(self, value: f64) -> bool {
        match self {
            Bound::AtMost(b) => value <= b,
            Bound::AtLeast(b) => value >= b,
            Bound::Between(lo, hi) => value >= lo && value <= hi,
            Bound::Holds => value == 1.0,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(b) => write!(f, "<= {b:.4}"),
            Bound::AtLeast(b) => write!(f, ">= {b:.4}"),
            Bound::Between(lo, hi) => write!(f, "in [{lo:.4}, {hi:.4}]"),
            Bound::Holds => write!(f, "holds"),
        }
    }
}

/// One acceptance check with its measured value.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub criterion: &'static str,
    pub what: String,
    pub value: f64,
    pub bound: Bound,
    pub passed: bool,
}

impl Check {
    pub fn new(criterion: &'static str, what: impl Into<String>, value: f64, bound: Bound) -> Self {
        Check { criterion, what: what.into(), value, bound, passed: bound.admits(value) }
    }

    pub fn flag(criterion: &'static str, what: impl Into<String>, holds: bool) -> Self {
        Check::new(criterion, what, if holds { 1.0 } else { 0.0 }, Bound::Holds)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        match self.bound {
            Bound::Holds => write!(f, "{tag} criterion {}: {}", self.criterion, self.what),
            b => write!(f, "{tag} criterion {}: {} = {:.5} ({b})", self.criterion, self.what, self.value),
        }
    }
}

/// Outcome of a run: free-form result lines, acceptance checks and the
/// manifest that was written.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub lines: Vec<String>,
    pub checks: Vec<Check>,
    pub manifest: Manifest,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Result lines followed by one line per check.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        for c in &self.checks {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }
}
