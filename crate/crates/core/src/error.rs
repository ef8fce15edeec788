use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal mass {off_diagonal:.3e})")]
    NonConvergence { sweeps: usize, off_diagonal: f64 },

    #[error("iterative solver did not converge within {iterations} iterations (gap {gap:.3e} > tol {tol:.3e})")]
    SolverBudget { iterations: usize, gap: f64, tol: f64 },

    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {deviation:.3e}")]
    NotSymmetric { row: usize, col: usize, deviation: f64 },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("function value is not finite at eigenvalue {eigenvalue:.6e}")]
    Domain { eigenvalue: f64 },

    #[error("model too large: {0}")]
    Size(String),

    #[error("coefficient {value} on edge {edge} lies outside [{delta}, {gamma}]")]
    Coefficient { edge: usize, value: f64, delta: f64, gamma: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("fit window [{lo:.3e}, {hi:.3e}] holds {found} samples, at least {needed} required")]
    Window { lo: f64, hi: f64, found: usize, needed: usize },

    #[error("frequency cutoff {cutoff} too small at t = {t:.3e} (tail bound {tail:.3e})")]
    Cutoff { cutoff: usize, t: f64, tail: f64 },

    #[error("series truncation at n = {n_max} too short for t = {t:.3e} (tail term {tail:.3e})")]
    Tail { n_max: usize, t: f64, tail: f64 },

    #[error("zeta probe needs at least 3 refinement levels, got {0}")]
    InsufficientLevels(usize),

    #[error("vertices {x} and {y} lie in different components; the distance is infinite")]
    Unbounded { x: usize, y: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("gate `{gate}` needs estimator `{missing}`, which is not enabled")]
    Dependency { gate: String, missing: String },

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage { stage: stage.to_string(), source: Box::new(self) }
    }

    /// Strips `Stage` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerical kernels, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NonConvergence { .. }
                | Error::SolverBudget { .. }
                | Error::Domain { .. }
                | Error::Window { .. }
                | Error::Cutoff { .. }
                | Error::Tail { .. }
                | Error::Unbounded { .. }
                | Error::InsufficientLevels(_)
        )
    }
}
