//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures reported by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("eigenvalue {index} has modulus {modulus:e}, below the machine floor")]
    ZeroEigenvalue { index: usize, modulus: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: u64, got: u64 },

    #[error("degenerate Hessian: largest eigenvalue {lambda1:e} is not positive")]
    DegenerateHessian { lambda1: f64 },

    #[error("spectral parameter must be positive, got {0:e}")]
    InvalidEta(f64),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("iterate became singular at iteration {iteration}")]
    SingularIterate { iteration: usize },

    #[error("admissibility conditions violated: {0}")]
    ConditionViolated(String),

    #[error("Jacobian numerically singular (|det| = {det:e})")]
    SingularJacobian { det: f64 },

    #[error("contraction precheck failed: sampled defect {defect:.4} exceeds 1/2")]
    ContractionFailed { defect: f64 },

    #[error("control {target:e} exceeds the admissible radius {radius:e}")]
    RadiusExceeded { target: f64, radius: f64 },

    #[error("mesh half-width {h:e} too coarse for the contraction precheck")]
    MeshTooCoarse { h: f64 },

    #[error("no half-plane mass constant found (counts {left} / {right} of {n})")]
    NoValidConstant { left: u64, right: u64, n: u64 },

    #[error("size precondition failed: {0}")]
    SizePreconditionFailed(String),

    #[error("pairing infeasible: {0}")]
    PairingInfeasible(String),

    #[error("endpoints too far apart: {0}")]
    DeltaTvExceeded(String),

    #[error("eigenvalue {index} has imaginary part {im:e}; a real spectrum is required")]
    NotReal { index: usize, im: f64 },

    #[error("{what} residual {value:e} exceeds tolerance {tol:e}")]
    ResidualExceeded { what: String, value: f64, tol: f64 },

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("quadrature node within {distance:e} of an eigenvalue after retries")]
    QuadratureUnstable { distance: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
