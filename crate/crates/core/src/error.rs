use alloc::string::String;

use crate::riccati::CertificateKind;

/// Errors raised by the library.
///
/// Checker failures are never errors: they are reported as findings. Errors
/// are reserved for malformed inputs and numerical breakdowns.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid index partition: {0}")]
    InvalidPartition(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive semidefinite (asymmetry {asymmetry:e}, min eigenvalue {min_eigenvalue:e})")]
    NotPsd { asymmetry: f64, min_eigenvalue: f64 },

    #[error("symmetric eigensolver did not converge")]
    EigenSolver,

    #[error("u is outside the characteristic domain at coordinate {coordinate} (real part {real_part:e})")]
    OutsideDomain { coordinate: usize, real_part: f64 },

    #[error("Riccati certificate {kind:?} violated at t = {t}: residual {residual:e}")]
    CertificateViolation {
        kind: CertificateKind,
        t: f64,
        residual: f64,
    },

    #[error("adaptive step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("D is not nilpotent: max |D^2| = {residual:e}")]
    NotNilpotent { residual: f64 },

    #[error("state negative beyond tolerance at coordinate {coordinate}: {value:e}")]
    NegativeState { coordinate: usize, value: f64 },

    #[error("non-finite state on path {path} at step {step}")]
    BlowUp { path: u64, step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("ensemble is empty")]
    EmptyEnsemble,
}

pub type Result<T> = core::result::Result<T, Error>;
