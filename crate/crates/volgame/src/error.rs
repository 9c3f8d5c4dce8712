//! Error types shared by all solver modules.

use crate::quadform::CertificationReport;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors that can occur while building grids, materializing kernels, or
/// running any of the solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Interval end does not exceed its start.
    #[error("invalid interval: t1 = {t1} must exceed t0 = {t0}")]
    InvalidInterval { t0: f64, t1: f64 },
    /// Fewer than two grid nodes requested.
    #[error("too few nodes: {n} (at least 2 required)")]
    TooFewNodes { n: usize },
    /// Simpson weights need an odd node count.
    #[error("simpson rule requires an odd node count, got {n}")]
    SimpsonRequiresOddNodes { n: usize },
    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    /// A tabulated kernel does not match the grid it is paired with.
    #[error("grid mismatch: {context}")]
    GridMismatch { context: String },
    /// Per-node data has the wrong length.
    #[error("length mismatch: expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    /// A kernel expected to be symmetric is not.
    #[error("kernel is not symmetric: {context}")]
    NotSymmetric { context: String },
    /// A dense solve hit a numerically singular system.
    #[error("singular system: {context}")]
    SingularSystem { context: String },
    /// A forward or backward Volterra step block was singular.
    #[error("singular step at node {node}: {context}")]
    SingularStep { node: usize, context: String },
    /// Definiteness or invertibility certification failed and no override was given.
    #[error("form not certified: {0}")]
    NotCertified(Box<CertificationReport>),
    /// An iterative scheme stalled or hit its iteration cap.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    /// A nonlinear per-step solve inside a Volterra sweep failed.
    #[error("nonlinear step at node {node} did not converge")]
    NonlinearStepFailed { node: usize },
    /// A time argument does not coincide with a grid node.
    #[error("time {t} is not a grid node")]
    NodeNotOnGrid { t: f64 },
    /// G11(t, y) was singular where its inverse is needed.
    #[error("G11 singular at t = {t}")]
    SingularG11 { t: f64 },
    /// The Schur complement G22 - G21 G11^-1 G12 was singular.
    #[error("reduced control weight singular at t = {t}")]
    SingularG3 { t: f64 },
    /// A control weight matrix (Q or R) was singular.
    #[error("singular control weight: {context}")]
    SingularWeight { context: String },
    /// The transversality scalar vanished, so the multipliers cannot be eliminated.
    #[error("transversality violated: |Y^T M W| = {value:.3e} below tolerance")]
    TransversalityViolated { value: f64 },
    /// The capture bracket does not contain a sign change.
    #[error(
        "capture not bracketed on [{t_lo}, {t_hi}]: residuals {r_lo:.6e} and {r_hi:.6e} share a sign"
    )]
    CaptureNotBracketed {
        t_lo: f64,
        t_hi: f64,
        r_lo: f64,
        r_hi: f64,
    },
    /// The inner fixed point at a candidate capture time failed.
    #[error("inner fixed point at t1 = {t1} did not converge (residual {residual:.3e})")]
    InnerNoConvergence { t1: f64, residual: f64 },
    /// A spectral basis failed the discrete orthonormality check.
    #[error("basis not orthonormal under the grid inner product (residual {residual:.3e})")]
    BasisNotOrthonormal { residual: f64 },
    /// Assembled quadratic-form blocks violated the required symmetry.
    #[error("asymmetry detected in assembled blocks: {context}")]
    AsymmetryDetected { context: String },
    /// The capture matrix M had an eigenvalue below the allowed floor.
    #[error("capture matrix is not nonnegative definite: eigenvalue {eigenvalue:.3e}")]
    CaptureMatrixIndefinite { eigenvalue: f64 },
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
        }
    }
}
