//! Solvers for two-player zero-sum games whose state dynamics are Volterra
//! integral equations.
//!
//! The crate covers four layers:
//!
//! - [`grid`]: time discretization, quadrature, and tabulated matrix kernels;
//! - [`quadform`]: block quadratic forms over discretized L^2, best
//!   responses, saddle points, and joint-definiteness certification;
//! - [`volterra`]: forward/backward linear Volterra solves, resolvent
//!   kernels, and the control-explicit state representation;
//! - the game solvers: [`lqgame`] (linear-quadratic), [`lqcgame`]
//!   (linear-quadratic in the controls, nonlinear in the state), and
//!   [`pursuit`] (free capture time).
//!
//! All operations are pure and deterministic: summation orders are fixed,
//! randomized checks take explicit seeds, and repeated runs produce
//! identical results.

pub mod error;
pub mod grid;
pub mod linalg;
pub mod lqcgame;
pub mod lqgame;
pub mod pursuit;
pub mod quadform;
pub mod volterra;

pub use error::{Error, Result};
pub use grid::{Kernel1, Kernel2, KernelSpec, QuadratureRule, TimeGrid};
pub use quadform::{
    BlockQuadraticForm, CertificationReport, ControlPair, DefinitenessReport, DefinitenessSign,
    SolveOptions,
};
pub use volterra::ResolventTransform;
