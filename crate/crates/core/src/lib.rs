//! Generalized fractional operators with arbitrary memory kernels and
//! Herglotz-type variational problems built on them.
//!
//! The crate is organized bottom-up:
//!
//! - [`kernels`]: memory kernels `k(s)`, fractional orders and parameter sets.
//! - [`numgrid`]: uniform grids and sampled functions with basic calculus.
//! - [`operators`]: the nonlocal integral `K_P`, the Caputo-type derivative
//!   `B_P = K_P ∘ D`, the Riemann–Liouville-type derivative `A_P`, and an
//!   integration-by-parts check.
//! - [`herglotz`]: the Herglotz functional `z' = L(t, x, B_P[x], z)`, its
//!   integrating factor and the Euler–Lagrange/transversality residuals.
//! - [`solver`]: direct transcription of the variational problem into an
//!   L-BFGS minimization over node values.
//! - [`noether`]: invariance defects and the generalized Noether identity.
//! - [`applications`]: the damped oscillator with memory and its classical
//!   reference solutions.

pub mod applications;
pub mod error;
pub mod herglotz;
pub mod kernels;
mod lbfgs;
pub mod noether;
pub mod numgrid;
pub mod operators;
mod quadrature;
pub mod solver;

pub use error::{Error, Result};
pub use herglotz::{Extremum, HerglotzEvaluation, HerglotzProblem, Lagrangian, Partials};
pub use kernels::{FractionalOrder, KernelSpec, ParameterSet};
pub use numgrid::{Grid, GridFunction};
pub use operators::{OperatorConfig, Order};
pub use solver::{SolveOptions, SolveResult};
