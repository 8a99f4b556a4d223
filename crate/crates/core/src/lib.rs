//! Nonsmooth min-max optimization toolkit.
//!
//! The crate minimizes value functions `f(x) = max_y F(x, y)` where `F` is a
//! piecewise-smooth expression built from polynomials, `abs`, `min` and `max`.
//! Descent directions come from parametric-optimality (PO) atoms: x-blocks `u`
//! of generalized gradients `(u, 0)` of `F` taken at partial maximizers.
//!
//! Layout:
//! - [`expr`]: the objective DSL, evaluation, branch gradients at kinks.
//! - [`hull`]: minimum-norm points of finite convex hulls and Carathéodory reduction.
//! - [`oracles`]: partial maximization oracles and PO-atom extraction.
//! - [`ridge`]: the ridge iteration, trajectories and criticality certificates.
//! - [`fractal`]: the self-similar square set `C`, distance bounds and diagnostics.
//! - [`problems`]: benchmark registry and problem files.
//! - [`exec`]: sequential / rayon execution switch used by the data-parallel loops.

pub mod exec;
pub mod expr;
pub mod fractal;
pub mod hull;
pub mod oracles;
pub mod problems;
pub mod ridge;

pub use exec::Exec;
pub use expr::{ExprProgram, GradElement, TiePolicy};
pub use hull::{AtomSet, MinNormCertificate};
pub use oracles::{ArgmaxResult, OracleSettings, POSample, YBox};
pub use problems::ProblemSpec;
pub use ridge::{AtomRule, CriticalityCertificate, RunConfig, RunReport, StepSchedule, Trajectory};
pub use fractal::{build_fractal, FractalSet};
