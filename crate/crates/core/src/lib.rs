//! Accelerated multiobjective first-order methods.
//!
//! The crate is organised bottom-up:
//!
//! - [`problems`]: vector objectives and the seeded benchmark families.
//! - [`hullproj`]: the convex-hull projection engine every method reduces to.
//! - [`solvers`]: steepest descent, APG and the AMG-QP family (fixed step,
//!   backtracking, speed/residual restart) plus the run driver.
//! - [`diagnostics`]: gap and Lyapunov instrumentation, Pareto filtering.
//! - [`flow`]: fixed-step integration of the continuous AMG flow.
//! - [`harness`]: multi-start experiments with deterministic CSV/JSON output.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod flow;
pub mod format;
pub mod harness;
pub mod hullproj;
pub mod problems;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
pub use problems::{MultiObjective, ProblemFamily, ProblemSpec};
pub use solvers::{Method, MethodConfig, RunTrace};
