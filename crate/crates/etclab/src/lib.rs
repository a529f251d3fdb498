//! Analysis and co-design of event-triggered, delayed sampled-data control
//! loops driven by noisy experiment data.
//!
//! The crate covers the full loop:
//!
//! - [`sysmodel`]: plant, trigger and bound types plus the 10-block selector
//!   basis every matrix-inequality construction is written against.
//! - [`datarep`]: experiment generation, noise sets, quadratic matrix
//!   inequality (QMI) representations of all systems consistent with the
//!   data, and their dualization.
//! - [`lmi`]: affine matrix-inequality assembly for the six stability /
//!   design condition families (model-based analysis, data-driven analysis
//!   with unknown or known input matrix, fixed-multiplier gain search, and
//!   convex co-design with unknown or known input matrix).
//! - [`sdp`]: pluggable semidefinite feasibility backends, independent
//!   eigenvalue re-checking, bisection over the sampling interval and
//!   vertex-box feasibility.
//! - [`synthesis`]: alternating and convex controller/trigger co-design.
//! - [`sim`]: closed-loop simulation under the dynamic event trigger with
//!   sensor-to-controller delay.
//! - [`oracles`]: brute-force validators (quadratic-form embeddings,
//!   functional derivatives, integral bounds) that pin down the block
//!   algebra independently of the assembly code.
//! - [`cli`]: configuration ingestion and the command-line entry points.
//!
//! Most workflows start from [`presets`], which bundles the two benchmark
//! plants (a second-order servo and a linearized inverted pendulum) along
//! with their experiment schedules and trigger parameters.

pub mod cli;
pub mod datarep;
pub mod lmi;
mod mat;
pub mod oracles;
pub mod presets;
pub mod sdp;
pub mod sim;
pub mod synthesis;
pub mod sysmodel;

pub use error::{Error, Result};

mod error {
    use crate::sysmodel::TriggerViolation;

    #[derive(Debug, thiserror::Error)]
    pub enum Error {
        #[error("dimension mismatch: {0}")]
        Dim(String),
        #[error("invalid argument: {0}")]
        Invalid(String),
        #[error("trigger config rejected: {}", fmt_violations(.0))]
        Trigger(Vec<TriggerViolation>),
        #[error("eigenvalue signature: {0}")]
        Signature(String),
        #[error("ill-conditioned matrix (cond {cond:.3e})")]
        IllConditioned { cond: f64 },
        #[error("solver backend: {0}")]
        Solver(String),
        #[error("infeasible: {0}")]
        Infeasible(String),
        #[error("numerical failure: {0}")]
        Numerical(String),
        #[error("io: {0}")]
        Io(#[from] std::io::Error),
        #[error("csv: {0}")]
        Csv(#[from] csv::Error),
        #[error("config: {0}")]
        Config(String),
    }

    fn fmt_violations(v: &[TriggerViolation]) -> String {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub type Result<T> = std::result::Result<T, Error>;
}
