//! Battery capacity estimation by OCV–SOC curve alignment.
//!
//! An aged lithium-ion cell keeps the same open-circuit-voltage curve as
//! the fresh cell once its state of charge is computed with the *actual*
//! (calibrated) capacity. Given OCV samples and discharge capacity from the
//! aged cell, the calibrated capacity and initial SOC are the pair that
//! makes those samples land on the nominal curve again.
//!
//! Modules:
//!
//! - [`curve`]: the monotone OCV–SOC reference relationship.
//! - [`coulomb`]: discharge-capacity integration and SOC bookkeeping.
//! - [`estimator`]: the two-parameter alignment fit, its SOC transform and a
//!   brute-force grid oracle.
//! - [`synth`]: synthetic aged-cell traces with known ground truth.
//! - [`metrics`]: ARE / RMSE / MAE scoring.
//!
//! The crate is `no_std` and needs only `alloc`. File formats and the
//! command-line tool live in the `ocvcap` crate.

#![no_std]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod coulomb;
pub mod curve;
pub mod estimator;
pub mod metrics;
pub mod synth;

mod error;
mod nelder_mead;

pub use coulomb::{integrate_discharge, soc_from_qdc, DischargeTrace};
pub use curve::{enforce_monotone, OcvCurve, SocRange};
pub use error::{Error, Result};
pub use estimator::{
    apply_transform, estimate, estimate_window, grid_oracle, uncalibrated_soc, EstimationProblem,
    EstimationResult, OraclePoint, SocTransform, SolverOptions,
};
pub use metrics::{absolute_relative_error, aggregate, curve_alignment_rmse, EvaluationReport};
pub use synth::{generate, reference_nominal_curve, AgingScenario, CurrentProgram};
