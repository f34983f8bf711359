//! Path following for a quadrotor under wind: a learning-based
//! feedback-linearization controller with online Gaussian processes below a
//! model predictive path-following planner, plus the comparison baselines and
//! the simulation harness.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod gp;
pub mod harness;
pub mod lbfblc;
pub mod mpfc;
pub mod paths;
pub mod qp;
pub mod quadrotor;
pub mod wind;

pub use baselines::{GuidanceConfig, LowLevel};
pub use error::{Error, Result};
pub use gp::{GpConfig, GpModel, GpPrediction};
pub use harness::{ExperimentConfig, HighLevel, MetricsReport, RunLog, StepRecord, SweepConfig};
pub use lbfblc::{ControlOutput, Gains, GainsConfig};
pub use mpfc::{OcpConfig, OcpSolution};
pub use paths::{PathKind, PathSpec, Projection};
pub use quadrotor::{PlantState, QuadParams};
pub use wind::{WindConfig, WindModel};
