//! Conformal prediction with sparse activations.
//!
//! Split conformal calibration is carried out with non-conformity scores
//! whose quantile doubles as a temperature for γ-entmax: the calibrated
//! prediction set of a test point equals the support of
//! `γ-entmax(β·z)` with `β = δ / q̂`, `δ = 1/(γ−1)`. Softmax-based baselines
//! (inverse probability, APS/RAPS) and the log-margin score are provided for
//! comparison, together with coverage/efficiency/adaptiveness metrics and a
//! seeded experiment driver.

pub mod activations;
pub mod conformal;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod scores;
pub mod tuning;

pub use activations::{EntmaxConfig, LogitVector, SparseDistribution};
pub use conformal::{CalibratedPredictor, LabeledLogitDataset, PredictionSet};
pub use error::{Error, Result};
pub use metrics::{EvaluationRun, MetricsReport, SizeBins};
pub use scores::{RapsParams, ScoreKind};
