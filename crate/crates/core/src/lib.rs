//! Multi-target split conformal prediction.
//!
//! The crate provides nonconformity scores for quantile predictors, five
//! calibrators (single-target, IA, QN/max-score, an empirical-copula
//! baseline and minimax), a synthetic regression generator with linear
//! quantile regressors, a Monte Carlo evaluation harness, a multi-round
//! acquisition simulator and the `ctool` experiment runner.

pub mod calibrate;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod multiround;
pub mod rng;
pub mod scores;
pub mod synthetic;

pub use calibrate::{Calibration, Calibrator, EmpiricalCdf, Method, TuneScores};
pub use data::{Interval, IntervalSet, LabeledSet, QuantileRow, Role, SplitSpec, TargetVector};
pub use error::{Error, Result};
pub use scores::{ScoreKind, ScoreMatrix};
