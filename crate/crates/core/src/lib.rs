//! Quantile-forecasting LSTM anomaly detection for univariate time series.
//!
//! The crate is organised bottom-up:
//!
//! - [`series`]: loading, validating, normalising, synthesising and writing series.
//! - [`windowing`]: sliding periods, disjoint sub-windows and the supervised
//!   quantile training pairs built from them.
//! - [`lstm`]: a single-cell LSTM with pluggable activations, including the
//!   parameterised Elliot function whose slope `alpha` is learned, plus
//!   backpropagation through time and a full-batch trainer.
//! - [`detectors`]: the quantile band, IQR fence and median-difference detectors.
//! - [`evaluation`]: precision/recall scoring, empirical probability bounds,
//!   threshold sweeps, false-alarm counts and the Elliot ablation.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons also reject NaN

pub mod detectors;
pub mod error;
pub mod evaluation;
pub mod lstm;
pub mod series;
pub mod windowing;

pub use detectors::{
    DetectorConfig, DetectorKind, DetectorVerdict, FittedDetector, MedianThresholds,
};
pub use error::{Error, Result};
pub use evaluation::{EvalReport, MatchPolicy, ProbabilityBoundRow};
pub use lstm::{Activation, ActivationKind, EpochTrace, LstmModel, TrainConfig};
pub use series::{CsvSchema, NormalizationParams, SeriesPoint, TimeSeries};
pub use windowing::{QuantileTrainingSet, WindowConfig};
