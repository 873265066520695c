//! Confidence estimation toolkit.
//!
//! * [`evalcore`]: logits/labels data model and post-hoc confidence scores.
//! * [`metrics`]: failure-prediction, calibration and OOD metrics, risk–coverage curves.
//! * [`calibration`]: temperature scaling and the calibration/grouping/aleatoric
//!   decomposition of proper scoring rules.
//! * [`flatopt`]: a small MLP with manual backprop, training-time losses and the
//!   SGD / SAM / SWA / FMFP optimizers.
//! * [`bayeslab`]: Gaussian-mixture laboratory for Bayes-optimal reject rules.
//! * `cli` (feature `cli`): the `fpkit` command-line front end.
//!
//! All confidence scores are oriented "higher = more trustworthy" and all
//! logarithms are natural.

pub mod bayeslab;
pub mod calibration;
#[cfg(feature = "cli")]
pub mod cli;
pub mod error;
pub mod evalcore;
pub mod flatopt;
pub mod metrics;
pub mod rng;

pub use error::{FpError, Result};
pub use evalcore::{CorrectnessMask, EvalSet, ScoreKind, ScoreParams, ScoreVector};
pub use metrics::MetricsReport;
