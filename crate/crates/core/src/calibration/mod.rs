//! Post-hoc temperature scaling and the scoring-rule decomposition into
//! calibration, grouping and aleatoric terms.

mod decomposition;
mod synthetic;
mod temperature;

pub use decomposition::{decompose_score, DecompositionEstimate, ScoringRule};
pub use synthetic::{calibrated_eval, LATENT_SCALE};
pub use temperature::{apply_temperature, fit_temperature, TemperatureFit, T_MAX, T_MIN, T_TOL};
