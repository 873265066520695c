//! Gaussian-mixture laboratory for the Bayes-optimal reject rules: Chow's
//! rule for failure prediction and the density-ratio rule for OOD
//! detection, their reject regions, and Monte-Carlo risk estimates.

mod mc;
mod mixture;
mod regions;

pub use mc::{
    fp_risk, linear_grid, ood_risk, rule_score, sweep_thresholds, write_sweep_csv, McConfig, RiskEstimate, ScoreId,
    SweepRow, ThresholdRule,
};
pub use mixture::{model_msp, true_posterior, ClassComponent, MixtureSpec, OodDensity, PI_IN_MAX, PI_IN_MIN};
pub use regions::{
    agreement, chow_reject_region, misalignment_witness, ood_reject_region, rejects, Interval, MisalignmentWitness,
    RegionKind, RejectRegion,
};
