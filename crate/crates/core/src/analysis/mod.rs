//! Generalization estimators, bound evaluation, similarity diagnostics and
//! rate fitting.

mod constants;

pub use constants::{assumption_battery, constants_extract, BatteryReport, Constants, Inequality, InequalityCheck};
mod estimate;

pub use estimate::{
    replicate_seed, resampling_identity_check, wter_estimate, wtge_estimate, Design, GapEstimator, GenEstimate, GenRun,
    Learner, ReplicateRecord, ResamplingCheck, MAX_FAILURE_FRACTION, MIN_TEST_SIZE, RESAMPLING_MAX_N_T,
    RESAMPLING_MIN_REPLICATES, RESAMPLING_TEST_SIZE,
};
mod bounds;

pub use bounds::{
    bound_rhs_wter, bound_rhs_wtge_alpha, bound_rhs_wtge_finetune, BoundKind, BoundReport, Item, Similarity, WterAlpha,
    WterFinetune, WterInputs, WtgeAlpha, WtgeFinetune,
};
mod rate;
mod similarity;

pub use rate::{rate_fit, RatePoint, RateReport, MIN_GRID_POINTS, MIN_USABLE_POINTS};
pub use similarity::{ipm_dictionary, MIN_DICTIONARY_SIZE};
