//! Synthetic tasks and experiment orchestration.

mod experiment;
mod jobs;
mod plot;
mod task;
mod verify;

pub use experiment::{
    run_rate_sweep, sweep_bounds, AlphaRule, BetaRule, CellBound, CellPlan, CellResult, ExperimentConfig, PriorSpec,
    ScenarioFit, ScenarioPlan, SourceRule, SweepReport, Temperatures, CONFIG_PREFIX,
};
pub use jobs::{parse_config, SimilarityJob, SimilarityOutcome, TrainJob, TrainOutcome};
pub use plot::rate_svg;
pub use task::{
    default_task, gen_task, DataMoments, ShiftMode, TaskGenerator, TaskPair, TaskSpec, TeacherLaw, TeacherSpec,
    MOMENT_SAMPLES,
};
pub use verify::{
    flat_derivative_identity, normalization_residuals, run_verify, sample_bound_reports, Check, GibbsToy, Suite,
    ToyNoise, VerifyReport, AUDIT_TOL, GIBBS_TV_MAX, IDENTITY_TOL, PRIOR_TV_MAX,
};
