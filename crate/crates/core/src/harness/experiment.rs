//! Rate sweeps: scenario plans on an `n_t` grid, with the sample-size
//! prescriptions for `n_s`, `α` and `β` evaluated per cell.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::jobs::parse_config;
use super::task::{default_task, gen_task, DataMoments, ShiftMode, TaskPair, TaskSpec};
use crate::analysis::{
    bound_rhs_wtge_alpha, bound_rhs_wtge_finetune, constants_extract, rate_fit, wtge_estimate, BoundReport,
    Design, GapEstimator, GenEstimate, Learner, RatePoint, RateReport, ReplicateRecord, WtgeAlpha, WtgeFinetune,
};
use crate::error::{Error, Result};
use crate::mfnet::{Activation, LossKind, OuterLoss};
use crate::priors::{comp_alpha, comp_finetune_separable, GibbsPrior, Potential, TiltedPrior};
use crate::rng::{self, purpose};
use crate::trainer::{Batch, Scenario, TrainConfig};

fn config_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub potential: Potential,
    pub sigma: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            potential: Potential::Poly10,
            sigma: 1.0,
        }
    }
}

/// Source sample size as a function of `n_t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceRule {
    Fixed { n: usize },
    /// `n_s = round(k n_t)`
    Proportional { k: f64 },
}

impl SourceRule {
    pub fn n_s(&self, n_t: usize) -> usize {
        match *self {
            SourceRule::Fixed { n } => n,
            SourceRule::Proportional { k } => (k * n_t as f64).round() as usize,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            SourceRule::Fixed { n } => format!("n_s = {n}"),
            SourceRule::Proportional { k } => format!("n_s = {k} n_t"),
        }
    }
}

/// Target weight of α-ERM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaRule {
    Fixed { alpha: f64 },
    /// `α = n_t / (n_t + n_s)`, for similar tasks.
    TargetFraction,
    /// `α = 1 − 1/n_t`, for dissimilar tasks.
    OneMinusInverseNt,
}

impl AlphaRule {
    pub fn alpha(&self, n_t: usize, n_s: usize) -> f64 {
        match *self {
            AlphaRule::Fixed { alpha } => alpha,
            AlphaRule::TargetFraction => n_t as f64 / (n_t + n_s) as f64,
            AlphaRule::OneMinusInverseNt => 1.0 - 1.0 / n_t as f64,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            AlphaRule::Fixed { alpha } => format!("alpha = {alpha}"),
            AlphaRule::TargetFraction => "alpha = n_t/(n_t+n_s)".into(),
            AlphaRule::OneMinusInverseNt => "alpha = 1 - 1/n_t".into(),
        }
    }
}

/// Inverse temperature(s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaRule {
    /// The same `β` for every stage.
    Fixed { beta: f64 },
    /// `β = (n_t + n_s)^{1/4}`
    QuarterPower,
    /// `β_s² = √n_s`, `β_t² = √n_t`; `β = β_t` for single-stage scenarios.
    SqrtSizes,
}

/// `(β, β_s, β_t)` for one cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub beta: f64,
    pub beta_s: f64,
    pub beta_t: f64,
}

impl BetaRule {
    pub fn temperatures(&self, n_t: usize, n_s: usize) -> Temperatures {
        match *self {
            BetaRule::Fixed { beta } => Temperatures {
                beta,
                beta_s: beta,
                beta_t: beta,
            },
            BetaRule::QuarterPower => {
                let b = ((n_t + n_s) as f64).powf(0.25);
                Temperatures {
                    beta: b,
                    beta_s: b,
                    beta_t: b,
                }
            }
            BetaRule::SqrtSizes => {
                let bt = (n_t as f64).powf(0.25);
                Temperatures {
                    beta: bt,
                    beta_s: (n_s.max(1) as f64).powf(0.25),
                    beta_t: bt,
                }
            }
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            BetaRule::Fixed { beta } => format!("beta = {beta}"),
            BetaRule::QuarterPower => "beta = (n_t+n_s)^(1/4)".into(),
            BetaRule::SqrtSizes => "beta_s^2 = sqrt(n_s), beta_t^2 = sqrt(n_t)".into(),
        }
    }
}

/// One scenario of a sweep. Rules left out fall back to the sweep defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPlan {
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<BetaRule>,
}

impl ScenarioPlan {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            label: None,
            source: None,
            alpha: None,
            beta: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.scenario.name().to_string())
    }

    /// The sample size the rate is measured against.
    pub fn rate_axis(&self) -> &'static str {
        match self.scenario {
            Scenario::AlphaErm => "n_t+n_s",
            _ => "n_t",
        }
    }

    fn source_rule(&self) -> Option<SourceRule> {
        match self.scenario {
            Scenario::Supervised => None,
            Scenario::AlphaErm => Some(self.source.unwrap_or(SourceRule::Proportional { k: 1.0 })),
            Scenario::Finetune => Some(self.source.unwrap_or(SourceRule::Fixed { n: 256 })),
        }
    }

    fn alpha_rule(&self) -> Option<AlphaRule> {
        match self.scenario {
            Scenario::AlphaErm => Some(self.alpha.unwrap_or(AlphaRule::TargetFraction)),
            _ => None,
        }
    }
}

fn default_seed() -> u64 {
    0
}
fn default_activation() -> Activation {
    Activation::Sigmoid
}
fn default_loss() -> LossKind {
    LossKind::Quadratic
}
fn default_particles() -> usize {
    128
}
fn default_steps() -> usize {
    500
}
fn default_step_size() -> f64 {
    0.05
}
fn default_beta() -> BetaRule {
    BetaRule::Fixed { beta: 10.0 }
}
fn default_grid() -> Vec<usize> {
    vec![32, 64, 128, 256]
}
fn default_replicates() -> usize {
    32
}
fn default_test_size() -> usize {
    20_000
}
fn default_estimator() -> GapEstimator {
    GapEstimator::Swap
}
fn default_true() -> bool {
    true
}
fn default_scenarios() -> Vec<ScenarioPlan> {
    vec![
        ScenarioPlan::new(Scenario::Supervised),
        ScenarioPlan::new(Scenario::AlphaErm),
        ScenarioPlan::new(Scenario::Finetune),
    ]
}

/// A complete, self-describing sweep. Every field has a default, so `{}` is
/// a valid config for the three similar-task scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_task")]
    pub task: TaskSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    /// For fine-tuning a `poly10` prior is replaced by `poly10_separable`,
    /// which has the block structure the second stage needs.
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_steps: Option<usize>,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<ScenarioPlan>,
    #[serde(default = "default_grid")]
    pub n_t_grid: Vec<usize>,
    /// Default `β` rule for plans without their own.
    #[serde(default = "default_beta")]
    pub beta: BetaRule,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_estimator")]
    pub estimator: GapEstimator,
    /// Evaluate the gap bound at every cell.
    #[serde(default = "default_true")]
    pub bounds: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    /// Parses a config, naming the offending field on failure. A CSV written
    /// by a sweep is accepted too: its embedded config is used.
    pub fn from_json(text: &str) -> Result<Self> {
        let body = match text.lines().find_map(|l| l.strip_prefix(CONFIG_PREFIX)) {
            Some(embedded) if text.trim_start().starts_with('#') => embedded,
            _ => text,
        };
        let cfg: Self = parse_config(body)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.prior.sigma.is_nan() || self.prior.sigma <= 0.0 {
            return Err(config_error("prior.sigma", "must be positive"));
        }
        if self.particles == 0 {
            return Err(config_error("particles", "must be positive"));
        }
        if self.step_size.is_nan() || self.step_size <= 0.0 {
            return Err(config_error("step_size", "must be positive"));
        }
        if self.scenarios.is_empty() {
            return Err(config_error("scenarios", "at least one scenario is needed"));
        }
        if self.n_t_grid.is_empty() || self.n_t_grid.contains(&0) {
            return Err(config_error("n_t_grid", "needs positive sizes"));
        }
        if self.n_t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_error("n_t_grid", "must be strictly increasing"));
        }
        if self.replicates < 2 {
            return Err(config_error("replicates", "must be at least 2"));
        }
        if self.test_size < crate::analysis::MIN_TEST_SIZE {
            return Err(config_error(
                "test_size",
                format!("must be at least {}", crate::analysis::MIN_TEST_SIZE),
            ));
        }
        self.activation
            .trainable()
            .map_err(|e| config_error("activation", e.to_string()))?;
        let mut labels = std::collections::BTreeSet::new();
        for (i, plan) in self.scenarios.iter().enumerate() {
            if !labels.insert(plan.label()) {
                return Err(config_error(format!("scenarios[{i}].label"), "labels must be unique"));
            }
            if let Some(SourceRule::Proportional { k }) = plan.source {
                if k.is_nan() || k <= 0.0 {
                    return Err(config_error(format!("scenarios[{i}].source.k"), "must be positive"));
                }
            }
            if let Some(AlphaRule::Fixed { alpha }) = plan.alpha {
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(config_error(format!("scenarios[{i}].alpha.alpha"), "must lie in [0, 1]"));
                }
            }
            if let Some(BetaRule::Fixed { beta }) = plan.beta.or(Some(self.beta)) {
                if beta.is_nan() || beta <= 0.0 {
                    return Err(config_error(format!("scenarios[{i}].beta.beta"), "must be positive"));
                }
            }
        }
        Ok(())
    }

    fn prior_for(&self, scenario: Scenario) -> Result<GibbsPrior> {
        let potential = match (scenario, self.prior.potential) {
            (Scenario::Finetune, Potential::Poly10) => Potential::Poly10Separable,
            (_, p) => p,
        };
        GibbsPrior::new(potential, self.prior.sigma, self.task.input_dim + 1)
    }

    /// The resolved settings of one grid cell.
    pub fn cell(&self, plan_index: usize, n_t: usize) -> Result<CellPlan> {
        let plan = self
            .scenarios
            .get(plan_index)
            .ok_or_else(|| config_error("scenarios", format!("no scenario #{plan_index}")))?;
        let source = plan.source_rule();
        let n_s = source.map_or(0, |r| r.n_s(n_t));
        let alpha_rule = plan.alpha_rule();
        let alpha = match plan.scenario {
            Scenario::Supervised => Some(1.0),
            Scenario::AlphaErm => alpha_rule.map(|r| r.alpha(n_t, n_s)),
            Scenario::Finetune => None,
        };
        let beta_rule = plan.beta.unwrap_or(self.beta);
        let temperatures = beta_rule.temperatures(n_t, n_s);
        let mut rules = vec![beta_rule.describe()];
        rules.extend(source.map(|r| r.describe()));
        rules.extend(alpha_rule.map(|r| r.describe()));
        Ok(CellPlan {
            label: plan.label(),
            scenario: plan.scenario,
            n_t,
            n_s,
            alpha,
            temperatures,
            rules,
            seed: rng::derive_seed(self.seed, &[purpose::CELL, plan_index as u64, n_t as u64]),
        })
    }

    fn learner(&self, cell: &CellPlan) -> Result<Learner> {
        let t = cell.temperatures;
        let finetune = cell.scenario == Scenario::Finetune;
        let cfg = TrainConfig {
            scenario: cell.scenario,
            alpha: if cell.scenario == Scenario::AlphaErm { cell.alpha } else { None },
            beta: (!finetune).then_some(t.beta),
            beta_s: finetune.then_some(t.beta_s),
            beta_t: finetune.then_some(t.beta_t),
            sigma: self.prior.sigma,
            particles: self.particles,
            steps: self.steps,
            stage2_steps: self.stage2_steps,
            step_size: self.step_size,
            batch: Batch::Full,
            seed: cell.seed,
        };
        Learner::new(cfg, self.activation, OuterLoss::from_kind(self.loss), self.prior_for(cell.scenario)?)
    }
}

/// Where a sweep's embedded config lives in its CSV header.
pub const CONFIG_PREFIX: &str = "# config: ";

/// Concrete settings of one `(scenario, n_t)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellPlan {
    pub label: String,
    pub scenario: Scenario,
    pub n_t: usize,
    pub n_s: usize,
    /// `1` for supervised learning, absent for fine-tuning.
    pub alpha: Option<f64>,
    pub temperatures: Temperatures,
    /// The prescriptions that produced the numbers above.
    pub rules: Vec<String>,
    pub seed: u64,
}

impl CellPlan {
    /// The sample size on the rate axis.
    pub fn axis_size(&self) -> usize {
        match self.scenario {
            Scenario::AlphaErm => self.n_t + self.n_s,
            _ => self.n_t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub plan: CellPlan,
    pub records: Vec<ReplicateRecord>,
    pub gap: Option<GenEstimate>,
    /// Held-out risk of the trained models; on a noiseless task this is the
    /// excess risk.
    pub excess_risk: Option<GenEstimate>,
    pub bound: Option<BoundReport>,
    /// `|mean| + 3 SE ≤ bound`
    pub dominated: Option<bool>,
    pub error: Option<String>,
    /// Set when the cell was abandoned because too many replicates diverged.
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFit {
    pub label: String,
    pub scenario: Scenario,
    pub axis: String,
    pub fit: Option<RateReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    /// `similar` when the task shift is zero, `dissimilar` otherwise.
    pub regime: String,
    pub target_moments: DataMoments,
    pub source_moments: DataMoments,
    pub cells: Vec<CellResult>,
    pub fits: Vec<ScenarioFit>,
}

impl SweepReport {
    pub fn fit(&self, label: &str) -> Option<&ScenarioFit> {
        self.fits.iter().find(|f| f.label == label)
    }

    pub fn cells_of<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a CellResult> + 'a {
        self.cells.iter().filter(move |c| c.plan.label == label)
    }

    pub fn any_diverged(&self) -> bool {
        self.cells.iter().any(|c| c.diverged)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per replicate, after a header embedding the config and seed.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "{CONFIG_PREFIX}{}", self.config.to_json())?;
        writeln!(w, "# seed: {}", self.seed)?;
        writeln!(w, "scenario,n_t,n_s,alpha,beta,replicate,train_risk,test_risk,gen_gap,seed")?;
        for c in &self.cells {
            let p = &c.plan;
            let alpha = p.alpha.map(|a| a.to_string()).unwrap_or_default();
            let beta = match p.scenario {
                Scenario::Finetune => p.temperatures.beta_t,
                _ => p.temperatures.beta,
            };
            for r in &c.records {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{}",
                    p.label, p.n_t, p.n_s, alpha, beta, r.replicate, r.train_risk, r.test_risk, r.gen_gap, r.seed
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn regime(task: &TaskSpec) -> &'static str {
    if task.shift == 0.0 || task.mode == ShiftMode::SharedTeacher {
        "similar"
    } else {
        "dissimilar"
    }
}

struct BoundInputs {
    target: DataMoments,
    source: DataMoments,
    comp: Option<f64>,
    comp_ft: Option<f64>,
}

fn cell_bound(cfg: &ExperimentConfig, cell: &CellPlan, b: &BoundInputs) -> Result<BoundReport> {
    let constants = constants_extract(cfg.activation, &OuterLoss::from_kind(cfg.loss))?;
    match cell.scenario {
        Scenario::Finetune => bound_rhs_wtge_finetune(&WtgeFinetune {
            constants,
            comp: b.comp_ft.ok_or_else(|| Error::Unsupported("no fine-tuning complexity for this prior".into()))?,
            target: b.target,
            source: b.source,
            beta_t: cell.temperatures.beta_t,
            sigma: cfg.prior.sigma,
            n_t: cell.n_t,
            n_s: cell.n_s,
        }),
        _ => bound_rhs_wtge_alpha(&WtgeAlpha {
            constants,
            comp: b.comp.ok_or_else(|| Error::Unsupported("the complexity term needs a poly10 prior".into()))?,
            target: b.target,
            source: b.source,
            alpha: cell.alpha.unwrap_or(1.0),
            beta: cell.temperatures.beta,
            sigma: cfg.prior.sigma,
            n_t: cell.n_t,
            n_s: cell.n_s,
        }),
    }
}

fn bound_inputs(cfg: &ExperimentConfig, target: DataMoments, source: DataMoments) -> Result<BoundInputs> {
    let d = cfg.task.input_dim + 1;
    let comp = match cfg.prior.potential {
        Potential::Poly10 => Some(comp_alpha(&TiltedPrior::new(GibbsPrior::new(Potential::Poly10, cfg.prior.sigma, d)?)?)?),
        _ => None,
    };
    let needs_ft = cfg.scenarios.iter().any(|p| p.scenario == Scenario::Finetune);
    let comp_ft = match cfg.prior_for(Scenario::Finetune)? {
        p if needs_ft && p.potential == Potential::Poly10Separable => Some(comp_finetune_separable(&p)?.value),
        _ => None,
    };
    Ok(BoundInputs {
        target,
        source,
        comp,
        comp_ft,
    })
}

/// The gap bound of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellBound {
    pub plan: CellPlan,
    pub report: BoundReport,
}

/// Gap bounds at every cell of a sweep, without training anything.
pub fn sweep_bounds(cfg: &ExperimentConfig) -> Result<Vec<CellBound>> {
    cfg.validate()?;
    let task = gen_task(&cfg.task, cfg.seed)?;
    let (target, source) = task.moments(cfg.seed);
    let inputs = bound_inputs(cfg, target, source)?;
    let mut out = Vec::new();
    for i in 0..cfg.scenarios.len() {
        for &n in &cfg.n_t_grid {
            let plan = cfg.cell(i, n)?;
            let report = cell_bound(cfg, &plan, &inputs)?;
            out.push(CellBound { plan, report });
        }
    }
    Ok(out)
}

fn run_cell(cfg: &ExperimentConfig, task: &TaskPair, cell: CellPlan, bounds: Option<&BoundInputs>) -> CellResult {
    let mut out = CellResult {
        plan: cell.clone(),
        records: Vec::new(),
        gap: None,
        excess_risk: None,
        bound: None,
        dominated: None,
        error: None,
        diverged: false,
    };
    let run = cfg.learner(&cell).and_then(|learner| {
        let design = Design {
            n_t: cell.n_t,
            n_s: cell.n_s,
            replicates: cfg.replicates,
            test_size: cfg.test_size,
            seed: cell.seed,
        };
        wtge_estimate(task, &learner, &design, cfg.estimator)
    });
    match run {
        Ok(run) => {
            // Same data and training seed as `wter_estimate`, so the held-out
            // risks are exactly its replicate values.
            if task.spec.is_noiseless() {
                out.excess_risk = run.test_risk().ok();
            }
            out.gap = Some(run.estimate);
            out.records = run.records;
        }
        Err(e) => {
            out.diverged = matches!(e, Error::ReplicatesFailed { .. } | Error::Diverged { .. });
            out.error = Some(e.to_string());
        }
    }
    if let Some(b) = bounds {
        match cell_bound(cfg, &cell, b) {
            Ok(report) => {
                out.dominated = out
                    .gap
                    .as_ref()
                    .map(|g| g.mean.abs() + 3.0 * g.std_error <= report.rhs_value);
                out.bound = Some(report);
            }
            Err(e) => {
                let msg = format!("bound: {e}");
                out.error = Some(out.error.map_or(msg.clone(), |prev| format!("{prev}; {msg}")));
            }
        }
    }
    out
}

fn fit_scenario(label: &str, scenario: Scenario, axis: &str, cells: &[CellResult]) -> ScenarioFit {
    let points: Vec<RatePoint> = cells
        .iter()
        .filter(|c| c.plan.label == label)
        .filter_map(|c| {
            c.gap.as_ref().map(|g| RatePoint {
                n: c.plan.axis_size() as f64,
                mean: g.mean,
                std_error: g.std_error,
            })
        })
        .collect();
    let (fit, error) = match rate_fit(&points) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    ScenarioFit {
        label: label.to_string(),
        scenario,
        axis: axis.to_string(),
        fit,
        error,
    }
}

/// Runs every `(scenario, n_t)` cell and fits one rate per scenario. Cell
/// failures are recorded in the report rather than aborting the sweep.
pub fn run_rate_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let task = gen_task(&cfg.task, cfg.seed)?;
    let (target, source) = task.moments(cfg.seed);
    let bounds = if cfg.bounds {
        Some(bound_inputs(cfg, target, source)?)
    } else {
        None
    };
    let plans = (0..cfg.scenarios.len())
        .flat_map(|i| cfg.n_t_grid.iter().map(move |&n| (i, n)))
        .map(|(i, n)| cfg.cell(i, n))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<CellResult> = plans
        .into_par_iter()
        .map(|cell| run_cell(cfg, &task, cell, bounds.as_ref()))
        .collect();
    let fits = cfg
        .scenarios
        .iter()
        .map(|p| fit_scenario(&p.label(), p.scenario, p.rate_axis(), &cells))
        .collect();
    Ok(SweepReport {
        config: cfg.clone(),
        seed: cfg.seed,
        regime: regime(&cfg.task).into(),
        target_moments: target,
        source_moments: source,
        cells,
        fits,
    })
}
