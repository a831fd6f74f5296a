//! Monte-Carlo estimates of the transfer generalization gap and excess risk.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::harness::TaskPair;
use crate::measures::{resample_one, DataSet};
use crate::mfnet::{Activation, OuterLoss};
use crate::priors::GibbsPrior;
use crate::rng::{self, purpose};
use crate::trainer::{self, Scenario, TrainConfig, TrainedModel};

/// Smallest held-out set accepted as a stand-in for the population.
pub const MIN_TEST_SIZE: usize = 10_000;

/// Replicates are aborted when at least this fraction diverge.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

/// Training configuration together with the network and prior it trains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub cfg: TrainConfig,
    pub act: Activation,
    pub ol: OuterLoss,
    pub prior: GibbsPrior,
}

impl Learner {
    pub fn new(cfg: TrainConfig, act: Activation, ol: OuterLoss, prior: GibbsPrior) -> Result<Self> {
        cfg.validate()?;
        act.trainable()?;
        Ok(Self { cfg, act, ol, prior })
    }

    pub fn scenario(&self) -> Scenario {
        self.cfg.scenario
    }

    fn needs_source(&self) -> bool {
        self.cfg.scenario != Scenario::Supervised
    }

    fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.cfg.clone()
        }
    }

    /// Trains with training seed `seed` on the given data.
    pub fn train(&self, seed: u64, data_t: &DataSet, data_s: Option<&DataSet>) -> Result<TrainedModel> {
        trainer::train(&self.with_seed(seed), self.act, self.ol, &self.prior, data_t, data_s)
    }

    /// Trains two models on two target sets sharing the seed and source data;
    /// the fine-tuning source stage is computed once.
    fn train_pair(
        &self,
        seed: u64,
        a: &DataSet,
        b: &DataSet,
        data_s: Option<&DataSet>,
    ) -> Result<(TrainedModel, TrainedModel)> {
        let cfg = self.with_seed(seed);
        if cfg.scenario == Scenario::Finetune {
            let s = data_s.ok_or_else(|| argument("fine-tuning needs a source data set"))?;
            let stage1 = trainer::finetune_stage1(s, &cfg, self.act, self.ol, &self.prior)?;
            Ok((
                trainer::finetune_stage2(&stage1, a, &cfg, self.act, self.ol, &self.prior)?,
                trainer::finetune_stage2(&stage1, b, &cfg, self.act, self.ol, &self.prior)?,
            ))
        } else {
            Ok((self.train(seed, a, data_s)?, self.train(seed, b, data_s)?))
        }
    }
}

/// Sample sizes, replicate count and master seed of one estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    pub n_t: usize,
    pub n_s: usize,
    pub replicates: usize,
    pub test_size: usize,
    pub seed: u64,
}

/// How a replicate turns trained models into a generalization-gap value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapEstimator {
    /// `R(m, test) − R(m, train_t)` for the model trained on `train_t`.
    #[default]
    Plain,
    /// Also trains on an independent ghost target set `G` with the same seed
    /// and source data, and averages `R(m, G) − R(m, train_t)` with
    /// `R(m_G, train_t) − R(m_G, G)`. Each half is unbiased for the gap and
    /// the shared training noise cancels the `O(n^{-1/2})` fluctuation of the
    /// training average.
    Swap,
}

/// One replicate of a generalization experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub train_risk: f64,
    pub test_risk: f64,
    pub gen_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√replicates`.
    pub std_error: f64,
    pub replicates: usize,
    pub failed: usize,
    pub values: Vec<f64>,
}

/// Pairwise summation; the result depends only on the order of `v`.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

impl GenEstimate {
    pub fn from_values(values: Vec<f64>, failed: usize) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InsufficientData { usable: n, required: 2 });
        }
        let mean = pairwise_sum(&values) / n as f64;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Ok(Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            replicates: n,
            failed,
            values,
        })
    }

    /// `|mean − target| ≤ k · std_error`
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

/// A generalization estimate together with its per-replicate records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenRun {
    pub estimate: GenEstimate,
    pub records: Vec<ReplicateRecord>,
}

impl GenRun {
    /// Mean and SE of the held-out risk of the primary model.
    pub fn test_risk(&self) -> Result<GenEstimate> {
        GenEstimate::from_values(self.records.iter().map(|r| r.test_risk).collect(), self.estimate.failed)
    }
}

fn check_design(learner: &Learner, d: &Design) -> Result<()> {
    if d.replicates < 2 {
        return Err(argument(format!("replicates must be at least 2, got {}", d.replicates)));
    }
    if d.test_size < MIN_TEST_SIZE {
        return Err(argument(format!("test_size must be at least {MIN_TEST_SIZE}, got {}", d.test_size)));
    }
    if d.n_t == 0 {
        return Err(argument("n_t must be positive"));
    }
    if learner.needs_source() && d.n_s == 0 {
        return Err(argument(format!("{} needs n_s > 0", learner.scenario())));
    }
    Ok(())
}

pub fn replicate_seed(seed: u64, k: usize) -> u64 {
    rng::derive_seed(seed, &[purpose::REPLICATE, k as u64])
}

fn train_seed(replicate_seed: u64) -> u64 {
    rng::derive_seed(replicate_seed, &[purpose::TRAIN])
}

/// Runs `body` for every replicate in parallel, dropping diverged ones and
/// aborting when too many fail.
fn run_replicates<T: Send>(
    replicates: usize,
    body: impl Fn(usize) -> Result<T> + Sync,
) -> Result<(Vec<T>, usize)> {
    let outcomes: Vec<Result<Option<T>>> = (0..replicates)
        .into_par_iter()
        .map(|k| match body(k) {
            Ok(v) => Ok(Some(v)),
            Err(Error::Diverged { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut done = Vec::with_capacity(replicates);
    let mut failed = 0;
    for o in outcomes {
        match o? {
            Some(v) => done.push(v),
            None => failed += 1,
        }
    }
    if failed as f64 >= MAX_FAILURE_FRACTION * replicates as f64 && failed > 0 {
        return Err(Error::ReplicatesFailed {
            failed,
            total: replicates,
        });
    }
    Ok((done, failed))
}

/// Weak transfer generalization error by replication: fresh target, source
/// and held-out sets per replicate, with the held-out risk standing in for the
/// population risk.
pub fn wtge_estimate(task: &TaskPair, learner: &Learner, design: &Design, estimator: GapEstimator) -> Result<GenRun> {
    check_design(learner, design)?;
    let (records, failed) = run_replicates(design.replicates, |k| {
        let rs = replicate_seed(design.seed, k);
        let data_t = task.target_train(design.n_t, rs);
        let data_s = learner.needs_source().then(|| task.source_train(design.n_s, rs));
        let test = task.target_test(design.test_size, rs);
        let (m, gap) = match estimator {
            GapEstimator::Plain => {
                let m = learner.train(train_seed(rs), &data_t, data_s.as_ref())?;
                let gap = m.risk(&test)? - m.risk(&data_t)?;
                (m, gap)
            }
            GapEstimator::Swap => {
                let ghost = task.target.sample(design.n_t, &mut rng::stream(rs, &[purpose::DATA_GHOST]));
                let (m, g) = learner.train_pair(train_seed(rs), &data_t, &ghost, data_s.as_ref())?;
                let own = m.risk(&ghost)? - m.risk(&data_t)?;
                let other = g.risk(&data_t)? - g.risk(&ghost)?;
                (m, 0.5 * (own + other))
            }
        };
        Ok(ReplicateRecord {
            replicate: k,
            seed: rs,
            train_risk: m.risk(&data_t)?,
            test_risk: m.risk(&test)?,
            gen_gap: gap,
        })
    })?;
    let estimate = GenEstimate::from_values(records.iter().map(|r| r.gen_gap).collect(), failed)?;
    Ok(GenRun { estimate, records })
}

/// Weak transfer excess risk on a noiseless task, where the teacher attains
/// zero population risk: the replicate mean of the held-out risk.
pub fn wter_estimate(task: &TaskPair, learner: &Learner, design: &Design) -> Result<GenRun> {
    if !task.spec.is_noiseless() {
        return Err(Error::Unsupported(
            "excess risk needs a noiseless task; the infimum risk is unknown otherwise".into(),
        ));
    }
    check_design(learner, design)?;
    let (records, failed) = run_replicates(design.replicates, |k| {
        let rs = replicate_seed(design.seed, k);
        let data_t = task.target_train(design.n_t, rs);
        let data_s = learner.needs_source().then(|| task.source_train(design.n_s, rs));
        let test = task.target_test(design.test_size, rs);
        let m = learner.train(train_seed(rs), &data_t, data_s.as_ref())?;
        let (train_risk, test_risk) = (m.risk(&data_t)?, m.risk(&test)?);
        Ok(ReplicateRecord {
            replicate: k,
            seed: rs,
            train_risk,
            test_risk,
            gen_gap: test_risk - train_risk,
        })
    })?;
    let estimate = GenEstimate::from_values(records.iter().map(|r| r.test_risk).collect(), failed)?;
    Ok(GenRun { estimate, records })
}

/// Largest target sample size accepted by [`resampling_identity_check`].
pub const RESAMPLING_MAX_N_T: usize = 16;
pub const RESAMPLING_MIN_REPLICATES: usize = 50;
/// Held-out size for the left-hand side; its first point is `Z̄₁`.
pub const RESAMPLING_TEST_SIZE: usize = 10_000;

/// Both sides of the resampling identity and their paired difference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResamplingCheck {
    /// `R(m(ν_t), test) − R(m(ν_t), ν_t)`
    pub lhs: GenEstimate,
    /// `ℓ(m(ν_t), Z̄₁) − ℓ(m(ν_{t,(1)}), Z̄₁)`
    pub rhs: GenEstimate,
    /// Per-replicate `lhs − rhs`; its SE is the combined standard error.
    pub difference: GenEstimate,
}

impl ResamplingCheck {
    pub fn combined_std_error(&self) -> f64 {
        self.difference.std_error
    }

    /// `|LHS − RHS| ≤ k · combined SE`
    pub fn holds(&self, k: f64) -> bool {
        (self.lhs.mean - self.rhs.mean).abs() <= k * self.combined_std_error()
    }
}

/// Estimates both sides of the one-point resampling identity for the gap.
/// Within a replicate both trainings share the seed, so they differ only in
/// the replaced point `Z₁ → Z̄₁`.
pub fn resampling_identity_check(
    task: &TaskPair,
    learner: &Learner,
    n_t: usize,
    n_s: usize,
    outer_replicates: usize,
    seed: u64,
) -> Result<ResamplingCheck> {
    if n_t > RESAMPLING_MAX_N_T {
        return Err(argument(format!("n_t must be at most {RESAMPLING_MAX_N_T}, got {n_t}")));
    }
    if outer_replicates < RESAMPLING_MIN_REPLICATES {
        return Err(argument(format!(
            "need at least {RESAMPLING_MIN_REPLICATES} outer replicates, got {outer_replicates}"
        )));
    }
    let design = Design {
        n_t,
        n_s,
        replicates: outer_replicates,
        test_size: RESAMPLING_TEST_SIZE,
        seed,
    };
    check_design(learner, &design)?;
    let (pairs, failed) = run_replicates(outer_replicates, |k| {
        let rs = replicate_seed(seed, k);
        let data_t = task.target_train(n_t, rs);
        let data_s = learner.needs_source().then(|| task.source_train(n_s, rs));
        let test = task.target_test(RESAMPLING_TEST_SIZE, rs);
        let z_bar = test.sample(0);
        let swapped = resample_one(&data_t, 0, z_bar)?;
        let (m, m1) = learner.train_pair(train_seed(rs), &data_t, &swapped, data_s.as_ref())?;
        let lhs = m.risk(&test)? - m.risk(&data_t)?;
        let rhs = m.loss(z_bar)? - m1.loss(z_bar)?;
        Ok((lhs, rhs))
    })?;
    let (l, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let diff = l.iter().zip(&r).map(|(a, b)| a - b).collect();
    Ok(ResamplingCheck {
        lhs: GenEstimate::from_values(l, failed)?,
        rhs: GenEstimate::from_values(r, failed)?,
        difference: GenEstimate::from_values(diff, failed)?,
    })
}
