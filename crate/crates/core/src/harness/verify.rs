//! The invariant batteries of every module, bundled into one pass/fail report.

use std::fmt;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::task::{default_task, gen_task, TaskPair};
use crate::analysis::{
    assumption_battery, bound_rhs_wter, bound_rhs_wtge_alpha, bound_rhs_wtge_finetune, constants_extract,
    resampling_identity_check, BoundReport, Learner, Similarity, WterAlpha, WterFinetune, WterInputs, WtgeAlpha,
    WtgeFinetune,
};
use crate::error::Result;
use crate::measures::{DataSet, ParticleCloud, Sample};
use crate::mfnet::{flat_derivative, flat_derivative_sp, loss, Activation, Mixture, OuterLoss};
use crate::objective::{gibbs_residual, Lattice, Objective};
use crate::priors::{comp_alpha, comp_finetune_separable, GibbsPrior, Potential, TiltedPrior};
use crate::rng::{self, purpose};
use crate::trainer::{
    langevin_step_with_noise, train_alpha_erm, train_supervised, Batch, Scenario, TrainConfig, TrainedModel,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// Reduced sample counts; finishes in well under a minute.
    Fast,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub module: String,
    pub invariant: String,
    pub observed: f64,
    pub required: String,
    pub passed: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<10} {:<48} observed {:<12.4e} required {} ({:.1}s)",
                if c.passed { "PASS" } else { "FAIL" },
                c.module,
                c.invariant,
                c.observed,
                c.required,
                c.seconds
            )?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

fn gaussian_cloud<R: Rng>(g: &mut R, max_atoms: usize, dim: usize, scale: f64) -> ParticleCloud {
    let atoms = g.random_range(1..=max_atoms);
    let coords = (0..atoms * dim).map(|_| scale * g.sample::<f64, _>(StandardNormal)).collect();
    ParticleCloud::new(dim, coords).expect("nonempty cloud")
}

fn gaussian_sample<R: Rng>(g: &mut R, q: usize) -> Sample {
    let x = (0..q).map(|_| g.sample(StandardNormal)).collect();
    Sample::new(x, 2.0 * g.sample::<f64, _>(StandardNormal))
}

/// Worst absolute error of
/// `ℓ(m') − ℓ(m) = ∫₀¹ ∫ δℓ/δm((1−λ)m + λm', z, θ) (m' − m)(dθ) dλ`
/// under quadratic loss, with the λ-integral done by two-point Gauss rule.
/// The integrand is affine in λ, so the rule is exact.
pub fn flat_derivative_identity(instances: usize, seed: u64) -> Result<f64> {
    let ol = OuterLoss::quadratic();
    let nodes = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let mut g = rng::stream(seed, &[purpose::MONTE_CARLO, 1]);
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let act = Activation::ALL[k % Activation::ALL.len()];
        let q = g.random_range(1..=5);
        let m = gaussian_cloud(&mut g, 12, q + 1, 1.0);
        let m2 = gaussian_cloud(&mut g, 12, q + 1, 1.5);
        let z = gaussian_sample(&mut g, q);
        let lhs = loss(&m2, z.view(), act, &ol)? - loss(&m, z.view(), act, &ol)?;
        let mut rhs = 0.0;
        for lambda in nodes {
            let mix = Mixture::new(&m, &m2, lambda)?;
            let mut on_new = 0.0;
            for t in m2.atoms() {
                on_new += mix.flat_derivative(z.view(), t, act, &ol)?;
            }
            let mut on_old = 0.0;
            for t in m.atoms() {
                on_old += mix.flat_derivative(z.view(), t, act, &ol)?;
            }
            rhs += 0.5 * (on_new / m2.len() as f64 - on_old / m.len() as f64);
        }
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Worst `|E_m δℓ/δm|` over joint clouds and `|E_{m_sp} δℓ/δm_sp|` over
/// product clouds, both loss families.
pub fn normalization_residuals(instances: usize, seed: u64) -> Result<(f64, f64)> {
    let mut g = rng::stream(seed, &[purpose::MONTE_CARLO, 2]);
    let (mut joint, mut product): (f64, f64) = (0.0, 0.0);
    for k in 0..instances {
        let act = Activation::ALL[k % Activation::ALL.len()];
        let ol = if k % 2 == 0 { OuterLoss::quadratic() } else { OuterLoss::logcosh() };
        let q = g.random_range(1..=5);
        let z = gaussian_sample(&mut g, q);

        let m = gaussian_cloud(&mut g, 16, q + 1, 1.0);
        let mut s = 0.0;
        for t in m.atoms() {
            s += flat_derivative(&m, z.view(), t, act, &ol)?;
        }
        joint = joint.max((s / m.len() as f64).abs());

        let w = gaussian_cloud(&mut g, 16, q, 1.0);
        let a = gaussian_cloud(&mut g, 16, 1, 1.0);
        let mut s = 0.0;
        for t in a.atoms() {
            s += flat_derivative_sp(&w, &a, z.view(), t[0], act, &ol)?;
        }
        product = product.max((s / a.len() as f64).abs());
    }
    Ok((joint, product))
}

/// Noise injected by the toy's Langevin loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyNoise {
    /// `(σ/β)√η`, whose stationary law is the Gibbs measure.
    Gibbs,
    /// `σ√η`: a deliberately wrong temperature.
    Unscaled,
}

/// Two-parameter MFLD run (`q = 1`, tanh) whose particle histogram is
/// compared against the self-consistent Gibbs density on a lattice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GibbsToy {
    pub particles: usize,
    pub bins: usize,
    pub steps: usize,
    pub step_size: f64,
    pub beta: f64,
    pub data_size: usize,
}

impl GibbsToy {
    pub fn fast() -> Self {
        Self {
            particles: 3000,
            bins: 8,
            steps: 1500,
            step_size: 0.01,
            beta: 2.0,
            data_size: 16,
        }
    }

    pub fn full() -> Self {
        Self {
            particles: 10_000,
            bins: 12,
            steps: 2000,
            ..Self::fast()
        }
    }

    fn prior() -> GibbsPrior {
        GibbsPrior::new(Potential::Poly10, 1.0, 2).expect("valid prior")
    }

    fn objective(&self) -> Result<Objective> {
        Objective::new(Activation::Tanh, OuterLoss::quadratic(), Self::prior(), self.beta)
    }

    /// Inputs `x ∼ N(0, 1)`, labels `0.8 tanh(1.5 x)`.
    pub fn data(&self, seed: u64) -> Result<DataSet> {
        let mut g = rng::stream(seed, &[purpose::DATA_TARGET]);
        let samples: Vec<Sample> = (0..self.data_size)
            .map(|_| {
                let x: f64 = g.sample(StandardNormal);
                Sample::new(vec![x], 0.8 * (1.5 * x).tanh())
            })
            .collect();
        DataSet::from_samples(&samples)
    }

    /// Data on which every unit outputs zero, so the risk vanishes and the
    /// Gibbs measure is the prior itself.
    pub fn null_data() -> DataSet {
        DataSet::from_samples(&[Sample::new(vec![0.0], 0.0)]).expect("one sample")
    }

    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            scenario: Scenario::Supervised,
            alpha: None,
            beta: Some(self.beta),
            beta_s: None,
            beta_t: None,
            sigma: 1.0,
            particles: self.particles,
            steps: self.steps,
            stage2_steps: None,
            step_size: self.step_size,
            batch: Batch::Full,
            seed,
        }
    }

    /// Runs the dynamics on `data` and returns the total-variation residual.
    pub fn residual(&self, data: &DataSet, noise: ToyNoise, seed: u64) -> Result<f64> {
        let obj = self.objective()?;
        let cloud = match noise {
            ToyNoise::Gibbs => {
                let m = train_supervised(data, &self.config(seed), obj.act, obj.ol, &obj.prior)?;
                m.joint_cloud().expect("joint model").clone()
            }
            ToyNoise::Unscaled => {
                let mut c = obj.prior.sample(self.particles, &mut rng::stream(seed, &[purpose::INIT]))?;
                let noise = obj.prior.sigma * self.step_size.sqrt();
                for k in 0..self.steps {
                    c = langevin_step_with_noise(&c, data, &obj, self.step_size, noise, seed, k)?;
                }
                c
            }
        };
        let lattice = Lattice::covering(&cloud, self.bins, 1e-9)?;
        Ok(gibbs_residual(&cloud, data, &obj, &lattice)?.tv)
    }
}

pub const GIBBS_TV_MAX: f64 = 0.15;
pub const PRIOR_TV_MAX: f64 = 0.10;
pub const IDENTITY_TOL: f64 = 1e-10;
pub const AUDIT_TOL: f64 = 1e-12;

fn resampling_learner(scenario: Scenario, suite: Suite) -> Result<Learner> {
    let (particles, steps) = match suite {
        Suite::Fast => (64, 200),
        Suite::Full => (128, 500),
    };
    let cfg = TrainConfig {
        scenario,
        alpha: (scenario == Scenario::AlphaErm).then_some(0.5),
        beta: Some(10.0),
        beta_s: None,
        beta_t: None,
        sigma: 1.0,
        particles,
        steps,
        stage2_steps: None,
        step_size: 0.05,
        batch: Batch::Full,
        seed: 0,
    };
    let prior = GibbsPrior::new(Potential::Poly10, 1.0, default_task().input_dim + 1)?;
    Learner::new(cfg, Activation::Sigmoid, OuterLoss::quadratic(), prior)
}

/// One report of each kind, built from the default task's moments and the
/// poly10 complexities.
pub fn sample_bound_reports(task: &TaskPair, seed: u64) -> Result<Vec<BoundReport>> {
    let d = task.spec.input_dim + 1;
    let (target, source) = task.moments(seed);
    let constants = constants_extract(Activation::Sigmoid, &OuterLoss::quadratic())?;
    let comp = comp_alpha(&TiltedPrior::new(GibbsPrior::new(Potential::Poly10, 1.0, d)?)?)?;
    let comp_ft = comp_finetune_separable(&GibbsPrior::new(Potential::Poly10Separable, 1.0, d)?)?.value;
    Ok(vec![
        bound_rhs_wtge_alpha(&WtgeAlpha {
            constants,
            comp,
            target,
            source,
            alpha: 0.5,
            beta: 10.0,
            sigma: 1.0,
            n_t: 64,
            n_s: 64,
        })?,
        bound_rhs_wtge_finetune(&WtgeFinetune {
            constants,
            comp: comp_ft,
            target,
            source,
            beta_t: 10.0,
            sigma: 1.0,
            n_t: 64,
            n_s: 256,
        })?,
        bound_rhs_wter(&WterInputs::AlphaErm(WterAlpha {
            c_t: 1.0,
            c_s: 1.0,
            c_d: 1.0,
            alpha: 0.5,
            beta: 10.0,
            sigma: 1.0,
            n_t: 64,
            n_s: 64,
            kl: 3.0,
            similarity: Similarity::Identical,
        }))?,
        bound_rhs_wter(&WterInputs::Finetune(WterFinetune {
            c_t: 1.0,
            c_s: 1.0,
            c_d: 1.0,
            beta_t: 8.0,
            beta_s: 16.0,
            sigma: 1.0,
            n_t: 64,
            n_s: 256,
            kl_target: 1.0,
            kl_source: 2.0,
            similarity: Similarity::Identical,
        }))?,
    ])
}

fn bitwise_equal(a: &TrainedModel, b: &TrainedModel) -> bool {
    match (a.joint_cloud(), b.joint_cloud()) {
        (Some(x), Some(y)) => {
            x.as_slice().iter().zip(y.as_slice()).all(|(u, v)| u.to_bits() == v.to_bits())
                && x.len() == y.len()
                && a.trace.iter().zip(&b.trace).all(|(r, s)| r.train_risk.to_bits() == s.train_risk.to_bits())
        }
        _ => false,
    }
}

/// Runs every battery. Fails only on infrastructure errors; a violated
/// invariant is a failing [`Check`], not an `Err`.
pub fn run_verify(suite: Suite, seed: u64) -> Result<VerifyReport> {
    let fast = suite == Suite::Fast;
    let mut checks = Vec::new();
    let mut push = |module: &str, invariant: String, observed: f64, required: String, passed: bool, t0: Instant| {
        checks.push(Check {
            module: module.into(),
            invariant,
            observed,
            required,
            passed,
            seconds: t0.elapsed().as_secs_f64(),
        })
    };

    let t0 = Instant::now();
    let err = flat_derivative_identity(200, seed)?;
    push("mfnet", "flat-derivative integral identity".into(), err, format!("<= {IDENTITY_TOL:e}"), err <= IDENTITY_TOL, t0);

    let t0 = Instant::now();
    let (joint, product) = normalization_residuals(10_000, seed)?;
    push("mfnet", "normalization, joint".into(), joint, format!("<= {IDENTITY_TOL:e}"), joint <= IDENTITY_TOL, t0);
    push("mfnet", "normalization, outer-weight".into(), product, format!("<= {IDENTITY_TOL:e}"), product <= IDENTITY_TOL, t0);

    let draws = if fast { 100_000 } else { 1_000_000 };
    for act in Activation::ALL {
        for ol in [OuterLoss::quadratic(), OuterLoss::logcosh()] {
            let t0 = Instant::now();
            let r = assumption_battery(act, &ol, draws, seed)?;
            let pointwise: usize = r.checks.iter().filter(|c| c.inequality.is_pointwise()).map(|c| c.violations).sum();
            let all = r.violations();
            push(
                "analysis",
                format!("growth battery {:?}/{:?}, {draws} draws", act, ol.kind).to_lowercase(),
                all as f64,
                "0 violations".into(),
                all == 0 && pointwise == 0,
                t0,
            );
        }
    }

    let toy = if fast { GibbsToy::fast() } else { GibbsToy::full() };
    let data = toy.data(seed)?;
    let t0 = Instant::now();
    let tv = toy.residual(&data, ToyNoise::Gibbs, seed)?;
    push("objective", "gibbs fixed point, trained cloud TV".into(), tv, format!("<= {GIBBS_TV_MAX}"), tv <= GIBBS_TV_MAX, t0);
    let t0 = Instant::now();
    let tv = toy.residual(&GibbsToy::null_data(), ToyNoise::Gibbs, seed)?;
    push("objective", "gibbs fixed point, prior recovery TV".into(), tv, format!("<= {PRIOR_TV_MAX}"), tv <= PRIOR_TV_MAX, t0);
    let t0 = Instant::now();
    let tv = toy.residual(&data, ToyNoise::Unscaled, seed)?;
    push("objective", "gibbs check rejects noise sigma*sqrt(eta)".into(), tv, format!("> {GIBBS_TV_MAX}"), tv > GIBBS_TV_MAX, t0);

    let task = gen_task(&default_task(), seed)?;
    let replicates = if fast { 50 } else { 200 };
    for (scenario, n_s) in [(Scenario::Supervised, 0), (Scenario::AlphaErm, 8)] {
        let t0 = Instant::now();
        let learner = resampling_learner(scenario, suite)?;
        let c = resampling_identity_check(&task, &learner, 8, n_s, replicates, seed)?;
        let gap = (c.lhs.mean - c.rhs.mean).abs();
        push(
            "analysis",
            format!("resampling identity, {scenario}, {replicates} replicates"),
            gap,
            format!("<= 3 SE = {:.3e}", 3.0 * c.combined_std_error()),
            c.holds(3.0),
            t0,
        );
    }

    let t0 = Instant::now();
    for report in sample_bound_reports(&task, seed)? {
        let audit = report.audit()?;
        let parsed: BoundReport = serde_json::from_str(&report.to_json()?)?;
        let reparsed = parsed.audit()?.max((parsed.rhs_value - report.rhs_value).abs() / report.rhs_value.abs().max(f64::MIN_POSITIVE));
        let worst = audit.max(reparsed);
        push(
            "analysis",
            format!("bound self-audit, {:?}", report.kind).to_lowercase(),
            worst,
            format!("<= {AUDIT_TOL:e} relative"),
            worst <= AUDIT_TOL,
            t0,
        );
    }

    let t0 = Instant::now();
    let small = resampling_learner(Scenario::Supervised, Suite::Fast)?;
    let data_t = task.target_train(16, seed);
    let data_s = task.source_train(16, seed);
    let mut cfg = small.cfg.clone();
    cfg.steps = 50;
    let sup = train_supervised(&data_t, &cfg, small.act, small.ol, &small.prior)?;
    let mut acfg = cfg.clone();
    acfg.scenario = Scenario::AlphaErm;
    acfg.alpha = Some(1.0);
    let alpha1 = train_alpha_erm(&data_t, &data_s, &acfg, small.act, small.ol, &small.prior)?;
    push(
        "trainer",
        "alpha = 1 reproduces supervised bit for bit".into(),
        if bitwise_equal(&sup, &alpha1) { 0.0 } else { 1.0 },
        "identical".into(),
        bitwise_equal(&sup, &alpha1),
        t0,
    );

    let t0 = Instant::now();
    let cloud = sup.joint_cloud().expect("joint model");
    let finite = cloud.as_slice().iter().all(|v| v.is_finite());
    let mut buf = Vec::new();
    sup.save(&mut buf)?;
    let back = TrainedModel::load(&buf[..])?;
    let round_trip = back == sup;
    let risk_gap = (sup.risk(&data_t)? - sup.final_train_risk().unwrap_or(f64::NAN)).abs();
    push(
        "trainer",
        "trained cloud finite, reloads exactly, trace risk matches".into(),
        risk_gap,
        "<= 1e-12".into(),
        finite && round_trip && risk_gap <= 1e-12 && sup.trace.len() == cfg.steps + 1,
        t0,
    );

    Ok(VerifyReport { suite, seed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities_hold_at_machine_precision() {
        assert!(flat_derivative_identity(50, 3).unwrap() <= IDENTITY_TOL);
        let (j, p) = normalization_residuals(500, 3).unwrap();
        assert!(j <= IDENTITY_TOL && p <= IDENTITY_TOL);
    }

    #[test]
    fn sample_bounds_audit_cleanly() {
        let task = gen_task(&default_task(), 2).unwrap();
        let reports = sample_bound_reports(&task, 2).unwrap();
        assert_eq!(reports.len(), 4);
        for r in reports {
            assert!(r.audit().unwrap() <= AUDIT_TOL);
        }
    }
}
