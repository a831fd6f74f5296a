//! Full-size acceptance checks. Each test writes one PASS/FAIL line straight
//! to stdout, so the lines show up even when test output is captured.
//!
//! cargo test -p meanfield-transfer --test acceptance --release

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use meanfield_transfer::analysis::{
    assumption_battery, resampling_identity_check, wtge_estimate, Design, GapEstimator, Learner,
};
use meanfield_transfer::harness::*;
use meanfield_transfer::mfnet::{Activation, OuterLoss};
use meanfield_transfer::priors::{GibbsPrior, Potential};
use meanfield_transfer::trainer::{train_alpha_erm, train_supervised, Batch, Scenario, TrainConfig, TrainedModel};

const SEED: u64 = 0;

fn report(criterion: u32, passed: bool, detail: String, t0: Instant) {
    let line = format!(
        "{} criterion {criterion}: {detail} ({:.1}s)\n",
        if passed { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(passed, "criterion {criterion}: {detail}");
}

#[test]
fn c1_flat_derivative_identity() {
    let t0 = Instant::now();
    let err = flat_derivative_identity(200, SEED).unwrap();
    report(1, err <= 1e-10, format!("flat-derivative identity, 200 instances, max error {err:.2e} <= 1e-10"), t0);
}

#[test]
fn c2_normalization() {
    let t0 = Instant::now();
    let (joint, product) = normalization_residuals(10_000, SEED).unwrap();
    report(
        2,
        joint <= 1e-10 && product <= 1e-10,
        format!("normalization, 10^4 instances, joint {joint:.2e}, outer-weight {product:.2e} <= 1e-10"),
        t0,
    );
}

#[test]
fn c3_growth_battery() {
    let t0 = Instant::now();
    let mut worst = Vec::new();
    for act in Activation::ALL {
        for ol in [OuterLoss::quadratic(), OuterLoss::logcosh()] {
            let r = assumption_battery(act, &ol, 1_000_000, SEED).unwrap();
            if r.violations() > 0 {
                worst.push(format!("{act:?}/{:?}: {}", ol.kind, r.violations()));
            }
        }
    }
    report(
        3,
        worst.is_empty(),
        format!("growth inequalities, 10^6 draws per pair, violations: {}", if worst.is_empty() { "none".into() } else { worst.join(", ") }),
        t0,
    );
}

#[test]
fn c4_gibbs_fixed_point() {
    let t0 = Instant::now();
    let toy = GibbsToy::full();
    let data = toy.data(SEED).unwrap();
    let tv = toy.residual(&data, ToyNoise::Gibbs, SEED).unwrap();
    let control = toy.residual(&GibbsToy::null_data(), ToyNoise::Gibbs, SEED).unwrap();
    report(
        4,
        tv <= GIBBS_TV_MAX && control <= PRIOR_TV_MAX,
        format!(
            "Gibbs fixed point, {} particles, TV {tv:.3} <= {GIBBS_TV_MAX}, prior control TV {control:.3} <= {PRIOR_TV_MAX}",
            toy.particles
        ),
        t0,
    );
}

fn learner(scenario: Scenario, alpha: Option<f64>, particles: usize, steps: usize) -> Learner {
    let cfg = TrainConfig {
        scenario,
        alpha,
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
    let prior = GibbsPrior::new(Potential::Poly10, 1.0, default_task().input_dim + 1).unwrap();
    Learner::new(cfg, Activation::Sigmoid, OuterLoss::quadratic(), prior).unwrap()
}

#[test]
fn c5_resampling_identity() {
    let t0 = Instant::now();
    let task = gen_task(&default_task(), SEED).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for (scenario, alpha, n_s) in [(Scenario::Supervised, None, 0), (Scenario::AlphaErm, Some(0.5), 8)] {
        let c = resampling_identity_check(&task, &learner(scenario, alpha, 128, 500), 8, n_s, 200, SEED).unwrap();
        ok &= c.holds(3.0);
        parts.push(format!(
            "{scenario} |{:.4} - {:.4}| <= 3 x {:.4}",
            c.lhs.mean,
            c.rhs.mean,
            c.combined_std_error()
        ));
    }
    report(5, ok, format!("resampling identity, n_t = 8, 200 replicates: {}", parts.join("; ")), t0);
}

/// The rate sweep on the default grid, shared by criteria 6 and 7.
fn rate_sweep() -> &'static (SweepReport, f64) {
    static SWEEP: OnceLock<(SweepReport, f64)> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let t0 = Instant::now();
        let cfg = ExperimentConfig::from_json(r#"{"replicates": 48}"#).unwrap();
        assert_eq!(cfg.n_t_grid, vec![32, 64, 128, 256]);
        assert_eq!(cfg.task.shift, 0.0);
        assert!(cfg.task.is_noiseless());
        let r = run_rate_sweep(&cfg).unwrap();
        (r, t0.elapsed().as_secs_f64())
    })
}

#[test]
fn c6_gap_rates() {
    let t0 = Instant::now();
    let (r, _) = rate_sweep();
    let alpha = r.cells_of("alpha_erm").next().unwrap();
    assert_eq!(alpha.plan.n_s, alpha.plan.n_t);
    assert_eq!(alpha.plan.alpha, Some(0.5));
    assert!(r.cells_of("finetune").all(|c| c.plan.n_s == 256));
    let mut ok = true;
    let mut parts = Vec::new();
    for label in ["supervised", "alpha_erm", "finetune"] {
        let f = r.fit(label).unwrap();
        match &f.fit {
            Some(fit) => {
                ok &= fit.slope_within(-1.0, 0.3);
                parts.push(format!("{label} vs {} {:+.2}", f.axis, fit.slope));
            }
            None => {
                ok = false;
                parts.push(format!("{label}: {}", f.error.as_deref().unwrap_or("no fit")));
            }
        }
    }
    report(6, ok, format!("gap slopes within -1 +/- 0.3: {}", parts.join(", ")), t0);
}

#[test]
fn c7_bounds_dominate() {
    let t0 = Instant::now();
    let (r, _) = rate_sweep();
    let bad: Vec<String> = r
        .cells
        .iter()
        .filter(|c| c.dominated != Some(true))
        .map(|c| format!("{} n_t={}", c.plan.label, c.plan.n_t))
        .collect();
    report(
        7,
        bad.is_empty() && r.cells.len() == 12,
        format!(
            "bound >= |gen| + 3 SE at all {} cells{}",
            r.cells.len(),
            if bad.is_empty() { String::new() } else { format!("; fails at {}", bad.join(", ")) }
        ),
        t0,
    );
}

fn identical(a: &TrainedModel, b: &TrainedModel) -> bool {
    let (ca, cb) = (a.joint_cloud().unwrap(), b.joint_cloud().unwrap());
    ca.as_slice().iter().zip(cb.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
        && ca.as_slice().len() == cb.as_slice().len()
        && a.trace.len() == b.trace.len()
        && a.trace.iter().zip(&b.trace).all(|(x, y)| x.train_risk.to_bits() == y.train_risk.to_bits())
}

#[test]
fn c8_alpha_extremes() {
    let t0 = Instant::now();
    let task = gen_task(&default_task(), SEED).unwrap();
    let sup = learner(Scenario::Supervised, None, 128, 500);
    let data_t = task.target_train(64, SEED);
    let data_s = task.source_train(64, SEED);
    let mut cfg = sup.cfg.clone();
    cfg.seed = 7;
    let a = train_supervised(&data_t, &cfg, sup.act, sup.ol, &sup.prior).unwrap();
    cfg.scenario = Scenario::AlphaErm;
    cfg.alpha = Some(1.0);
    let b = train_alpha_erm(&data_t, &data_s, &cfg, sup.act, sup.ol, &sup.prior).unwrap();
    let same = identical(&a, &b);

    let zero = learner(Scenario::AlphaErm, Some(0.0), 128, 500);
    let design = Design {
        n_t: 32,
        n_s: 32,
        replicates: 64,
        test_size: 20_000,
        seed: SEED,
    };
    let g = wtge_estimate(&task, &zero, &design, GapEstimator::Plain).unwrap().estimate;
    report(
        8,
        same && g.within(0.0, 3.0),
        format!(
            "alpha = 1 bitwise equal to supervised: {same}; alpha = 0 gap {:.2e} within 3 x {:.2e} of 0",
            g.mean, g.std_error
        ),
        t0,
    );
}

#[test]
fn c9_thread_count_invariance() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::from_json(
        r#"{"seed": 3, "particles": 32, "steps": 50, "n_t_grid": [8, 16, 32], "replicates": 6, "test_size": 10000}"#,
    )
    .unwrap();
    let csv = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let r = pool.install(|| run_rate_sweep(&cfg)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        buf
    };
    let one = csv(1);
    let two = csv(2);
    report(9, one == two, format!("sweep CSV identical with 1 and 2 threads ({} bytes)", one.len()), t0);
}
