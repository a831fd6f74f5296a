use meanfield_transfer::analysis::*;
use meanfield_transfer::harness::DataMoments;
use meanfield_transfer::mfnet::{Activation, OuterLoss};
use meanfield_transfer::trainer::Scenario;

fn moments(m2: f64, m4: f64) -> DataMoments {
    DataMoments { m2, m4, samples: 100 }
}

fn alpha_inputs(alpha: f64, n_t: usize) -> WtgeAlpha {
    WtgeAlpha {
        constants: constants_extract(Activation::Sigmoid, &OuterLoss::quadratic()).unwrap(),
        comp: 3.0,
        target: moments(5.0, 70.0),
        source: moments(6.0, 90.0),
        alpha,
        beta: 2.0,
        sigma: 0.5,
        n_t,
        n_s: 10,
    }
}

#[test]
fn alpha_bound_matches_hand_evaluation() {
    let r = bound_rhs_wtge_alpha(&alpha_inputs(0.25, 4)).unwrap();
    // √2·96²·(1+0.25·8)²·(1+2/4)² = √2·9216·9·2.25
    let c_t = 2f64.sqrt() * 9216.0 * 9.0 * 2.25;
    // 2β²/σ² = 2·4/0.25 = 32; bracket = 2·2.25²·70 + 2·0.75²·5·6
    let bracket = 2.0 * 5.0625 * 70.0 + 2.0 * 0.5625 * 30.0;
    let hand = c_t * 32.0 * 3.0 * bracket * (0.25 / 4.0);
    assert!((r.rhs_value / hand - 1.0).abs() < 1e-13, "{} vs {hand}", r.rhs_value);
    assert!((r.get("c_t").unwrap() / c_t - 1.0).abs() < 1e-14);
    assert_eq!(r.scenario, Scenario::AlphaErm);
    assert!(r.certificate);
}

#[test]
fn alpha_bound_vanishes_at_alpha_zero_and_decreases_in_n_t() {
    assert_eq!(bound_rhs_wtge_alpha(&alpha_inputs(0.0, 8)).unwrap().rhs_value, 0.0);
    let mut prev = f64::INFINITY;
    for n in [8, 16, 32, 64, 128, 256, 512] {
        let v = bound_rhs_wtge_alpha(&alpha_inputs(0.5, n)).unwrap().rhs_value;
        assert!(v < prev);
        prev = v;
    }
    let sup = bound_rhs_wtge_alpha(&alpha_inputs(1.0, 8)).unwrap();
    assert_eq!(sup.scenario, Scenario::Supervised);
}

#[test]
fn alpha_bound_rejects_missing_moments() {
    let mut p = alpha_inputs(0.5, 8);
    p.source = DataMoments {
        m2: 0.0,
        m4: 0.0,
        samples: 0,
    };
    assert!(bound_rhs_wtge_alpha(&p).is_err());
}

fn finetune_inputs(comp: f64, n_t: usize) -> WtgeFinetune {
    WtgeFinetune {
        constants: constants_extract(Activation::Tanh, &OuterLoss::logcosh()).unwrap(),
        comp,
        target: moments(5.0, 70.0),
        source: moments(6.0, 90.0),
        beta_t: 3.0,
        sigma: 2.0,
        n_t,
        n_s: 100,
    }
}

#[test]
fn finetune_bound_matches_hand_evaluation() {
    let r = bound_rhs_wtge_finetune(&finetune_inputs(1.5, 2)).unwrap();
    // (2/2)(1+1)²·(16·9/4)·48²·(1+4)²·1.5·6·70
    let hand = 1.0 * 4.0 * 36.0 * 2304.0 * 25.0 * 1.5 * 6.0 * 70.0;
    assert!((r.rhs_value / hand - 1.0).abs() < 1e-13);
    assert_eq!(bound_rhs_wtge_finetune(&finetune_inputs(0.0, 2)).unwrap().rhs_value, 0.0);
    for n in [1, 2, 4, 8, 100] {
        let a = bound_rhs_wtge_finetune(&finetune_inputs(1.0, n)).unwrap().rhs_value;
        let b = bound_rhs_wtge_finetune(&finetune_inputs(1.0, 2 * n)).unwrap().rhs_value;
        assert!(b < a / 2.0);
    }
}

fn wter_alpha(beta: f64, kl: f64, similarity: Similarity) -> WterInputs {
    WterInputs::AlphaErm(WterAlpha {
        c_t: 2.0,
        c_s: 3.0,
        c_d: 5.0,
        alpha: 0.5,
        beta,
        sigma: 1.0,
        n_t: 10,
        n_s: 20,
        kl,
        similarity,
    })
}

#[test]
fn wter_alpha_matches_hand_evaluation() {
    let r = bound_rhs_wter(&wter_alpha(2.0, 0.8, Similarity::Dictionary(0.1))).unwrap();
    // 2·0.5/10·32 + 3·0.5/20·32 + 0.5·5·0.1 + 1/8·0.8
    let hand = 3.2 + 2.4 + 0.25 + 0.1;
    assert!((r.rhs_value - hand).abs() < 1e-13);
    assert!(!r.certificate);
    assert!(r.items.iter().any(|i| i.note.contains("NOT A CERTIFICATE")));
}

#[test]
fn wter_identical_tasks_and_prior_reference() {
    let r = bound_rhs_wter(&wter_alpha(2.0, 0.0, Similarity::Identical)).unwrap();
    assert!(r.certificate);
    let sim = r.terms.iter().find(|t| t.name == "similarity").unwrap();
    let reg = r.terms.iter().find(|t| t.name == "regularization").unwrap();
    assert_eq!((sim.value, reg.value), (0.0, 0.0));
    assert!((r.rhs_value - 5.6).abs() < 1e-13);
}

#[test]
fn wter_beta_doubling_scales_terms() {
    let a = bound_rhs_wter(&wter_alpha(1.5, 0.7, Similarity::Identical)).unwrap();
    let b = bound_rhs_wter(&wter_alpha(3.0, 0.7, Similarity::Identical)).unwrap();
    for (ta, tb) in a.terms.iter().zip(&b.terms) {
        let ratio = tb.value / ta.value;
        match ta.name.as_str() {
            "target rate" | "source rate" => assert!((ratio - 4.0).abs() < 1e-13),
            "regularization" => assert!((ratio - 0.25).abs() < 1e-13),
            _ => {}
        }
    }
}

#[test]
fn wter_finetune_matches_hand_evaluation() {
    let r = bound_rhs_wter(&WterInputs::Finetune(WterFinetune {
        c_t: 1.0,
        c_s: 2.0,
        c_d: 4.0,
        beta_t: 2.0,
        beta_s: 4.0,
        sigma: 1.0,
        n_t: 8,
        n_s: 32,
        kl_target: 0.4,
        kl_source: 1.6,
        similarity: Similarity::Dictionary(0.05),
    }))
    .unwrap();
    // 4/8 + 0.4/8 + 2·16/32 + 1.6/32 + 0.2
    let hand = 0.5 + 0.05 + 1.0 + 0.05 + 0.2;
    assert!((r.rhs_value - hand).abs() < 1e-13);
}

#[test]
fn infinite_kl_is_an_error() {
    assert!(bound_rhs_wter(&wter_alpha(2.0, f64::INFINITY, Similarity::Identical)).is_err());
}

#[test]
fn every_report_self_audits_through_json() {
    let reports = [
        bound_rhs_wtge_alpha(&alpha_inputs(0.3, 17)).unwrap(),
        bound_rhs_wtge_finetune(&finetune_inputs(2.5, 13)).unwrap(),
        bound_rhs_wter(&wter_alpha(1.7, 0.3, Similarity::Dictionary(0.2))).unwrap(),
        bound_rhs_wter(&WterInputs::Finetune(WterFinetune {
            c_t: 1.1,
            c_s: 2.3,
            c_d: 0.7,
            beta_t: 1.3,
            beta_s: 2.9,
            sigma: 0.7,
            n_t: 9,
            n_s: 31,
            kl_target: 0.45,
            kl_source: 1.25,
            similarity: Similarity::Identical,
        }))
        .unwrap(),
    ];
    for r in reports {
        assert!(r.audit().unwrap() <= 1e-12);
        let back: BoundReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert!(back.audit().unwrap() <= 1e-12);
        assert_eq!(back.rhs_value, r.rhs_value);
    }
}

#[test]
fn tampered_reports_fail_the_audit() {
    let mut r = bound_rhs_wtge_alpha(&alpha_inputs(0.3, 17)).unwrap();
    r.items.iter_mut().find(|i| i.name == "Comp").unwrap().value *= 1.01;
    assert!(r.audit().unwrap() > 1e-3);
}
