//! Right-hand sides of the generalization and excess-risk bounds, itemized
//! so that every number can be traced and re-evaluated.

use serde::{Deserialize, Serialize};

use super::constants::Constants;
use crate::error::{argument, Error, Result};
use crate::harness::DataMoments;
use crate::trainer::Scenario;

/// A named input of a bound with a note on where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub name: String,
    pub value: f64,
    pub note: String,
}

fn item(name: &str, value: f64, note: impl Into<String>) -> Item {
    Item {
        name: name.to_string(),
        value,
        note: note.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    WtgeAlpha,
    WtgeFinetune,
    WterAlpha,
    WterFinetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub scenario: Scenario,
    pub formula: String,
    pub items: Vec<Item>,
    /// Additive terms of the excess-risk forms; empty for the gap bounds.
    pub terms: Vec<Item>,
    pub rhs_value: f64,
    /// False when a term is only a lower-bound estimate, so the sum is not a
    /// valid upper bound.
    pub certificate: bool,
}

impl BoundReport {
    pub fn get(&self, name: &str) -> Result<f64> {
        self.items
            .iter()
            .find(|i| i.name == name)
            .map(|i| i.value)
            .ok_or_else(|| argument(format!("bound report has no item `{name}`")))
    }

    /// Recomputes the right-hand side from the itemized inputs alone.
    pub fn reevaluate(&self) -> Result<f64> {
        let g = |n: &str| self.get(n);
        Ok(match self.kind {
            BoundKind::WtgeAlpha => wtge_alpha_formula(
                g("L_e")?,
                g("L_m")?,
                g("Comp")?,
                g("E(1+|Z_t|^2)^4")?,
                g("E(1+|Z_t|^2)^2")?,
                g("E(1+|Z_s|^2)^2")?,
                g("alpha")?,
                g("beta")?,
                g("sigma")?,
                g("n_t")?,
            ),
            BoundKind::WtgeFinetune => wtge_finetune_formula(
                g("L_e")?,
                g("L_m")?,
                g("Comp_FT")?,
                g("E(1+|Z_t|^2)^4")?,
                g("E(1+|Z_s|^2)^2")?,
                g("beta_t")?,
                g("sigma")?,
                g("n_t")?,
            ),
            BoundKind::WterAlpha => wter_alpha_terms(&WterAlpha {
                c_t: g("C_t")?,
                c_s: g("C_s")?,
                c_d: g("C_d")?,
                alpha: g("alpha")?,
                beta: g("beta")?,
                sigma: g("sigma")?,
                n_t: g("n_t")? as usize,
                n_s: g("n_s")? as usize,
                kl: g("KL")?,
                similarity: Similarity::Identical,
            })
            .iter()
            .map(|t| t.1)
            .sum::<f64>()
                + self.similarity_term()?,
            BoundKind::WterFinetune => wter_finetune_terms(&WterFinetune {
                c_t: g("C_t")?,
                c_s: g("C_s")?,
                c_d: g("C_d")?,
                beta_t: g("beta_t")?,
                beta_s: g("beta_s")?,
                sigma: g("sigma")?,
                n_t: g("n_t")? as usize,
                n_s: g("n_s")? as usize,
                kl_target: g("KL_sp")?,
                kl_source: g("KL_joint")?,
                similarity: Similarity::Identical,
            })
            .iter()
            .map(|t| t.1)
            .sum::<f64>()
                + self.similarity_term()?,
        })
    }

    fn similarity_term(&self) -> Result<f64> {
        let d = self.get("d")?;
        Ok(match self.kind {
            BoundKind::WterAlpha => (1.0 - self.get("alpha")?) * self.get("C_d")? * d,
            _ => self.get("C_d")? * d,
        })
    }

    /// Relative difference between `rhs_value` and [`Self::reevaluate`].
    pub fn audit(&self) -> Result<f64> {
        let again = self.reevaluate()?;
        let scale = self.rhs_value.abs().max(f64::MIN_POSITIVE);
        Ok(if again == self.rhs_value {
            0.0
        } else {
            (again - self.rhs_value).abs() / scale
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[allow(clippy::too_many_arguments)]
fn wtge_alpha_formula(
    l_e: f64,
    l_m: f64,
    comp: f64,
    m4_t: f64,
    m2_t: f64,
    m2_s: f64,
    alpha: f64,
    beta: f64,
    sigma: f64,
    n_t: f64,
) -> f64 {
    let c_t = std::f64::consts::SQRT_2 * l_e * l_e * (1.0 + alpha * l_m).powi(2) * (1.0 + 2.0 / n_t).powi(2);
    let bracket = 2.0 * (2.0 + alpha).powi(2) * m4_t + 2.0 * (1.0 - alpha).powi(2) * m2_t * m2_s;
    c_t * (2.0 * beta * beta / (sigma * sigma)) * comp * bracket * (alpha / n_t)
}

#[allow(clippy::too_many_arguments)]
fn wtge_finetune_formula(
    l_e: f64,
    l_m: f64,
    comp: f64,
    m4_t: f64,
    m2_s: f64,
    beta_t: f64,
    sigma: f64,
    n_t: f64,
) -> f64 {
    (2.0 / n_t)
        * (1.0 + 2.0 / n_t).powi(2)
        * (16.0 * beta_t * beta_t / (sigma * sigma))
        * l_e
        * l_e
        * (1.0 + l_m).powi(2)
        * comp
        * m2_s
        * m4_t
}

fn check_moments(m: &DataMoments, which: &str) -> Result<()> {
    if m.samples == 0 || !(m.m2 >= 1.0 && m.m4 >= 1.0) || !m.m2.is_finite() || !m.m4.is_finite() {
        return Err(argument(format!("missing or invalid {which} data moments: {m:?}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(argument(format!("{name} must be positive and finite, got {v}")))
    }
}

fn constant_items(c: &Constants) -> Vec<Item> {
    let fam = format!("{:?} loss, {:?} activation", c.loss, c.act);
    vec![
        item("L_l", c.l_loss, format!("loss growth constant ({fam})")),
        item("L_l1", c.l_loss1, "loss slope constant"),
        item("L_l2", c.l_loss2, "loss curvature constant"),
        item("L_phi", c.l_phi, "activation linear-growth constant"),
        item("L_m", c.l_m, "4 L_l L_phi^2, from g(m) = L_m E[1 + |theta|^4]"),
        item("L_e", c.l_e, "24 L_l1 L_phi (1 + L_phi), from g_e(m, theta)"),
    ]
}

fn moment_items(t: &DataMoments, s: &DataMoments) -> Vec<Item> {
    vec![
        item("E(1+|Z_t|^2)^4", t.m4, format!("target Monte Carlo, {} samples", t.samples)),
        item("E(1+|Z_t|^2)^2", t.m2, format!("target Monte Carlo, {} samples", t.samples)),
        item("E(1+|Z_s|^2)^2", s.m2, format!("source Monte Carlo, {} samples", s.samples)),
    ]
}

/// Inputs of the α-ERM gap bound. Supervised learning is `α = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WtgeAlpha {
    pub constants: Constants,
    /// `(1 + 2 M₈ + 2 M₄)²` of the tilted prior.
    pub comp: f64,
    pub target: DataMoments,
    pub source: DataMoments,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub n_t: usize,
    pub n_s: usize,
}

/// `√2 L_e²(1+αL_m)²(1+2/n_t)² (2β²/σ²) Comp [2(2+α)² E(1+‖Z_t‖²)⁴ +
/// 2(1−α)² E(1+‖Z_t‖²)² E(1+‖Z_s‖²)²] α/n_t`
pub fn bound_rhs_wtge_alpha(p: &WtgeAlpha) -> Result<BoundReport> {
    check_moments(&p.target, "target")?;
    check_moments(&p.source, "source")?;
    if !(0.0..=1.0).contains(&p.alpha) {
        return Err(argument(format!("alpha must lie in [0, 1], got {}", p.alpha)));
    }
    check_positive("beta", p.beta)?;
    check_positive("sigma", p.sigma)?;
    check_positive("comp", p.comp)?;
    if p.n_t == 0 {
        return Err(argument("n_t must be positive"));
    }
    let c = &p.constants;
    let n_t = p.n_t as f64;
    let rhs = wtge_alpha_formula(
        c.l_e,
        c.l_m,
        p.comp,
        p.target.m4,
        p.target.m2,
        p.source.m2,
        p.alpha,
        p.beta,
        p.sigma,
        n_t,
    );
    let mut items = constant_items(c);
    items.push(item("Comp", p.comp, "(1 + 2 M8 + 2 M4)^2 of the tilted prior, radial quadrature"));
    items.extend(moment_items(&p.target, &p.source));
    items.extend([
        item("alpha", p.alpha, "target weight"),
        item("beta", p.beta, "inverse temperature"),
        item("sigma", p.sigma, "prior scale"),
        item("n_t", n_t, "target sample size"),
        item("n_s", p.n_s as f64, "source sample size (does not enter this bound)"),
        item(
            "c_t",
            std::f64::consts::SQRT_2 * c.l_e * c.l_e * (1.0 + p.alpha * c.l_m).powi(2) * (1.0 + 2.0 / n_t).powi(2),
            "sqrt(2) L_e^2 (1 + alpha L_m)^2 (1 + 2/n_t)^2, derived",
        ),
    ]);
    Ok(BoundReport {
        kind: BoundKind::WtgeAlpha,
        scenario: if p.alpha == 1.0 {
            Scenario::Supervised
        } else {
            Scenario::AlphaErm
        },
        formula: "sqrt(2) L_e^2 (1+alpha L_m)^2 (1+2/n_t)^2 (2 beta^2/sigma^2) Comp \
                  [2(2+alpha)^2 E(1+|Z_t|^2)^4 + 2(1-alpha)^2 E(1+|Z_t|^2)^2 E(1+|Z_s|^2)^2] alpha/n_t"
            .into(),
        items,
        terms: Vec::new(),
        rhs_value: rhs,
        certificate: true,
    })
}

/// Inputs of the fine-tuning gap bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WtgeFinetune {
    pub constants: Constants,
    /// `Comp(θ_c, θ_sp^t, θ_sp^s)`
    pub comp: f64,
    pub target: DataMoments,
    pub source: DataMoments,
    pub beta_t: f64,
    pub sigma: f64,
    pub n_t: usize,
    pub n_s: usize,
}

/// `(2/n_t)(1+2/n_t)² (16β_t²/σ²) L_e²(1+L_m)² Comp_FT E(1+‖Z_s‖²)² E(1+‖Z_t‖²)⁴`
pub fn bound_rhs_wtge_finetune(p: &WtgeFinetune) -> Result<BoundReport> {
    check_moments(&p.target, "target")?;
    check_moments(&p.source, "source")?;
    check_positive("beta_t", p.beta_t)?;
    check_positive("sigma", p.sigma)?;
    if !(p.comp.is_finite() && p.comp >= 0.0) {
        return Err(argument(format!("Comp_FT must be nonnegative, got {}", p.comp)));
    }
    if p.n_t == 0 {
        return Err(argument("n_t must be positive"));
    }
    let c = &p.constants;
    let n_t = p.n_t as f64;
    let rhs = wtge_finetune_formula(c.l_e, c.l_m, p.comp, p.target.m4, p.source.m2, p.beta_t, p.sigma, n_t);
    let mut items = constant_items(c);
    items.push(item("Comp_FT", p.comp, "fine-tuning complexity from tilted block priors"));
    items.extend(moment_items(&p.target, &p.source));
    items.extend([
        item("beta_t", p.beta_t, "stage-2 inverse temperature"),
        item("sigma", p.sigma, "prior scale"),
        item("n_t", n_t, "target sample size"),
        item("n_s", p.n_s as f64, "source sample size (does not enter this bound)"),
    ]);
    Ok(BoundReport {
        kind: BoundKind::WtgeFinetune,
        scenario: Scenario::Finetune,
        formula: "(2/n_t)(1+2/n_t)^2 (16 beta_t^2/sigma^2) L_e^2 (1+L_m)^2 Comp_FT E(1+|Z_s|^2)^2 E(1+|Z_t|^2)^4".into(),
        items,
        terms: Vec::new(),
        rhs_value: rhs,
        certificate: true,
    })
}

/// Source of the task-similarity term of the excess-risk forms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// Source and target laws coincide; the term is zero.
    Identical,
    /// A dictionary estimate of the IPM. It is a lower bound, so the report
    /// stops being a certificate.
    Dictionary(f64),
}

impl Similarity {
    fn value(self) -> f64 {
        match self {
            Similarity::Identical => 0.0,
            Similarity::Dictionary(d) => d,
        }
    }

    fn note(self) -> &'static str {
        match self {
            Similarity::Identical => "identical source and target laws",
            Similarity::Dictionary(_) => "dictionary IPM estimate, a LOWER bound: report is NOT A CERTIFICATE",
        }
    }
}

/// Excess-risk form for α-ERM when a zero-risk measure `m̄` exists.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WterAlpha {
    pub c_t: f64,
    pub c_s: f64,
    pub c_d: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub n_t: usize,
    pub n_s: usize,
    /// `KL(m̄ ‖ γ^σ)`
    pub kl: f64,
    pub similarity: Similarity,
}

/// Excess-risk form for fine-tuning under zero-risk measures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WterFinetune {
    pub c_t: f64,
    pub c_s: f64,
    pub c_d: f64,
    pub beta_t: f64,
    pub beta_s: f64,
    pub sigma: f64,
    pub n_t: usize,
    pub n_s: usize,
    /// `KL(m̃_sp^t ‖ γ̃_sp^σ)`
    pub kl_target: f64,
    /// `KL(m̄_c^s ⊗ m̄_sp^s ‖ γ_c^σ ⊗ γ_sp^σ)`
    pub kl_source: f64,
    pub similarity: Similarity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WterInputs {
    AlphaErm(WterAlpha),
    Finetune(WterFinetune),
}

fn wter_alpha_terms(p: &WterAlpha) -> [(&'static str, f64); 3] {
    let s2 = p.sigma * p.sigma;
    let b2 = p.beta * p.beta;
    let source = if p.alpha == 1.0 {
        0.0
    } else {
        p.c_s * (1.0 - p.alpha) / p.n_s as f64 * 8.0 * b2 / s2
    };
    [
        ("target rate", p.c_t * p.alpha / p.n_t as f64 * 8.0 * b2 / s2),
        ("source rate", source),
        ("regularization", s2 / (2.0 * b2) * p.kl),
    ]
}

fn wter_finetune_terms(p: &WterFinetune) -> [(&'static str, f64); 4] {
    let s2 = p.sigma * p.sigma;
    [
        ("target rate", p.c_t / p.n_t as f64 * p.beta_t * p.beta_t / s2),
        ("target regularization", s2 / (2.0 * p.beta_t * p.beta_t) * p.kl_target),
        ("source rate", p.c_s / p.n_s as f64 * p.beta_s * p.beta_s / s2),
        ("source regularization", s2 / (2.0 * p.beta_s * p.beta_s) * p.kl_source),
    ]
}

fn check_kl(name: &str, kl: f64) -> Result<()> {
    if kl.is_finite() {
        Ok(())
    } else {
        Err(Error::NotNormalizable(format!("{name} is not finite ({kl}): the reference measure is not absolutely continuous")))
    }
}

/// Evaluates the simplified excess-risk form term by term.
pub fn bound_rhs_wter(inputs: &WterInputs) -> Result<BoundReport> {
    let (kind, scenario, formula, mut items, terms, sim) = match inputs {
        WterInputs::AlphaErm(p) => {
            check_kl("KL", p.kl)?;
            check_positive("beta", p.beta)?;
            check_positive("sigma", p.sigma)?;
            if p.n_t == 0 || (p.alpha < 1.0 && p.n_s == 0) {
                return Err(argument("sample sizes must be positive"));
            }
            let items = vec![
                item("C_t", p.c_t, "target rate coefficient (supplied)"),
                item("C_s", p.c_s, "source rate coefficient (supplied)"),
                item("C_d", p.c_d, "similarity coefficient (supplied)"),
                item("alpha", p.alpha, "target weight"),
                item("beta", p.beta, "inverse temperature"),
                item("sigma", p.sigma, "prior scale"),
                item("n_t", p.n_t as f64, "target sample size"),
                item("n_s", p.n_s as f64, "source sample size"),
                item("KL", p.kl, "KL(m_bar || gamma^sigma) of the zero-risk measure, Monte Carlo"),
            ];
            let mut terms: Vec<Item> = wter_alpha_terms(p).iter().map(|&(n, v)| item(n, v, "")).collect();
            terms[0].note = "C_t alpha/n_t 8 beta^2/sigma^2".into();
            terms[1].note = "C_s (1-alpha)/n_s 8 beta^2/sigma^2".into();
            terms[2].note = "sigma^2/(2 beta^2) KL".into();
            terms.push(item("similarity", (1.0 - p.alpha) * p.c_d * p.similarity.value(), "(1-alpha) C_d d"));
            (
                BoundKind::WterAlpha,
                if p.alpha == 1.0 {
                    Scenario::Supervised
                } else {
                    Scenario::AlphaErm
                },
                "C_t alpha/n_t 8beta^2/sigma^2 + C_s (1-alpha)/n_s 8beta^2/sigma^2 + (1-alpha) C_d d + sigma^2/(2beta^2) KL",
                items,
                terms,
                p.similarity,
            )
        }
        WterInputs::Finetune(p) => {
            check_kl("KL_sp", p.kl_target)?;
            check_kl("KL_joint", p.kl_source)?;
            check_positive("beta_t", p.beta_t)?;
            check_positive("beta_s", p.beta_s)?;
            check_positive("sigma", p.sigma)?;
            if p.n_t == 0 || p.n_s == 0 {
                return Err(argument("sample sizes must be positive"));
            }
            let items = vec![
                item("C_t", p.c_t, "target rate coefficient (supplied)"),
                item("C_s", p.c_s, "source rate coefficient (supplied)"),
                item("C_d", p.c_d, "similarity coefficient (supplied)"),
                item("beta_t", p.beta_t, "stage-2 inverse temperature"),
                item("beta_s", p.beta_s, "stage-1 inverse temperature"),
                item("sigma", p.sigma, "prior scale"),
                item("n_t", p.n_t as f64, "target sample size"),
                item("n_s", p.n_s as f64, "source sample size"),
                item("KL_sp", p.kl_target, "KL of the zero-risk outer-weight measure, Monte Carlo"),
                item("KL_joint", p.kl_source, "KL of the zero-risk source product measure, Monte Carlo"),
            ];
            let mut terms: Vec<Item> = wter_finetune_terms(p).iter().map(|&(n, v)| item(n, v, "")).collect();
            terms[0].note = "C_t/n_t beta_t^2/sigma^2".into();
            terms[1].note = "sigma^2/(2 beta_t^2) KL_sp".into();
            terms[2].note = "C_s/n_s beta_s^2/sigma^2".into();
            terms[3].note = "sigma^2/(2 beta_s^2) KL_joint".into();
            terms.push(item("similarity", p.c_d * p.similarity.value(), "C_d d"));
            (
                BoundKind::WterFinetune,
                Scenario::Finetune,
                "C_t/n_t beta_t^2/sigma^2 + sigma^2/(2beta_t^2) KL_sp + C_s/n_s beta_s^2/sigma^2 \
                 + sigma^2/(2beta_s^2) KL_joint + C_d d",
                items,
                terms,
                p.similarity,
            )
        }
    };
    items.push(item("d", sim.value(), sim.note()));
    let rhs = terms.iter().map(|t| t.value).sum();
    Ok(BoundReport {
        kind,
        scenario,
        formula: formula.into(),
        items,
        terms,
        rhs_value: rhs,
        certificate: matches!(sim, Similarity::Identical),
    })
}
