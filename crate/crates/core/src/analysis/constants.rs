//! Growth constants of the one-hidden-layer network and a randomized check
//! of the inequalities they are supposed to certify.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{dot, norm_sq, ParticleCloud, SampleView};
use crate::mfnet::{self, Activation, LossKind, OuterLoss};
use crate::rng;

/// `{L_ℓ, L_{ℓ,1}, L_{ℓ,2}, L_φ, L_m, L_e}` for one `(activation, loss)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub act: Activation,
    pub loss: LossKind,
    pub l_loss: f64,
    pub l_loss1: f64,
    pub l_loss2: f64,
    pub l_phi: f64,
    /// `4 L_ℓ L_φ²`
    pub l_m: f64,
    /// `24 L_{ℓ,1} L_φ (1 + L_φ)`
    pub l_e: f64,
}

impl Constants {
    /// `g(m) = L_m E_m[1 + ‖θ‖⁴]`
    pub fn g(&self, m4: f64) -> f64 {
        self.l_m * (1.0 + m4)
    }

    /// `g_e(m, θ) = 6 L_{ℓ,1} L_φ (1 + L_φ)(4 + ‖θ‖⁴ + E_m‖θ‖⁴)`
    pub fn g_e(&self, m4: f64, theta4: f64) -> f64 {
        6.0 * self.l_loss1 * self.l_phi * (1.0 + self.l_phi) * (4.0 + theta4 + m4)
    }

    /// Product-model loss growth `24 L_ℓ L_φ² (1 + E a⁴ + E‖w‖⁴)`.
    pub fn g_product(&self, a4: f64, w4: f64) -> f64 {
        24.0 * self.l_loss * self.l_phi * self.l_phi * (1.0 + a4 + w4)
    }

    /// `g_sp = 64 L_{ℓ,1} L_φ (1 + L_φ)(1 + E‖w‖⁴ + E a⁴ + |a|⁴)`
    pub fn g_sp(&self, w4: f64, a4: f64, a: f64) -> f64 {
        64.0 * self.l_loss1 * self.l_phi * (1.0 + self.l_phi) * (1.0 + w4 + a4 + a.powi(4))
    }
}

/// Constants for `act` and `ol`. The loss must carry its family's constants.
pub fn constants_extract(act: Activation, ol: &OuterLoss) -> Result<Constants> {
    let family = OuterLoss::from_kind(ol.kind);
    if *ol != family {
        return Err(Error::Unsupported(format!(
            "loss {:?} with non-standard constants ({}, {}, {})",
            ol.kind, ol.l_loss, ol.l_loss1, ol.l_loss2
        )));
    }
    let l_phi = act.growth_constant();
    Ok(Constants {
        act,
        loss: ol.kind,
        l_loss: family.l_loss,
        l_loss1: family.l_loss1,
        l_loss2: family.l_loss2,
        l_phi,
        l_m: 4.0 * family.l_loss * l_phi * l_phi,
        l_e: 24.0 * family.l_loss1 * l_phi * (1.0 + l_phi),
    })
}

/// The inequalities checked by [`assumption_battery`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// `|ℓ_o(ŷ, y)| ≤ L_ℓ (1 + ŷ² + y²)`
    LossGrowth,
    /// `|∂ℓ_o| ≤ L_{ℓ,1} (1 + |ŷ| + |y|)`
    LossSlope,
    /// `|∂²ℓ_o| ≤ L_{ℓ,2}`
    LossCurvature,
    /// `|ϕ(w·x)| ≤ L_φ (1 + ‖x‖)(1 + ‖w‖)`
    Activation,
    /// `0 ≤ ℓ(m, z) ≤ g(m)(1 + ‖z‖²)`
    LossBound,
    /// `|δℓ/δm (m, z, θ)| ≤ g_e(m, θ)(1 + ‖z‖²)`
    DerivativeBound,
    /// Product model: `ℓ(m_c m_sp, z) ≤ g(m_c m_sp)(1 + ‖z‖²)`
    ProductLossBound,
    /// Product model: `|δℓ/δm_sp| ≤ g_sp (1 + ‖z‖²)`
    ProductDerivativeBound,
}

impl Inequality {
    pub const ALL: [Inequality; 8] = [
        Inequality::LossGrowth,
        Inequality::LossSlope,
        Inequality::LossCurvature,
        Inequality::Activation,
        Inequality::LossBound,
        Inequality::DerivativeBound,
        Inequality::ProductLossBound,
        Inequality::ProductDerivativeBound,
    ];

    /// The four pointwise growth conditions on `ℓ_o` and `ϕ`.
    pub fn is_pointwise(self) -> bool {
        matches!(
            self,
            Inequality::LossGrowth | Inequality::LossSlope | Inequality::LossCurvature | Inequality::Activation
        )
    }
}

/// Outcome for one inequality: violations and the largest `lhs / rhs` seen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub inequality: Inequality,
    pub draws: usize,
    pub violations: usize,
    pub worst_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub constants: Constants,
    pub checks: Vec<InequalityCheck>,
}

impl BatteryReport {
    pub fn violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }
}

const CHUNK: usize = 4096;
const MAX_ATOMS: usize = 8;
const MAX_INPUT_DIM: usize = 6;

/// Relative slack for rounding in the comparison `lhs ≤ rhs`.
const ROUNDING: f64 = 1e-12;

/// A value whose magnitude spans several decades.
fn spread(g: &mut ChaCha8Rng) -> f64 {
    let z: f64 = g.sample(StandardNormal);
    z * 10f64.powf(g.random_range(-2.0..2.0))
}

fn vector(g: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let s = 10f64.powf(g.random_range(-2.0..1.5));
    (0..n)
        .map(|_| {
            let z: f64 = g.sample(StandardNormal);
            s * z
        })
        .collect()
}

fn cloud(g: &mut ChaCha8Rng, dim: usize) -> ParticleCloud {
    let k = g.random_range(1..=MAX_ATOMS);
    let coords = (0..k).flat_map(|_| vector(g, dim)).collect();
    ParticleCloud::from_raw(dim, coords)
}

fn fourth(v: &[f64]) -> f64 {
    let s = norm_sq(v);
    s * s
}

#[derive(Clone, Copy)]
struct Tally {
    violations: usize,
    worst: f64,
}

impl Tally {
    const EMPTY: Tally = Tally {
        violations: 0,
        worst: 0.0,
    };

    fn record(&mut self, lhs: f64, rhs: f64) {
        let ratio = lhs / rhs;
        if !(lhs <= rhs * (1.0 + ROUNDING)) {
            self.violations += 1;
        }
        if ratio > self.worst || ratio.is_nan() {
            self.worst = ratio;
        }
    }

    fn merge(self, o: Tally) -> Tally {
        Tally {
            violations: self.violations + o.violations,
            worst: if self.worst.is_nan() || o.worst.is_nan() {
                f64::NAN
            } else {
                self.worst.max(o.worst)
            },
        }
    }
}

type Tallies = [Tally; 8];

fn one_draw(c: &Constants, ol: &OuterLoss, g: &mut ChaCha8Rng, t: &mut Tallies) {
    let act = c.act;
    let q = g.random_range(1..=MAX_INPUT_DIM);
    let x = vector(g, q);
    let y = spread(g);
    let z = SampleView { x: &x, y };
    let z2 = 1.0 + z.norm_sq();
    let xn = norm_sq(&x).sqrt();

    let y_hat = spread(g);
    t[0].record(ol.value(y_hat, y).abs(), c.l_loss * (1.0 + y_hat * y_hat + y * y));
    t[1].record(ol.d_pred(y_hat, y).abs(), c.l_loss1 * (1.0 + y_hat.abs() + y.abs()));
    t[2].record(ol.d2_pred(y_hat, y).abs(), c.l_loss2);
    let w = vector(g, q);
    t[3].record(act.eval(dot(&w, &x)).abs(), c.l_phi * (1.0 + xn) * (1.0 + norm_sq(&w).sqrt()));

    let m = cloud(g, q + 1);
    let theta = vector(g, q + 1);
    let m4 = m.average(fourth);
    let phi = mfnet::predict_unchecked(&m, &x, act);
    let l = ol.value(phi, y);
    t[4].record(l.max(0.0), c.g(m4) * z2);
    if l < 0.0 {
        t[4].violations += 1;
    }
    let d = ol.d_pred(phi, y) * (mfnet::unit_output(&theta, &x, act) - phi);
    t[5].record(d.abs(), c.g_e(m4, fourth(&theta)) * z2);

    let wc = cloud(g, q);
    let ac = cloud(g, 1);
    let a = spread(g);
    let feature = mfnet::mean_feature_unchecked(&wc, &x, act);
    let a_mean = ac.average(|a| a[0]);
    let (w4, a4) = (wc.average(fourth), ac.average(fourth));
    let yp = feature * a_mean;
    t[6].record(ol.value(yp, y), c.g_product(a4, w4) * z2);
    let dsp = ol.d_pred(yp, y) * (a - a_mean) * feature;
    t[7].record(dsp.abs(), c.g_sp(w4, a4, a) * z2);
}

/// Checks every [`Inequality`] on `draws` random `(θ, z, m)` with `m` of at
/// most eight atoms and input dimension up to six. Scales are log-uniform
/// over several decades so the tails are exercised.
pub fn assumption_battery(act: Activation, ol: &OuterLoss, draws: usize, seed: u64) -> Result<BatteryReport> {
    let c = constants_extract(act, ol)?;
    let chunks = draws.div_ceil(CHUNK);
    let tag = act as u64 * 16 + ol.kind as u64;
    let total = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut g = rng::stream(seed, &[rng::purpose::MONTE_CARLO, tag, k as u64]);
            let mut t = [Tally::EMPTY; 8];
            let n = CHUNK.min(draws - k * CHUNK);
            for _ in 0..n {
                one_draw(&c, ol, &mut g, &mut t);
            }
            t
        })
        .reduce(
            || [Tally::EMPTY; 8],
            |a, b| std::array::from_fn(|i| a[i].merge(b[i])),
        );
    Ok(BatteryReport {
        constants: c,
        checks: Inequality::ALL
            .iter()
            .zip(total)
            .map(|(&inequality, t)| InequalityCheck {
                inequality,
                draws,
                violations: t.violations,
                worst_ratio: t.worst,
            })
            .collect(),
    })
}
