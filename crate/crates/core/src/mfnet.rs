//! The one-hidden-layer mean-field network.
//!
//! A parameter `θ = (a, w) ∈ ℝ^{1+q}` is one hidden unit with outer weight
//! `a` (coordinate 0) and hidden weight `w` (coordinates `1..=q`); its
//! contribution is `φ(θ, x) = a ϕ(w·x)`. The network output is the cloud
//! average `Φ(m, x) = E_{θ∼m}[φ(θ, x)]` and the per-sample loss is
//! `ℓ(m, z) = ℓ_o(Φ(m, x), y)`.
//!
//! For fine-tuning the measure is the product `m_c ⊗ m_sp` of a hidden-weight
//! cloud and a one-dimensional outer-weight cloud, with output
//! `E_{w∼m_c}[ϕ(w·x)] · E_{a∼m_sp}[a]`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::measures::{dot, ParticleCloud, SampleView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Heaviside,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Heaviside,
    ];

    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Activation::Relu => u.max(0.0),
            Activation::Tanh => u.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-u).exp()),
            Activation::Heaviside => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `ϕ'(u)`; ReLU uses 0 at the kink. Heaviside is rejected.
    pub fn derivative(self, u: f64) -> Result<f64> {
        match self {
            Activation::Heaviside => Err(Error::UnsupportedForTraining(self)),
            _ => Ok(self.derivative_unchecked(u)),
        }
    }

    #[inline]
    pub(crate) fn derivative_unchecked(self, u: f64) -> f64 {
        match self {
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-u).exp());
                s * (1.0 - s)
            }
            Activation::Heaviside => 0.0,
        }
    }

    /// Value and derivative together (shares the transcendental call).
    #[inline]
    pub(crate) fn eval_with_derivative(self, u: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = u.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-u).exp());
                (s, s * (1.0 - s))
            }
            _ => (self.eval(u), self.derivative_unchecked(u)),
        }
    }

    pub fn trainable(self) -> Result<()> {
        match self {
            Activation::Heaviside => Err(Error::UnsupportedForTraining(self)),
            _ => Ok(()),
        }
    }

    /// Linear-growth constant `L_φ` in `|ϕ(w·x)| ≤ L_φ (1 + ‖x‖)(1 + ‖w‖)`.
    pub fn growth_constant(self) -> f64 {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Quadratic,
    Logcosh,
}

/// Convex outer loss `ℓ_o(ŷ, y)` with its growth constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterLoss {
    pub kind: LossKind,
    /// `|ℓ_o| ≤ L_ℓ (1 + ŷ² + y²)`
    pub l_loss: f64,
    /// `|∂_ŷ ℓ_o| ≤ L_{ℓ,1} (1 + |ŷ| + |y|)`
    pub l_loss1: f64,
    /// `|∂²_ŷ ℓ_o| ≤ L_{ℓ,2}`
    pub l_loss2: f64,
}

impl OuterLoss {
    /// `(ŷ − y)²`.
    pub fn quadratic() -> Self {
        Self {
            kind: LossKind::Quadratic,
            l_loss: 2.0,
            l_loss1: 2.0,
            l_loss2: 2.0,
        }
    }

    /// `log cosh(ŷ − y)`.
    pub fn logcosh() -> Self {
        Self {
            kind: LossKind::Logcosh,
            l_loss: 1.0,
            l_loss1: 1.0,
            l_loss2: 1.0,
        }
    }

    pub fn from_kind(kind: LossKind) -> Self {
        match kind {
            LossKind::Quadratic => Self::quadratic(),
            LossKind::Logcosh => Self::logcosh(),
        }
    }

    #[inline]
    pub fn value(&self, y_hat: f64, y: f64) -> f64 {
        let u = y_hat - y;
        match self.kind {
            LossKind::Quadratic => u * u,
            LossKind::Logcosh => {
                let a = u.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
        }
    }

    #[inline]
    pub fn d_pred(&self, y_hat: f64, y: f64) -> f64 {
        let u = y_hat - y;
        match self.kind {
            LossKind::Quadratic => 2.0 * u,
            LossKind::Logcosh => u.tanh(),
        }
    }

    #[inline]
    pub fn d2_pred(&self, y_hat: f64, y: f64) -> f64 {
        match self.kind {
            LossKind::Quadratic => 2.0,
            LossKind::Logcosh => {
                let t = (y_hat - y).tanh();
                1.0 - t * t
            }
        }
    }
}

/// Contribution `φ(θ, x) = a ϕ(w·x)` of one unit. No dimension checks.
#[inline]
pub(crate) fn unit_output(theta: &[f64], x: &[f64], act: Activation) -> f64 {
    theta[0] * act.eval(dot(&theta[1..], x))
}

#[inline]
pub(crate) fn predict_unchecked(cloud: &ParticleCloud, x: &[f64], act: Activation) -> f64 {
    cloud.average(|theta| unit_output(theta, x, act))
}

/// Mean hidden feature `E_{w∼m_c}[ϕ(w·x)]`.
#[inline]
pub(crate) fn mean_feature_unchecked(w_cloud: &ParticleCloud, x: &[f64], act: Activation) -> f64 {
    w_cloud.average(|w| act.eval(dot(w, x)))
}

fn check_joint(cloud: &ParticleCloud, x: &[f64]) -> Result<()> {
    check_dim("cloud dim (expected q + 1)", x.len() + 1, cloud.dim())
}

fn check_product(w_cloud: &ParticleCloud, a_cloud: &ParticleCloud, x: &[f64]) -> Result<()> {
    check_dim("a-cloud dim", 1, a_cloud.dim())?;
    check_dim("w-cloud dim (expected q)", x.len(), w_cloud.dim())
}

/// `Φ(m, x) = (1/r) Σ a_i ϕ(w_i·x)`.
pub fn predict(cloud: &ParticleCloud, x: &[f64], act: Activation) -> Result<f64> {
    check_joint(cloud, x)?;
    Ok(predict_unchecked(cloud, x, act))
}

/// `ℓ(m, z) = ℓ_o(Φ(m, x), y)`.
pub fn loss(cloud: &ParticleCloud, z: SampleView<'_>, act: Activation, ol: &OuterLoss) -> Result<f64> {
    Ok(ol.value(predict(cloud, z.x, act)?, z.y))
}

/// Linear functional derivative `δℓ/δm (m, z, θ) = ∂_ŷℓ_o(Φ, y) (φ(θ, x) − Φ)`,
/// normalized so that its `m`-average vanishes.
pub fn flat_derivative(
    cloud: &ParticleCloud,
    z: SampleView<'_>,
    theta: &[f64],
    act: Activation,
    ol: &OuterLoss,
) -> Result<f64> {
    check_joint(cloud, z.x)?;
    check_dim("probe parameter", cloud.dim(), theta.len())?;
    let phi = predict_unchecked(cloud, z.x, act);
    Ok(ol.d_pred(phi, z.y) * (unit_output(theta, z.x, act) - phi))
}

/// `∇_θ δℓ/δm (m, z, θ) = ∂_ŷℓ_o(Φ, y) (ϕ(w·x), a ϕ'(w·x) x)`.
pub fn flat_derivative_grad(
    cloud: &ParticleCloud,
    z: SampleView<'_>,
    theta: &[f64],
    act: Activation,
    ol: &OuterLoss,
) -> Result<Vec<f64>> {
    act.trainable()?;
    check_joint(cloud, z.x)?;
    check_dim("probe parameter", cloud.dim(), theta.len())?;
    let g = ol.d_pred(predict_unchecked(cloud, z.x, act), z.y);
    let mut out = vec![0.0; theta.len()];
    accumulate_unit_grad(theta, z.x, act, g, &mut out);
    Ok(out)
}

/// `out += scale · ∇_θ φ(θ, x)`.
#[inline]
pub(crate) fn accumulate_unit_grad(theta: &[f64], x: &[f64], act: Activation, scale: f64, out: &mut [f64]) {
    let (s, ds) = act.eval_with_derivative(dot(&theta[1..], x));
    out[0] += scale * s;
    let k = scale * theta[0] * ds;
    for (o, xi) in out[1..].iter_mut().zip(x) {
        *o += k * xi;
    }
}

/// `Y' = (1/r_c Σ ϕ(w_i·x)) (1/r_sp Σ a_j)`.
pub fn predict_product(
    w_cloud: &ParticleCloud,
    a_cloud: &ParticleCloud,
    x: &[f64],
    act: Activation,
) -> Result<f64> {
    check_product(w_cloud, a_cloud, x)?;
    Ok(mean_feature_unchecked(w_cloud, x, act) * a_cloud.average(|a| a[0]))
}

pub fn loss_product(
    w_cloud: &ParticleCloud,
    a_cloud: &ParticleCloud,
    z: SampleView<'_>,
    act: Activation,
    ol: &OuterLoss,
) -> Result<f64> {
    Ok(ol.value(predict_product(w_cloud, a_cloud, z.x, act)?, z.y))
}

/// `δℓ/δm_sp (m_c ⊗ m_sp, z, a) = ∂_ŷℓ_o(Y', y) (a − E[a]) E_{w}[ϕ(w·x)]`.
pub fn flat_derivative_sp(
    w_cloud: &ParticleCloud,
    a_cloud: &ParticleCloud,
    z: SampleView<'_>,
    a: f64,
    act: Activation,
    ol: &OuterLoss,
) -> Result<f64> {
    check_product(w_cloud, a_cloud, z.x)?;
    let feature = mean_feature_unchecked(w_cloud, z.x, act);
    let a_mean = a_cloud.average(|a| a[0]);
    Ok(ol.d_pred(feature * a_mean, z.y) * (a - a_mean) * feature)
}

/// The convex combination `(1 − λ) m + λ m'` of two clouds, evaluated
/// atom-by-atom with weights `(1 − λ)/r` and `λ/r'`.
#[derive(Clone, Copy, Debug)]
pub struct Mixture<'a> {
    pub base: &'a ParticleCloud,
    pub other: &'a ParticleCloud,
    pub lambda: f64,
}

impl<'a> Mixture<'a> {
    pub fn new(base: &'a ParticleCloud, other: &'a ParticleCloud, lambda: f64) -> Result<Self> {
        check_dim("mixture component dim", base.dim(), other.dim())?;
        if !(0.0..=1.0).contains(&lambda) {
            return Err(crate::error::argument(format!("lambda {lambda} outside [0, 1]")));
        }
        Ok(Self { base, other, lambda })
    }

    pub fn predict(&self, x: &[f64], act: Activation) -> Result<f64> {
        check_joint(self.base, x)?;
        let wb = (1.0 - self.lambda) / self.base.len() as f64;
        let wo = self.lambda / self.other.len() as f64;
        let sb: f64 = self.base.atoms().map(|t| unit_output(t, x, act)).sum();
        let so: f64 = self.other.atoms().map(|t| unit_output(t, x, act)).sum();
        Ok(wb * sb + wo * so)
    }

    pub fn loss(&self, z: SampleView<'_>, act: Activation, ol: &OuterLoss) -> Result<f64> {
        Ok(ol.value(self.predict(z.x, act)?, z.y))
    }

    pub fn flat_derivative(
        &self,
        z: SampleView<'_>,
        theta: &[f64],
        act: Activation,
        ol: &OuterLoss,
    ) -> Result<f64> {
        check_dim("probe parameter", self.base.dim(), theta.len())?;
        let phi = self.predict(z.x, act)?;
        Ok(ol.d_pred(phi, z.y) * (unit_output(theta, z.x, act) - phi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Sample;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_cloud(r: usize, d: usize, seed: u64) -> ParticleCloud {
        let mut g = rng::stream(seed, &[99]);
        ParticleCloud::new(d, (0..r * d).map(|_| g.sample::<f64, _>(StandardNormal)).collect()).unwrap()
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut g = rng::stream(seed, &[98]);
        (0..n).map(|_| g.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn predict_examples() {
        let single = ParticleCloud::new(3, vec![2.0, 0.0, 0.0]).unwrap();
        assert_eq!(predict(&single, &[3.0, -1.0], Activation::Sigmoid).unwrap(), 1.0);

        let mut coords = random_vec(12, 1);
        for c in coords.chunks_mut(3) {
            c[0] = 0.0;
        }
        let dead = ParticleCloud::new(3, coords).unwrap();
        assert_eq!(predict(&dead, &[0.3, 0.4], Activation::Tanh).unwrap(), 0.0);

        let cloud = random_cloud(3, 3, 2);
        let x = [0.7, -1.2];
        let mut brute = 0.0;
        for i in 0..3 {
            let t = cloud.atom(i);
            brute += t[0] * (t[1] * x[0] + t[2] * x[1]).max(0.0);
        }
        brute /= 3.0;
        assert!((predict(&cloud, &x, Activation::Relu).unwrap() - brute).abs() < 1e-15);
        assert!(predict(&cloud, &[1.0], Activation::Relu).is_err());
    }

    #[test]
    fn loss_examples() {
        // Φ = 2 σ(0) = 1, y = 3
        let single = ParticleCloud::new(2, vec![2.0, 0.0]).unwrap();
        let z = Sample::new(vec![5.0], 3.0);
        let l = loss(&single, z.view(), Activation::Sigmoid, &OuterLoss::quadratic()).unwrap();
        assert_eq!(l, 4.0);
        let fit = Sample::new(vec![5.0], 1.0);
        assert_eq!(loss(&single, fit.view(), Activation::Sigmoid, &OuterLoss::logcosh()).unwrap(), 0.0);

        let cloud = random_cloud(2, 3, 3);
        let z = Sample::new(vec![0.4, -0.9], 0.25);
        let t0 = cloud.atom(0);
        let t1 = cloud.atom(1);
        let phi = 0.5 * (t0[0] * (t0[1] * 0.4 - t0[2] * 0.9).tanh() + t1[0] * (t1[1] * 0.4 - t1[2] * 0.9).tanh());
        let expected = (phi - 0.25) * (phi - 0.25);
        let got = loss(&cloud, z.view(), Activation::Tanh, &OuterLoss::quadratic()).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn logcosh_is_stable_for_large_residuals() {
        let ol = OuterLoss::logcosh();
        let v = ol.value(1000.0, 0.0);
        assert!((v - (1000.0 - std::f64::consts::LN_2)).abs() < 1e-9);
        assert!((ol.value(0.3, 0.1) - 0.2f64.cosh().ln()).abs() < 1e-15);
    }

    /// Independent mixture evaluation: Φ of `(1 − ε) m + ε δ_θ` summed by hand.
    fn perturbed_loss(cloud: &ParticleCloud, theta: &[f64], eps: f64, z: &Sample, act: Activation, ol: &OuterLoss) -> f64 {
        let r = cloud.len() as f64;
        let mut phi = 0.0;
        for t in cloud.atoms() {
            phi += (1.0 - eps) / r * t[0] * act.eval(t[1..].iter().zip(&z.x).map(|(a, b)| a * b).sum());
        }
        phi += eps * theta[0] * act.eval(theta[1..].iter().zip(&z.x).map(|(a, b)| a * b).sum());
        ol.value(phi, z.y)
    }

    #[test]
    fn flat_derivative_examples() {
        let ol = OuterLoss::quadratic();
        let single = random_cloud(1, 3, 4);
        let z = Sample::new(vec![0.3, 0.8], 1.7);
        let v = flat_derivative(&single, z.view(), single.atom(0), Activation::Tanh, &ol).unwrap();
        assert_eq!(v, 0.0);

        let cloud = random_cloud(4, 3, 5);
        let phi = predict(&cloud, &z.x, Activation::Sigmoid).unwrap();
        let fit = Sample::new(z.x.clone(), phi);
        for seed in 0..5 {
            let theta = random_vec(3, 100 + seed);
            assert_eq!(flat_derivative(&cloud, fit.view(), &theta, Activation::Sigmoid, &ol).unwrap(), 0.0);
        }

        let two = random_cloud(2, 3, 6);
        let theta = random_vec(3, 7);
        let eps = 1e-6;
        let fd = (perturbed_loss(&two, &theta, eps, &z, Activation::Tanh, &ol)
            - perturbed_loss(&two, &theta, -eps, &z, Activation::Tanh, &ol))
            / (2.0 * eps);
        let got = flat_derivative(&two, z.view(), &theta, Activation::Tanh, &ol).unwrap();
        assert!((fd - got).abs() < 1e-8, "fd {fd} vs {got}");
        assert!(flat_derivative(&two, z.view(), &[1.0], Activation::Tanh, &ol).is_err());
    }

    #[test]
    fn flat_derivative_grad_examples() {
        let ol = OuterLoss::quadratic();
        let cloud = random_cloud(3, 3, 8);
        let x = vec![0.2, -0.5];
        let phi = predict(&cloud, &x, Activation::Tanh).unwrap();
        let fit = Sample::new(x.clone(), phi);
        let g = flat_derivative_grad(&cloud, fit.view(), &[1.0, 2.0, 3.0], Activation::Tanh, &ol).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));

        // a = 0 and w·x < 0 under ReLU: dead unit
        let z = Sample::new(vec![1.0, 1.0], 2.0);
        let g = flat_derivative_grad(&cloud, z.view(), &[0.0, -1.0, -1.0], Activation::Relu, &ol).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));

        assert!(matches!(
            flat_derivative_grad(&cloud, z.view(), &[0.0, 1.0, 1.0], Activation::Heaviside, &ol),
            Err(Error::UnsupportedForTraining(Activation::Heaviside))
        ));

        for (act, ol) in [
            (Activation::Tanh, OuterLoss::quadratic()),
            (Activation::Sigmoid, OuterLoss::logcosh()),
            (Activation::Relu, OuterLoss::quadratic()),
        ] {
            let theta = random_vec(3, 9);
            let z = Sample::new(random_vec(2, 10), 0.3);
            let g = flat_derivative_grad(&cloud, z.view(), &theta, act, &ol).unwrap();
            let h = 1e-6;
            for k in 0..3 {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                let fd = (flat_derivative(&cloud, z.view(), &tp, act, &ol).unwrap()
                    - flat_derivative(&cloud, z.view(), &tm, act, &ol).unwrap())
                    / (2.0 * h);
                let rel = (fd - g[k]).abs() / g[k].abs().max(1e-3);
                assert!(rel <= 1e-5, "{act:?} coord {k}: fd {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn product_prediction_examples() {
        let w = random_cloud(3, 2, 11);
        let centered = ParticleCloud::new(1, vec![-1.0, 0.5, 0.5]).unwrap();
        assert_eq!(predict_product(&w, &centered, &[0.3, 0.1], Activation::Tanh).unwrap(), 0.0);

        let w1 = ParticleCloud::new(2, vec![0.4, -0.3]).unwrap();
        let a1 = ParticleCloud::new(1, vec![1.7]).unwrap();
        let joint = ParticleCloud::new(3, vec![1.7, 0.4, -0.3]).unwrap();
        let x = [0.9, 0.2];
        assert_eq!(
            predict_product(&w1, &a1, &x, Activation::Sigmoid).unwrap(),
            predict(&joint, &x, Activation::Sigmoid).unwrap()
        );

        let w2 = random_cloud(2, 2, 12);
        let a3 = random_cloud(3, 1, 13);
        let feat = (0..2).map(|i| (w2.atom(i)[0] * x[0] + w2.atom(i)[1] * x[1]).tanh()).sum::<f64>() / 2.0;
        let abar = (0..3).map(|j| a3.atom(j)[0]).sum::<f64>() / 3.0;
        let got = predict_product(&w2, &a3, &x, Activation::Tanh).unwrap();
        assert!((got - feat * abar).abs() < 1e-15);
        assert!(predict_product(&a3, &w2, &x, Activation::Tanh).is_err());
    }

    #[test]
    fn flat_derivative_sp_examples() {
        let ol = OuterLoss::quadratic();
        let w = random_cloud(4, 2, 14);
        let a = random_cloud(5, 1, 15);
        let z = Sample::new(vec![0.5, -0.4], 0.9);
        let a_mean = a.average(|v| v[0]);
        assert_eq!(flat_derivative_sp(&w, &a, z.view(), a_mean, Activation::Tanh, &ol).unwrap(), 0.0);

        // every w·x = 0 under tanh
        let w0 = ParticleCloud::new(2, vec![0.0; 6]).unwrap();
        assert_eq!(flat_derivative_sp(&w0, &a, z.view(), 3.0, Activation::Tanh, &ol).unwrap(), 0.0);

        // finite difference along m_sp + ε(δ_a − m_sp): only E[a] moves
        let probe = 1.3;
        let feat = (0..4).map(|i| (w.atom(i)[0] * 0.5 - w.atom(i)[1] * 0.4).tanh()).sum::<f64>() / 4.0;
        let eps = 1e-6;
        let l = |e: f64| ol.value(feat * ((1.0 - e) * a_mean + e * probe), z.y);
        let fd = (l(eps) - l(-eps)) / (2.0 * eps);
        let got = flat_derivative_sp(&w, &a, z.view(), probe, Activation::Tanh, &ol).unwrap();
        assert!((fd - got).abs() < 1e-8);
    }

    #[test]
    fn mixture_endpoints_match_clouds() {
        let m = random_cloud(3, 3, 16);
        let m2 = random_cloud(5, 3, 17);
        let x = [0.3, -0.6];
        let at0 = Mixture::new(&m, &m2, 0.0).unwrap().predict(&x, Activation::Tanh).unwrap();
        let at1 = Mixture::new(&m, &m2, 1.0).unwrap().predict(&x, Activation::Tanh).unwrap();
        assert!((at0 - predict(&m, &x, Activation::Tanh).unwrap()).abs() < 1e-15);
        assert!((at1 - predict(&m2, &x, Activation::Tanh).unwrap()).abs() < 1e-15);
    }
}
