//! Gibbs priors `γ^σ ∝ exp(−U/σ²)`, their `‖θ‖⁸`-tilted variants, exact
//! samplers, and the tilted-moment complexity terms.
//!
//! Every integral here is radial: for `U(θ) = u(‖θ‖)` in dimension `d`,
//! `∫ f(‖θ‖) e^{−U/σ²} dθ = |S^{d−1}| ∫₀^∞ f(r) r^{d−1} e^{−u(r)/σ²} dr`.
//! The one-dimensional integrals are done by the trapezoid rule in
//! `t = ln r` with log-sum-exp accumulation, so very peaked or very flat
//! integrands stay representable.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{argument, Error, Result};
use crate::measures::{norm_sq, ParticleCloud};

/// Default node count for radial quadrature and the sampler grid.
pub const RADIAL_NODES: usize = 4096;
const R_MIN: f64 = 1e-6;
const LOG_DROP: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    /// `U(θ) = ‖θ‖¹⁰`
    Poly10,
    /// `U(θ) = ‖θ‖²/2`
    Gaussian,
    /// `U(θ) = |a|¹⁰ + ‖w‖¹⁰` with `a = θ₀`, `w = θ₁..`
    Poly10Separable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Radial {
    Poly10,
    Gaussian,
}

impl Radial {
    #[inline]
    fn u(self, r: f64) -> f64 {
        match self {
            Radial::Poly10 => {
                let r2 = r * r;
                let r4 = r2 * r2;
                r4 * r4 * r2
            }
            Radial::Gaussian => 0.5 * r * r,
        }
    }

    /// `r u'(r)`
    #[inline]
    fn r_du(self, r: f64) -> f64 {
        match self {
            Radial::Poly10 => 10.0 * self.u(r),
            Radial::Gaussian => r * r,
        }
    }
}

/// Radial law with density `∝ r^{d−1} exp(−u(r)/σ² + [tilt] r⁸)`.
#[derive(Clone, Copy, Debug)]
struct RadialLaw {
    kind: Radial,
    dim: usize,
    sigma: f64,
    tilt: bool,
}

impl RadialLaw {
    #[inline]
    fn g(&self, r: f64) -> f64 {
        let mut v = -self.kind.u(r) / (self.sigma * self.sigma);
        if self.tilt {
            let r2 = r * r;
            let r4 = r2 * r2;
            v += r4 * r4;
        }
        v
    }

    /// Log of the integrand of `∫ r^{d−1+k} e^{g} dr` in the variable `t = ln r`.
    #[inline]
    fn h(&self, t: f64, k: f64) -> f64 {
        (self.dim as f64 + k) * t + self.g(t.exp())
    }

    /// `dh/dt`
    fn dh(&self, t: f64, k: f64) -> f64 {
        let r = t.exp();
        let mut v = self.dim as f64 + k - self.kind.r_du(r) / (self.sigma * self.sigma);
        if self.tilt {
            let r2 = r * r;
            let r4 = r2 * r2;
            v += 8.0 * r4 * r4;
        }
        v
    }

    /// Integration window `[ln R_MIN, t_max]` in log-radius.
    fn window(&self, k: f64) -> (f64, f64) {
        let t_lo = R_MIN.ln();
        // h is unimodal in t: dh decreases through zero exactly once
        let mut hi = 1.0;
        while self.dh(hi, k) > 0.0 {
            hi += 1.0;
        }
        let mut lo = t_lo;
        if self.dh(lo, k) <= 0.0 {
            return (t_lo, self.drop_point(t_lo, k));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.dh(mid, k) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (t_lo, self.drop_point(0.5 * (lo + hi), k))
    }

    fn drop_point(&self, t_peak: f64, k: f64) -> f64 {
        let target = self.h(t_peak, k) - LOG_DROP;
        let mut lo = t_peak;
        let mut hi = t_peak + 0.5;
        while self.h(hi, k) > target {
            hi += 0.5;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.h(mid, k) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// `ln ∫₀^∞ r^{d−1+k} e^{g(r)} dr`.
    fn log_integral(&self, k: f64, nodes: usize) -> f64 {
        let (t0, t1) = self.window(k);
        let dt = (t1 - t0) / (nodes - 1) as f64;
        let logs: Vec<f64> = (0..nodes)
            .map(|j| {
                let w = if j == 0 || j == nodes - 1 { 0.5 * dt } else { dt };
                self.h(t0 + j as f64 * dt, k) + w.ln()
            })
            .collect();
        // below R_MIN the integrand is r^{d−1+k} e^{g(0)} to leading order
        let tail = self.h(t0, k) - (self.dim as f64 + k).ln();
        log_sum_exp(logs.iter().copied().chain(std::iter::once(tail)))
    }

    fn moment(&self, p: f64, nodes: usize) -> f64 {
        (self.log_integral(p, nodes) - self.log_integral(0.0, nodes)).exp()
    }

    fn sampler(&self) -> RadialSampler {
        let nodes = RADIAL_NODES;
        let (t0, t1) = self.window(0.0);
        let dt = (t1 - t0) / (nodes - 1) as f64;
        let ts: Vec<f64> = (0..nodes).map(|j| t0 + j as f64 * dt).collect();
        let hs: Vec<f64> = ts.iter().map(|&t| self.h(t, 0.0)).collect();
        let hmax = hs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tail = (hs[0] - hmax - (self.dim as f64).ln()).exp();
        let mut cdf = Vec::with_capacity(nodes);
        let mut acc = tail;
        cdf.push(acc);
        for j in 1..nodes {
            acc += 0.5 * dt * ((hs[j - 1] - hmax).exp() + (hs[j] - hmax).exp());
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        RadialSampler {
            radii: ts.iter().map(|t| t.exp()).collect(),
            cdf,
            dim: self.dim,
        }
    }
}

struct RadialSampler {
    radii: Vec<f64>,
    cdf: Vec<f64>,
    dim: usize,
}

impl RadialSampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u < self.cdf[0] {
            return self.radii[0] * (u / self.cdf[0]).powf(1.0 / self.dim as f64);
        }
        let j = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let (r0, r1) = (self.radii[j - 1], self.radii[j]);
        if c1 > c0 {
            r0 + (r1 - r0) * (u - c0) / (c1 - c0)
        } else {
            r0
        }
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `ln |S^{d−1}| = ln(2 π^{d/2} / Γ(d/2))`
fn log_sphere_area(dim: usize) -> f64 {
    let h = dim as f64 / 2.0;
    std::f64::consts::LN_2 + h * std::f64::consts::PI.ln() - ln_gamma(h)
}

fn unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R, out: &mut [f64]) {
    loop {
        for o in out.iter_mut() {
            *o = rng.sample(StandardNormal);
        }
        let n = norm_sq(out).sqrt();
        if n > 0.0 {
            for o in out.iter_mut() {
                *o /= n;
            }
            debug_assert_eq!(out.len(), dim);
            return;
        }
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// The regularizing prior `γ^σ(θ) = exp(−U(θ)/σ²) / F^σ` on `ℝ^dim`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsPrior {
    pub potential: Potential,
    pub sigma: f64,
    pub dim: usize,
}

impl GibbsPrior {
    pub fn new(potential: Potential, sigma: f64, dim: usize) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(argument(format!("sigma must be positive and finite, got {sigma}")));
        }
        if dim == 0 {
            return Err(argument("prior dimension must be positive"));
        }
        if potential == Potential::Poly10Separable && dim < 2 {
            return Err(argument("separable potential needs dim >= 2 (a and w blocks)"));
        }
        Ok(Self { potential, sigma, dim })
    }

    fn radial(&self, kind: Radial, dim: usize, tilt: bool) -> RadialLaw {
        RadialLaw {
            kind,
            dim,
            sigma: self.sigma,
            tilt,
        }
    }

    /// Radial law of the whole vector, when the potential is radial.
    fn whole(&self) -> Option<RadialLaw> {
        match self.potential {
            Potential::Poly10 => Some(self.radial(Radial::Poly10, self.dim, false)),
            Potential::Gaussian => Some(self.radial(Radial::Gaussian, self.dim, false)),
            Potential::Poly10Separable => None,
        }
    }

    pub fn u(&self, theta: &[f64]) -> f64 {
        match self.potential {
            Potential::Poly10 => Radial::Poly10.u(norm_sq(theta).sqrt()),
            Potential::Gaussian => 0.5 * norm_sq(theta),
            Potential::Poly10Separable => {
                Radial::Poly10.u(theta[0].abs()) + Radial::Poly10.u(norm_sq(&theta[1..]).sqrt())
            }
        }
    }

    /// `out = ∇U(θ)`
    pub fn grad_u_into(&self, theta: &[f64], out: &mut [f64]) {
        match self.potential {
            Potential::Poly10 => {
                let s = norm_sq(theta);
                let s4 = s * s * s * s;
                for (o, t) in out.iter_mut().zip(theta) {
                    *o = 10.0 * s4 * t;
                }
            }
            Potential::Gaussian => out.copy_from_slice(theta),
            Potential::Poly10Separable => {
                let a2 = theta[0] * theta[0];
                out[0] = 10.0 * a2 * a2 * a2 * a2 * theta[0];
                let s = norm_sq(&theta[1..]);
                let s4 = s * s * s * s;
                for (o, t) in out[1..].iter_mut().zip(&theta[1..]) {
                    *o = 10.0 * s4 * t;
                }
            }
        }
    }

    pub fn grad_u(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; theta.len()];
        self.grad_u_into(theta, &mut out);
        out
    }

    /// `ln F^σ`
    pub fn log_normalizer(&self) -> f64 {
        match self.whole() {
            Some(law) => log_sphere_area(self.dim) + law.log_integral(0.0, RADIAL_NODES),
            None => {
                let (c, sp) = self.blocks().expect("separable potential has blocks");
                c.log_normalizer() + sp.log_normalizer()
            }
        }
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        -self.u(theta) / (self.sigma * self.sigma) - self.log_normalizer()
    }

    /// Independent draws from this prior.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<ParticleCloud> {
        if count == 0 {
            return Err(argument("sample count must be positive"));
        }
        let mut coords = vec![0.0; count * self.dim];
        match self.whole() {
            Some(law) => {
                let sampler = law.sampler();
                for atom in coords.chunks_exact_mut(self.dim) {
                    unit_direction(self.dim, rng, atom);
                    let r = sampler.draw(rng);
                    atom.iter_mut().for_each(|v| *v *= r);
                }
            }
            None => {
                let (c, sp) = self.blocks()?;
                let sc = c.whole().expect("radial block").sampler();
                let ssp = sp.whole().expect("radial block").sampler();
                for atom in coords.chunks_exact_mut(self.dim) {
                    let (a, w) = atom.split_at_mut(1);
                    unit_direction(1, rng, a);
                    a[0] *= ssp.draw(rng);
                    unit_direction(self.dim - 1, rng, w);
                    let r = sc.draw(rng);
                    w.iter_mut().for_each(|v| *v *= r);
                }
            }
        }
        Ok(ParticleCloud::from_raw(self.dim, coords))
    }

    /// `E_{θ∼γ^σ}[‖θ‖^p]` for even `p ≥ 0`.
    pub fn moment(&self, p: u32) -> Result<f64> {
        if p % 2 == 1 {
            return Err(argument(format!("moment order must be even, got {p}")));
        }
        match self.whole() {
            Some(law) => Ok(law.moment(p as f64, RADIAL_NODES)),
            None => {
                // ‖θ‖^p = (a² + ‖w‖²)^{p/2}, blocks independent
                let (c, sp) = self.blocks()?;
                let h = p / 2;
                let mut total = 0.0;
                for j in 0..=h {
                    total += binomial(h, j) * sp.moment(2 * j)? * c.moment(p - 2 * j)?;
                }
                Ok(total)
            }
        }
    }

    /// Block priors `(γ_c on w, γ_sp on a)`. Exact factors for separable and
    /// Gaussian potentials; the joint `‖θ‖¹⁰` prior does not factor.
    pub fn blocks(&self) -> Result<(GibbsPrior, GibbsPrior)> {
        if self.dim < 2 {
            return Err(argument("block split needs dim >= 2"));
        }
        let kind = match self.potential {
            Potential::Gaussian => Potential::Gaussian,
            Potential::Poly10Separable => Potential::Poly10,
            Potential::Poly10 => {
                return Err(Error::Unsupported(
                    "the joint poly10 prior does not factor into (a, w) blocks; use poly10_separable".into(),
                ))
            }
        };
        Ok((
            GibbsPrior::new(kind, self.sigma, self.dim - 1)?,
            GibbsPrior::new(kind, self.sigma, 1)?,
        ))
    }
}

/// `γ̃₈^σ ∝ exp(−U/σ² + ‖θ‖⁸)`; normalizable only for the `‖θ‖¹⁰` base.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TiltedPrior {
    base: GibbsPrior,
}

impl TiltedPrior {
    pub fn new(base: GibbsPrior) -> Result<Self> {
        match base.potential {
            Potential::Poly10 => Ok(Self { base }),
            Potential::Gaussian => Err(Error::NotNormalizable(
                "exp(-|θ|²/(2σ²) + |θ|⁸) is not integrable".into(),
            )),
            Potential::Poly10Separable => Err(Error::Unsupported(
                "tilt a separable prior block by block via its blocks()".into(),
            )),
        }
    }

    pub fn base(&self) -> &GibbsPrior {
        &self.base
    }

    fn law(&self) -> RadialLaw {
        self.base.radial(Radial::Poly10, self.base.dim, true)
    }

    pub fn log_normalizer(&self) -> f64 {
        log_sphere_area(self.base.dim) + self.law().log_integral(0.0, RADIAL_NODES)
    }

    /// `∫‖θ‖^p γ̃₈^σ(dθ)` for `p ∈ {4, 8}`.
    pub fn moment(&self, p: u32) -> Result<f64> {
        self.moment_with_nodes(p, RADIAL_NODES)
    }

    pub fn moment_with_nodes(&self, p: u32, nodes: usize) -> Result<f64> {
        if p != 4 && p != 8 {
            return Err(argument(format!("tilted moment order must be 4 or 8, got {p}")));
        }
        if nodes < 16 {
            return Err(argument("need at least 16 quadrature nodes"));
        }
        Ok(self.law().moment(p as f64, nodes))
    }
}

pub fn tilted_moment(tp: &TiltedPrior, p: u32) -> Result<f64> {
    tp.moment(p)
}

/// `(1 + 2 M₈ + 2 M₄)²`
pub fn comp_from_moments(m8: f64, m4: f64) -> f64 {
    let b = 1.0 + 2.0 * m8 + 2.0 * m4;
    b * b
}

pub fn comp_alpha(tp: &TiltedPrior) -> Result<f64> {
    Ok(comp_from_moments(tp.moment(8)?, tp.moment(4)?))
}

/// The three integrals inside the fine-tuning complexity bracket.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneComplexity {
    /// `∫‖θ_c‖⁴(2 + ‖θ_c‖⁴) γ̂_{8,c}`
    pub common: f64,
    /// `∫|a|⁴(1 + 2|a|⁴) γ̃_sp`
    pub specific_target: f64,
    /// `∫|a|⁴ γ̂_{8,sp}`
    pub specific_source: f64,
    pub value: f64,
}

pub fn comp_finetune_from_integrals(common: f64, specific_target: f64, specific_source: f64) -> FinetuneComplexity {
    let b = 1.0 + common + specific_target + specific_source;
    FinetuneComplexity {
        common,
        specific_target,
        specific_source,
        value: b * b,
    }
}

/// Fine-tuning complexity from block priors. With a separable potential the
/// `‖θ_c‖⁸`-tilted joint factorizes into `tp_c ⊗ sp`, so `γ̂_{8,c} = tp_c` and
/// `γ̂_{8,sp} = sp` (untilted); `γ̃_sp = tp_sp`.
pub fn comp_finetune(tp_c: &TiltedPrior, tp_sp: &TiltedPrior, sp: &GibbsPrior) -> Result<FinetuneComplexity> {
    if tp_sp.base.dim != 1 || sp.dim != 1 {
        return Err(argument("the specific block is the scalar outer weight (dim 1)"));
    }
    if sp.potential != Potential::Poly10 {
        return Err(Error::NotNormalizable("fine-tuning complexity needs poly10 blocks".into()));
    }
    let common = 2.0 * tp_c.moment(4)? + tp_c.moment(8)?;
    let specific_target = tp_sp.moment(4)? + 2.0 * tp_sp.moment(8)?;
    let specific_source = sp.moment(4)?;
    Ok(comp_finetune_from_integrals(common, specific_target, specific_source))
}

/// Fine-tuning complexity for a separable prior over `θ = (a, w)`.
pub fn comp_finetune_separable(prior: &GibbsPrior) -> Result<FinetuneComplexity> {
    match prior.potential {
        Potential::Poly10Separable => {}
        Potential::Gaussian => {
            return Err(Error::NotNormalizable("gaussian base cannot be tilted".into()))
        }
        Potential::Poly10 => {
            return Err(Error::Unsupported(
                "fine-tuning complexity needs the separable poly10 potential".into(),
            ))
        }
    }
    let (c, sp) = prior.blocks()?;
    comp_finetune(&TiltedPrior::new(c)?, &TiltedPrior::new(sp)?, &sp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    /// Adaptive Simpson on [a, b].
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    /// `E‖θ‖^p` under `∝ exp(−‖θ‖¹⁰/σ²)` in dimension d, via Gamma functions.
    fn poly10_moment_closed(d: usize, sigma: f64, p: f64) -> f64 {
        let d = d as f64;
        (p / 5.0 * sigma.ln() + ln_gamma((d + p) / 10.0) - ln_gamma(d / 10.0)).exp()
    }

    #[test]
    fn gaussian_samples_have_standard_moments() {
        let prior = GibbsPrior::new(Potential::Gaussian, 1.0, 1).unwrap();
        let n = 200_000;
        let cloud = prior.sample(n, &mut rng::stream(1, &[rng::purpose::INIT])).unwrap();
        let m2 = cloud.average(|t| t[0] * t[0]);
        let m4 = cloud.average(|t| t[0].powi(4));
        assert!((m2 - 1.0).abs() <= 3.0 * (2.0f64 / n as f64).sqrt(), "m2 {m2}");
        // var(x⁴) = 105 − 9 = 96
        assert!((m4 - 3.0).abs() <= 3.0 * (96.0 / n as f64).sqrt(), "m4 {m4}");
        let mean = cloud.average(|t| t[0]);
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn gaussian_radius_passes_ks_against_chi() {
        for d in [1usize, 3, 5] {
            let prior = GibbsPrior::new(Potential::Gaussian, 1.0, d).unwrap();
            let n = 100_000;
            let cloud = prior.sample(n, &mut rng::stream(2, &[d as u64])).unwrap();
            let mut r2: Vec<f64> = cloud.atoms().map(norm_sq).collect();
            r2.sort_by(f64::total_cmp);
            let chi = ChiSquared::new(d as f64).unwrap();
            let mut ks: f64 = 0.0;
            for (i, v) in r2.iter().enumerate() {
                let c = chi.cdf(*v);
                ks = ks.max((c - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - c).abs());
            }
            let critical = 1.628 / (n as f64).sqrt();
            assert!(ks <= critical, "d={d}: KS {ks} > {critical}");
        }
    }

    #[test]
    fn poly10_sample_fourth_moment_matches_simpson() {
        let prior = GibbsPrior::new(Potential::Poly10, 1.0, 2).unwrap();
        let num = simpson(&|r: f64| r.powi(5) * (-r.powi(10)).exp(), 0.0, 4.0, 1e-13);
        let den = simpson(&|r: f64| r * (-r.powi(10)).exp(), 0.0, 4.0, 1e-13);
        let oracle = num / den;
        let n = 100_000;
        let cloud = prior.sample(n, &mut rng::stream(3, &[])).unwrap();
        let vals: Vec<f64> = cloud.atoms().map(|t| norm_sq(t).powi(2)).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - oracle).abs() <= 3.0 * se, "{mean} vs {oracle} (se {se})");
        assert!((prior.moment(4).unwrap() - oracle).abs() < 1e-9 * oracle);
    }

    #[test]
    fn untilted_moments_and_normalizer_match_gamma_forms() {
        for d in [1usize, 2, 5] {
            for sigma in [0.3, 1.0, 2.5] {
                let prior = GibbsPrior::new(Potential::Poly10, sigma, d).unwrap();
                for p in [2u32, 4, 8] {
                    let got = prior.moment(p).unwrap();
                    let want = poly10_moment_closed(d, sigma, p as f64);
                    assert!((got / want - 1.0).abs() < 1e-9, "d={d} σ={sigma} p={p}: {got} vs {want}");
                }
                let df = d as f64;
                let log_f = log_sphere_area(d) + (df / 5.0 * sigma.ln() + ln_gamma(df / 10.0) - 10f64.ln());
                assert!((prior.log_normalizer() - log_f).abs() < 1e-9);
            }
        }
        let g = GibbsPrior::new(Potential::Gaussian, 1.5, 3).unwrap();
        let log_f = 1.5 * (2.0 * std::f64::consts::PI * 1.5 * 1.5).ln();
        assert!((g.log_normalizer() - log_f).abs() < 1e-9);
        assert!((g.moment(2).unwrap() - 3.0 * 2.25).abs() < 1e-9);
    }

    #[test]
    fn separable_prior_factors() {
        let prior = GibbsPrior::new(Potential::Poly10Separable, 0.8, 3).unwrap();
        let (c, sp) = prior.blocks().unwrap();
        let theta = [0.3, -0.4, 0.9];
        assert!((prior.u(&theta) - (0.3f64.powi(10) + (0.16f64 + 0.81).powi(5))).abs() < 1e-15);
        assert!((prior.log_normalizer() - c.log_normalizer() - sp.log_normalizer()).abs() < 1e-12);
        // E‖θ‖² = E a² + E‖w‖²
        let want = poly10_moment_closed(1, 0.8, 2.0) + poly10_moment_closed(2, 0.8, 2.0);
        assert!((prior.moment(2).unwrap() / want - 1.0).abs() < 1e-9);
        let n = 50_000;
        let cloud = prior.sample(n, &mut rng::stream(4, &[])).unwrap();
        let a4 = cloud.average(|t| t[0].powi(4));
        let want = poly10_moment_closed(1, 0.8, 4.0);
        let sd = (poly10_moment_closed(1, 0.8, 8.0) - want * want).sqrt();
        assert!((a4 - want).abs() <= 3.0 * sd / (n as f64).sqrt());
        assert!(GibbsPrior::new(Potential::Poly10, 1.0, 3).unwrap().blocks().is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for pot in [Potential::Poly10, Potential::Gaussian, Potential::Poly10Separable] {
            let prior = GibbsPrior::new(pot, 1.0, 3).unwrap();
            let theta = [0.7, -0.5, 0.4];
            let g = prior.grad_u(&theta);
            for k in 0..3 {
                let h = 1e-6;
                let mut p = theta;
                let mut m = theta;
                p[k] += h;
                m[k] -= h;
                let fd = (prior.u(&p) - prior.u(&m)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7 * g[k].abs().max(1.0), "{pot:?} {k}");
            }
        }
    }

    #[test]
    fn gaussian_tilt_is_rejected() {
        let g = GibbsPrior::new(Potential::Gaussian, 1.0, 2).unwrap();
        assert!(matches!(TiltedPrior::new(g), Err(Error::NotNormalizable(_))));
        let sep = GibbsPrior::new(Potential::Gaussian, 1.0, 3).unwrap();
        assert!(comp_finetune_separable(&sep).is_err());
    }

    #[test]
    fn tilted_moment_small_sigma_scaling() {
        // with r = σ^{1/5} s the tilt contributes σ^{8/5} s⁸, so
        // M₄(σ) / σ^{4/5} → Γ((d+4)/10) / Γ(d/10) as σ → 0
        for d in [1usize, 2, 3] {
            let limit = poly10_moment_closed(d, 1.0, 4.0);
            let mut prev_err = f64::INFINITY;
            for sigma in [0.2, 0.1, 0.05] {
                let tp = TiltedPrior::new(GibbsPrior::new(Potential::Poly10, sigma, d).unwrap()).unwrap();
                let scaled = tp.moment(4).unwrap() / sigma.powf(0.8);
                let err = (scaled / limit - 1.0).abs();
                assert!(err < prev_err, "d={d} σ={sigma}: not converging ({err} vs {prev_err})");
                prev_err = err;
            }
            assert!(prev_err < 2e-2, "d={d}: {prev_err}");
        }
    }

    #[test]
    fn tilted_moment_is_stable_under_refinement() {
        for d in [1usize, 2, 4] {
            for sigma in [0.5, 1.0, 2.0] {
                let tp = TiltedPrior::new(GibbsPrior::new(Potential::Poly10, sigma, d).unwrap()).unwrap();
                for p in [4u32, 8] {
                    let base = tp.moment(p).unwrap();
                    let x2 = tp.moment_with_nodes(p, 2 * RADIAL_NODES).unwrap();
                    let x4 = tp.moment_with_nodes(p, 4 * RADIAL_NODES).unwrap();
                    assert!((base / x2 - 1.0).abs() <= 1e-8);
                    assert!((x2 / x4 - 1.0).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn tilted_eighth_moment_matches_importance_sampling() {
        let prior = GibbsPrior::new(Potential::Poly10, 1.0, 2).unwrap();
        let tp = TiltedPrior::new(prior).unwrap();
        let n = 200_000;
        let cloud = prior.sample(n, &mut rng::stream(5, &[])).unwrap();
        let mut sw = 0.0;
        let mut swx = 0.0;
        let pairs: Vec<(f64, f64)> = cloud
            .atoms()
            .map(|t| {
                let r2 = norm_sq(t);
                (r2.powi(4).exp(), r2.powi(4))
            })
            .collect();
        for (w, x) in &pairs {
            sw += w;
            swx += w * x;
        }
        let est = swx / sw;
        // delta-method SE of a self-normalized ratio
        let var = pairs.iter().map(|(w, x)| (w * (x - est)).powi(2)).sum::<f64>() / (sw * sw);
        let se = var.sqrt();
        let got = tp.moment(8).unwrap();
        assert!((got - est).abs() <= 3.0 * se, "{got} vs IS {est} ± {se}");
    }

    #[test]
    fn jensen_on_tilted_moments() {
        for d in [1usize, 2, 3, 6] {
            for sigma in [0.1, 0.7, 1.0, 3.0] {
                let tp = TiltedPrior::new(GibbsPrior::new(Potential::Poly10, sigma, d).unwrap()).unwrap();
                let m4 = tp.moment(4).unwrap();
                let m8 = tp.moment(8).unwrap();
                assert!(m4.is_finite() && m4 > 0.0 && m8.is_finite() && m8 > 0.0);
                assert!(m8 >= m4 * m4, "d={d} σ={sigma}");
            }
        }
    }

    #[test]
    fn complexity_formulas() {
        assert_eq!(comp_from_moments(0.0, 0.0), 1.0);
        assert_eq!(comp_from_moments(1.0, 1.0), 25.0);
        let tp = TiltedPrior::new(GibbsPrior::new(Potential::Poly10, 1.0, 3).unwrap()).unwrap();
        let (m8, m4) = (tilted_moment(&tp, 8).unwrap(), tilted_moment(&tp, 4).unwrap());
        let hand = (1.0 + 2.0 * m8 + 2.0 * m4).powi(2);
        assert!((comp_alpha(&tp).unwrap() - hand).abs() < 1e-12 * hand);

        assert_eq!(comp_finetune_from_integrals(0.0, 0.0, 0.0).value, 1.0);
        assert_eq!(comp_finetune_from_integrals(1.0, 1.0, 1.0).value, 16.0);

        let sep = GibbsPrior::new(Potential::Poly10Separable, 1.0, 3).unwrap();
        let ft = comp_finetune_separable(&sep).unwrap();
        let tc = TiltedPrior::new(GibbsPrior::new(Potential::Poly10, 1.0, 2).unwrap()).unwrap();
        let ts = TiltedPrior::new(GibbsPrior::new(Potential::Poly10, 1.0, 1).unwrap()).unwrap();
        let sp = GibbsPrior::new(Potential::Poly10, 1.0, 1).unwrap();
        let hand = (1.0
            + 2.0 * tc.moment(4).unwrap()
            + tc.moment(8).unwrap()
            + ts.moment(4).unwrap()
            + 2.0 * ts.moment(8).unwrap()
            + sp.moment(4).unwrap())
        .powi(2);
        assert!((ft.value - hand).abs() < 1e-12 * hand);
    }

    #[test]
    fn sampling_is_reproducible_per_stream() {
        let prior = GibbsPrior::new(Potential::Poly10, 1.0, 3).unwrap();
        let a = prior.sample(100, &mut rng::stream(9, &[1])).unwrap();
        let b = prior.sample(100, &mut rng::stream(9, &[1])).unwrap();
        assert_eq!(a, b);
    }
}
