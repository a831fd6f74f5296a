//! Risk, KL estimators, the regularized objective `𝒱^β` and the Gibbs
//! fixed-point residual.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{argument, check_dim, Error, Result};
use crate::measures::{DataMeasure, DataSet, ParticleCloud};
use crate::mfnet::{self, Activation, OuterLoss};
use crate::priors::{log_sum_exp, GibbsPrior};
use crate::rng;

/// `(σ, β, prior, network)` of `𝒱^β(m, ν) = R(m, ν) + σ²/(2β²) KL(m ‖ γ^σ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub act: Activation,
    pub ol: OuterLoss,
    pub prior: GibbsPrior,
    pub beta: f64,
}

impl Objective {
    pub fn new(act: Activation, ol: OuterLoss, prior: GibbsPrior, beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(argument(format!("beta must be positive and finite, got {beta}")));
        }
        Ok(Self { act, ol, prior, beta })
    }

    pub fn sigma(&self) -> f64 {
        self.prior.sigma
    }

    /// `σ²/(2β²)`
    pub fn kl_weight(&self) -> f64 {
        let s = self.prior.sigma;
        s * s / (2.0 * self.beta * self.beta)
    }
}

/// Average of `per_sample` over a data set, evaluated in parallel and summed
/// in sample order.
pub(crate) fn data_mean(data: &DataSet, per_sample: impl Fn(&[f64], f64) -> f64 + Sync) -> f64 {
    let q = data.input_dim();
    let vals: Vec<f64> = data
        .inputs()
        .par_chunks_exact(q)
        .zip(data.targets().par_iter())
        .map(|(x, &y)| per_sample(x, y))
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

pub(crate) fn measure_mean(data: &DataMeasure<'_>, per_sample: impl Fn(&[f64], f64) -> f64 + Sync) -> f64 {
    let mut total = 0.0;
    for (w, set) in data.components() {
        let m = data_mean(set, &per_sample);
        total += if w == 1.0 { m } else { w * m };
    }
    total
}

/// Risk of an arbitrary predictor `x ↦ ŷ`.
pub fn risk_of<'a>(
    predict: impl Fn(&[f64]) -> f64 + Sync,
    data: impl Into<DataMeasure<'a>>,
    ol: &OuterLoss,
) -> f64 {
    measure_mean(&data.into(), |x, y| ol.value(predict(x), y))
}

/// `R(m, ν) = ∫ ℓ(m, z) ν(dz)`; exact α-weighting for mixed views.
pub fn risk<'a>(
    cloud: &ParticleCloud,
    data: impl Into<DataMeasure<'a>>,
    act: Activation,
    ol: &OuterLoss,
) -> Result<f64> {
    let data = data.into();
    check_dim("cloud dim (expected q + 1)", data.input_dim() + 1, cloud.dim())?;
    Ok(risk_of(|x| mfnet::predict_unchecked(cloud, x, act), data, ol))
}

/// Risk of the product measure `m_c ⊗ m_sp`.
pub fn risk_product<'a>(
    w_cloud: &ParticleCloud,
    a_cloud: &ParticleCloud,
    data: impl Into<DataMeasure<'a>>,
    act: Activation,
    ol: &OuterLoss,
) -> Result<f64> {
    let data = data.into();
    check_dim("w-cloud dim (expected q)", data.input_dim(), w_cloud.dim())?;
    check_dim("a-cloud dim", 1, a_cloud.dim())?;
    let a_mean = a_cloud.average(|a| a[0]);
    Ok(risk_of(
        |x| mfnet::mean_feature_unchecked(w_cloud, x, act) * a_mean,
        data,
        ol,
    ))
}

/// A normalized density that can be evaluated and sampled.
pub trait Density: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, theta: &[f64]) -> f64;
    fn sample_into(&self, rng: &mut dyn rand::RngCore, out: &mut [f64]);

    fn sample(&self, count: usize, rng: &mut dyn rand::RngCore) -> Result<ParticleCloud> {
        if count == 0 {
            return Err(argument("sample count must be positive"));
        }
        let d = self.dim();
        let mut coords = vec![0.0; count * d];
        for atom in coords.chunks_exact_mut(d) {
            self.sample_into(rng, atom);
        }
        ParticleCloud::new(d, coords)
    }
}

/// Isotropic Gaussian `N(mean, s² I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDensity {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, std: f64) -> Result<Self> {
        if mean.is_empty() || !(std.is_finite() && std > 0.0) {
            return Err(argument("gaussian needs a non-empty mean and positive std"));
        }
        Ok(Self { mean, std })
    }
}

impl Density for GaussianDensity {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let d = self.mean.len() as f64;
        let s2 = self.std * self.std;
        let r2: f64 = theta.iter().zip(&self.mean).map(|(t, m)| (t - m) * (t - m)).sum();
        -0.5 * r2 / s2 - 0.5 * d * (2.0 * std::f64::consts::PI * s2).ln()
    }

    fn sample_into(&self, rng: &mut dyn rand::RngCore, out: &mut [f64]) {
        for (o, m) in out.iter_mut().zip(&self.mean) {
            let z: f64 = rng.sample(StandardNormal);
            *o = m + self.std * z;
        }
    }
}

/// Finite mixture of isotropic Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub components: Vec<GaussianDensity>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianDensity>) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(argument("mixture needs one weight per component"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(argument("mixture weights must be nonnegative and sum to 1"));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(argument("mixture components differ in dimension"));
        }
        Ok(Self { weights, components })
    }
}

impl Density for GaussianMixture {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.log_density(theta))
            .collect();
        log_sum_exp(terms.iter().copied())
    }

    fn sample_into(&self, rng: &mut dyn rand::RngCore, out: &mut [f64]) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        self.components[pick].sample_into(rng, out);
    }
}

/// A density given as a cache of `γ^σ` together with its log-normalizer.
#[derive(Clone, Copy, Debug)]
pub struct PriorDensity {
    prior: GibbsPrior,
    log_f: f64,
}

impl PriorDensity {
    pub fn new(prior: GibbsPrior) -> Self {
        Self {
            prior,
            log_f: prior.log_normalizer(),
        }
    }
}

impl Density for PriorDensity {
    fn dim(&self) -> usize {
        self.prior.dim
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        -self.prior.u(theta) / (self.prior.sigma * self.prior.sigma) - self.log_f
    }

    fn sample_into(&self, mut rng: &mut dyn rand::RngCore, out: &mut [f64]) {
        let c = self.prior.sample(1, &mut rng).expect("count is positive");
        out.copy_from_slice(c.as_slice());
    }

    fn sample(&self, count: usize, mut rng: &mut dyn rand::RngCore) -> Result<ParticleCloud> {
        self.prior.sample(count, &mut rng)
    }
}

/// Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl McEstimate {
    pub(crate) fn from_values(vals: &[f64]) -> Self {
        let n = vals.len();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            count: n,
        }
    }
}

/// `KL(m ‖ γ^σ) = E_{θ∼m}[log m(θ) − log γ^σ(θ)]` by Monte Carlo.
pub fn kl_parametric(density: &dyn Density, prior: &GibbsPrior, mc_count: usize, seed: u64) -> Result<McEstimate> {
    if mc_count < 1000 {
        return Err(argument(format!("mc_count must be at least 1000, got {mc_count}")));
    }
    check_dim("density dim", prior.dim, density.dim())?;
    let log_f = prior.log_normalizer();
    if !log_f.is_finite() {
        return Err(Error::NotNormalizable(format!("log F = {log_f}")));
    }
    let mut g = rng::stream(seed, &[rng::purpose::MONTE_CARLO]);
    let cloud = density.sample(mc_count, &mut g)?;
    let s2 = prior.sigma * prior.sigma;
    let vals: Vec<f64> = cloud
        .as_slice()
        .par_chunks_exact(cloud.dim())
        .map(|t| density.log_density(t) + prior.u(t) / s2 + log_f)
        .collect();
    Ok(McEstimate::from_values(&vals))
}

/// Nearest-neighbor KL diagnostic for a particle cloud.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnKl {
    pub estimate: f64,
    pub entropy: f64,
    pub cross_term: f64,
    pub k: usize,
    /// Duplicate atoms were separated by a 1e−12 jitter.
    pub jittered: bool,
}

fn kth_neighbor_distances(coords: &[f64], d: usize, k: usize) -> Vec<f64> {
    let r = coords.len() / d;
    (0..r)
        .into_par_iter()
        .map(|i| {
            let xi = &coords[i * d..(i + 1) * d];
            let mut best = vec![f64::INFINITY; k];
            for j in 0..r {
                if j == i {
                    continue;
                }
                let xj = &coords[j * d..(j + 1) * d];
                let mut s = 0.0;
                for (a, b) in xi.iter().zip(xj) {
                    s += (a - b) * (a - b);
                }
                if s < best[k - 1] {
                    let mut p = k - 1;
                    while p > 0 && best[p - 1] > s {
                        best[p] = best[p - 1];
                        p -= 1;
                    }
                    best[p] = s;
                }
            }
            best[k - 1].sqrt()
        })
        .collect()
}

/// Kozachenko–Leonenko entropy plugged into `KL = −H(m) + E_m[U/σ² + log F^σ]`.
/// A diagnostic only: the KL of an atomic measure is infinite.
pub fn kl_knn_diagnostic(cloud: &ParticleCloud, prior: &GibbsPrior, k: usize) -> Result<KnnKl> {
    let r = cloud.len();
    if r < 50 {
        return Err(argument(format!("k-NN diagnostic needs at least 50 atoms, got {r}")));
    }
    if k == 0 || k >= r {
        return Err(argument(format!("k must be in 1..{r}, got {k}")));
    }
    check_dim("cloud dim", prior.dim, cloud.dim())?;
    let d = cloud.dim();
    let mut coords = cloud.as_slice().to_vec();
    let mut eps = kth_neighbor_distances(&coords, d, k);
    let jittered = eps.iter().any(|&e| e == 0.0);
    if jittered {
        let mut g = rng::stream(0, &[rng::purpose::JITTER]);
        for c in coords.iter_mut() {
            let z: f64 = g.sample(StandardNormal);
            *c += 1e-12 * z;
        }
        eps = kth_neighbor_distances(&coords, d, k);
    }
    let df = d as f64;
    let log_vd = 0.5 * df * std::f64::consts::PI.ln() - ln_gamma(0.5 * df + 1.0);
    let mean_log_eps = eps.iter().map(|e| e.max(f64::MIN_POSITIVE).ln()).sum::<f64>() / r as f64;
    let entropy = digamma(r as f64) - digamma(k as f64) + log_vd + df * mean_log_eps;
    let log_f = prior.log_normalizer();
    let s2 = prior.sigma * prior.sigma;
    let cross_term = cloud.average(|t| prior.u(t) / s2) + log_f;
    Ok(KnnKl {
        estimate: cross_term - entropy,
        entropy,
        cross_term,
        k,
        jittered,
    })
}

/// What `v_beta` evaluates: a cloud (k-NN KL, flagged) or a density (Monte-Carlo KL).
pub enum VBetaInput<'a> {
    Cloud { cloud: &'a ParticleCloud, k: usize },
    Density { density: &'a dyn Density, mc_count: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VBeta {
    pub value: f64,
    pub risk: f64,
    pub kl: f64,
    pub kl_std_error: f64,
    pub kl_weight: f64,
    /// The KL term came from the k-NN diagnostic.
    pub kl_is_diagnostic: bool,
}

/// `𝒱^β = R + σ²/(2β²) KL`. For a density the risk is taken on its
/// Monte-Carlo sample cloud.
pub fn v_beta<'a>(obj: &Objective, input: VBetaInput<'_>, data: impl Into<DataMeasure<'a>>) -> Result<VBeta> {
    let data = data.into();
    let w = obj.kl_weight();
    let (risk_value, kl, se, diag) = match input {
        VBetaInput::Cloud { cloud, k } => {
            let kl = kl_knn_diagnostic(cloud, &obj.prior, k)?;
            (risk(cloud, data, obj.act, &obj.ol)?, kl.estimate, 0.0, true)
        }
        VBetaInput::Density { density, mc_count, seed } => {
            let kl = kl_parametric(density, &obj.prior, mc_count, seed)?;
            let mut g = rng::stream(seed, &[rng::purpose::MONTE_CARLO, 1]);
            let cloud = density.sample(mc_count, &mut g)?;
            (risk(&cloud, data, obj.act, &obj.ol)?, kl.mean, kl.std_error, false)
        }
    };
    Ok(VBeta {
        value: risk_value + w * kl,
        risk: risk_value,
        kl,
        kl_std_error: se,
        kl_weight: w,
        kl_is_diagnostic: diag,
    })
}

/// A rectangular lattice of cells in one or two dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bins: Vec<usize>,
    /// Sub-sample points per cell and axis for the cell-averaged density.
    pub subsamples: usize,
}

impl Lattice {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, bins: Vec<usize>) -> Result<Self> {
        let d = lo.len();
        if d == 0 || d > 2 {
            return Err(Error::Unsupported(format!("lattices are 1-D or 2-D, got {d}")));
        }
        if hi.len() != d || bins.len() != d {
            return Err(argument("lattice lo/hi/bins lengths differ"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) || bins.iter().any(|&b| b == 0) {
            return Err(argument("lattice needs lo < hi and positive bin counts"));
        }
        Ok(Self { lo, hi, bins, subsamples: 8 })
    }

    /// Bounding box of the cloud, widened by `pad` on every side.
    pub fn covering(cloud: &ParticleCloud, bins: usize, pad: f64) -> Result<Self> {
        let d = cloud.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for t in cloud.atoms() {
            for k in 0..d {
                lo[k] = lo[k].min(t[k]);
                hi[k] = hi[k].max(t[k]);
            }
        }
        for k in 0..d {
            lo[k] -= pad;
            hi[k] += pad;
        }
        Self::new(lo, hi, vec![bins; d])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn cell_count(&self) -> usize {
        self.bins.iter().product()
    }

    fn width(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / self.bins[k] as f64
    }

    fn cell_of(&self, theta: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for k in (0..self.dim()).rev() {
            let f = (theta[k] - self.lo[k]) / self.width(k);
            if !(f >= 0.0) || f >= self.bins[k] as f64 {
                return None;
            }
            idx = idx * self.bins[k] + f as usize;
        }
        Some(idx)
    }

    /// Sub-sample points of cell `c`.
    fn cell_points(&self, c: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut coord = vec![0usize; d];
        let mut rest = c;
        for k in 0..d {
            coord[k] = rest % self.bins[k];
            rest /= self.bins[k];
        }
        let s = self.subsamples;
        let mut pts = Vec::with_capacity(s.pow(d as u32));
        let axis = |k: usize, j: usize| self.lo[k] + self.width(k) * (coord[k] as f64 + (j as f64 + 0.5) / s as f64);
        if d == 1 {
            for j in 0..s {
                pts.push(vec![axis(0, j)]);
            }
        } else {
            for j0 in 0..s {
                for j1 in 0..s {
                    pts.push(vec![axis(0, j0), axis(1, j1)]);
                }
            }
        }
        pts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsResidual {
    /// Total variation between the cloud histogram and the target cell masses.
    pub tv: f64,
    /// Fraction of atoms outside the lattice.
    pub outside_mass: f64,
}

/// `δR/δm(m, ν, θ)` up to its additive constant: `E_z[∂_ŷℓ_o(Φ, y) φ(θ, x)]`.
struct FlatRisk {
    xs: Vec<f64>,
    gs: Vec<f64>,
    q: usize,
    act: Activation,
}

impl FlatRisk {
    fn new(cloud: &ParticleCloud, data: &DataMeasure<'_>, act: Activation, ol: &OuterLoss) -> Self {
        let q = data.input_dim();
        let mut xs = Vec::new();
        let mut gs = Vec::new();
        for (w, set) in data.components() {
            let n = set.len() as f64;
            for z in set.samples() {
                let phi = mfnet::predict_unchecked(cloud, z.x, act);
                xs.extend_from_slice(z.x);
                gs.push(w / n * ol.d_pred(phi, z.y));
            }
        }
        Self { xs, gs, q, act }
    }

    fn eval(&self, theta: &[f64]) -> f64 {
        self.xs
            .chunks_exact(self.q)
            .zip(&self.gs)
            .map(|(x, g)| g * mfnet::unit_output(theta, x, self.act))
            .sum()
    }
}

/// TV distance between the cloud and the self-consistent Gibbs density
/// `∝ exp{−(2β²/σ²) δR/δm(cloud, ν, θ) − U(θ)/σ²}` on a lattice.
pub fn gibbs_residual<'a>(
    cloud: &ParticleCloud,
    data: impl Into<DataMeasure<'a>>,
    obj: &Objective,
    lattice: &Lattice,
) -> Result<GibbsResidual> {
    gibbs_residual_with_offset(cloud, data, obj, lattice, 0.0)
}

/// As [`gibbs_residual`], with a constant added to `δR/δm` before normalizing.
pub fn gibbs_residual_with_offset<'a>(
    cloud: &ParticleCloud,
    data: impl Into<DataMeasure<'a>>,
    obj: &Objective,
    lattice: &Lattice,
    offset: f64,
) -> Result<GibbsResidual> {
    let data = data.into();
    if cloud.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "Gibbs residual is limited to parameter dimension <= 2, got {}",
            cloud.dim()
        )));
    }
    let (hist, outside_mass) = cloud_histogram(cloud, lattice)?;
    if outside_mass > 1e-3 {
        return Err(argument(format!(
            "lattice covers only {:.4}% of the cloud (need 99.9%)",
            100.0 * (1.0 - outside_mass)
        )));
    }
    let target = gibbs_cell_masses(cloud, data, obj, lattice, offset)?;
    // mass outside the lattice counts fully against the cloud
    Ok(GibbsResidual {
        tv: total_variation(&target, &hist) + 0.5 * outside_mass,
        outside_mass,
    })
}

/// Fraction of atoms per lattice cell, and the fraction outside the lattice.
pub fn cloud_histogram(cloud: &ParticleCloud, lattice: &Lattice) -> Result<(Vec<f64>, f64)> {
    check_dim("lattice dim", cloud.dim(), lattice.dim())?;
    let mut hist = vec![0.0; lattice.cell_count()];
    let mut outside = 0usize;
    for t in cloud.atoms() {
        match lattice.cell_of(t) {
            Some(c) => hist[c] += 1.0,
            None => outside += 1,
        }
    }
    let r = cloud.len() as f64;
    hist.iter_mut().for_each(|h| *h /= r);
    Ok((hist, outside as f64 / r))
}

/// Normalized cell masses of the self-consistent Gibbs density on the lattice,
/// each cell averaged over its sub-sample points.
pub fn gibbs_cell_masses<'a>(
    cloud: &ParticleCloud,
    data: impl Into<DataMeasure<'a>>,
    obj: &Objective,
    lattice: &Lattice,
    offset: f64,
) -> Result<Vec<f64>> {
    let data = data.into();
    let d = cloud.dim();
    if d > 2 {
        return Err(Error::Unsupported(format!(
            "Gibbs residual is limited to parameter dimension <= 2, got {d}"
        )));
    }
    check_dim("lattice dim", d, lattice.dim())?;
    check_dim("cloud dim (expected q + 1)", data.input_dim() + 1, d)?;
    check_dim("prior dim", d, obj.prior.dim)?;
    let flat = FlatRisk::new(cloud, &data, obj.act, &obj.ol);
    let s2 = obj.prior.sigma * obj.prior.sigma;
    let scale = 2.0 * obj.beta * obj.beta / s2;
    let log_mass: Vec<f64> = (0..lattice.cell_count())
        .into_par_iter()
        .map(|c| {
            let logs: Vec<f64> = lattice
                .cell_points(c)
                .iter()
                .map(|t| -scale * (flat.eval(t) + offset) - obj.prior.u(t) / s2)
                .collect();
            log_sum_exp(logs.iter().copied()) - (logs.len() as f64).ln()
        })
        .collect();
    let log_z = log_sum_exp(log_mass.iter().copied());
    Ok(log_mass.iter().map(|lm| (lm - log_z).exp()).collect())
}

/// `½ Σ |p − q|`
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{MixedDataView, Sample};
    use crate::priors::Potential;

    fn data(n: usize, q: usize, seed: u64) -> DataSet {
        let mut g = rng::stream(seed, &[7]);
        let xs: Vec<f64> = (0..n * q).map(|_| g.sample(StandardNormal)).collect();
        let ys: Vec<f64> = (0..n).map(|_| g.sample(StandardNormal)).collect();
        DataSet::new(q, xs, ys).unwrap()
    }

    fn cloud(r: usize, d: usize, seed: u64) -> ParticleCloud {
        let mut g = rng::stream(seed, &[8]);
        ParticleCloud::new(d, (0..r * d).map(|_| g.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn risk_examples() {
        let ol = OuterLoss::quadratic();
        let m = cloud(5, 3, 1);
        let x = data(6, 2, 2);
        let ys: Vec<f64> = x.samples().map(|z| mfnet::predict(&m, z.x, Activation::Tanh).unwrap()).collect();
        let fit = DataSet::new(2, x.inputs().to_vec(), ys).unwrap();
        assert_eq!(risk(&m, &fit, Activation::Tanh, &ol).unwrap(), 0.0);

        let one = data(1, 2, 3);
        let l = mfnet::loss(&m, one.sample(0), Activation::Relu, &ol).unwrap();
        assert_eq!(risk(&m, &one, Activation::Relu, &ol).unwrap(), l);

        let four = data(4, 2, 4);
        let direct = four
            .samples()
            .map(|z| mfnet::loss(&m, z, Activation::Sigmoid, &ol).unwrap())
            .sum::<f64>()
            / 4.0;
        assert!((risk(&m, &four, Activation::Sigmoid, &ol).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn risk_is_affine_in_the_data_measure() {
        let ol = OuterLoss::logcosh();
        let m = cloud(7, 3, 5);
        let t = data(5, 2, 6);
        let s = data(9, 2, 7);
        for alpha in [0.0, 0.2, 0.5, 0.9, 1.0] {
            let mixed = MixedDataView::new(&t, &s, alpha).unwrap();
            let lhs = risk(&m, mixed, Activation::Tanh, &ol).unwrap();
            let rhs = alpha * risk(&m, &t, Activation::Tanh, &ol).unwrap()
                + (1.0 - alpha) * risk(&m, &s, Activation::Tanh, &ol).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
            assert!(lhs >= 0.0);
        }
    }

    #[test]
    fn kl_of_prior_against_itself_is_zero() {
        for pot in [Potential::Gaussian, Potential::Poly10] {
            let prior = GibbsPrior::new(pot, 1.0, 2).unwrap();
            let est = kl_parametric(&PriorDensity::new(prior), &prior, 20_000, 1).unwrap();
            assert!(est.mean.abs() <= 3.0 * est.std_error + 1e-12, "{pot:?}: {est:?}");
        }
    }

    #[test]
    fn kl_gaussian_closed_form() {
        let prior = GibbsPrior::new(Potential::Gaussian, 1.0, 1).unwrap();
        let m = GaussianDensity::new(vec![0.0], 2.0).unwrap();
        let est = kl_parametric(&m, &prior, 50_000, 2).unwrap();
        let exact = (0.5f64).ln() + (4.0 - 1.0) / 2.0;
        assert!((est.mean - exact).abs() <= 3.0 * est.std_error, "{est:?} vs {exact}");
        assert!(kl_parametric(&m, &prior, 10, 2).is_err());
    }

    #[test]
    fn kl_mixture_matches_quadrature() {
        let prior = GibbsPrior::new(Potential::Poly10, 1.0, 1).unwrap();
        let m = GaussianMixture::new(
            vec![0.3, 0.7],
            vec![
                GaussianDensity::new(vec![-0.5], 0.2).unwrap(),
                GaussianDensity::new(vec![0.4], 0.3).unwrap(),
            ],
        )
        .unwrap();
        // midpoint rule on a fine grid, independent of the radial machinery
        let log_f = {
            let h = 1e-5;
            let s: f64 = (0..400_000).map(|i| (-(-2.0 + (i as f64 + 0.5) * h).powi(10)).exp()).sum();
            (s * h).ln()
        };
        let h = 1e-5;
        let mut kl = 0.0;
        for i in 0..600_000 {
            let t = -3.0 + (i as f64 + 0.5) * h;
            let lm = m.log_density(&[t]);
            kl += lm.exp() * (lm + t.powi(10) + log_f) * h;
        }
        let est = kl_parametric(&m, &prior, 100_000, 3).unwrap();
        assert!((est.mean - kl).abs() <= 3.0 * est.std_error, "{est:?} vs {kl}");
    }

    #[test]
    fn knn_diagnostic_consistency() {
        let prior = GibbsPrior::new(Potential::Poly10, 1.0, 2).unwrap();
        let c = prior.sample(10_000, &mut rng::stream(4, &[])).unwrap();
        let est = kl_knn_diagnostic(&c, &prior, 5).unwrap();
        assert!(est.estimate.abs() <= 0.1, "{est:?}");
        assert!(!est.jittered);

        let g = GibbsPrior::new(Potential::Gaussian, 1.0, 1).unwrap();
        let wide = GaussianDensity::new(vec![0.0], 2.0).unwrap();
        let c = wide.sample(10_000, &mut rng::stream(5, &[])).unwrap();
        let est = kl_knn_diagnostic(&c, &g, 5).unwrap();
        let exact = 0.5 * (4.0 - 1.0 - 4f64.ln());
        assert!((est.estimate - exact).abs() <= 0.1, "{est:?} vs {exact}");

        let base = g.sample(2000, &mut rng::stream(6, &[])).unwrap();
        let shifted = ParticleCloud::new(1, base.as_slice().iter().map(|v| v + 10.0).collect()).unwrap();
        let a = kl_knn_diagnostic(&base, &g, 5).unwrap().estimate;
        let b = kl_knn_diagnostic(&shifted, &g, 5).unwrap().estimate;
        assert!(b > a);
    }

    #[test]
    fn knn_diagnostic_flags_duplicates() {
        let g = GibbsPrior::new(Potential::Gaussian, 1.0, 1).unwrap();
        let base = g.sample(100, &mut rng::stream(7, &[])).unwrap();
        let mut coords = base.as_slice().to_vec();
        coords.extend_from_slice(&base.as_slice()[..20]);
        let dup = ParticleCloud::new(1, coords).unwrap();
        let est = kl_knn_diagnostic(&dup, &g, 1).unwrap();
        assert!(est.jittered && est.estimate.is_finite());
        assert!(kl_knn_diagnostic(&cloud(10, 1, 1), &g, 5).is_err());
    }

    #[test]
    fn v_beta_decomposes() {
        let prior = GibbsPrior::new(Potential::Gaussian, 1.0, 3).unwrap();
        let c = prior.sample(500, &mut rng::stream(8, &[])).unwrap();
        let d = data(20, 2, 9);
        for beta in [1.0, 10.0, 1e4] {
            let obj = Objective::new(Activation::Tanh, OuterLoss::quadratic(), prior, beta).unwrap();
            let v = v_beta(&obj, VBetaInput::Cloud { cloud: &c, k: 5 }, &d).unwrap();
            let r = risk(&c, &d, Activation::Tanh, &OuterLoss::quadratic()).unwrap();
            assert_eq!(v.risk, r);
            // up to the rounding of the final addition
            assert!((v.value - r).abs() <= obj.kl_weight() * v.kl.abs() * (1.0 + 1e-12) + 4.0 * f64::EPSILON * r);
            assert!(v.kl_is_diagnostic);
        }
    }

    #[test]
    fn v_beta_of_prior_with_zero_labels() {
        // a ↦ −a symmetry makes Φ(γ^σ, x) = 0, so y = 0 is a zero-risk target
        let prior = GibbsPrior::new(Potential::Poly10, 1.0, 3).unwrap();
        let obj = Objective::new(Activation::Tanh, OuterLoss::quadratic(), prior, 1.0).unwrap();
        let x = data(10, 2, 10);
        let zero = DataSet::new(2, x.inputs().to_vec(), vec![0.0; 10]).unwrap();
        let density = PriorDensity::new(prior);
        let v = v_beta(
            &obj,
            VBetaInput::Density { density: &density, mc_count: 20_000, seed: 11 },
            &zero,
        )
        .unwrap();
        assert!(!v.kl_is_diagnostic);
        assert!(v.risk < 1e-3);
        assert!(v.value.abs() <= obj.kl_weight() * 3.0 * v.kl_std_error + v.risk + 1e-12, "{v:?}");

        // hand composition on a fixed instance
        let g = GaussianDensity::new(vec![0.1, 0.0, -0.2], 0.8).unwrap();
        let v = v_beta(&obj, VBetaInput::Density { density: &g, mc_count: 5000, seed: 12 }, &x).unwrap();
        let kl = kl_parametric(&g, &prior, 5000, 12).unwrap();
        let sample = g.sample(5000, &mut rng::stream(12, &[rng::purpose::MONTE_CARLO, 1])).unwrap();
        let r = risk(&sample, &x, Activation::Tanh, &OuterLoss::quadratic()).unwrap();
        assert_eq!(v.value, r + 0.5 * kl.mean);
    }

    #[test]
    fn gibbs_residual_recovers_prior_on_null_data() {
        let prior = GibbsPrior::new(Potential::Poly10, 1.0, 2).unwrap();
        let obj = Objective::new(Activation::Tanh, OuterLoss::quadratic(), prior, 2.0).unwrap();
        // x = 0 under tanh: every unit outputs 0, so R ≡ 0
        let null = DataSet::from_samples(&[Sample::new(vec![0.0], 0.0)]).unwrap();
        let c = prior.sample(10_000, &mut rng::stream(13, &[])).unwrap();
        let lattice = Lattice::covering(&c, 12, 1e-9).unwrap();
        let res = gibbs_residual(&c, &null, &obj, &lattice).unwrap();
        assert!(res.tv <= 0.1, "{res:?}");
        assert_eq!(res.outside_mass, 0.0);
    }

    #[test]
    fn gibbs_residual_ignores_offsets_and_guards_inputs() {
        let prior = GibbsPrior::new(Potential::Poly10, 1.0, 2).unwrap();
        let obj = Objective::new(Activation::Tanh, OuterLoss::quadratic(), prior, 1.5).unwrap();
        let d = data(16, 1, 14);
        let c = prior.sample(2000, &mut rng::stream(15, &[])).unwrap();
        let lattice = Lattice::covering(&c, 10, 0.01).unwrap();
        let a = gibbs_residual(&c, &d, &obj, &lattice).unwrap();
        for off in [-3.0, 0.5, 40.0] {
            let b = gibbs_residual_with_offset(&c, &d, &obj, &lattice, off).unwrap();
            assert!((a.tv - b.tv).abs() < 1e-10);
        }
        let small = Lattice::new(vec![-0.1, -0.1], vec![0.1, 0.1], vec![4, 4]).unwrap();
        assert!(gibbs_residual(&c, &d, &obj, &small).is_err());

        let p3 = GibbsPrior::new(Potential::Poly10, 1.0, 3).unwrap();
        let obj3 = Objective::new(Activation::Tanh, OuterLoss::quadratic(), p3, 1.0).unwrap();
        let c3 = p3.sample(100, &mut rng::stream(16, &[])).unwrap();
        assert!(matches!(
            gibbs_residual(&c3, &data(4, 2, 1), &obj3, &lattice),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn density_against_itself_has_zero_tv() {
        let prior = GibbsPrior::new(Potential::Poly10, 1.0, 2).unwrap();
        let obj = Objective::new(Activation::Tanh, OuterLoss::quadratic(), prior, 1.0).unwrap();
        let c = prior.sample(3000, &mut rng::stream(17, &[])).unwrap();
        let d = data(8, 1, 18);
        let l1 = Lattice::covering(&c, 9, 0.05).unwrap();
        let l2 = l1.clone();
        let a = gibbs_cell_masses(&c, &d, &obj, &l1, 0.0).unwrap();
        let b = gibbs_cell_masses(&c, &d, &obj, &l2, 0.0).unwrap();
        assert_eq!(total_variation(&a, &b), 0.0);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
