//! Mean-field Langevin dynamics over particle clouds, and the supervised,
//! α-ERM and two-stage fine-tuning learners built on it.
//!
//! One Euler–Maruyama step moves every atom by
//!
//! ```text
//! θ ← θ − η [ E_ν ∇_θ δℓ/δm(m, z, θ) + ∇U(θ)/(2β²) ] + (σ/β) √η ξ
//! ```
//!
//! whose continuous-time stationary law is `∝ exp{−(2β²/σ²) δR/δm − U/σ²}`.
//! The noise for atom `i` at step `k` comes from its own stream keyed by
//! `(seed, k, i)`, so the result never depends on how atoms are scheduled.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, check_dim, Error, Result};
use crate::measures::{read_clouds, write_cloud, DataMeasure, DataSet, MixedDataView, ParticleCloud, SampleView};
use crate::mfnet::{self, Activation, OuterLoss};
use crate::objective::{self, Objective};
use crate::priors::GibbsPrior;
use crate::rng::{self, purpose};

/// Coordinates beyond this magnitude abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Supervised,
    AlphaErm,
    Finetune,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Supervised => "supervised",
            Scenario::AlphaErm => "alpha_erm",
            Scenario::Finetune => "finetune",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    #[default]
    Full,
    /// Each step draws `size` samples with replacement; under α-ERM each
    /// draw comes from the target set with probability α.
    Minibatch { size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_t: Option<f64>,
    pub sigma: f64,
    pub particles: usize,
    pub steps: usize,
    /// Fine-tuning stage-2 steps; defaults to `steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage2_steps: Option<usize>,
    pub step_size: f64,
    #[serde(default)]
    pub batch: Batch,
    pub seed: u64,
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn positive(field: &str, v: Option<f64>) -> Result<f64> {
    match v {
        Some(x) if x.is_finite() && x > 0.0 => Ok(x),
        Some(x) => Err(config_error(field, format!("must be positive and finite, got {x}"))),
        None => Err(config_error(field, "required for this scenario")),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        positive("sigma", Some(self.sigma))?;
        if self.step_size.is_nan() || self.step_size < 0.0 {
            return Err(config_error("step_size", "must be nonnegative"));
        }
        if self.particles == 0 {
            return Err(config_error("particles", "must be at least 1"));
        }
        if let Batch::Minibatch { size: 0 } = self.batch {
            return Err(config_error("batch.minibatch.size", "must be at least 1"));
        }
        match self.scenario {
            Scenario::Supervised => {
                positive("beta", self.beta)?;
            }
            Scenario::AlphaErm => {
                positive("beta", self.beta)?;
                match self.alpha {
                    Some(a) if (0.0..=1.0).contains(&a) => {}
                    Some(a) => return Err(config_error("alpha", format!("must lie in [0, 1], got {a}"))),
                    None => return Err(config_error("alpha", "required for alpha_erm")),
                }
            }
            Scenario::Finetune => {
                positive("beta_s", self.beta_s)?;
                positive("beta_t", self.beta_t)?;
            }
        }
        Ok(())
    }

    pub fn stage2_steps(&self) -> usize {
        self.stage2_steps.unwrap_or(self.steps)
    }
}

/// `(σ/β) √η`
pub fn noise_scale(sigma: f64, beta: f64, eta: f64) -> f64 {
    sigma / beta * eta.sqrt()
}

/// Data points with integration weights: either the full data measure or a
/// minibatch drawn from it. `index` points into the concatenated components.
struct Weighted {
    q: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    ws: Vec<f64>,
    index: Vec<usize>,
}

impl Weighted {
    fn full(data: &DataMeasure<'_>) -> Self {
        let q = data.input_dim();
        let mut out = Weighted {
            q,
            xs: Vec::new(),
            ys: Vec::new(),
            ws: Vec::new(),
            index: Vec::new(),
        };
        let mut offset = 0;
        for (w, set) in data.components() {
            let wn = w / set.len() as f64;
            out.xs.extend_from_slice(set.inputs());
            out.ys.extend_from_slice(set.targets());
            out.ws.extend(std::iter::repeat_n(wn, set.len()));
            out.index.extend(offset..offset + set.len());
            offset += set.len();
        }
        out
    }

    fn minibatch(data: &DataMeasure<'_>, size: usize, seed: u64, tag: u64, step: usize) -> Self {
        let q = data.input_dim();
        let comps = data.components();
        let mut g = rng::stream(seed, &[purpose::BATCH, tag, step as u64]);
        let mut out = Weighted {
            q,
            xs: Vec::with_capacity(size * q),
            ys: Vec::with_capacity(size),
            ws: vec![1.0 / size as f64; size],
            index: Vec::with_capacity(size),
        };
        for _ in 0..size {
            let mut k = 0;
            if comps.len() > 1 {
                let u: f64 = g.random();
                if u >= comps[0].0 {
                    k = 1;
                }
            }
            let set = comps[k].1;
            let j = g.random_range(0..set.len());
            let offset: usize = comps[..k].iter().map(|c| c.1.len()).sum();
            let z = set.sample(j);
            out.xs.extend_from_slice(z.x);
            out.ys.push(z.y);
            out.index.push(offset + j);
        }
        out
    }

    fn len(&self) -> usize {
        self.ys.len()
    }

    fn x(&self, j: usize) -> &[f64] {
        &self.xs[j * self.q..(j + 1) * self.q]
    }
}

struct StepOutcome {
    coords: Vec<f64>,
    risk: f64,
    drift_norm: f64,
}

fn check_finite(coords: &[f64], stage: &str, step: usize) -> Result<()> {
    if let Some((i, v)) = coords
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.abs() <= DIVERGENCE_LIMIT))
    {
        return Err(Error::Diverged {
            stage: stage.to_string(),
            step,
            detail: format!("coordinate {i} reached {v:e}"),
            risk_prefix: Vec::new(),
        });
    }
    Ok(())
}

/// Network outputs `Φ(m, x_j)` and the per-unit features `ϕ(w_i·x_j)`,
/// `ϕ'(w_i·x_j)` (row-major by atom).
struct Features {
    phi: Vec<f64>,
    s: Vec<f64>,
    ds: Vec<f64>,
}

fn features(coords: &[f64], d: usize, wd: &Weighted, act: Activation) -> Features {
    let n = wd.len();
    let r = coords.len() / d;
    let mut s = vec![0.0; r * n];
    let mut ds = vec![0.0; r * n];
    s.par_chunks_mut(n)
        .zip(ds.par_chunks_mut(n))
        .zip(coords.par_chunks(d))
        .for_each(|((s_row, ds_row), theta)| {
            let w = &theta[1..];
            for j in 0..n {
                let (v, dv) = act.eval_with_derivative(crate::measures::dot(w, wd.x(j)));
                s_row[j] = v;
                ds_row[j] = dv;
            }
        });
    let phi: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..r {
                acc += coords[i * d] * s[i * n + j];
            }
            acc / r as f64
        })
        .collect();
    Features { phi, s, ds }
}

/// Data part of the drift, `E_ν ∇_θ δℓ/δm(m, z, θ_i)`, given `c_j = w_j ∂_ŷℓ_o(Φ_j, y_j)`.
#[inline]
fn data_drift(theta: &[f64], row: usize, f: &Features, c: &[f64], wd: &Weighted, out: &mut [f64]) {
    let n = c.len();
    let a = theta[0];
    out.iter_mut().for_each(|o| *o = 0.0);
    for j in 0..n {
        let cj = c[j];
        out[0] += cj * f.s[row * n + j];
        let k = cj * a * f.ds[row * n + j];
        for (o, xi) in out[1..].iter_mut().zip(wd.x(j)) {
            *o += k * xi;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn joint_step(
    coords: &[f64],
    d: usize,
    wd: &Weighted,
    obj: &Objective,
    eta: f64,
    noise: f64,
    seed: u64,
    noise_tag: u64,
    step: usize,
) -> StepOutcome {
    let f = features(coords, d, wd, obj.act);
    let c: Vec<f64> = (0..wd.len()).map(|j| wd.ws[j] * obj.ol.d_pred(f.phi[j], wd.ys[j])).collect();
    let risk: f64 = (0..wd.len()).map(|j| wd.ws[j] * obj.ol.value(f.phi[j], wd.ys[j])).sum();
    let inv2b2 = 1.0 / (2.0 * obj.beta * obj.beta);
    let mut next = vec![0.0; coords.len()];
    let norms: Vec<f64> = next
        .par_chunks_mut(d)
        .zip(coords.par_chunks(d))
        .enumerate()
        .map(|(i, (out, theta))| {
            let mut drift = vec![0.0; d];
            let mut gu = vec![0.0; d];
            data_drift(theta, i, &f, &c, wd, &mut drift);
            obj.prior.grad_u_into(theta, &mut gu);
            let mut sq = 0.0;
            for k in 0..d {
                let v = drift[k] + gu[k] * inv2b2;
                sq += v * v;
                out[k] = theta[k] - eta * v;
            }
            if noise != 0.0 {
                let mut g = rng::stream(seed, &[noise_tag, step as u64, i as u64]);
                for o in out.iter_mut() {
                    let z: f64 = g.sample(StandardNormal);
                    *o += noise * z;
                }
            }
            sq
        })
        .collect();
    let r = norms.len() as f64;
    StepOutcome {
        coords: next,
        risk,
        drift_norm: (norms.iter().sum::<f64>() / r).sqrt(),
    }
}

/// The full drift `E_ν ∇_θ δℓ/δm + ∇U/(2β²)` at every atom, laid out like the cloud.
pub fn drift<'a>(cloud: &ParticleCloud, data: impl Into<DataMeasure<'a>>, obj: &Objective) -> Result<Vec<f64>> {
    let data = data.into();
    obj.act.trainable()?;
    check_dim("cloud dim (expected q + 1)", data.input_dim() + 1, cloud.dim())?;
    let wd = Weighted::full(&data);
    let d = cloud.dim();
    let f = features(cloud.as_slice(), d, &wd, obj.act);
    let c: Vec<f64> = (0..wd.len()).map(|j| wd.ws[j] * obj.ol.d_pred(f.phi[j], wd.ys[j])).collect();
    let inv2b2 = 1.0 / (2.0 * obj.beta * obj.beta);
    let mut out = vec![0.0; cloud.as_slice().len()];
    out.par_chunks_mut(d)
        .zip(cloud.as_slice().par_chunks(d))
        .enumerate()
        .for_each(|(i, (o, theta))| {
            data_drift(theta, i, &f, &c, &wd, o);
            let gu = obj.prior.grad_u(theta);
            for k in 0..d {
                o[k] += gu[k] * inv2b2;
            }
        });
    Ok(out)
}

/// One Euler–Maruyama step with the Gibbs noise scale `(σ/β)√η`.
/// `(seed, step)` select the per-atom noise streams.
pub fn langevin_step<'a>(
    cloud: &ParticleCloud,
    data: impl Into<DataMeasure<'a>>,
    obj: &Objective,
    eta: f64,
    seed: u64,
    step: usize,
) -> Result<ParticleCloud> {
    let noise = noise_scale(obj.prior.sigma, obj.beta, eta);
    langevin_step_with_noise(cloud, data, obj, eta, noise, seed, step)
}

/// One step with an explicit noise scale (0 gives plain gradient descent).
pub fn langevin_step_with_noise<'a>(
    cloud: &ParticleCloud,
    data: impl Into<DataMeasure<'a>>,
    obj: &Objective,
    eta: f64,
    noise: f64,
    seed: u64,
    step: usize,
) -> Result<ParticleCloud> {
    let data = data.into();
    obj.act.trainable()?;
    if eta.is_nan() || eta < 0.0 {
        return Err(argument(format!("step size must be nonnegative, got {eta}")));
    }
    check_dim("cloud dim (expected q + 1)", data.input_dim() + 1, cloud.dim())?;
    check_dim("prior dim", cloud.dim(), obj.prior.dim)?;
    if eta == 0.0 {
        return Ok(cloud.clone());
    }
    let wd = Weighted::full(&data);
    let out = joint_step(cloud.as_slice(), cloud.dim(), &wd, obj, eta, noise, seed, purpose::NOISE, step);
    check_finite(&out.coords, "langevin", step)?;
    Ok(ParticleCloud::from_raw(cloud.dim(), out.coords))
}

/// One row of the training trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub train_risk: f64,
    pub drift_norm: f64,
    pub noise_scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelBody {
    Joint(ParticleCloud),
    /// Frozen hidden-weight cloud and the retrained outer-weight cloud.
    Product { w_cloud: ParticleCloud, a_cloud: ParticleCloud },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub scenario: Scenario,
    pub body: ModelBody,
    pub act: Activation,
    pub ol: OuterLoss,
    pub config: TrainConfig,
    pub trace: Vec<TraceRow>,
    /// Rows of `trace` that belong to stage 1 (all rows for joint models).
    pub stage1_rows: usize,
}

const MODEL_FORMAT: &str = "trained-model";

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    scenario: Scenario,
    act: Activation,
    ol: OuterLoss,
    config: TrainConfig,
    clouds: usize,
    stage1_rows: usize,
    trace: Vec<TraceRow>,
}

impl TrainedModel {
    pub fn input_dim(&self) -> usize {
        match &self.body {
            ModelBody::Joint(c) => c.dim() - 1,
            ModelBody::Product { w_cloud, .. } => w_cloud.dim(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim("input", self.input_dim(), x.len())?;
        Ok(self.predict_unchecked(x))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        match &self.body {
            ModelBody::Joint(c) => mfnet::predict_unchecked(c, x, self.act),
            ModelBody::Product { w_cloud, a_cloud } => {
                mfnet::mean_feature_unchecked(w_cloud, x, self.act) * a_cloud.average(|a| a[0])
            }
        }
    }

    pub fn loss(&self, z: SampleView<'_>) -> Result<f64> {
        Ok(self.ol.value(self.predict(z.x)?, z.y))
    }

    pub fn risk<'a>(&self, data: impl Into<DataMeasure<'a>>) -> Result<f64> {
        let data = data.into();
        check_dim("data input dim", self.input_dim(), data.input_dim())?;
        match &self.body {
            ModelBody::Joint(c) => objective::risk(c, data, self.act, &self.ol),
            ModelBody::Product { w_cloud, a_cloud } => objective::risk_product(w_cloud, a_cloud, data, self.act, &self.ol),
        }
    }

    pub fn joint_cloud(&self) -> Option<&ParticleCloud> {
        match &self.body {
            ModelBody::Joint(c) => Some(c),
            ModelBody::Product { .. } => None,
        }
    }

    pub fn final_train_risk(&self) -> Option<f64> {
        self.trace.last().map(|r| r.train_risk)
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "step,train_risk,drift_norm,noise_scale")?;
        for r in &self.trace {
            writeln!(w, "{},{:e},{:e},{:e}", r.step, r.train_risk, r.drift_norm, r.noise_scale)?;
        }
        w.flush()?;
        Ok(())
    }

    /// A header line followed by one or two clouds in the JSON-lines format.
    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        let clouds: Vec<(&str, &ParticleCloud)> = match &self.body {
            ModelBody::Joint(c) => vec![("joint", c)],
            ModelBody::Product { w_cloud, a_cloud } => vec![("common", w_cloud), ("specific", a_cloud)],
        };
        let header = ModelHeader {
            format: MODEL_FORMAT.into(),
            scenario: self.scenario,
            act: self.act,
            ol: self.ol,
            config: self.config.clone(),
            clouds: clouds.len(),
            stage1_rows: self.stage1_rows,
            trace: self.trace.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for (role, c) in clouds {
            write_cloud(&mut w, c, Some(serde_json::json!({ "role": role })))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        input.read_line(&mut line)?;
        let header: ModelHeader = serde_json::from_str(line.trim()).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.format != MODEL_FORMAT {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected format `{MODEL_FORMAT}`, found `{}`", header.format),
            });
        }
        let mut clouds = read_clouds(input, header.clouds, 1)?;
        let body = match clouds.len() {
            1 => ModelBody::Joint(clouds.pop().expect("one cloud").1),
            2 => {
                let a_cloud = clouds.pop().expect("two clouds").1;
                let w_cloud = clouds.pop().expect("two clouds").1;
                ModelBody::Product { w_cloud, a_cloud }
            }
            k => return Err(Error::Parse { line: 1, message: format!("a model has 1 or 2 clouds, header says {k}") }),
        };
        Ok(Self {
            scenario: header.scenario,
            body,
            act: header.act,
            ol: header.ol,
            config: header.config,
            trace: header.trace,
            stage1_rows: header.stage1_rows,
        })
    }
}

fn check_common(cfg: &TrainConfig, act: Activation, prior: &GibbsPrior, q: usize) -> Result<()> {
    cfg.validate()?;
    act.trainable()?;
    if prior.sigma != cfg.sigma {
        return Err(config_error(
            "sigma",
            format!("config sigma {} differs from prior sigma {}", cfg.sigma, prior.sigma),
        ));
    }
    check_dim("prior dim (expected q + 1)", q + 1, prior.dim)
}

fn with_prefix(e: Error, trace: &[TraceRow], stage: &str) -> Error {
    match e {
        Error::Diverged { step, detail, .. } => Error::Diverged {
            stage: stage.to_string(),
            step,
            detail,
            risk_prefix: trace.iter().map(|r| r.train_risk).collect(),
        },
        other => other,
    }
}

/// Runs `steps` joint Langevin steps from `init` on `data`, recording a trace.
fn run_joint(
    init: ParticleCloud,
    data: &DataMeasure<'_>,
    obj: &Objective,
    cfg: &TrainConfig,
    steps: usize,
    stage: &str,
    trace: &mut Vec<TraceRow>,
) -> Result<ParticleCloud> {
    let d = init.dim();
    let eta = cfg.step_size;
    let noise = noise_scale(obj.prior.sigma, obj.beta, eta);
    let full = Weighted::full(data);
    let mut coords = init.into_coords();
    let step_offset = trace.len();
    for k in 0..steps {
        let batch;
        let wd = match cfg.batch {
            Batch::Full => &full,
            Batch::Minibatch { size } => {
                batch = Weighted::minibatch(data, size, cfg.seed, 0, k);
                &batch
            }
        };
        let out = joint_step(&coords, d, wd, obj, eta, noise, cfg.seed, purpose::NOISE, k);
        let risk = match cfg.batch {
            Batch::Full => out.risk,
            Batch::Minibatch { .. } => full_risk(&coords, d, &full, obj),
        };
        trace.push(TraceRow {
            step: step_offset + k,
            train_risk: risk,
            drift_norm: out.drift_norm,
            noise_scale: noise,
        });
        check_finite(&out.coords, stage, k).map_err(|e| with_prefix(e, trace, stage))?;
        coords = out.coords;
    }
    let last = joint_step(&coords, d, &full, obj, 0.0, 0.0, cfg.seed, purpose::NOISE, steps);
    trace.push(TraceRow {
        step: step_offset + steps,
        train_risk: last.risk,
        drift_norm: last.drift_norm,
        noise_scale: noise,
    });
    Ok(ParticleCloud::from_raw(d, coords))
}

fn full_risk(coords: &[f64], d: usize, wd: &Weighted, obj: &Objective) -> f64 {
    let r = coords.len() / d;
    let vals: Vec<f64> = (0..wd.len())
        .into_par_iter()
        .map(|j| {
            let x = wd.x(j);
            let mut acc = 0.0;
            for i in 0..r {
                acc += mfnet::unit_output(&coords[i * d..(i + 1) * d], x, obj.act);
            }
            wd.ws[j] * obj.ol.value(acc / r as f64, wd.ys[j])
        })
        .collect();
    vals.iter().sum()
}

fn train_joint(
    scenario: Scenario,
    data: DataMeasure<'_>,
    cfg: &TrainConfig,
    act: Activation,
    ol: OuterLoss,
    prior: &GibbsPrior,
    beta: f64,
) -> Result<TrainedModel> {
    check_common(cfg, act, prior, data.input_dim())?;
    let obj = Objective::new(act, ol, *prior, beta)?;
    let init = prior.sample(cfg.particles, &mut rng::stream(cfg.seed, &[purpose::INIT]))?;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let cloud = run_joint(init, &data, &obj, cfg, cfg.steps, "training", &mut trace)?;
    let stage1_rows = trace.len();
    Ok(TrainedModel {
        scenario,
        body: ModelBody::Joint(cloud),
        act,
        ol,
        config: cfg.clone(),
        trace,
        stage1_rows,
    })
}

/// Langevin training on the target data alone.
pub fn train_supervised(
    data_t: &DataSet,
    cfg: &TrainConfig,
    act: Activation,
    ol: OuterLoss,
    prior: &GibbsPrior,
) -> Result<TrainedModel> {
    if cfg.scenario != Scenario::Supervised {
        return Err(config_error("scenario", "train_supervised needs scenario = supervised"));
    }
    let beta = positive("beta", cfg.beta)?;
    train_joint(Scenario::Supervised, data_t.into(), cfg, act, ol, prior, beta)
}

/// Langevin training on `α ν_t + (1 − α) ν_s`.
pub fn train_alpha_erm(
    data_t: &DataSet,
    data_s: &DataSet,
    cfg: &TrainConfig,
    act: Activation,
    ol: OuterLoss,
    prior: &GibbsPrior,
) -> Result<TrainedModel> {
    if cfg.scenario != Scenario::AlphaErm {
        return Err(config_error("scenario", "train_alpha_erm needs scenario = alpha_erm"));
    }
    cfg.validate()?;
    let alpha = cfg.alpha.expect("validated");
    let beta = positive("beta", cfg.beta)?;
    let mixed = MixedDataView::new(data_t, data_s, alpha)?;
    train_joint(Scenario::AlphaErm, mixed.into(), cfg, act, ol, prior, beta)
}

/// Result of the first fine-tuning stage: the hidden-weight marginal of a
/// joint cloud trained on the source task.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceStage {
    pub w_cloud: ParticleCloud,
    pub trace: Vec<TraceRow>,
}

/// Stage 1 of fine-tuning: joint training on the source with `β_s`.
pub fn finetune_stage1(
    data_s: &DataSet,
    cfg: &TrainConfig,
    act: Activation,
    ol: OuterLoss,
    prior: &GibbsPrior,
) -> Result<SourceStage> {
    if cfg.scenario != Scenario::Finetune {
        return Err(config_error("scenario", "fine-tuning needs scenario = finetune"));
    }
    check_common(cfg, act, prior, data_s.input_dim())?;
    let beta_s = positive("beta_s", cfg.beta_s)?;
    positive("beta_t", cfg.beta_t)?;
    prior.blocks()?;
    let obj_s = Objective::new(act, ol, *prior, beta_s)?;
    let init = prior.sample(cfg.particles, &mut rng::stream(cfg.seed, &[purpose::INIT]))?;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let source: DataMeasure<'_> = data_s.into();
    let joint = run_joint(init, &source, &obj_s, cfg, cfg.steps, "stage-1", &mut trace)?;
    Ok(SourceStage {
        w_cloud: joint.project(1..joint.dim())?,
        trace,
    })
}

/// Two-stage fine-tuning: a joint cloud on the source with `β_s`, then the
/// hidden weights are frozen and a fresh outer-weight cloud is trained on the
/// target with `β_t` under the product prediction `E[ϕ(w·x)] E[a]`.
pub fn train_finetune(
    data_t: &DataSet,
    data_s: &DataSet,
    cfg: &TrainConfig,
    act: Activation,
    ol: OuterLoss,
    prior: &GibbsPrior,
) -> Result<TrainedModel> {
    check_dim("source input dim", data_t.input_dim(), data_s.input_dim())?;
    let stage1 = finetune_stage1(data_s, cfg, act, ol, prior)?;
    finetune_stage2(&stage1, data_t, cfg, act, ol, prior)
}

/// Stage 2 of fine-tuning: outer weights on the target with the hidden
/// weights of `stage1` frozen.
pub fn finetune_stage2(
    stage1: &SourceStage,
    data_t: &DataSet,
    cfg: &TrainConfig,
    act: Activation,
    ol: OuterLoss,
    prior: &GibbsPrior,
) -> Result<TrainedModel> {
    if cfg.scenario != Scenario::Finetune {
        return Err(config_error("scenario", "fine-tuning needs scenario = finetune"));
    }
    check_common(cfg, act, prior, data_t.input_dim())?;
    check_dim("stage-1 hidden dim", data_t.input_dim(), stage1.w_cloud.dim())?;
    let beta_t = positive("beta_t", cfg.beta_t)?;
    let (_, sp_prior) = prior.blocks()?;
    let w_cloud = stage1.w_cloud.clone();
    let mut trace = stage1.trace.clone();
    let stage1_rows = trace.len();

    // stage 2: target task, outer weights only
    let a0 = sp_prior.sample(cfg.particles, &mut rng::stream(cfg.seed, &[purpose::STAGE2_INIT]))?;
    let target: DataMeasure<'_> = data_t.into();
    let full = Weighted::full(&target);
    let feat: Vec<f64> = (0..full.len())
        .into_par_iter()
        .map(|j| mfnet::mean_feature_unchecked(&w_cloud, full.x(j), act))
        .collect();
    let eta = cfg.step_size;
    let noise = noise_scale(cfg.sigma, beta_t, eta);
    let inv2b2 = 1.0 / (2.0 * beta_t * beta_t);
    let mut a = a0.into_coords();
    let offset = trace.len();
    let steps2 = cfg.stage2_steps();
    let common_drift = |a_mean: f64, wd: &Weighted| -> f64 {
        (0..wd.len())
            .map(|j| {
                let fj = feat[wd.index[j]];
                wd.ws[j] * ol.d_pred(fj * a_mean, wd.ys[j]) * fj
            })
            .sum()
    };
    let risk_of = |a_mean: f64, wd: &Weighted| -> f64 {
        (0..wd.len())
            .map(|j| wd.ws[j] * ol.value(feat[wd.index[j]] * a_mean, wd.ys[j]))
            .sum()
    };
    for k in 0..steps2 {
        let batch;
        let wd = match cfg.batch {
            Batch::Full => &full,
            Batch::Minibatch { size } => {
                batch = Weighted::minibatch(&target, size, cfg.seed, 1, k);
                &batch
            }
        };
        let a_mean = a.iter().sum::<f64>() / a.len() as f64;
        let common = common_drift(a_mean, wd);
        let sq: Vec<f64> = a
            .par_iter_mut()
            .enumerate()
            .map(|(i, ai)| {
                let mut gu = [0.0];
                sp_prior.grad_u_into(std::slice::from_ref(ai), &mut gu);
                let v = common + gu[0] * inv2b2;
                *ai -= eta * v;
                if noise != 0.0 {
                    let mut g = rng::stream(cfg.seed, &[purpose::STAGE2_NOISE, k as u64, i as u64]);
                    let z: f64 = g.sample(StandardNormal);
                    *ai += noise * z;
                }
                v * v
            })
            .collect();
        trace.push(TraceRow {
            step: offset + k,
            train_risk: risk_of(a_mean, &full),
            drift_norm: (sq.iter().sum::<f64>() / sq.len() as f64).sqrt(),
            noise_scale: noise,
        });
        check_finite(&a, "stage-2", k).map_err(|e| with_prefix(e, &trace, "stage-2"))?;
    }
    let a_mean = a.iter().sum::<f64>() / a.len() as f64;
    let common = common_drift(a_mean, &full);
    let sq: f64 = a
        .iter()
        .map(|&ai| {
            let mut gu = [0.0];
            sp_prior.grad_u_into(&[ai], &mut gu);
            (common + gu[0] * inv2b2).powi(2)
        })
        .sum();
    trace.push(TraceRow {
        step: offset + steps2,
        train_risk: risk_of(a_mean, &full),
        drift_norm: (sq / a.len() as f64).sqrt(),
        noise_scale: noise,
    });
    Ok(TrainedModel {
        scenario: Scenario::Finetune,
        body: ModelBody::Product {
            w_cloud,
            a_cloud: ParticleCloud::from_raw(1, a),
        },
        act,
        ol,
        config: cfg.clone(),
        trace,
        stage1_rows,
    })
}

/// Dispatches on `cfg.scenario`; `data_s` is required except for supervised runs.
pub fn train(
    cfg: &TrainConfig,
    act: Activation,
    ol: OuterLoss,
    prior: &GibbsPrior,
    data_t: &DataSet,
    data_s: Option<&DataSet>,
) -> Result<TrainedModel> {
    let need_source = || data_s.ok_or_else(|| config_error("source", format!("{} needs a source data set", cfg.scenario)));
    match cfg.scenario {
        Scenario::Supervised => train_supervised(data_t, cfg, act, ol, prior),
        Scenario::AlphaErm => train_alpha_erm(data_t, need_source()?, cfg, act, ol, prior),
        Scenario::Finetune => train_finetune(data_t, need_source()?, cfg, act, ol, prior),
    }
}
