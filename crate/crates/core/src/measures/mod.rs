//! Particle clouds over parameter space and empirical data measures.
//!
//! A [`ParticleCloud`] is the uniform-weight atom set `(1/r) Σ δ_{θ_i}` that
//! stands in for a parameter measure. A [`DataSet`] is the empirical measure
//! of `n` labelled samples, and [`MixedDataView`] is the convex combination
//! `α ν_t + (1-α) ν_s` of two data sets, kept as a view so that `α` enters
//! every average exactly.

mod io;

pub use io::{read_cloud, read_dataset, write_cloud, write_dataset, CloudHeader, DataHeader};
pub(crate) use io::read_clouds;

use crate::error::{argument, check_dim, Result};

/// Uniform-weight atom set in `ℝ^dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    dim: usize,
    coords: Vec<f64>,
}

impl ParticleCloud {
    /// Builds a cloud from row-major coordinates (`len = count * dim`).
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(argument("cloud dimension must be positive"));
        }
        if coords.is_empty() {
            return Err(argument("cloud must contain at least one atom"));
        }
        if coords.len() % dim != 0 {
            return Err(argument(format!(
                "coordinate count {} is not a multiple of dim {dim}",
                coords.len()
            )));
        }
        if let Some(bad) = coords.iter().position(|v| !v.is_finite()) {
            return Err(argument(format!(
                "atom {} has a non-finite coordinate",
                bad / dim
            )));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_atoms<A: AsRef<[f64]>>(atoms: &[A]) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| argument("cloud must contain at least one atom"))?;
        let dim = first.as_ref().len();
        let mut coords = Vec::with_capacity(dim * atoms.len());
        for atom in atoms {
            check_dim("atom", dim, atom.as_ref().len())?;
            coords.extend_from_slice(atom.as_ref());
        }
        Self::new(dim, coords)
    }

    /// Internal constructor for coordinates already known to be valid.
    pub(crate) fn from_raw(dim: usize, coords: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && !coords.is_empty() && coords.len() % dim == 0);
        Self { dim, coords }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of atoms `r`.
    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Always false; clouds hold at least one atom.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Atoms reordered so that atom `k` of the result is atom `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_dim("permutation", self.len(), perm.len())?;
        let mut seen = vec![false; perm.len()];
        let mut coords = Vec::with_capacity(self.coords.len());
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(argument("not a permutation"));
            }
            coords.extend_from_slice(self.atom(p));
        }
        Ok(Self::from_raw(self.dim, coords))
    }

    /// Cloud of the coordinates `range` of every atom (e.g. the `w` block).
    pub fn project(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.dim {
            return Err(argument(format!(
                "projection {range:?} invalid for dim {}",
                self.dim
            )));
        }
        let coords = self
            .atoms()
            .flat_map(|a| a[range.clone()].iter().copied())
            .collect();
        Ok(Self::from_raw(range.end - range.start, coords))
    }

    /// Arithmetic mean of `f` over the atoms.
    pub fn average(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.atoms().map(&mut f).sum::<f64>() / self.len() as f64
    }
}

/// `(1/r) Σ ‖θ_i‖₂^p` for `p ∈ {2, 4, 8}`.
pub fn cloud_moment(cloud: &ParticleCloud, p: u32) -> Result<f64> {
    if !matches!(p, 2 | 4 | 8) {
        return Err(argument(format!("moment order {p} not in {{2, 4, 8}}")));
    }
    let half = (p / 2) as i32;
    Ok(cloud.average(|a| norm_sq(a).powi(half)))
}

#[inline]
pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A single labelled observation `z = (x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }

    pub fn view(&self) -> SampleView<'_> {
        SampleView { x: &self.x, y: self.y }
    }
}

/// Borrowed observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleView<'a> {
    pub x: &'a [f64],
    pub y: f64,
}

impl SampleView<'_> {
    pub fn to_owned(&self) -> Sample {
        Sample::new(self.x.to_vec(), self.y)
    }

    /// `‖z‖²` with `z` the concatenated `(x, y)` vector.
    pub fn norm_sq(&self) -> f64 {
        norm_sq(self.x) + self.y * self.y
    }
}

/// Empirical measure of `n ≥ 1` samples with inputs in `ℝ^q`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSet {
    q: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl DataSet {
    pub fn new(q: usize, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if q == 0 {
            return Err(argument("input dimension must be positive"));
        }
        if ys.is_empty() {
            return Err(argument("data set must contain at least one sample"));
        }
        check_dim("inputs", ys.len() * q, xs.len())?;
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(argument("data set has a non-finite coordinate"));
        }
        Ok(Self { q, xs, ys })
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| argument("data set must contain at least one sample"))?;
        let q = first.x.len();
        let mut xs = Vec::with_capacity(q * samples.len());
        for s in samples {
            check_dim("sample input", q, s.x.len())?;
            xs.extend_from_slice(&s.x);
        }
        Self::new(q, xs, samples.iter().map(|s| s.y).collect())
    }

    pub(crate) fn from_raw(q: usize, xs: Vec<f64>, ys: Vec<f64>) -> Self {
        debug_assert!(q > 0 && !ys.is_empty() && xs.len() == q * ys.len());
        Self { q, xs, ys }
    }

    pub fn input_dim(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    /// Always false; data sets hold at least one sample.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample(&self, i: usize) -> SampleView<'_> {
        SampleView {
            x: &self.xs[i * self.q..(i + 1) * self.q],
            y: self.ys[i],
        }
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = SampleView<'_>> + '_ {
        self.xs
            .chunks_exact(self.q)
            .zip(&self.ys)
            .map(|(x, &y)| SampleView { x, y })
    }

    pub fn inputs(&self) -> &[f64] {
        &self.xs
    }

    pub fn targets(&self) -> &[f64] {
        &self.ys
    }

    pub fn average(&self, mut f: impl FnMut(SampleView<'_>) -> f64) -> f64 {
        self.samples().map(&mut f).sum::<f64>() / self.len() as f64
    }

    /// Concatenation of two data sets with equal input dimension.
    pub fn concat(&self, other: &DataSet) -> Result<DataSet> {
        check_dim("input dimension", self.q, other.q)?;
        let mut xs = self.xs.clone();
        xs.extend_from_slice(&other.xs);
        let mut ys = self.ys.clone();
        ys.extend_from_slice(&other.ys);
        Ok(Self::from_raw(self.q, xs, ys))
    }
}

/// Copy of `data` with sample `index` replaced by `replacement`:
/// `ν_n + (1/n)(δ_{z̄} − δ_{z_index})`.
pub fn resample_one(data: &DataSet, index: usize, replacement: SampleView<'_>) -> Result<DataSet> {
    if index >= data.len() {
        return Err(argument(format!(
            "index {index} out of range for {} samples",
            data.len()
        )));
    }
    check_dim("replacement input", data.q, replacement.x.len())?;
    if replacement.x.iter().any(|v| !v.is_finite()) || !replacement.y.is_finite() {
        return Err(argument("replacement sample is not finite"));
    }
    let mut out = data.clone();
    out.xs[index * data.q..(index + 1) * data.q].copy_from_slice(replacement.x);
    out.ys[index] = replacement.y;
    Ok(out)
}

/// `(1/n) Σ (1 + ‖x_i‖² + y_i²)^k` for `k ∈ {1, 2, 4}`.
pub fn data_moment(data: &DataSet, k: u32) -> Result<f64> {
    if !matches!(k, 1 | 2 | 4) {
        return Err(argument(format!("data moment order {k} not in {{1, 2, 4}}")));
    }
    Ok(data.average(|z| (1.0 + z.norm_sq()).powi(k as i32)))
}

/// The mixture `α ν_target + (1 − α) ν_source`, never materialized.
#[derive(Clone, Copy, Debug)]
pub struct MixedDataView<'a> {
    target: &'a DataSet,
    source: &'a DataSet,
    alpha: f64,
}

impl<'a> MixedDataView<'a> {
    pub fn new(target: &'a DataSet, source: &'a DataSet, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(argument(format!("alpha {alpha} outside [0, 1]")));
        }
        check_dim("source input dimension", target.q, source.q)?;
        Ok(Self {
            target,
            source,
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn target(&self) -> &'a DataSet {
        self.target
    }

    pub fn source(&self) -> &'a DataSet {
        self.source
    }

    pub fn average(&self, f: impl FnMut(SampleView<'_>) -> f64) -> f64 {
        DataMeasure::Mixed(*self).average(f)
    }
}

/// Any data measure the risk and the Langevin drift can integrate against.
#[derive(Clone, Copy, Debug)]
pub enum DataMeasure<'a> {
    Empirical(&'a DataSet),
    Mixed(MixedDataView<'a>),
}

impl<'a> From<&'a DataSet> for DataMeasure<'a> {
    fn from(d: &'a DataSet) -> Self {
        DataMeasure::Empirical(d)
    }
}

impl<'a> From<MixedDataView<'a>> for DataMeasure<'a> {
    fn from(m: MixedDataView<'a>) -> Self {
        DataMeasure::Mixed(m)
    }
}

impl<'a> DataMeasure<'a> {
    pub fn input_dim(&self) -> usize {
        match self {
            DataMeasure::Empirical(d) => d.q,
            DataMeasure::Mixed(m) => m.target.q,
        }
    }

    /// Weighted empirical components. Zero-weight components are omitted, so
    /// `α = 1` and `α = 0` reduce to a single set with weight exactly 1.
    pub fn components(&self) -> Vec<(f64, &'a DataSet)> {
        match *self {
            DataMeasure::Empirical(d) => vec![(1.0, d)],
            DataMeasure::Mixed(m) => {
                let mut out = Vec::with_capacity(2);
                if m.alpha > 0.0 {
                    out.push((m.alpha, m.target));
                }
                if m.alpha < 1.0 {
                    out.push((1.0 - m.alpha, m.source));
                }
                out
            }
        }
    }

    pub fn average(&self, mut f: impl FnMut(SampleView<'_>) -> f64) -> f64 {
        let mut total = 0.0;
        for (w, d) in self.components() {
            let avg = d.average(&mut f);
            total += if w == 1.0 { avg } else { w * avg };
        }
        total
    }
}
