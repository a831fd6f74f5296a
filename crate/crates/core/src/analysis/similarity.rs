//! Dictionary lower bound on an integral probability metric between two
//! samples.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{argument, check_dim, Result};
use crate::measures::{DataSet, SampleView};
use crate::rng::{self, purpose};

pub const MIN_DICTIONARY_SIZE: usize = 256;

/// Slope scale of the random logistic units.
const UNIT_SCALE: f64 = 3.0;

struct Dictionary {
    p: i32,
    dim: usize,
    units: Vec<f64>,
    biases: Vec<f64>,
}

impl Dictionary {
    fn new(p: i32, dim: usize, size: usize, seed: u64) -> Self {
        let mut g = rng::stream(seed, &[purpose::DICTIONARY]);
        let mut units = Vec::with_capacity(size * dim);
        let mut biases = Vec::with_capacity(size);
        for _ in 0..size {
            for _ in 0..dim {
                let z: f64 = g.sample(StandardNormal);
                units.push(UNIT_SCALE * z);
            }
            biases.push(g.sample(StandardNormal));
        }
        Self { p, dim, units, biases }
    }

    /// Adds `f_k(z)` for every dictionary member into `acc`.
    fn accumulate(&self, z: SampleView<'_>, acc: &mut [f64]) {
        let mut v = Vec::with_capacity(self.dim);
        v.extend_from_slice(z.x);
        v.push(z.y);
        let norm_sq = z.norm_sq();
        let norm = norm_sq.sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|c| *c /= norm);
        }
        let weight = 1.0 + norm_sq.powi(self.p / 2);
        for (k, a) in acc.iter_mut().enumerate() {
            let u = &self.units[k * self.dim..(k + 1) * self.dim];
            let t: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + self.biases[k];
            *a += weight / (1.0 + (-t).exp());
        }
    }

    fn means(&self, data: &DataSet) -> Vec<f64> {
        let mut acc = vec![0.0; self.biases.len()];
        for z in data.samples() {
            self.accumulate(z, &mut acc);
        }
        acc.iter_mut().for_each(|a| *a /= data.len() as f64);
        acc
    }
}

/// `max_k |avg_a f_k − avg_b f_k|` over `f_k(z) = (1 + ‖z‖^p) s(u_k·ẑ + b_k)`,
/// with `s` the logistic function and `ẑ = z/‖z‖`. A supremum over a finite
/// subset of the class, hence a lower bound on the metric.
pub fn ipm_dictionary(data_a: &DataSet, data_b: &DataSet, p: u32, dictionary_size: usize, seed: u64) -> Result<f64> {
    if p != 2 && p != 4 {
        return Err(argument(format!("p must be 2 or 4, got {p}")));
    }
    if dictionary_size < MIN_DICTIONARY_SIZE {
        return Err(argument(format!(
            "dictionary_size must be at least {MIN_DICTIONARY_SIZE}, got {dictionary_size}"
        )));
    }
    check_dim("second data set input dim", data_a.input_dim(), data_b.input_dim())?;
    if data_a.is_empty() || data_b.is_empty() {
        return Err(argument("data sets must be nonempty"));
    }
    let dict = Dictionary::new(p as i32, data_a.input_dim() + 1, dictionary_size, seed);
    let (ma, mb) = (dict.means(data_a), dict.means(data_b));
    Ok(ma.iter().zip(&mb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(n: usize, shift: f64, seed: u64) -> DataSet {
        let mut g = rng::stream(seed, &[]);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let x0: f64 = g.sample(StandardNormal);
            let x1: f64 = g.sample(StandardNormal);
            xs.extend([x0 + shift, x1]);
            ys.push(g.sample(StandardNormal));
        }
        DataSet::new(2, xs, ys).unwrap()
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let d = gaussian(200, 0.0, 1);
        assert_eq!(ipm_dictionary(&d, &d, 2, 256, 3).unwrap(), 0.0);
    }

    #[test]
    fn far_apart_sets_are_separated() {
        let a = gaussian(100, 0.0, 1);
        let b = gaussian(100, 50.0, 2);
        assert!(ipm_dictionary(&a, &b, 4, 256, 3).unwrap() > 1.0);
    }

    #[test]
    fn monotone_in_mean_shift() {
        for seed in 0..5 {
            let base = gaussian(2000, 0.0, 100 + seed);
            let d: Vec<f64> = [0.0, 0.5, 1.0]
                .iter()
                .map(|&s| ipm_dictionary(&base, &gaussian(2000, s, 200 + seed), 2, 256, seed).unwrap())
                .collect();
            assert!(d[0] < d[1] && d[1] < d[2], "seed {seed}: {d:?}");
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let d = gaussian(10, 0.0, 1);
        assert!(ipm_dictionary(&d, &d, 3, 256, 0).is_err());
        assert!(ipm_dictionary(&d, &d, 2, 100, 0).is_err());
    }
}
