//! Least-squares rate fits on log–log scale.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{argument, Error, Result};

pub const MIN_GRID_POINTS: usize = 4;
pub const MIN_USABLE_POINTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: f64,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub points: Vec<RatePoint>,
    /// Points left out because `|mean| ≤ 2 SE`.
    pub dropped: Vec<RatePoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_std_error: f64,
    /// 95% Student-t interval for the slope; degenerate when the fit is exact.
    pub slope_ci95: (f64, f64),
}

impl RateReport {
    /// `|slope − target| ≤ tol`
    pub fn slope_within(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }
}

/// Fits `log |gen| = intercept + slope · log n` over the points that are
/// significantly nonzero.
pub fn rate_fit(points: &[RatePoint]) -> Result<RateReport> {
    if points.len() < MIN_GRID_POINTS {
        return Err(Error::InsufficientData {
            usable: points.len(),
            required: MIN_GRID_POINTS,
        });
    }
    if points.windows(2).any(|w| !(w[1].n > w[0].n)) || points[0].n <= 0.0 {
        return Err(argument("grid sizes must be positive and strictly increasing"));
    }
    let (used, dropped): (Vec<RatePoint>, Vec<RatePoint>) = points
        .iter()
        .partition(|p| p.mean.abs() > 2.0 * p.std_error && p.mean != 0.0 && p.mean.is_finite());
    let k = used.len();
    if k < MIN_USABLE_POINTS {
        return Err(Error::InsufficientData {
            usable: k,
            required: MIN_USABLE_POINTS,
        });
    }
    let xs: Vec<f64> = used.iter().map(|p| p.n.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.mean.abs().ln()).collect();
    let kf = k as f64;
    let mx = xs.iter().sum::<f64>() / kf;
    let my = ys.iter().sum::<f64>() / kf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let df = kf - 2.0;
    let slope_std_error = (ss_res / df / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| argument(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RateReport {
        points: points.to_vec(),
        dropped,
        slope,
        intercept,
        r_squared,
        slope_std_error,
        slope_ci95: (slope - t * slope_std_error, slope + t * slope_std_error),
    })
}
