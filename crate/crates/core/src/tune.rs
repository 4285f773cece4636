//! Selection of the tuning parameter by minimum estimated AMSE against the
//! `α = 1` pilot.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dpd::DpdConfig;
use crate::error::{Error, Result};
use crate::fit::{fit, FitOptions, FitResult};
use crate::meanproc::Dataset;

pub const DEFAULT_GRID: [f64; 13] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.75, 1.0];
pub const PILOT_ALPHA: f64 = 1.0;

/// `‖θ̂_α − θ̂_pilot‖² + tr(Σ̂_α)/n`.
///
/// # Panics
/// When the dimensions disagree or `n == 0`.
pub fn amse(theta_alpha: &[f64], theta_pilot: &[f64], sigma_alpha: &DMatrix<f64>, n: usize) -> f64 {
    assert_eq!(theta_alpha.len(), theta_pilot.len(), "estimate dimensions differ");
    assert_eq!(sigma_alpha.nrows(), theta_alpha.len(), "covariance dimension differs");
    assert!(n > 0, "sample size must be positive");
    let dist: f64 = theta_alpha.iter().zip(theta_pilot).map(|(a, b)| (a - b) * (a - b)).sum();
    dist + sigma_alpha.trace() / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub alpha: f64,
    pub amse: Option<f64>,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub grid: Vec<f64>,
    pub points: Vec<TunePoint>,
    pub alpha_opt: f64,
    pub amse_opt: f64,
    pub pilot_alpha: f64,
    /// Each grid fit started from the previous grid point's estimate.
    pub warm_start: bool,
    pub warnings: Vec<String>,
}

impl TuneReport {
    pub fn best_fit(&self) -> Option<&FitResult> {
        self.points.iter().find(|p| p.alpha == self.alpha_opt).and_then(|p| p.fit.as_ref())
    }
}

/// Fits every grid value in ascending order, warm-starting each from the last
/// successful estimate, and returns the AMSE minimizer (smallest `α` on ties).
pub fn tune(template: &DpdConfig, data: &Dataset, grid: Option<&[f64]>, opts: &FitOptions) -> Result<TuneReport> {
    let mut grid: Vec<f64> = grid.map(<[f64]>::to_vec).unwrap_or_else(|| DEFAULT_GRID.to_vec());
    if grid.is_empty() {
        return Err(Error::Tune("empty grid".into()));
    }
    if grid.iter().any(|a| !a.is_finite()) {
        return Err(Error::Tune("grid values must be finite".into()));
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    if !grid.contains(&PILOT_ALPHA) {
        return Err(Error::Tune("grid must contain the pilot value 1".into()));
    }
    let opts = FitOptions { covariance: true, ..opts.clone() };

    let mut warnings = Vec::new();
    let mut fits: Vec<std::result::Result<FitResult, String>> = Vec::with_capacity(grid.len());
    let mut warm: Option<Vec<f64>> = None;
    for &alpha in &grid {
        let res = template.with_alpha(alpha).and_then(|cfg| fit(&cfg, data, warm.as_deref(), &opts));
        match res {
            Ok(f) if f.sigma_hat.is_some() => {
                warm = Some(f.theta.clone());
                fits.push(Ok(f));
            }
            Ok(f) => {
                let msg = f.covariance_error.clone().unwrap_or_default();
                warnings.push(format!("alpha = {alpha}: covariance unavailable ({msg})"));
                warm = Some(f.theta);
                fits.push(Err(format!("SingularInformation: {msg}")));
            }
            Err(e) => {
                warnings.push(format!("alpha = {alpha}: {e}"));
                fits.push(Err(format!("{}: {e}", e.kind_name())));
            }
        }
    }

    let pilot_idx = grid.iter().position(|&a| a == PILOT_ALPHA).expect("checked above");
    let pilot = match &fits[pilot_idx] {
        Ok(f) => f.theta.clone(),
        Err(msg) => return Err(Error::Tune(format!("pilot fit failed: {msg}"))),
    };

    let mut points = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for (&alpha, res) in grid.iter().zip(fits) {
        match res {
            Ok(f) => {
                let sigma = f.sigma_matrix().expect("covariance present");
                let value = amse(&f.theta, &pilot, &sigma, f.n);
                if best.is_none_or(|(_, b)| value < b) {
                    best = Some((alpha, value));
                }
                points.push(TunePoint { alpha, amse: Some(value), fit: Some(f), error: None });
            }
            Err(msg) => points.push(TunePoint { alpha, amse: None, fit: None, error: Some(msg) }),
        }
    }
    let (alpha_opt, amse_opt) = best.expect("pilot succeeded");
    Ok(TuneReport { grid, points, alpha_opt, amse_opt, pilot_alpha: PILOT_ALPHA, warm_start: true, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn amse_arithmetic() {
        let pilot = [0.2, 0.1, 0.6];
        let shifted = [0.3, 0.1, 0.6];
        let sigma = DMatrix::from_diagonal_element(3, 3, 0.02 * 50.0 / 3.0);
        assert!((amse(&shifted, &pilot, &sigma, 50) - 0.03).abs() < 1e-15);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.6]);
        assert_eq!(amse(&[1.0, 2.0], &[1.0, 2.0], &sigma, 10), 0.1);
    }
}
