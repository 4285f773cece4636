//! Pearson residuals, residual MSE and conditional prediction intervals.

use serde::{Deserialize, Serialize};

use crate::dist::ConditionalFamily;
use crate::dpd::DpdConfig;
use crate::error::{Error, Result};
use crate::meanproc::{lambda_path, Dataset, LambdaInit};

pub const DEFAULT_LEVEL: f64 = 0.95;

/// `e_t = (y_t − λ̂_t)/√λ̂_t`.
pub fn pearson_residuals(lambda: &[f64], y: &[u64]) -> Result<Vec<f64>> {
    if lambda.len() != y.len() {
        return Err(Error::InvalidSpec(format!("{} means for {} counts", lambda.len(), y.len())));
    }
    lambda
        .iter()
        .zip(y)
        .map(|(&l, &y)| {
            if l > 0.0 && l.is_finite() {
                Ok((y as f64 - l) / l.sqrt())
            } else {
                Err(Error::Domain(format!("fitted mean {l} must be positive")))
            }
        })
        .collect()
}

/// `Σ e_t² / (n − d)`, summed in sorted order so the value is exactly
/// permutation invariant.
pub fn residual_mse(residuals: &[f64], d: usize) -> Result<f64> {
    let n = residuals.len();
    if n <= d {
        return Err(Error::DegenerateSample { n, d });
    }
    let mut sq: Vec<f64> = residuals.iter().map(|e| e * e).collect();
    sq.sort_by(|a, b| a.total_cmp(b));
    Ok(sq.iter().sum::<f64>() / (n - d) as f64)
}

/// Equal-tail interval: smallest counts with CDF at least `(1−level)/2` and `(1+level)/2`.
pub fn prediction_interval(fam: &ConditionalFamily, lambda: f64, level: f64) -> Result<(u64, u64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level {level} outside (0, 1)")));
    }
    let tail = 0.5 * (1.0 - level);
    Ok((fam.quantile(lambda, tail)?, fam.quantile(lambda, 1.0 - tail)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagReport {
    pub y: Vec<u64>,
    pub lambda: Vec<f64>,
    pub residuals: Vec<f64>,
    pub lower: Vec<u64>,
    pub upper: Vec<u64>,
    pub residual_mse: f64,
    pub coverage: f64,
    pub level: f64,
    pub interval_rule: String,
    pub init: LambdaInit,
}

impl DiagReport {
    /// Columns `t,y,lambda,e,lower,upper`, with `t` starting at 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,y,lambda,e,lower,upper\n");
        for t in 0..self.y.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                t + 1,
                self.y[t],
                self.lambda[t],
                self.residuals[t],
                self.lower[t],
                self.upper[t]
            ));
        }
        out
    }
}

/// Residuals and intervals along the fitted mean path of `theta`.
pub fn diagnose(cfg: &DpdConfig, theta: &[f64], data: &Dataset, init: LambdaInit, level: f64) -> Result<DiagReport> {
    let lambda = lambda_path(&cfg.model, &cfg.pbox, theta, data, init)?;
    let residuals = pearson_residuals(&lambda, &data.y)?;
    let residual_mse = residual_mse(&residuals, cfg.dim())?;
    let mut lower = Vec::with_capacity(lambda.len());
    let mut upper = Vec::with_capacity(lambda.len());
    for &l in &lambda {
        let (lo, hi) = prediction_interval(&cfg.family, l, level)?;
        lower.push(lo);
        upper.push(hi);
    }
    let inside = data.y.iter().zip(lower.iter().zip(&upper)).filter(|(y, (lo, hi))| lo <= y && y <= hi).count();
    Ok(DiagReport {
        y: data.y.clone(),
        coverage: inside as f64 / data.len() as f64,
        lambda,
        residuals,
        lower,
        upper,
        residual_mse,
        level,
        interval_rule: "equal-tail".into(),
        init,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_examples() {
        assert_eq!(pearson_residuals(&[4.0], &[4]).unwrap(), vec![0.0]);
        assert_eq!(pearson_residuals(&[4.0], &[9]).unwrap(), vec![2.5]);
        assert!(matches!(pearson_residuals(&[0.0], &[1]), Err(Error::Domain(_))));
        assert_eq!(residual_mse(&[0.0; 5], 2).unwrap(), 0.0);
        assert_eq!(residual_mse(&[1.0, 1.0], 1).unwrap(), 2.0);
        assert!(matches!(residual_mse(&[1.0, 1.0], 2), Err(Error::DegenerateSample { n: 2, d: 2 })));
        let e = [0.3, -1.2, 2.0, 0.1];
        let p = [2.0, 0.1, -1.2, 0.3];
        assert_eq!(residual_mse(&e, 1).unwrap(), residual_mse(&p, 1).unwrap());
    }

    #[test]
    fn interval_examples() {
        let p = ConditionalFamily::poisson();
        assert_eq!(prediction_interval(&p, 0.01, 0.95).unwrap(), (0, 0));
        let (lo, hi) = prediction_interval(&p, 100.0, 0.95).unwrap();
        assert!((lo as f64 - (100.0 - 19.6)).abs() <= 2.0, "{lo}");
        assert!((hi as f64 - (100.0 + 19.6)).abs() <= 2.0, "{hi}");
        assert_eq!(prediction_interval(&ConditionalFamily::bernoulli(), 0.5, 0.95).unwrap(), (0, 1));
        // CDF oracle for a moderate mean.
        let (lo, hi) = prediction_interval(&p, 3.7, 0.95).unwrap();
        let cdf = |k: u64| (0..=k).map(|y| p.pmf(y, 3.7).unwrap()).sum::<f64>();
        assert!(cdf(lo) >= 0.025 && (lo == 0 || cdf(lo - 1) < 0.025));
        assert!(cdf(hi) >= 0.975 && cdf(hi - 1) < 0.975);
    }
}
