//! Density power divergence objective and its analytic derivatives.
//!
//! With `u(λ) = Σ_y (y−λ) g_y^{1+α} − (Y−λ) g_Y^α` and variance function `V`,
//! the per-observation loss has `dℓ/dλ = h_α(λ) = (1+α) u(λ) / V(λ)` and
//! `d²ℓ/dλ² = m_α(λ)`. Chain rule through the mean recursion gives
//!
//! ```text
//! ∂ℓ_t/∂θ     = h_α(λ_t) ∂λ_t
//! ∂²ℓ_t/∂θ∂θᵀ = h_α(λ_t) ∂²λ_t + m_α(λ_t) ∂λ_t ∂λ_tᵀ
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{check_alpha, ConditionalFamily, FamilyKind, PmfTable};
use crate::error::{Error, Result};
use crate::meanproc::{walk_path, Dataset, LambdaInit, MeanModel, Order, ParamBox};

pub const DEFAULT_ALPHA_MAX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpdConfig {
    pub alpha: f64,
    pub family: ConditionalFamily,
    pub model: MeanModel,
    pub pbox: ParamBox,
    #[serde(default)]
    pub init: LambdaInit,
    #[serde(default = "default_alpha_max")]
    pub alpha_max: f64,
}

fn default_alpha_max() -> f64 {
    DEFAULT_ALPHA_MAX
}

impl DpdConfig {
    pub fn new(alpha: f64, family: ConditionalFamily, model: MeanModel, pbox: ParamBox) -> Result<Self> {
        let cfg = DpdConfig {
            alpha,
            family,
            model,
            pbox,
            init: LambdaInit::Alpha0,
            alpha_max: DEFAULT_ALPHA_MAX,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config with the default parameter box for `data`.
    pub fn for_data(alpha: f64, family: ConditionalFamily, model: MeanModel, data: &Dataset) -> Result<Self> {
        model.validate()?;
        let pbox = ParamBox::for_data(&model, data)?;
        Self::new(alpha, family, model, pbox)
    }

    pub fn with_init(mut self, init: LambdaInit) -> Self {
        self.init = init;
        self
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.alpha = alpha;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.alpha > self.alpha_max {
            return Err(Error::Domain(format!(
                "tuning parameter {} exceeds alpha_max {}",
                self.alpha, self.alpha_max
            )));
        }
        self.model.validate()?;
        if self.pbox.dim() != self.model.dim() {
            return Err(Error::InvalidSpec("parameter box dimension does not match the model".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }
}

/// Loss and its first two derivatives in `λ` for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub h: f64,
    pub m: f64,
}

fn check_count(fam: &ConditionalFamily, y: u64) -> Result<()> {
    if matches!(fam.kind(), FamilyKind::Bernoulli) && y > 1 {
        return Err(Error::Domain(format!("Bernoulli count must be 0 or 1, got {y}")));
    }
    Ok(())
}

/// Evaluates loss, `h_α` and `m_α` at `λ`, reusing `table` as scratch space.
pub(crate) fn loss_terms_with(
    fam: &ConditionalFamily,
    alpha: f64,
    lambda: f64,
    y: u64,
    table: &mut PmfTable,
) -> Result<LossTerms> {
    check_count(fam, y)?;
    let log_g = fam.log_pmf(y, lambda)?;
    let v = fam.variance(lambda);
    let v_slope = fam.variance_slope(lambda);
    let dev = y as f64 - lambda;
    if alpha == 0.0 {
        // Negative log-likelihood branch.
        let h = -dev / v;
        let m = 1.0 / v + dev * v_slope / (v * v);
        return Ok(LossTerms { loss: -log_g, h, m });
    }
    fam.fill_table(lambda, table)?;
    let sums = table.power_sums(alpha);
    let g_alpha = (alpha * log_g).exp();
    let loss = sums.s0 - (1.0 + 1.0 / alpha) * g_alpha;
    debug_assert!(loss <= 2.0 + 1.0 / alpha, "loss bound violated: {loss}");
    let u = sums.s1 - dev * g_alpha;
    let du = -sums.s0 + (1.0 + alpha) * sums.s2 / v + g_alpha - alpha * dev * dev * g_alpha / v;
    let h = (1.0 + alpha) * u / v;
    let m = (1.0 + alpha) * (du / v - u * v_slope / (v * v));
    Ok(LossTerms { loss, h, m })
}

pub fn loss_terms(fam: &ConditionalFamily, alpha: f64, lambda: f64, y: u64) -> Result<LossTerms> {
    check_alpha(alpha)?;
    loss_terms_with(fam, alpha, lambda, y, &mut PmfTable::default())
}

/// `ℓ̂_{α,t}` at mean `λ` and count `y`.
pub fn per_obs_loss(fam: &ConditionalFamily, alpha: f64, lambda: f64, y: u64) -> Result<f64> {
    loss_terms(fam, alpha, lambda, y).map(|t| t.loss)
}

/// `h_α(λ)`, the derivative of the loss in `λ`.
pub fn h_alpha(fam: &ConditionalFamily, alpha: f64, lambda: f64, y: u64) -> Result<f64> {
    loss_terms(fam, alpha, lambda, y).map(|t| t.h)
}

/// `m_α(λ) = ∂h_α/∂λ`.
pub fn m_alpha(fam: &ConditionalFamily, alpha: f64, lambda: f64, y: u64) -> Result<f64> {
    loss_terms(fam, alpha, lambda, y).map(|t| t.m)
}

/// Objective value with optional derivatives.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Option<DVector<f64>>,
    pub hess: Option<DMatrix<f64>>,
    /// `(1/n) Σ_t s_t s_tᵀ` with `s_t = ∂ℓ_t/∂θ`; only from [`evaluate_sandwich`].
    pub score_outer: Option<DMatrix<f64>>,
}

fn evaluate_impl(cfg: &DpdConfig, theta: &[f64], data: &Dataset, order: Order, outer: bool) -> Result<Evaluation> {
    let d = cfg.dim();
    let alpha = cfg.alpha;
    let mut table = PmfTable::default();
    let mut value = 0.0;
    let mut grad = vec![0.0; if order >= Order::Gradient { d } else { 0 }];
    let mut hess = vec![0.0; if order >= Order::Hessian { d * d } else { 0 }];
    let mut outer_acc = vec![0.0; if outer { d * d } else { 0 }];
    walk_path(&cfg.model, &cfg.pbox, theta, data, cfg.init, order, |t, lambda, dl, d2l| {
        let terms = loss_terms_with(&cfg.family, alpha, lambda, data.y[t], &mut table)?;
        value += terms.loss;
        if order >= Order::Gradient {
            for (g, &v) in grad.iter_mut().zip(dl) {
                *g += terms.h * v;
            }
        }
        if order >= Order::Hessian {
            for i in 0..d {
                let mi = terms.m * dl[i];
                for j in 0..d {
                    hess[i * d + j] += terms.h * d2l[i * d + j] + mi * dl[j];
                }
            }
        }
        if outer {
            let h2 = terms.h * terms.h;
            for i in 0..d {
                for j in 0..d {
                    outer_acc[i * d + j] += h2 * dl[i] * dl[j];
                }
            }
        }
        Ok(())
    })?;
    let n = data.len() as f64;
    let mat = |v: Vec<f64>| DMatrix::from_row_slice(d, d, &v) / n;
    Ok(Evaluation {
        value: value / n,
        grad: (order >= Order::Gradient).then(|| DVector::from_vec(grad) / n),
        hess: (order >= Order::Hessian).then(|| {
            let h = mat(hess);
            (&h + h.transpose()) * 0.5
        }),
        score_outer: outer.then(|| mat(outer_acc)),
    })
}

/// `Ĥ_{α,n}(θ) = (1/n) Σ_t ℓ̂_{α,t}(θ)`.
pub fn objective(cfg: &DpdConfig, theta: &[f64], data: &Dataset) -> Result<f64> {
    evaluate_impl(cfg, theta, data, Order::Value, false).map(|e| e.value)
}

pub fn objective_grad(cfg: &DpdConfig, theta: &[f64], data: &Dataset) -> Result<DVector<f64>> {
    evaluate_impl(cfg, theta, data, Order::Gradient, false).map(|e| e.grad.expect("gradient requested"))
}

pub fn objective_hess(cfg: &DpdConfig, theta: &[f64], data: &Dataset) -> Result<DMatrix<f64>> {
    evaluate_impl(cfg, theta, data, Order::Hessian, false).map(|e| e.hess.expect("hessian requested"))
}

/// Value, gradient and Hessian from a single pass.
pub fn evaluate(cfg: &DpdConfig, theta: &[f64], data: &Dataset) -> Result<Evaluation> {
    evaluate_impl(cfg, theta, data, Order::Hessian, false)
}

/// As [`evaluate`], plus the mean outer product of per-observation scores.
pub fn evaluate_sandwich(cfg: &DpdConfig, theta: &[f64], data: &Dataset) -> Result<Evaluation> {
    evaluate_impl(cfg, theta, data, Order::Hessian, true)
}

/// `d_α(g(·|λ_g), g(·|λ_star))`, with `g_star` playing the data-generating role.
pub fn divergence(fam: &ConditionalFamily, lambda_g: f64, lambda_star: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let tg = fam.table(lambda_g)?;
    let ts = fam.table(lambda_star)?;
    let y_min = tg.y_min().min(ts.y_min());
    let y_max = tg.y_max().max(ts.y_max());
    let log_at = |table: &PmfTable, lambda: f64, y: u64| -> Result<f64> {
        match table.get(y) {
            Some(v) => Ok(v),
            None => fam.log_pmf(y, lambda),
        }
    };
    let mut total = 0.0;
    for y in y_min..=y_max {
        let lg = log_at(&tg, lambda_g, y)?;
        let ls = log_at(&ts, lambda_star, y)?;
        let gs = ls.exp();
        total += if alpha == 0.0 {
            if gs == 0.0 {
                0.0
            } else {
                gs * (ls - lg)
            }
        } else {
            let g = lg.exp();
            let g_alpha = (alpha * lg).exp();
            g * g_alpha - (1.0 + 1.0 / alpha) * gs * g_alpha + (1.0 / alpha) * gs * (alpha * ls).exp()
        };
    }
    Ok(total)
}
