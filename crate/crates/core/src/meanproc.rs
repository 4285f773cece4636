//! Conditional-mean recursions `λ_t(θ)` with exact parameter derivatives.
//!
//! Both supported forms are affine in every coordinate except the coefficients
//! on lagged means. Writing `λ_t = θ·z_t + Σ_j θ_{b_j} λ_{t−j}` with a data-only
//! regressor `z_t`, the derivatives follow the recursions
//!
//! ```text
//! ∂λ_t  = z̃_t + Σ_j θ_{b_j} ∂λ_{t−j}
//! ∂²λ_t = Σ_j (e_{b_j} ∂λ_{t−j}ᵀ + ∂λ_{t−j} e_{b_j}ᵀ + θ_{b_j} ∂²λ_{t−j})
//! ```
//!
//! where `z̃_t` is `z_t` with the lagged means written into the `b_j` slots.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateTransform {
    Identity,
    Abs,
    Exp,
    /// `1{x<0}·|x|`
    NegativePart,
}

impl CovariateTransform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            CovariateTransform::Identity => x,
            CovariateTransform::Abs => x.abs(),
            CovariateTransform::Exp => x.exp(),
            CovariateTransform::NegativePart => {
                if x < 0.0 {
                    -x
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CovariateTransform::Identity => "identity",
            CovariateTransform::Abs => "abs",
            CovariateTransform::Exp => "exp",
            CovariateTransform::NegativePart => "negpart",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" | "id" => Some(CovariateTransform::Identity),
            "abs" => Some(CovariateTransform::Abs),
            "exp" => Some(CovariateTransform::Exp),
            "negpart" | "negative_part" => Some(CovariateTransform::NegativePart),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum MeanModel {
    /// `λ_t = α_0 + Σ_i α_i Y_{t−i} + Σ_j β_j λ_{t−j} + Σ_k γ_k u_k(X_{k,t−1})`,
    /// parameters laid out as `(α_0, α_1..α_q, β_1..β_p, γ_1..γ_dx)`.
    LinearIngarchX {
        q: usize,
        p: usize,
        transforms: Vec<CovariateTransform>,
    },
    /// `λ_t = α_0 + α_1 Y_{t−1} + α_2 λ_{t−1} + β (Y_{t−1} − ξ)⁺`,
    /// parameters laid out as `(α_0, α_1, α_2, β)`.
    OneKnot { knot: u64 },
}

/// Covariate-free INGARCH(q, p) shorthand.
pub fn ingarch(q: usize, p: usize) -> MeanModel {
    MeanModel::LinearIngarchX { q, p, transforms: Vec::new() }
}

pub fn knot_term(y: u64, knot: u64) -> u64 {
    y.saturating_sub(knot)
}

impl MeanModel {
    pub fn validate(&self) -> Result<()> {
        if let MeanModel::LinearIngarchX { q, p, .. } = self {
            if q + p == 0 {
                return Err(Error::InvalidSpec("INGARCH-X model needs q + p >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            MeanModel::LinearIngarchX { q, p, transforms } => 1 + q + p + transforms.len(),
            MeanModel::OneKnot { .. } => 4,
        }
    }

    pub fn covariate_dim(&self) -> usize {
        match self {
            MeanModel::LinearIngarchX { transforms, .. } => transforms.len(),
            MeanModel::OneKnot { .. } => 0,
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            MeanModel::LinearIngarchX { q, p, transforms } => {
                let mut names = vec!["alpha0".to_string()];
                names.extend((1..=*q).map(|i| format!("alpha{i}")));
                names.extend((1..=*p).map(|j| format!("beta{j}")));
                names.extend((1..=transforms.len()).map(|k| format!("gamma{k}")));
                names
            }
            MeanModel::OneKnot { .. } => ["alpha0", "alpha1", "alpha2", "beta"].map(String::from).to_vec(),
        }
    }

    /// Indices of the coefficients on `λ_{t−1}, λ_{t−2}, …`.
    pub fn lag_mean_indices(&self) -> Vec<usize> {
        match self {
            MeanModel::LinearIngarchX { q, p, .. } => (1 + q..1 + q + p).collect(),
            MeanModel::OneKnot { .. } => vec![2],
        }
    }

    /// Indices entering the stationarity sum `Σα_i + Σβ_j`.
    pub fn persistence_indices(&self) -> Vec<usize> {
        match self {
            MeanModel::LinearIngarchX { q, p, .. } => (1..1 + q + p).collect(),
            MeanModel::OneKnot { .. } => vec![1, 2, 3],
        }
    }

    /// Indices of covariate coefficients (bounded above by `α_V`).
    pub fn covariate_indices(&self) -> Vec<usize> {
        match self {
            MeanModel::LinearIngarchX { q, p, transforms } => (1 + q + p..1 + q + p + transforms.len()).collect(),
            MeanModel::OneKnot { .. } => Vec::new(),
        }
    }

    /// Checks covariate dimension and that transformed covariates are finite and nonnegative.
    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.covariate_dim() != self.covariate_dim() {
            return Err(Error::InvalidSpec(format!(
                "model expects {} covariates, dataset has {}",
                self.covariate_dim(),
                data.covariate_dim()
            )));
        }
        if let MeanModel::LinearIngarchX { transforms, .. } = self {
            for t in 0..data.len() {
                for (k, tr) in transforms.iter().enumerate() {
                    let u = tr.apply(data.x(t)[k]);
                    if !(u.is_finite() && u >= 0.0) {
                        return Err(Error::Domain(format!(
                            "transformed covariate {} at t = {} is {u}; must be finite and >= 0",
                            k + 1,
                            t + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes the data-only regressor `z_t` (zeros in lag-mean slots).
    /// `t` is 0-based; pre-sample counts and covariates are zero.
    fn regressor(&self, data: &Dataset, t: usize, z: &mut [f64]) {
        z.iter_mut().for_each(|v| *v = 0.0);
        z[0] = 1.0;
        match self {
            MeanModel::LinearIngarchX { q, p, transforms } => {
                for i in 1..=*q {
                    if t >= i {
                        z[i] = data.y[t - i] as f64;
                    }
                }
                if t >= 1 {
                    let x = data.x(t - 1);
                    for (k, tr) in transforms.iter().enumerate() {
                        z[1 + q + p + k] = tr.apply(x[k]);
                    }
                }
            }
            MeanModel::OneKnot { knot } => {
                if t >= 1 {
                    let y = data.y[t - 1];
                    z[1] = y as f64;
                    z[3] = knot_term(y, *knot) as f64;
                }
            }
        }
    }
}

/// How `λ̂_1` and the pre-sample means are set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LambdaInit {
    /// Zero pre-sample history, so `λ̂_1 = f_θ(0; 0) = α_0`.
    #[default]
    Alpha0,
    /// `λ̂_1` (and any pre-sample means) equal to the sample mean of `y`;
    /// `∂λ̂_1/∂θ = 0`.
    EmpiricalMean,
    /// `λ̂_1` (and any pre-sample means) fixed at the given value; `∂λ̂_1/∂θ = 0`.
    Fixed { value: f64 },
}

impl LambdaInit {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "alpha0" => Some(LambdaInit::Alpha0),
            "empirical-mean" => Some(LambdaInit::EmpiricalMean),
            other => other.parse::<f64>().ok().map(|value| LambdaInit::Fixed { value }),
        }
    }

    fn start_value(&self, data: &Dataset) -> Option<f64> {
        match self {
            LambdaInit::Alpha0 => None,
            LambdaInit::EmpiricalMean => Some(data.mean_y()),
            LambdaInit::Fixed { value } => Some(*value),
        }
    }
}

/// Bounds of the compact parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxConstants {
    pub alpha_l: f64,
    pub alpha_u: f64,
    pub alpha_v: f64,
    pub eps: f64,
}

impl BoxConstants {
    /// `α_L = 1e−4`, `α_U = 10·mean(y)` (at least `10·α_L`), `α_V = 100`, `ε = 1e−4`.
    pub fn defaults_for(data: &Dataset) -> Self {
        let alpha_l = 1e-4;
        BoxConstants {
            alpha_l,
            alpha_u: (10.0 * data.mean_y()).max(10.0 * alpha_l),
            alpha_v: 100.0,
            eps: 1e-4,
        }
    }
}

/// Feasible set: `α_0 ∈ [α_L, α_U]`, other coordinates `≥ 0`,
/// `ε ≤ Σα_i + Σβ_j ≤ 1−ε` and covariate coefficients `≤ α_V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub constants: BoxConstants,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Membership in the stationarity sum.
    pub persistence: Vec<bool>,
}

/// Slack allowed when testing membership, to absorb rounding in projection.
pub const FEASIBILITY_TOL: f64 = 1e-12;

impl ParamBox {
    pub fn new(model: &MeanModel, constants: BoxConstants) -> Result<Self> {
        let BoxConstants { alpha_l, alpha_u, alpha_v, eps } = constants;
        if !(alpha_l > 0.0 && alpha_l <= alpha_u && alpha_v >= 0.0 && eps > 0.0 && eps < 0.5) {
            return Err(Error::InvalidSpec(format!("inconsistent parameter-box constants {constants:?}")));
        }
        let d = model.dim();
        let mut lower = vec![0.0; d];
        let mut upper = vec![f64::INFINITY; d];
        lower[0] = alpha_l;
        upper[0] = alpha_u;
        let mut persistence = vec![false; d];
        for i in model.persistence_indices() {
            persistence[i] = true;
            upper[i] = 1.0 - eps;
        }
        for i in model.covariate_indices() {
            upper[i] = alpha_v;
        }
        Ok(ParamBox { constants, lower, upper, persistence })
    }

    pub fn for_data(model: &MeanModel, data: &Dataset) -> Result<Self> {
        Self::new(model, BoxConstants::defaults_for(data))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn persistence_sum(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.persistence).filter(|(_, &m)| m).map(|(v, _)| v).sum()
    }

    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::InfeasibleParams(format!(
                "expected {} parameters, got {}",
                self.dim(),
                theta.len()
            )));
        }
        for (i, &v) in theta.iter().enumerate() {
            if !v.is_finite() || v < self.lower[i] - FEASIBILITY_TOL || v > self.upper[i] + FEASIBILITY_TOL {
                return Err(Error::InfeasibleParams(format!(
                    "coordinate {i} = {v} outside [{}, {}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        let s = self.persistence_sum(theta);
        let eps = self.constants.eps;
        if s < eps - FEASIBILITY_TOL || s > 1.0 - eps + FEASIBILITY_TOL {
            return Err(Error::InfeasibleParams(format!(
                "persistence sum {s} outside [{eps}, {}]",
                1.0 - eps
            )));
        }
        Ok(())
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.check(theta).is_ok()
    }

    /// Euclidean projection onto the feasible set.
    ///
    /// With `θ(τ) = clamp(z − τ·a)` for the 0/1 persistence indicator `a`,
    /// `aᵀθ(τ)` is piecewise linear and nonincreasing in `τ`; the multiplier is
    /// found exactly from its breakpoints.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let clamp_at = |tau: f64| -> Vec<f64> {
            (0..d)
                .map(|i| {
                    let shift = if self.persistence[i] { tau } else { 0.0 };
                    (z[i] - shift).clamp(self.lower[i], self.upper[i])
                })
                .collect()
        };
        let sum_at = |tau: f64| -> f64 {
            (0..d)
                .filter(|&i| self.persistence[i])
                .map(|i| (z[i] - tau).clamp(self.lower[i], self.upper[i]))
                .sum()
        };
        let eps = self.constants.eps;
        let s0 = sum_at(0.0);
        let target = if s0 > 1.0 - eps {
            1.0 - eps
        } else if s0 < eps {
            eps
        } else {
            return clamp_at(0.0);
        };

        // Slab members have finite bounds, so sum_at(first break) = Σ upper
        // >= target >= Σ lower = sum_at(last break).
        let mut breaks: Vec<f64> = (0..d)
            .filter(|&i| self.persistence[i])
            .flat_map(|i| [z[i] - self.upper[i], z[i] - self.lower[i]])
            .collect();
        breaks.sort_by(|a, b| a.total_cmp(b));
        breaks.dedup();
        let mut tau = breaks.last().copied().unwrap_or(0.0);
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (sa, sb) = (sum_at(a), sum_at(b));
            if sa >= target && sb <= target {
                tau = if sa == sb { a } else { a + (sa - target) * (b - a) / (sa - sb) };
                break;
            }
        }
        clamp_at(tau)
    }
}

/// Observed counts with aligned covariate rows (`x` row `t` is `X_t`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<u64>,
    x: Vec<f64>,
    d_x: usize,
    pub name: Option<String>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(y: Vec<u64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let d_x = rows.first().map_or(0, Vec::len);
        if !rows.is_empty() && rows.len() != y.len() {
            return Err(Error::InvalidSpec(format!(
                "{} counts but {} covariate rows",
                y.len(),
                rows.len()
            )));
        }
        let mut x = Vec::with_capacity(y.len() * d_x);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != d_x {
                return Err(Error::InvalidSpec(format!("covariate row {} has {} entries, expected {d_x}", t + 1, row.len())));
            }
            x.extend_from_slice(row);
        }
        Self::from_flat(y, x, d_x)
    }

    /// `x` is row-major `n × d_x`.
    pub fn from_flat(y: Vec<u64>, x: Vec<f64>, d_x: usize) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::InvalidSpec(format!("dataset needs n >= 2, got {}", y.len())));
        }
        if x.len() != y.len() * d_x {
            return Err(Error::InvalidSpec("covariate matrix does not match n × d_x".into()));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCovariate { line: (pos / d_x.max(1)) as u64 + 1 });
        }
        Ok(Dataset { y, x, d_x, name: None, seed: None })
    }

    pub fn counts_only(y: Vec<u64>) -> Result<Self> {
        Self::from_flat(y, Vec::new(), 0)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.d_x
    }

    pub fn x(&self, t: usize) -> &[f64] {
        &self.x[t * self.d_x..(t + 1) * self.d_x]
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn mean_y(&self) -> f64 {
        self.y.iter().map(|&v| v as f64).sum::<f64>() / self.y.len() as f64
    }

    pub fn max_y(&self) -> u64 {
        self.y.iter().copied().max().unwrap_or(0)
    }

    pub fn with_counts(&self, y: Vec<u64>) -> Self {
        assert_eq!(y.len(), self.y.len());
        Dataset { y, ..self.clone() }
    }

    /// Removes covariates entirely (for covariate-free refits).
    pub fn without_covariates(&self) -> Self {
        Dataset { x: Vec::new(), d_x: 0, ..self.clone() }
    }
}

/// Which derivative orders a path walk produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Streams `(t, λ̂_t, ∂λ̂_t, ∂²λ̂_t)` along the sample. Derivative slices are
/// empty when not requested; the Hessian is row-major `d × d`.
pub(crate) fn walk_path<F>(
    model: &MeanModel,
    pbox: &ParamBox,
    theta: &[f64],
    data: &Dataset,
    init: LambdaInit,
    order: Order,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, f64, &[f64], &[f64]) -> Result<()>,
{
    pbox.check(theta)?;
    model.check_data(data)?;
    let d = model.dim();
    let lags = model.lag_mean_indices();
    let p = lags.len();
    let start = init.start_value(data);
    if let Some(c) = start {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Domain(format!("initial mean {c} must be positive")));
        }
    }
    let want_grad = order >= Order::Gradient;
    let want_hess = order >= Order::Hessian;
    let gd = if want_grad { d } else { 0 };
    let hd = if want_hess { d * d } else { 0 };

    // Ring buffers over the p most recent means and their derivatives.
    let pre = start.unwrap_or(0.0);
    let mut lam_hist = vec![pre; p.max(1)];
    let mut grad_hist = vec![0.0; p.max(1) * gd];
    let mut hess_hist = vec![0.0; p.max(1) * hd];
    let mut z = vec![0.0; d];
    let mut grad = vec![0.0; gd];
    let mut hess = vec![0.0; hd];
    let mut head = 0usize; // slot holding λ_{t−1}

    for t in 0..data.len() {
        let lambda;
        if t == 0 && start.is_some() {
            lambda = pre;
            grad.iter_mut().for_each(|v| *v = 0.0);
            hess.iter_mut().for_each(|v| *v = 0.0);
        } else {
            model.regressor(data, t, &mut z);
            let mut acc: f64 = z.iter().zip(theta).map(|(a, b)| a * b).sum();
            for (j, &bj) in lags.iter().enumerate() {
                let slot = (head + p - j) % p;
                acc += theta[bj] * lam_hist[slot];
            }
            lambda = acc;
            if want_grad {
                grad.copy_from_slice(&z);
                for (j, &bj) in lags.iter().enumerate() {
                    let slot = (head + p - j) % p;
                    grad[bj] += lam_hist[slot];
                    let past = &grad_hist[slot * d..(slot + 1) * d];
                    for (g, &pg) in grad.iter_mut().zip(past) {
                        *g += theta[bj] * pg;
                    }
                }
            }
            if want_hess {
                hess.iter_mut().for_each(|v| *v = 0.0);
                for (j, &bj) in lags.iter().enumerate() {
                    let slot = (head + p - j) % p;
                    let past_g = &grad_hist[slot * d..(slot + 1) * d];
                    let past_h = &hess_hist[slot * d * d..(slot + 1) * d * d];
                    for k in 0..d {
                        hess[bj * d + k] += past_g[k];
                        hess[k * d + bj] += past_g[k];
                    }
                    for (h, &ph) in hess.iter_mut().zip(past_h) {
                        *h += theta[bj] * ph;
                    }
                }
            }
        }
        visit(t, lambda, &grad, &hess)?;
        if p > 0 {
            head = (head + 1) % p;
            lam_hist[head] = lambda;
            if want_grad {
                grad_hist[head * d..(head + 1) * d].copy_from_slice(&grad);
            }
            if want_hess {
                hess_hist[head * d * d..(head + 1) * d * d].copy_from_slice(&hess);
            }
        }
    }
    Ok(())
}

/// `λ̂_1, …, λ̂_n` under the chosen initialization.
pub fn lambda_path(
    model: &MeanModel,
    pbox: &ParamBox,
    theta: &[f64],
    data: &Dataset,
    init: LambdaInit,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    walk_path(model, pbox, theta, data, init, Order::Value, |_, l, _, _| {
        out.push(l);
        Ok(())
    })?;
    Ok(out)
}

pub fn lambda_grad_path(
    model: &MeanModel,
    pbox: &ParamBox,
    theta: &[f64],
    data: &Dataset,
    init: LambdaInit,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(data.len());
    walk_path(model, pbox, theta, data, init, Order::Gradient, |_, _, g, _| {
        out.push(DVector::from_column_slice(g));
        Ok(())
    })?;
    Ok(out)
}

pub fn lambda_hess_path(
    model: &MeanModel,
    pbox: &ParamBox,
    theta: &[f64],
    data: &Dataset,
    init: LambdaInit,
) -> Result<Vec<DMatrix<f64>>> {
    let d = model.dim();
    let mut out = Vec::with_capacity(data.len());
    walk_path(model, pbox, theta, data, init, Order::Hessian, |_, _, _, h| {
        out.push(DMatrix::from_row_slice(d, d, h));
        Ok(())
    })?;
    Ok(out)
}
