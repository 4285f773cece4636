//! Constrained minimization of the empirical divergence, sandwich covariance
//! and knot profiling.
//!
//! Each start runs a projected Newton iteration: the Hessian is made positive
//! definite by eigenvalue flooring, the step solves the quadratic model over the
//! feasible set exactly (active-set QP), and Armijo backtracking accepts it.

mod qp;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpd::{evaluate, evaluate_sandwich, objective, DpdConfig};
use crate::error::{Error, Result};
use crate::meanproc::{Dataset, MeanModel, ParamBox};

pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    pub n_starts: usize,
    pub jitter_seed: u64,
    /// Compute the sandwich covariance at the optimum.
    pub covariance: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            grad_tol: 1e-6,
            f_tol: 1e-10,
            n_starts: 5,
            jitter_seed: 0,
            covariance: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub param_names: Vec<String>,
    pub objective: f64,
    /// `‖θ̂ − P(θ̂ − ∇Ĥ)‖₂`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub alpha: f64,
    pub n: usize,
    pub start_index: usize,
    pub j_hat: Option<Vec<Vec<f64>>>,
    pub i_hat: Option<Vec<Vec<f64>>>,
    pub sigma_hat: Option<Vec<Vec<f64>>>,
    pub std_errors: Option<Vec<f64>>,
    pub covariance_error: Option<String>,
    pub config: DpdConfig,
    pub options: FitOptions,
}

impl FitResult {
    /// Fills the covariance fields, or records why the sandwich failed.
    pub fn attach_covariance(&mut self, data: &Dataset) {
        match sandwich(&self.config, &self.theta, data) {
            Ok(sw) => {
                self.std_errors = Some(sw.std_errors(data.len()));
                self.j_hat = Some(rows(&sw.j_hat));
                self.i_hat = Some(rows(&sw.i_hat));
                self.sigma_hat = Some(rows(&sw.sigma_hat));
                self.covariance_error = None;
            }
            Err(e) => self.covariance_error = Some(e.to_string()),
        }
    }

    pub fn sigma_matrix(&self) -> Option<DMatrix<f64>> {
        let s = self.sigma_hat.as_ref()?;
        let d = s.len();
        Some(DMatrix::from_fn(d, d, |i, j| s[i][j]))
    }
}

/// Plug-in sandwich pieces.
#[derive(Debug, Clone)]
pub struct Sandwich {
    pub j_hat: DMatrix<f64>,
    pub i_hat: DMatrix<f64>,
    pub sigma_hat: DMatrix<f64>,
}

impl Sandwich {
    pub fn std_errors(&self, n: usize) -> Vec<f64> {
        self.sigma_hat.diagonal().iter().map(|&v| (v.max(0.0) / n as f64).sqrt()).collect()
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `J⁻¹ I J⁻¹` with `J` the mean loss Hessian and `I` the mean score outer product.
pub fn sandwich(cfg: &DpdConfig, theta: &[f64], data: &Dataset) -> Result<Sandwich> {
    let ev = evaluate_sandwich(cfg, theta, data)?;
    let j_hat = ev.hess.expect("hessian requested");
    let i_hat = ev.score_outer.expect("outer product requested");
    let eig = SymmetricEigen::new(j_hat.clone());
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v.abs()));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= SINGULAR_CONDITION) {
        return Err(Error::SingularInformation { condition });
    }
    let inv = eig.eigenvectors.clone()
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v))
        * eig.eigenvectors.transpose();
    let s = &inv * &i_hat * &inv;
    let sigma_hat = (&s + s.transpose()) * 0.5;
    Ok(Sandwich { j_hat, i_hat, sigma_hat })
}

/// Heuristic start: `α_0 = 0.5·mean(y)·(1 − Σβ)`, `α_i = 0.1/q`, `β_j = 0.5/p`,
/// covariate coefficients `0.01`, projected onto the feasible set.
pub fn default_start(cfg: &DpdConfig, data: &Dataset) -> Vec<f64> {
    let mean = data.mean_y();
    let theta = match &cfg.model {
        MeanModel::LinearIngarchX { q, p, transforms } => {
            let beta_sum = if *p > 0 { 0.5 } else { 0.0 };
            let mut th = vec![0.5 * mean * (1.0 - beta_sum)];
            th.extend(std::iter::repeat_n(0.1 / *q.max(&1) as f64, *q));
            th.extend(std::iter::repeat_n(0.5 / *p.max(&1) as f64, *p));
            th.extend(std::iter::repeat_n(0.01, transforms.len()));
            th
        }
        MeanModel::OneKnot { .. } => vec![0.5 * mean * 0.5, 0.1, 0.5, 0.1],
    };
    cfg.pbox.project(&theta)
}

/// The base plus `n_starts − 1` multiplicative jitters `exp(U(−½, ½))`. A
/// jitter whose persistence sum passes halfway from the base's sum to `1 − ε`
/// is shrunk back to that level, so no restart begins on the unit-root face.
fn starts(cfg: &DpdConfig, base: Vec<f64>, opts: &FitOptions) -> Vec<Vec<f64>> {
    let pbox = &cfg.pbox;
    let ceiling = 0.5 * (pbox.persistence_sum(&base) + 1.0 - pbox.constants.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.jitter_seed);
    let mut out = vec![base.clone()];
    for _ in 1..opts.n_starts.max(1) {
        let mut jittered: Vec<f64> = base.iter().map(|&v| v * rng.random_range(-0.5..0.5f64).exp()).collect();
        let sum = pbox.persistence_sum(&jittered);
        if sum > ceiling {
            for (v, _) in jittered.iter_mut().zip(&pbox.persistence).filter(|(_, &m)| m) {
                *v *= ceiling / sum;
            }
        }
        out.push(pbox.project(&jittered));
    }
    out
}

fn constraints(pbox: &ParamBox, theta: &[f64]) -> qp::Constraints {
    let d = pbox.dim();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let unit = |i: usize, s: f64| {
        let mut v = DVector::zeros(d);
        v[i] = s;
        v
    };
    for i in 0..d {
        rows.push(unit(i, -1.0));
        rhs.push((theta[i] - pbox.lower[i]).max(0.0));
        if pbox.upper[i].is_finite() {
            rows.push(unit(i, 1.0));
            rhs.push((pbox.upper[i] - theta[i]).max(0.0));
        }
    }
    if pbox.persistence.iter().any(|&m| m) {
        let a = DVector::from_iterator(d, pbox.persistence.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        let s = pbox.persistence_sum(theta);
        let eps = pbox.constants.eps;
        rows.push(-&a);
        rhs.push((s - eps).max(0.0));
        rows.push(a);
        rhs.push((1.0 - eps - s).max(0.0));
    }
    qp::Constraints { rows, rhs }
}

fn projected_gradient_norm(pbox: &ParamBox, theta: &[f64], grad: &DVector<f64>) -> f64 {
    let moved: Vec<f64> = theta.iter().zip(grad.iter()).map(|(t, g)| t - g).collect();
    let p = pbox.project(&moved);
    theta.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn positive_definite(h: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(h.clone());
    let floor = 1e-8 * eig.eigenvalues.amax().max(1.0);
    let vals = eig.eigenvalues.map(|v| v.abs().max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

struct Run {
    theta: Vec<f64>,
    objective: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;
/// Consecutive sub-tolerance improvements after which a start whose gradient
/// test still fails is abandoned as non-converged.
const STALL_LIMIT: usize = 3;

fn value_or_inf(cfg: &DpdConfig, theta: &[f64], data: &Dataset) -> f64 {
    match objective(cfg, theta, data) {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    }
}

fn minimize(cfg: &DpdConfig, data: &Dataset, start: Vec<f64>, opts: &FitOptions) -> Result<Run> {
    let pbox = &cfg.pbox;
    let mut theta = start;
    let mut improvement = f64::INFINITY;
    let mut iterations = 0;
    let mut stalled = 0;
    loop {
        let ev = evaluate(cfg, &theta, data)?;
        let grad = ev.grad.expect("gradient requested");
        let f = ev.value;
        let grad_norm = projected_gradient_norm(pbox, &theta, &grad);
        if grad_norm <= opts.grad_tol && improvement < opts.f_tol {
            return Ok(Run { theta, objective: f, grad_norm, iterations, converged: true });
        }
        if iterations >= opts.max_iter || stalled >= STALL_LIMIT {
            return Ok(Run { theta, objective: f, grad_norm, iterations, converged: false });
        }
        let h = positive_definite(&ev.hess.expect("hessian requested"));
        let step = qp::solve(&h, &grad, &constraints(pbox, &theta));
        let slope = grad.dot(&step);

        let mut accepted = None;
        if slope < 0.0 {
            let mut t = 1.0;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
                let trial = pbox.project(&trial);
                let ft = value_or_inf(cfg, &trial, data);
                if ft <= f + ARMIJO * t * slope {
                    accepted = Some((trial, ft));
                    break;
                }
                t *= 0.5;
            }
        }
        if accepted.is_none() {
            // Projected gradient fallback.
            let mut t = 1.0;
            for _ in 0..MAX_HALVINGS {
                let moved: Vec<f64> = theta.iter().zip(grad.iter()).map(|(a, g)| a - t * g).collect();
                let trial = pbox.project(&moved);
                let dist2: f64 = trial.iter().zip(&theta).map(|(a, b)| (a - b) * (a - b)).sum();
                let ft = value_or_inf(cfg, &trial, data);
                if dist2 > 0.0 && ft <= f - ARMIJO / t * dist2 {
                    accepted = Some((trial, ft));
                    break;
                }
                t *= 0.5;
            }
        }
        iterations += 1;
        match accepted {
            Some((next, ft)) => {
                improvement = f - ft;
                stalled = if improvement < opts.f_tol { stalled + 1 } else { 0 };
                theta = next;
            }
            None => {
                // No descent possible at working precision.
                return Ok(Run { theta, objective: f, grad_norm, iterations, converged: grad_norm <= opts.grad_tol });
            }
        }
    }
}

/// Minimizes the empirical divergence over the feasible set from `init` (or the
/// default start) plus jittered restarts. The winner is the converged start with
/// the lowest objective, ties going to the lower start index.
pub fn fit(cfg: &DpdConfig, data: &Dataset, init: Option<&[f64]>, opts: &FitOptions) -> Result<FitResult> {
    cfg.validate()?;
    cfg.model.check_data(data)?;
    let d = cfg.dim();
    if data.len() < 10 * d {
        return Err(Error::InvalidSpec(format!("need at least {} observations for {d} parameters, got {}", 10 * d, data.len())));
    }
    let base = match init {
        Some(th) => {
            cfg.pbox.check(th)?;
            th.to_vec()
        }
        None => default_start(cfg, data),
    };
    let runs: Vec<Result<Run>> = starts(cfg, base, opts).into_par_iter().map(|s| minimize(cfg, data, s, opts)).collect();

    let better = |cand: &Run, best: &Run| {
        (cand.converged && !best.converged)
            || (cand.converged == best.converged && cand.objective < best.objective - 1e-12 * (1.0 + best.objective.abs()))
    };
    let mut best: Option<(usize, Run)> = None;
    let mut first_err = None;
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Ok(r) => {
                if best.as_ref().is_none_or(|(_, b)| better(&r, b)) {
                    best = Some((i, r));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((start_index, run)) = best else {
        return Err(first_err.expect("at least one start"));
    };

    let mut result = FitResult {
        theta: run.theta,
        param_names: cfg.model.param_names(),
        objective: run.objective,
        grad_norm: run.grad_norm,
        iterations: run.iterations,
        converged: run.converged,
        alpha: cfg.alpha,
        n: data.len(),
        start_index,
        j_hat: None,
        i_hat: None,
        sigma_hat: None,
        std_errors: None,
        covariance_error: None,
        config: cfg.clone(),
        options: opts.clone(),
    };
    if opts.covariance {
        result.attach_covariance(data);
    }
    if !result.converged {
        return Err(Error::NonConvergence(Box::new(result)));
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotPoint {
    pub knot: u64,
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotFit {
    pub knot: u64,
    pub grid: Vec<KnotPoint>,
    pub fit: FitResult,
}

/// Profiles the knot over `1..=max(y)`; the smallest knot wins ties.
pub fn fit_knot(cfg: &DpdConfig, data: &Dataset, opts: &FitOptions) -> Result<KnotFit> {
    if !matches!(cfg.model, MeanModel::OneKnot { .. }) {
        return Err(Error::InvalidSpec("knot profiling needs the one-knot model".into()));
    }
    let max_y = data.max_y();
    if max_y == 0 {
        return Err(Error::GridEmpty { max_y });
    }
    let inner = FitOptions { covariance: false, ..opts.clone() };
    let fits: Vec<(u64, Result<FitResult>)> = (1..=max_y)
        .into_par_iter()
        .map(|knot| {
            let mut c = cfg.clone();
            c.model = MeanModel::OneKnot { knot };
            (knot, fit(&c, data, None, &inner))
        })
        .collect();
    let mut grid = Vec::with_capacity(fits.len());
    let mut best: Option<FitResult> = None;
    let mut best_knot = 0;
    let mut first_err = None;
    for (knot, res) in fits {
        match res {
            Ok(f) => {
                grid.push(KnotPoint { knot, objective: Some(f.objective), error: None });
                if best.as_ref().is_none_or(|b| f.objective < b.objective) {
                    best_knot = knot;
                    best = Some(f);
                }
            }
            Err(e) => {
                grid.push(KnotPoint { knot, objective: None, error: Some(e.kind_name().to_string()) });
                first_err.get_or_insert(e);
            }
        }
    }
    let Some(mut winner) = best else {
        return Err(first_err.expect("nonempty grid"));
    };
    winner.options = opts.clone();
    if opts.covariance {
        winner.attach_covariance(data);
    }
    Ok(KnotFit { knot: best_knot, grid, fit: winner })
}
