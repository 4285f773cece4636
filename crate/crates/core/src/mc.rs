//! Monte Carlo harness: simulate, optionally contaminate, fit at every `α`, and
//! aggregate sample means and `MSE × 10²` against the truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dpd::DpdConfig;
use crate::error::{Error, Result};
use crate::fit::{fit, fit_knot, FitOptions};
use crate::meanproc::{Dataset, LambdaInit, MeanModel};
use crate::simgen::{contaminate, simulate, ContamSpec, SimSpec};

/// Share of failed replications above which a scenario is rejected.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McScenario {
    pub sim: SimSpec,
    pub contam: Option<ContamSpec>,
    pub alphas: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_mc_init")]
    pub init: LambdaInit,
    #[serde(default)]
    pub fit: FitOptions,
    /// For one-knot scenarios, estimate the knot by grid profiling instead of
    /// fixing it at the truth.
    #[serde(default)]
    pub profile_knot: bool,
}

fn default_mc_init() -> LambdaInit {
    LambdaInit::EmpiricalMean
}

impl McScenario {
    pub fn new(sim: SimSpec, contam: Option<ContamSpec>, alphas: Vec<f64>, reps: usize, seed: u64) -> Self {
        McScenario {
            sim,
            contam,
            alphas,
            reps,
            seed,
            init: default_mc_init(),
            fit: FitOptions { covariance: false, ..FitOptions::default() },
            profile_knot: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::InvalidSpec(format!("need at least 2 replications, got {}", self.reps)));
        }
        if self.alphas.is_empty() {
            return Err(Error::InvalidSpec("empty alpha list".into()));
        }
        self.sim.validate()?;
        if let Some(c) = &self.contam {
            c.validate()?;
        }
        Ok(())
    }

    /// Replication `r` data: simulation on stream `2r`, contamination on `2r + 1`.
    pub fn replicate(&self, r: usize) -> Result<Dataset> {
        let data = simulate(&self.sim.with_seed(self.seed, 2 * r as u64))?;
        match &self.contam {
            Some(c) => contaminate(&data, &c.with_seed(self.seed, 2 * r as u64 + 1)),
            None => Ok(data),
        }
    }

    pub fn config(&self, alpha: f64, data: &Dataset) -> Result<DpdConfig> {
        Ok(DpdConfig::for_data(alpha, self.sim.family.clone(), self.sim.model.clone(), data)?.with_init(self.init))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub alpha: f64,
    pub mean: Vec<f64>,
    pub mse100: Vec<f64>,
    /// Per parameter: this row has the column-minimum MSE.
    pub best: Vec<bool>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub scenario: McScenario,
    pub param_names: Vec<String>,
    pub theta_star: Vec<f64>,
    pub reps: usize,
    pub rows: Vec<McRow>,
    pub failures: usize,
}

/// Estimator callback: `(data, α, replication) → θ̂`.
pub type Estimator<'a> = dyn Fn(&McScenario, &Dataset, f64, usize) -> Result<Vec<f64>> + Sync + 'a;

fn default_estimator(sc: &McScenario, data: &Dataset, alpha: f64, _r: usize) -> Result<Vec<f64>> {
    let cfg = sc.config(alpha, data)?;
    let opts = FitOptions { covariance: false, ..sc.fit.clone() };
    if sc.profile_knot && matches!(sc.sim.model, MeanModel::OneKnot { .. }) {
        return Ok(fit_knot(&cfg, data, &opts)?.fit.theta);
    }
    Ok(fit(&cfg, data, None, &opts)?.theta)
}

pub fn run_mc(scenario: &McScenario) -> Result<McReport> {
    run_mc_with(scenario, &default_estimator)
}

/// As [`run_mc`] with a custom estimator. The same path is reused across all `α`
/// within a replication.
pub fn run_mc_with(scenario: &McScenario, estimator: &Estimator) -> Result<McReport> {
    scenario.validate()?;
    let d = scenario.sim.model.dim();
    let per_rep: Vec<Vec<Option<Vec<f64>>>> = (0..scenario.reps)
        .into_par_iter()
        .map(|r| match scenario.replicate(r) {
            Ok(data) => scenario.alphas.iter().map(|&a| estimator(scenario, &data, a, r).ok()).collect(),
            Err(_) => vec![None; scenario.alphas.len()],
        })
        .collect();

    let truth = &scenario.sim.theta;
    let mut rows = Vec::with_capacity(scenario.alphas.len());
    let mut total_failures = 0;
    for (k, &alpha) in scenario.alphas.iter().enumerate() {
        let ok: Vec<&Vec<f64>> = per_rep.iter().filter_map(|rep| rep[k].as_ref()).collect();
        let failures = scenario.reps - ok.len();
        total_failures += failures;
        if failures as f64 > MAX_FAILURE_RATE * scenario.reps as f64 || ok.is_empty() {
            return Err(Error::ScenarioUnstable { alpha, failures, reps: scenario.reps });
        }
        let m = ok.len() as f64;
        let mean = (0..d).map(|j| ok.iter().map(|t| t[j]).sum::<f64>() / m).collect();
        let mse100 = (0..d)
            .map(|j| 100.0 * ok.iter().map(|t| (t[j] - truth[j]).powi(2)).sum::<f64>() / m)
            .collect();
        rows.push(McRow { alpha, mean, mse100, best: vec![false; d], successes: ok.len(), failures });
    }
    for j in 0..d {
        let mut best = 0;
        for (i, row) in rows.iter().enumerate() {
            if row.mse100[j] < rows[best].mse100[j] {
                best = i;
            }
        }
        rows[best].best[j] = true;
    }
    Ok(McReport {
        scenario: scenario.clone(),
        param_names: scenario.sim.model.param_names(),
        theta_star: truth.clone(),
        reps: scenario.reps,
        rows,
        failures: total_failures,
    })
}

impl McReport {
    pub fn row(&self, alpha: f64) -> Option<&McRow> {
        self.rows.iter().find(|r| r.alpha == alpha)
    }

    /// One row per `α`: `alpha,<name>_mean,<name>_mse100,...,failures`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha");
        for name in &self.param_names {
            out.push_str(&format!(",{name}_mean,{name}_mse100"));
        }
        out.push_str(",failures\n");
        for row in &self.rows {
            out.push_str(&format!("{}", row.alpha));
            for j in 0..self.param_names.len() {
                out.push_str(&format!(",{:.3},{:.2}", row.mean[j], row.mse100[j]));
            }
            out.push_str(&format!(",{}\n", row.failures));
        }
        out
    }

    /// Aligned table of `mean(MSE×10²)` cells; `*` marks the column minimum.
    pub fn to_text(&self) -> String {
        let width = 14;
        let mut out = format!("{:<6}", "alpha");
        for name in &self.param_names {
            out.push_str(&format!("{name:>width$}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{:<6.2}", row.alpha));
            for j in 0..self.param_names.len() {
                let mark = if row.best[j] { "*" } else { " " };
                let cell = format!("{:.3}({:.2}){mark}", row.mean[j], row.mse100[j]);
                out.push_str(&format!("{cell:>width$}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("reps = {}, failures = {}\n", self.reps, self.failures));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotStats {
    pub alpha: f64,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub p_true: f64,
    pub successes: usize,
    pub failures: usize,
    pub knots: Vec<u64>,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl KnotStats {
    pub fn from_knots(alpha: f64, knots: Vec<u64>, truth: u64, failures: usize) -> Option<Self> {
        if knots.is_empty() {
            return None;
        }
        let mut v: Vec<f64> = knots.iter().map(|&k| k as f64).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(KnotStats {
            alpha,
            mean,
            sd,
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
            p_true: knots.iter().filter(|&&k| k == truth).count() as f64 / n,
            successes: knots.len(),
            failures,
            knots,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotReport {
    pub scenario: McScenario,
    pub knot_star: u64,
    pub stats: Vec<KnotStats>,
}

impl KnotReport {
    pub fn to_text(&self) -> String {
        let mut out = String::from("alpha    mean     sd    min     q1    med     q3    max  P(true)\n");
        for s in &self.stats {
            out.push_str(&format!(
                "{:<6.2}{:>7.2}{:>7.2}{:>7.2}{:>7.2}{:>7.2}{:>7.2}{:>7.2}{:>9.2}\n",
                s.alpha, s.mean, s.sd, s.min, s.q1, s.median, s.q3, s.max, s.p_true
            ));
        }
        out
    }
}

/// Knot profiling over replications of a one-knot scenario.
pub fn knot_mc(scenario: &McScenario) -> Result<KnotReport> {
    let MeanModel::OneKnot { knot: knot_star } = scenario.sim.model else {
        return Err(Error::InvalidSpec("knot Monte Carlo needs a one-knot scenario".into()));
    };
    if scenario.reps == 0 || scenario.alphas.is_empty() {
        return Err(Error::InvalidSpec("need at least one replication and one alpha".into()));
    }
    scenario.sim.validate()?;
    let opts = FitOptions { covariance: false, ..scenario.fit.clone() };
    let per_rep: Vec<Vec<Option<u64>>> = (0..scenario.reps)
        .into_par_iter()
        .map(|r| match scenario.replicate(r) {
            Ok(data) => scenario
                .alphas
                .iter()
                .map(|&a| {
                    let cfg = scenario.config(a, &data).ok()?;
                    fit_knot(&cfg, &data, &opts).ok().map(|k| k.knot)
                })
                .collect(),
            Err(_) => vec![None; scenario.alphas.len()],
        })
        .collect();
    let mut stats = Vec::with_capacity(scenario.alphas.len());
    for (k, &alpha) in scenario.alphas.iter().enumerate() {
        let knots: Vec<u64> = per_rep.iter().filter_map(|rep| rep[k]).collect();
        let failures = scenario.reps - knots.len();
        if failures as f64 > MAX_FAILURE_RATE * scenario.reps as f64 {
            return Err(Error::ScenarioUnstable { alpha, failures, reps: scenario.reps });
        }
        stats.push(KnotStats::from_knots(alpha, knots, knot_star, failures).expect("nonempty after failure check"));
    }
    Ok(KnotReport { scenario: scenario.clone(), knot_star, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::presets;

    #[test]
    fn exact_estimator_gives_zero_mse() {
        let sc = McScenario::new(presets::poisson_arch(200, 0), None, vec![0.0, 0.5], 2, 1);
        let report = run_mc_with(&sc, &|sc: &McScenario, _: &Dataset, _, _| Ok(sc.sim.theta.clone())).unwrap();
        for row in &report.rows {
            assert!(row.mse100.iter().all(|&v| v == 0.0));
            assert_eq!(row.mean, sc.sim.theta);
        }
    }

    #[test]
    fn failures_over_threshold_are_reported() {
        let sc = McScenario::new(presets::poisson_arch(200, 0), None, vec![0.0], 10, 1);
        let flaky = |sc: &McScenario, _: &Dataset, _, r: usize| {
            if r < 3 {
                Err(Error::Domain("stub".into()))
            } else {
                Ok(sc.sim.theta.clone())
            }
        };
        assert!(matches!(run_mc_with(&sc, &flaky), Err(Error::ScenarioUnstable { failures: 3, reps: 10, .. })));
        let ok = |sc: &McScenario, _: &Dataset, _, r: usize| {
            if r < 2 {
                Err(Error::Domain("stub".into()))
            } else {
                Ok(sc.sim.theta.clone())
            }
        };
        let report = run_mc_with(&sc, &ok).unwrap();
        assert_eq!(report.rows[0].failures, 2);
        assert_eq!(report.rows[0].successes, 8);
    }

    #[test]
    fn markers_point_at_column_minimum() {
        let sc = McScenario::new(presets::poisson_arch(200, 0), None, vec![0.0, 0.5, 1.0], 3, 1);
        let est = |sc: &McScenario, _: &Dataset, a: f64, _| {
            let mut t = sc.sim.theta.clone();
            t[0] += (a - 0.5).abs();
            t[1] += a;
            Ok(t)
        };
        let report = run_mc_with(&sc, &est).unwrap();
        assert!(report.rows[1].best[0]);
        assert!(report.rows[0].best[1]);
        assert!(report.rows[0].best[2]);
        assert_eq!(report.rows.iter().filter(|r| r.best[3]).count(), 1);
        assert!(report.to_text().contains('*'));
        assert!(report.to_csv().starts_with("alpha,alpha0_mean,alpha0_mse100"));
    }

    #[test]
    fn knot_stats_of_singletons_and_quartiles() {
        let s = KnotStats::from_knots(0.0, vec![3], 4, 0).unwrap();
        assert_eq!((s.mean, s.sd, s.min, s.median, s.max, s.p_true), (3.0, 0.0, 3.0, 3.0, 3.0, 0.0));
        let s = KnotStats::from_knots(0.0, vec![1, 2, 3, 4, 4], 4, 0).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert_eq!(s.p_true, 0.4);
    }
}
