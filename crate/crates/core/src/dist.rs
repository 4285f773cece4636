//! One-parameter exponential-family conditional distributions.
//!
//! Every family is written as `g(y|η) = exp{η y − A(η)} h(y)` with mean map
//! `B = A'`, and is parameterized here by its mean `λ = B(η)`. Infinite sums
//! over the support are truncated where the remaining pmf mass drops below a
//! configurable tail bound. Since `g^{1+α} ≤ g` for `α ≥ 0`, the same cut
//! bounds the neglected mass of every power sum built on top of it.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const DEFAULT_TAIL_MASS: f64 = 1e-12;
pub const DEFAULT_TRUNCATION_CAP: u64 = 100_000;

/// Terms of the forward scan are re-anchored on the closed-form log-pmf at this
/// spacing so the additive recurrence cannot drift.
const REANCHOR_EVERY: u64 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyKind {
    Poisson,
    /// Negative binomial with known size `r`, mean `r(1−p)/p`.
    NegBinomial { r: f64 },
    Bernoulli,
}

/// Open interval of admissible conditional means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanDomain {
    pub lower: f64,
    pub upper: f64,
}

impl MeanDomain {
    pub fn contains(&self, lambda: f64) -> bool {
        lambda.is_finite() && lambda > self.lower && lambda < self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFamily")]
pub struct ConditionalFamily {
    kind: FamilyKind,
    truncation_tail_mass: f64,
    truncation_cap: u64,
}

#[derive(Deserialize)]
struct RawFamily {
    kind: FamilyKind,
    #[serde(default = "default_tail")]
    truncation_tail_mass: f64,
    #[serde(default = "default_cap")]
    truncation_cap: u64,
}

fn default_tail() -> f64 {
    DEFAULT_TAIL_MASS
}

fn default_cap() -> u64 {
    DEFAULT_TRUNCATION_CAP
}

impl TryFrom<RawFamily> for ConditionalFamily {
    type Error = Error;

    fn try_from(raw: RawFamily) -> Result<Self> {
        ConditionalFamily::new(raw.kind)?.with_truncation(raw.truncation_tail_mass, raw.truncation_cap)
    }
}

/// Truncated sums `Σ_y (y−λ)^k g(y)^{1+α}` for `k = 0, 1, 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSums {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
}

/// Log-pmf values on `y_min..=y_max` at a fixed mean. Counts below `y_min`
/// carry less than `1e−4` times the tail bound in total and are skipped, which
/// keeps the table `O(√λ)` long for large means.
#[derive(Debug, Clone, Default)]
pub struct PmfTable {
    lambda: f64,
    y_min: u64,
    log_pmf: Vec<f64>,
}

impl PmfTable {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn y_min(&self) -> u64 {
        self.y_min
    }

    pub fn y_max(&self) -> u64 {
        self.y_min + self.log_pmf.len() as u64 - 1
    }

    /// Entries for `y_min..=y_max`.
    pub fn log_pmf(&self) -> &[f64] {
        &self.log_pmf
    }

    pub fn get(&self, y: u64) -> Option<f64> {
        y.checked_sub(self.y_min).and_then(|i| self.log_pmf.get(i as usize)).copied()
    }

    pub fn power_sums(&self, alpha: f64) -> PowerSums {
        let expo = 1.0 + alpha;
        let mut sums = PowerSums { s0: 0.0, s1: 0.0, s2: 0.0 };
        for (i, &lg) in self.log_pmf.iter().enumerate() {
            let w = (expo * lg).exp();
            let dev = (self.y_min + i as u64) as f64 - self.lambda;
            sums.s0 += w;
            sums.s1 += dev * w;
            sums.s2 += dev * dev * w;
        }
        sums
    }
}

impl ConditionalFamily {
    pub fn new(kind: FamilyKind) -> Result<Self> {
        if let FamilyKind::NegBinomial { r } = kind {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidSpec(format!("negative binomial size r must be > 0, got {r}")));
            }
        }
        Ok(ConditionalFamily {
            kind,
            truncation_tail_mass: DEFAULT_TAIL_MASS,
            truncation_cap: DEFAULT_TRUNCATION_CAP,
        })
    }

    pub fn poisson() -> Self {
        ConditionalFamily {
            kind: FamilyKind::Poisson,
            truncation_tail_mass: DEFAULT_TAIL_MASS,
            truncation_cap: DEFAULT_TRUNCATION_CAP,
        }
    }

    pub fn negative_binomial(r: f64) -> Result<Self> {
        Self::new(FamilyKind::NegBinomial { r })
    }

    pub fn bernoulli() -> Self {
        ConditionalFamily {
            kind: FamilyKind::Bernoulli,
            ..Self::poisson()
        }
    }

    pub fn with_truncation(mut self, tail_mass: f64, cap: u64) -> Result<Self> {
        if !(tail_mass > 0.0 && tail_mass <= 1e-6) {
            return Err(Error::InvalidSpec(format!(
                "truncation tail mass must lie in (0, 1e-6], got {tail_mass:e}"
            )));
        }
        if cap < 1000 {
            return Err(Error::InvalidSpec(format!("truncation cap must be >= 1000, got {cap}")));
        }
        self.truncation_tail_mass = tail_mass;
        self.truncation_cap = cap;
        Ok(self)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn truncation_tail_mass(&self) -> f64 {
        self.truncation_tail_mass
    }

    pub fn truncation_cap(&self) -> u64 {
        self.truncation_cap
    }

    pub fn mean_domain(&self) -> MeanDomain {
        match self.kind {
            FamilyKind::Poisson | FamilyKind::NegBinomial { .. } => MeanDomain { lower: 0.0, upper: f64::INFINITY },
            FamilyKind::Bernoulli => MeanDomain { lower: 0.0, upper: 1.0 },
        }
    }

    fn check_mean(&self, lambda: f64) -> Result<()> {
        if self.mean_domain().contains(lambda) {
            Ok(())
        } else {
            Err(Error::Domain(format!("mean {lambda} outside the {:?} mean domain", self.kind)))
        }
    }

    /// Natural parameter `η = B⁻¹(λ)`.
    pub fn eta_of_lambda(&self, lambda: f64) -> Result<f64> {
        self.check_mean(lambda)?;
        Ok(match self.kind {
            FamilyKind::Poisson => lambda.ln(),
            FamilyKind::NegBinomial { r } => (lambda / (r + lambda)).ln(),
            FamilyKind::Bernoulli => (lambda / (1.0 - lambda)).ln(),
        })
    }

    fn check_eta(&self, eta: f64) -> Result<()> {
        if !eta.is_finite() {
            return Err(Error::Domain(format!("natural parameter {eta} is not finite")));
        }
        if matches!(self.kind, FamilyKind::NegBinomial { .. }) && eta >= 0.0 {
            return Err(Error::Domain(format!("negative binomial requires eta < 0, got {eta}")));
        }
        Ok(())
    }

    /// Mean map `B(η) = A'(η)`.
    pub fn b_of_eta(&self, eta: f64) -> Result<f64> {
        self.check_eta(eta)?;
        Ok(match self.kind {
            FamilyKind::Poisson => eta.exp(),
            FamilyKind::NegBinomial { r } => {
                let e = eta.exp();
                r * e / (1.0 - e)
            }
            FamilyKind::Bernoulli => 1.0 / (1.0 + (-eta).exp()),
        })
    }

    /// `B'(η)`, the conditional variance at mean `B(η)`.
    pub fn b_prime(&self, eta: f64) -> Result<f64> {
        let lambda = self.b_of_eta(eta)?;
        Ok(self.variance(lambda))
    }

    /// `B''(η) = V'(λ) V(λ)` with `λ = B(η)`.
    pub fn b_second(&self, eta: f64) -> Result<f64> {
        let lambda = self.b_of_eta(eta)?;
        Ok(self.variance_slope(lambda) * self.variance(lambda))
    }

    /// Variance function `V(λ) = B'(B⁻¹(λ))`.
    pub fn variance(&self, lambda: f64) -> f64 {
        match self.kind {
            FamilyKind::Poisson => lambda,
            FamilyKind::NegBinomial { r } => lambda * (1.0 + lambda / r),
            FamilyKind::Bernoulli => lambda * (1.0 - lambda),
        }
    }

    /// `dV/dλ`.
    pub fn variance_slope(&self, lambda: f64) -> f64 {
        match self.kind {
            FamilyKind::Poisson => 1.0,
            FamilyKind::NegBinomial { r } => 1.0 + 2.0 * lambda / r,
            FamilyKind::Bernoulli => 1.0 - 2.0 * lambda,
        }
    }

    pub fn log_pmf(&self, y: u64, lambda: f64) -> Result<f64> {
        self.check_mean(lambda)?;
        if matches!(self.kind, FamilyKind::Bernoulli) && y > 1 {
            return Err(Error::Domain(format!("Bernoulli count must be 0 or 1, got {y}")));
        }
        Ok(self.log_pmf_unchecked(y, lambda))
    }

    pub fn pmf(&self, y: u64, lambda: f64) -> Result<f64> {
        self.log_pmf(y, lambda).map(f64::exp)
    }

    fn log_pmf_unchecked(&self, y: u64, lambda: f64) -> f64 {
        let yf = y as f64;
        match self.kind {
            FamilyKind::Poisson => {
                let head = if y == 0 { 0.0 } else { yf * lambda.ln() };
                head - lambda - ln_gamma(yf + 1.0)
            }
            FamilyKind::NegBinomial { r } => {
                let ln_rl = (r + lambda).ln();
                let ln_p = r.ln() - ln_rl;
                let ln_q = lambda.ln() - ln_rl;
                let head = if y == 0 { 0.0 } else { yf * ln_q };
                ln_gamma(yf + r) - ln_gamma(r) - ln_gamma(yf + 1.0) + r * ln_p + head
            }
            FamilyKind::Bernoulli => {
                if y == 1 {
                    lambda.ln()
                } else {
                    (-lambda).ln_1p()
                }
            }
        }
    }

    /// `ln g(y+1) − ln g(y)`.
    fn log_ratio(&self, y: u64, lambda: f64) -> f64 {
        let yf = y as f64;
        match self.kind {
            FamilyKind::Poisson => lambda.ln() - (yf + 1.0).ln(),
            FamilyKind::NegBinomial { r } => (yf + r).ln() - (yf + 1.0).ln() + (lambda / (r + lambda)).ln(),
            FamilyKind::Bernoulli => unreachable!("Bernoulli support is tabulated directly"),
        }
    }

    /// Upper bound on `g(k+1)/g(k)` over all `k ≥ y`.
    fn sup_ratio_from(&self, y: u64, lambda: f64) -> f64 {
        let yf = y as f64;
        match self.kind {
            FamilyKind::Poisson => lambda / (yf + 1.0),
            FamilyKind::NegBinomial { r } => {
                let q = lambda / (r + lambda);
                if r >= 1.0 {
                    (yf + r) / (yf + 1.0) * q
                } else {
                    q
                }
            }
            FamilyKind::Bernoulli => 0.0,
        }
    }

    /// Tabulates `ln g(y)` for `y = 0..=y_max` into `table`.
    pub fn fill_table(&self, lambda: f64, table: &mut PmfTable) -> Result<()> {
        self.check_mean(lambda)?;
        table.lambda = lambda;
        let out = &mut table.log_pmf;
        out.clear();
        if let FamilyKind::Bernoulli = self.kind {
            out.push((-lambda).ln_1p());
            out.push(lambda.ln());
            return Ok(());
        }
        let cap = self.truncation_cap;
        let tol = self.truncation_tail_mass;
        let truncation_err = || Error::Truncation { lambda, cap, tail_mass: tol };
        if lambda >= cap as f64 {
            return Err(truncation_err());
        }

        let y_min = self.lower_cut(lambda, tol * 1e-4);
        table.y_min = y_min;

        // Forward scan until a geometric bound shows the remaining tail is
        // negligible even relative to the tolerance.
        let mut y = y_min;
        let mut lg = self.log_pmf_unchecked(y_min, lambda);
        let far_tail = loop {
            out.push(lg);
            let next = if (y + 1) % REANCHOR_EVERY == 0 {
                self.log_pmf_unchecked(y + 1, lambda)
            } else {
                lg + self.log_ratio(y, lambda)
            };
            let rho = self.sup_ratio_from(y + 1, lambda);
            if rho < 1.0 {
                let bound = next.exp() / (1.0 - rho);
                if bound < tol * 1e-4 {
                    break bound;
                }
                if y >= cap && bound >= tol {
                    return Err(truncation_err());
                }
            }
            lg = next;
            y += 1;
        };

        // Walk back to the smallest y whose exact upper tail is still < tol.
        let mut cur = y;
        let mut tail = far_tail;
        while cur > y_min {
            let with_cur = tail + out[(cur - y_min) as usize].exp();
            if with_cur >= tol {
                break;
            }
            tail = with_cur;
            cur -= 1;
        }
        if cur > cap {
            return Err(truncation_err());
        }
        out.truncate((cur - y_min) as usize + 1);
        Ok(())
    }

    /// Largest `y` such that the pmf mass strictly below it is `< eps`, found by
    /// bisection below the mode. Both count families are log-concave there (NB
    /// only for `r ≥ 1`; below that the mode is 0), so `g(k−1)/g(k)` shrinks as
    /// `k` decreases and bounds the rest geometrically. The bound is increasing
    /// in `y` on this range.
    fn lower_cut(&self, lambda: f64, eps: f64) -> u64 {
        let mode = match self.kind {
            FamilyKind::Poisson => lambda.floor(),
            FamilyKind::NegBinomial { r } if r > 1.0 => ((r - 1.0) * lambda / r).floor(),
            _ => 0.0,
        } as u64;
        let negligible = |y: u64| {
            let rho = (-self.log_ratio(y - 2, lambda)).exp();
            rho < 1.0 && self.log_pmf_unchecked(y - 1, lambda).exp() / (1.0 - rho) < eps
        };
        if mode < 2 || !negligible(2) {
            return 0;
        }
        let (mut lo, mut hi) = (2, mode);
        if negligible(hi) {
            return hi;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if negligible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    pub fn table(&self, lambda: f64) -> Result<PmfTable> {
        let mut table = PmfTable::default();
        self.fill_table(lambda, &mut table)?;
        Ok(table)
    }

    /// Smallest `y_max` with upper-tail mass beyond it below the tail bound.
    pub fn truncated_support(&self, lambda: f64) -> Result<u64> {
        Ok(self.table(lambda)?.y_max())
    }

    pub fn power_sums(&self, lambda: f64, alpha: f64) -> Result<PowerSums> {
        check_alpha(alpha)?;
        Ok(self.table(lambda)?.power_sums(alpha))
    }

    /// `Σ_y g(y|η(λ))^{1+α}` over the truncated support.
    pub fn power_sum(&self, lambda: f64, alpha: f64) -> Result<f64> {
        self.power_sums(lambda, alpha).map(|s| s.s0)
    }

    /// `Σ_y (y − λ) g(y|η(λ))^{1+α}` over the truncated support.
    pub fn weighted_moment_sum(&self, lambda: f64, alpha: f64) -> Result<f64> {
        self.power_sums(lambda, alpha).map(|s| s.s1)
    }

    /// Smallest `y` whose cdf reaches `prob`.
    pub fn quantile(&self, lambda: f64, prob: f64) -> Result<u64> {
        self.check_mean(lambda)?;
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {prob}")));
        }
        if let FamilyKind::Bernoulli = self.kind {
            return Ok(if 1.0 - lambda >= prob { 0 } else { 1 });
        }
        let table = self.table(lambda)?;
        let mut cdf = 0.0;
        for (i, &lg) in table.log_pmf().iter().enumerate() {
            cdf += lg.exp();
            if cdf >= prob {
                return Ok(table.y_min() + i as u64);
            }
        }
        Ok(table.y_max())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("tuning parameter must be >= 0, got {alpha}")))
    }
}
