//! Simulators for INGARCH-X and one-knot count processes, covariate drivers and
//! additive outlier contamination.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dist::{ConditionalFamily, FamilyKind};
use crate::error::{Error, Result};
use crate::meanproc::{knot_term, BoxConstants, CovariateTransform, Dataset, MeanModel, ParamBox};

pub const DEFAULT_BURN_IN: usize = 500;
pub const EXPLOSION_LIMIT: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateDriver {
    /// `X_t | past ~ N(0, ω_0 + ω_1 X_{t−1}²)`.
    Arch1 { omega0: f64, omega1: f64 },
    /// One AR(1) column per coefficient, `X_{i,t} = φ_i X_{i,t−1} + ε_{i,t}`.
    Ar1 { phi: Vec<f64>, noise_sd: f64 },
    None,
}

impl CovariateDriver {
    pub fn columns(&self) -> usize {
        match self {
            CovariateDriver::Arch1 { .. } => 1,
            CovariateDriver::Ar1 { phi, .. } => phi.len(),
            CovariateDriver::None => 0,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            CovariateDriver::Arch1 { omega0, omega1 } => {
                if !(*omega0 > 0.0 && *omega1 >= 0.0 && *omega1 < 1.0) {
                    return Err(Error::InvalidSpec(format!("ARCH(1) needs ω_0 > 0 and 0 ≤ ω_1 < 1, got ({omega0}, {omega1})")));
                }
            }
            CovariateDriver::Ar1 { phi, noise_sd } => {
                if phi.iter().any(|&f| !(f > 0.0 && f < 1.0)) || !(*noise_sd > 0.0) {
                    return Err(Error::InvalidSpec(format!("AR(1) needs 0 < φ < 1 and sd > 0, got {phi:?}, {noise_sd}")));
                }
            }
            CovariateDriver::None => {}
        }
        Ok(())
    }

    /// `total` rows, row-major; the first `burn_in` rows are included.
    fn generate(&self, total: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        match self {
            CovariateDriver::Arch1 { omega0, omega1 } => {
                let mut prev = 0.0f64;
                (0..total)
                    .map(|_| {
                        let sd = (omega0 + omega1 * prev * prev).sqrt();
                        prev = sd * std.sample(rng);
                        prev
                    })
                    .collect()
            }
            CovariateDriver::Ar1 { phi, noise_sd } => {
                let k = phi.len();
                let mut prev = vec![0.0; k];
                let mut out = Vec::with_capacity(total * k);
                for _ in 0..total {
                    for i in 0..k {
                        prev[i] = phi[i] * prev[i] + noise_sd * std.sample(rng);
                        out.push(prev[i]);
                    }
                }
                out
            }
            CovariateDriver::None => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub family: ConditionalFamily,
    pub model: MeanModel,
    pub theta: Vec<f64>,
    pub driver: CovariateDriver,
    pub n: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub seed: u64,
    /// Substream index; replications use distinct streams under one seed.
    #[serde(default)]
    pub stream: u64,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

/// Box used to validate true parameters; `α_0` is only bounded below.
fn truth_box(model: &MeanModel) -> Result<ParamBox> {
    ParamBox::new(model, BoxConstants { alpha_l: 1e-4, alpha_u: f64::INFINITY, alpha_v: 100.0, eps: 1e-4 })
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.driver.validate()?;
        if self.burn_in < 100 {
            return Err(Error::InvalidSpec(format!("burn-in {} below 100", self.burn_in)));
        }
        if self.n < 2 {
            return Err(Error::InvalidSpec("need n ≥ 2".into()));
        }
        if self.driver.columns() != self.model.covariate_dim() {
            return Err(Error::InvalidSpec(format!(
                "driver produces {} covariates, model expects {}",
                self.driver.columns(),
                self.model.covariate_dim()
            )));
        }
        truth_box(&self.model)?.check(&self.theta)
    }

    pub fn with_seed(&self, seed: u64, stream: u64) -> Self {
        SimSpec { seed, stream, ..self.clone() }
    }

    pub fn with_n(&self, n: usize) -> Self {
        SimSpec { n, ..self.clone() }
    }
}

fn draw_count(fam: &ConditionalFamily, lambda: f64, rng: &mut ChaCha8Rng) -> Result<u64> {
    Ok(match fam.kind() {
        FamilyKind::Poisson => Poisson::new(lambda).map_err(|e| Error::Domain(e.to_string()))?.sample(rng) as u64,
        FamilyKind::NegBinomial { r } => {
            let g = Gamma::new(r, lambda / r).map_err(|e| Error::Domain(e.to_string()))?.sample(rng);
            if g <= 0.0 {
                0
            } else {
                Poisson::new(g).map_err(|e| Error::Domain(e.to_string()))?.sample(rng) as u64
            }
        }
        FamilyKind::Bernoulli => {
            if !(lambda > 0.0 && lambda < 1.0) {
                return Err(Error::Domain(format!("Bernoulli mean {lambda} outside (0, 1)")));
            }
            u64::from(rng.random_bool(lambda))
        }
    })
}

/// Simulates the process; returns the kept data and the true means `λ_1..λ_n`.
pub fn simulate_with_lambda(spec: &SimSpec) -> Result<(Dataset, Vec<f64>)> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, spec.stream);
    let total = spec.burn_in + spec.n;
    let d_x = spec.driver.columns();
    let x = spec.driver.generate(total, &mut rng);
    let theta = &spec.theta;

    let (q, p, transforms): (usize, usize, &[CovariateTransform]) = match &spec.model {
        MeanModel::LinearIngarchX { q, p, transforms } => (*q, *p, transforms),
        MeanModel::OneKnot { .. } => (1, 1, &[]),
    };
    let persist: f64 = theta[1..1 + q + p].iter().sum();
    let start = theta[0] / (1.0 - persist);
    let mut y_hist = vec![start.round() as u64; q.max(1)];
    let mut lam_hist = vec![start; p.max(1)];
    let mut ys = Vec::with_capacity(spec.n);
    let mut lams = Vec::with_capacity(spec.n);

    for t in 0..total {
        // y_hist[0] = Y_{t−1}, lam_hist[0] = λ_{t−1}.
        let lambda = match &spec.model {
            MeanModel::LinearIngarchX { .. } => {
                let mut l = theta[0];
                for i in 0..q {
                    l += theta[1 + i] * y_hist[i] as f64;
                }
                for j in 0..p {
                    l += theta[1 + q + j] * lam_hist[j];
                }
                if t > 0 {
                    for (k, tr) in transforms.iter().enumerate() {
                        l += theta[1 + q + p + k] * tr.apply(x[(t - 1) * d_x + k]);
                    }
                }
                l
            }
            MeanModel::OneKnot { knot } => {
                let y = y_hist[0];
                theta[0] + theta[1] * y as f64 + theta[2] * lam_hist[0] + theta[3] * knot_term(y, *knot) as f64
            }
        };
        if !(lambda.is_finite() && lambda <= EXPLOSION_LIMIT) {
            return Err(Error::Explosion { t, lambda });
        }
        let y = draw_count(&spec.family, lambda, &mut rng)?;
        y_hist.rotate_right(1);
        y_hist[0] = y;
        lam_hist.rotate_right(1);
        lam_hist[0] = lambda;
        if t >= spec.burn_in {
            ys.push(y);
            lams.push(lambda);
        }
    }
    let kept = x[spec.burn_in * d_x..].to_vec();
    let mut data = Dataset::from_flat(ys, kept, d_x)?;
    data.seed = Some(spec.seed);
    Ok((data, lams))
}

pub fn simulate(spec: &SimSpec) -> Result<Dataset> {
    simulate_with_lambda(spec).map(|(d, _)| d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum OutlierLaw {
    Poisson { mu: f64 },
    /// `NB(r, p)` with mean `r(1−p)/p`.
    NegBinomial { r: f64, p_nb: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContamSpec {
    pub p: f64,
    pub outlier: OutlierLaw,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

impl ContamSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidSpec(format!("contamination probability {} outside [0, 1]", self.p)));
        }
        match self.outlier {
            OutlierLaw::Poisson { mu } if !(mu > 0.0 && mu.is_finite()) => {
                Err(Error::InvalidSpec(format!("outlier mean {mu} must be positive")))
            }
            OutlierLaw::NegBinomial { r, p_nb } if !(r > 0.0 && p_nb > 0.0 && p_nb < 1.0) => {
                Err(Error::InvalidSpec(format!("invalid outlier law NB({r}, {p_nb})")))
            }
            _ => Ok(()),
        }
    }

    pub fn with_seed(&self, seed: u64, stream: u64) -> Self {
        ContamSpec { seed, stream, ..self.clone() }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> u64 {
        match self.outlier {
            OutlierLaw::Poisson { mu } => Poisson::new(mu).expect("validated").sample(rng) as u64,
            OutlierLaw::NegBinomial { r, p_nb } => {
                let g = Gamma::new(r, (1.0 - p_nb) / p_nb).expect("validated").sample(rng);
                if g <= 0.0 {
                    0
                } else {
                    Poisson::new(g).expect("positive").sample(rng) as u64
                }
            }
        }
    }
}

/// `Y_{c,t} = Y_t + P_t·Y_{0,t}` with `P_t ~ Bernoulli(p)`; covariates unchanged.
pub fn contaminate(data: &Dataset, c: &ContamSpec) -> Result<Dataset> {
    c.validate()?;
    let mut rng = rng_for(c.seed, c.stream);
    let coin = Bernoulli::new(c.p).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let y = data
        .y
        .iter()
        .map(|&y| if coin.sample(&mut rng) { y + c.draw(&mut rng) } else { y })
        .collect();
    Ok(data.with_counts(y))
}

/// ARCH(1) covariate column of length `n` after a default burn-in.
pub fn drive_arch1(n: usize, omega0: f64, omega1: f64, seed: u64) -> Result<Vec<f64>> {
    let driver = CovariateDriver::Arch1 { omega0, omega1 };
    driver.validate()?;
    let x = driver.generate(n + DEFAULT_BURN_IN, &mut rng_for(seed, 0));
    Ok(x[DEFAULT_BURN_IN..].to_vec())
}

/// AR(1) covariate column of length `n` after a default burn-in.
pub fn drive_ar1(n: usize, phi: f64, sd: f64, seed: u64) -> Result<Vec<f64>> {
    let driver = CovariateDriver::Ar1 { phi: vec![phi], noise_sd: sd };
    driver.validate()?;
    let x = driver.generate(n + DEFAULT_BURN_IN, &mut rng_for(seed, 0));
    Ok(x[DEFAULT_BURN_IN..].to_vec())
}

/// The three simulation designs and their contamination schemes.
pub mod presets {
    use super::*;

    /// Poisson INGARCH(1,1) with `γ|X_{t−1}|`, ARCH(1) driver `(ω_0, ω_1) = (1, 0.5)`,
    /// `θ* = (0.10, 0.15, 0.80, 0.03)`.
    pub fn poisson_arch(n: usize, seed: u64) -> SimSpec {
        SimSpec {
            family: ConditionalFamily::poisson(),
            model: MeanModel::LinearIngarchX { q: 1, p: 1, transforms: vec![CovariateTransform::Abs] },
            theta: vec![0.10, 0.15, 0.80, 0.03],
            driver: CovariateDriver::Arch1 { omega0: 1.0, omega1: 0.5 },
            n,
            burn_in: DEFAULT_BURN_IN,
            seed,
            stream: 0,
        }
    }

    /// NB(8) INGARCH(1,1) with `γ_1 exp(X_1) + γ_2 X_2⁻`, AR(1) drivers
    /// `φ = (1/3, 1/2)`, `θ* = (0.5, 0.2, 0.4, 0.1, 0.3)`.
    pub fn nb_ar(n: usize, seed: u64) -> SimSpec {
        SimSpec {
            family: ConditionalFamily::negative_binomial(8.0).expect("r > 0"),
            model: MeanModel::LinearIngarchX {
                q: 1,
                p: 1,
                transforms: vec![CovariateTransform::Exp, CovariateTransform::NegativePart],
            },
            theta: vec![0.5, 0.2, 0.4, 0.1, 0.3],
            driver: CovariateDriver::Ar1 { phi: vec![1.0 / 3.0, 0.5], noise_sd: 1.0 },
            n,
            burn_in: DEFAULT_BURN_IN,
            seed,
            stream: 0,
        }
    }

    /// Poisson one-knot model, `ξ* = 4`, `θ* = (1, 0.3, 0.2, 0.4)`.
    pub fn one_knot(n: usize, seed: u64) -> SimSpec {
        SimSpec {
            family: ConditionalFamily::poisson(),
            model: MeanModel::OneKnot { knot: 4 },
            theta: vec![1.0, 0.3, 0.2, 0.4],
            driver: CovariateDriver::None,
            n,
            burn_in: DEFAULT_BURN_IN,
            seed,
            stream: 0,
        }
    }

    pub fn poisson_arch_outliers(seed: u64) -> ContamSpec {
        ContamSpec { p: 0.02, outlier: OutlierLaw::Poisson { mu: 10.0 }, seed, stream: 0 }
    }

    pub fn nb_ar_outliers(seed: u64) -> ContamSpec {
        ContamSpec { p: 0.02, outlier: OutlierLaw::NegBinomial { r: 5.0, p_nb: 0.4 }, seed, stream: 0 }
    }

    pub fn one_knot_outliers(seed: u64) -> ContamSpec {
        ContamSpec { p: 0.006, outlier: OutlierLaw::Poisson { mu: 11.0 }, seed, stream: 0 }
    }
}
