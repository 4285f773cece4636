//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use countdpd::diag::prediction_interval;
use countdpd::dpd::{divergence, h_alpha, objective, objective_grad, objective_hess};
use countdpd::fit::sandwich;
use countdpd::mc::{knot_mc, run_mc, McReport, McScenario};
use countdpd::meanproc::ingarch;
use countdpd::simgen::{contaminate, presets, simulate, simulate_with_lambda, CovariateDriver, SimSpec};
use countdpd::tune::tune;
use countdpd::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 1;
const TABLE_ALPHAS: [f64; 8] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0];
const REPS: usize = 100;
const N: usize = 1000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn clean_mc() -> McReport {
    let sc = McScenario::new(presets::poisson_arch(N, SEED), None, TABLE_ALPHAS.to_vec(), REPS, SEED);
    let report = run_mc(&sc).expect("clean scenario");
    println!("INFO clean Poisson INGARCH-X scenario, n = {N}, R = {REPS}:\n{}", report.to_text());
    report
}

fn table1_means(report: &McReport) -> Verdict {
    let targets = [0.120, 0.148, 0.793, 0.034];
    let row = report.row(0.0).unwrap();
    let worst = row.mean.iter().zip(&targets).map(|(m, t)| (m - t).abs()).fold(0.0, f64::max);
    verdict(worst <= 0.02, format!("alpha = 0 means {:.4?} vs {targets:?}, max deviation {worst:.4} (tol 0.02)", row.mean))
}

fn efficiency_ordering(report: &McReport) -> Verdict {
    let (r0, r1) = (report.row(0.0).unwrap(), report.row(1.0).unwrap());
    let exceptions: Vec<&str> = (0..r0.mse100.len())
        .filter(|&j| r1.mse100[j] < r0.mse100[j])
        .map(|j| report.param_names[j].as_str())
        .collect();
    verdict(
        exceptions.len() <= 1,
        format!("MSE x100 at alpha 0 {:.3?}, at alpha 1 {:.3?}, exceptions {exceptions:?}", r0.mse100, r1.mse100),
    )
}

fn contaminated_robustness() -> Verdict {
    let sc = McScenario::new(
        presets::poisson_arch(N, SEED),
        Some(presets::poisson_arch_outliers(SEED)),
        TABLE_ALPHAS.to_vec(),
        REPS,
        SEED,
    );
    let report = run_mc(&sc).expect("contaminated scenario");
    println!("INFO contaminated scenario (p = 0.02, Poisson(10) outliers), n = {N}, R = {REPS}:\n{}", report.to_text());
    let (a, b) = (report.row(0.0).unwrap().mse100[0], report.row(0.1).unwrap().mse100[0]);
    verdict(b < a, format!("alpha0 MSE x100: {b:.3} at alpha 0.1 vs {a:.3} at alpha 0"))
}

fn knot_recovery() -> Verdict {
    let sc = McScenario::new(presets::one_knot(N, SEED), None, vec![0.0], REPS, SEED);
    let report = knot_mc(&sc).expect("knot scenario");
    println!("INFO knot statistics, n = {N}, R = {REPS}:\n{}", report.to_text());
    let p = report.stats[0].p_true;
    verdict(p >= 0.40, format!("P(knot = 4) = {p:.2} (threshold 0.40)"))
}

fn random_mean(rng: &mut ChaCha8Rng, fam: &ConditionalFamily) -> f64 {
    match fam.kind() {
        FamilyKind::Bernoulli => rng.random_range(0.01..0.99),
        _ => rng.random_range(0.05..60.0f64),
    }
}

fn divergence_nonnegativity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut min_distinct = f64::INFINITY;
    let mut max_equal = 0.0f64;
    let mut min_any = f64::INFINITY;
    for i in 0..1000 {
        let fam = match i % 3 {
            0 => ConditionalFamily::poisson(),
            1 => ConditionalFamily::negative_binomial(rng.random_range(0.5..20.0)).unwrap(),
            _ => ConditionalFamily::bernoulli(),
        };
        let alpha = rng.random_range(0.0..=1.0);
        let star = random_mean(&mut rng, &fam);
        if i % 2 == 0 {
            let d = divergence(&fam, star, star, alpha).unwrap();
            max_equal = max_equal.max(d.abs());
            min_any = min_any.min(d);
        } else {
            // Distinct means, at least 5% apart.
            let g = loop {
                let g = random_mean(&mut rng, &fam);
                if (g - star).abs() >= 0.05 * star.max(g) {
                    break g;
                }
            };
            let d = divergence(&fam, g, star, alpha).unwrap();
            min_distinct = min_distinct.min(d);
            min_any = min_any.min(d);
        }
    }
    verdict(
        min_any >= -1e-12 && max_equal < 1e-10 && min_distinct >= 1e-10,
        format!("min d {min_any:.3e}; max |d| at equal means {max_equal:.3e}; min d at distinct means {min_distinct:.3e}"),
    )
}

/// Fourth-order central difference of `f` along coordinate `i`.
fn richardson<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize, h: f64) -> f64 {
    let at = |s: f64| {
        let mut y = x.to_vec();
        y[i] += s * h;
        f(&y)
    };
    (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h)
}

struct DerivCase {
    cfg: DpdConfig,
    theta: Vec<f64>,
    data: Dataset,
}

fn derivative_case(k: usize, rng: &mut ChaCha8Rng) -> DerivCase {
    let seed = 1000 + k as u64;
    let spec = match k % 5 {
        0 => presets::poisson_arch(300, seed),
        1 => presets::nb_ar(300, seed),
        2 => presets::one_knot(300, seed),
        3 => SimSpec {
            family: ConditionalFamily::poisson(),
            model: ingarch(2, 1),
            theta: vec![1.0, 0.2, 0.1, 0.5],
            driver: CovariateDriver::None,
            n: 300,
            burn_in: 500,
            seed,
            stream: 0,
        },
        _ => SimSpec {
            family: ConditionalFamily::bernoulli(),
            model: ingarch(1, 1),
            theta: vec![0.1, 0.2, 0.4],
            driver: CovariateDriver::None,
            n: 300,
            burn_in: 500,
            seed,
            stream: 0,
        },
    };
    let data = simulate(&spec).unwrap();
    let alpha = rng.random_range(0.0..=1.0);
    let cfg = DpdConfig::for_data(alpha, spec.family, spec.model.clone(), &data).unwrap();
    let mut theta: Vec<f64> = spec.theta.iter().map(|v| v * rng.random_range(-0.3..0.3f64).exp()).collect();
    let s = cfg.pbox.persistence_sum(&theta);
    if s > 0.95 {
        for (v, _) in theta.iter_mut().zip(&cfg.pbox.persistence).filter(|(_, &m)| m) {
            *v *= 0.95 / s;
        }
    }
    cfg.pbox.check(&theta).unwrap();
    DerivCase { cfg, theta, data }
}

fn derivative_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst_grad = 0.0f64;
    let mut worst_hess = 0.0f64;
    for k in 0..50 {
        let DerivCase { cfg, theta, data } = derivative_case(k, &mut rng);
        let g = objective_grad(&cfg, &theta, &data).unwrap();
        let h = objective_hess(&cfg, &theta, &data).unwrap();
        let d = theta.len();
        for i in 0..d {
            let step = 1e-3 * theta[i].abs().max(0.05);
            let fd = richardson(|x| objective(&cfg, x, &data).unwrap(), &theta, i, step);
            worst_grad = worst_grad.max((fd - g[i]).abs() / g[i].abs().max(1e-3));
            for j in 0..d {
                let fd = richardson(|x| objective_grad(&cfg, x, &data).unwrap()[j], &theta, i, step);
                worst_hess = worst_hess.max((fd - h[(j, i)]).abs() / h[(j, i)].abs().max(1e-3));
            }
        }
    }
    verdict(
        worst_grad <= 1e-6 && worst_hess <= 1e-4,
        format!("50 draws: worst gradient rel. error {worst_grad:.2e} (tol 1e-6), worst Hessian rel. error {worst_hess:.2e} (tol 1e-4)"),
    )
}

/// Poisson INGARCH(1,1) with one `|x|` covariate, zero pre-sample history, fitted
/// by Fisher scoring with step halving. Written without the library's path or
/// loss code.
fn independent_poisson_mle(y: &[u64], x: &[f64], start: [f64; 4]) -> Option<[f64; 4]> {
    let n = y.len();
    let nll_and_score = |th: &[f64; 4]| -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let mut lam = th[0];
        let mut dl = [1.0, 0.0, 0.0, 0.0];
        let mut nll = 0.0;
        let mut score = DVector::zeros(4);
        let mut info = DMatrix::zeros(4, 4);
        for t in 0..n {
            if t > 0 {
                let reg = [1.0, y[t - 1] as f64, lam, x[t - 1].abs()];
                let new_lam = th[0] + th[1] * reg[1] + th[2] * lam + th[3] * reg[3];
                let mut new_dl = [0.0; 4];
                for k in 0..4 {
                    new_dl[k] = reg[k] + th[2] * dl[k];
                }
                lam = new_lam;
                dl = new_dl;
            }
            if !(lam > 0.0) {
                return None;
            }
            let yt = y[t] as f64;
            nll += lam - yt * lam.ln();
            let v = DVector::from_row_slice(&dl);
            score += &v * (1.0 - yt / lam);
            info += &v * v.transpose() / lam;
        }
        Some((nll / n as f64, score / n as f64, info / n as f64))
    };
    let mut th = start;
    let (mut f, mut g, mut info) = nll_and_score(&th)?;
    for _ in 0..2000 {
        // Coordinates resting on zero with the score pushing outward stay fixed.
        let free: Vec<usize> = (0..4).filter(|&k| !(k > 0 && th[k] <= 0.0 && g[k] > 0.0)).collect();
        let sub = info.select_rows(&free).select_columns(&free);
        let rhs = -DVector::from_iterator(free.len(), free.iter().map(|&k| g[k]));
        let reduced = sub.lu().solve(&rhs)?;
        let mut step = DVector::zeros(4);
        for (i, &k) in free.iter().enumerate() {
            step[k] = reduced[i];
        }
        // Scoring converges linearly, so the step bounds the distance to the optimum up to a
        // constant. Stop once it is tiny or the objective has hit its rounding floor.
        if step.amax() < 1e-10 {
            return Some(th);
        }
        let floor = step.amax() < 1e-7;
        let mut t = 1.0;
        loop {
            let mut cand = th;
            for k in 0..4 {
                cand[k] += t * step[k];
                if k > 0 {
                    cand[k] = cand[k].max(0.0);
                }
            }
            if cand[0] > 0.0 && cand[1] + cand[2] < 1.0 {
                if let Some((fc, gc, ic)) = nll_and_score(&cand) {
                    if floor && fc >= f {
                        return Some(th);
                    }
                    if fc <= f {
                        th = cand;
                        f = fc;
                        g = gc;
                        info = ic;
                        break;
                    }
                }
            }
            t *= 0.5;
            if t < 1e-14 {
                return None;
            }
        }
    }
    None
}

fn mle_cross_check() -> Verdict {
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for k in 0..10u64 {
        let data = simulate(&presets::poisson_arch(N, 500 + k)).unwrap();
        let cfg = DpdConfig::for_data(0.0, ConditionalFamily::poisson(), presets::poisson_arch(N, 0).model, &data).unwrap();
        let lib = match fit(&cfg, &data, None, &FitOptions::default()) {
            Ok(f) => f,
            Err(e) => return verdict(false, format!("dataset {k}: library fit failed: {e}")),
        };
        let x: Vec<f64> = (0..data.len()).map(|t| data.x(t)[0]).collect();
        let Some(oracle) = independent_poisson_mle(&data.y, &x, [0.3, 0.1, 0.6, 0.05]) else {
            return verdict(false, format!("dataset {k}: independent solver did not converge"));
        };
        if oracle.iter().any(|v| *v < 1e-6) {
            notes.push(format!("dataset {k} has a boundary optimum"));
        }
        let dev = lib.theta.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(dev);
    }
    verdict(worst <= 1e-5, format!("10 datasets, max coordinate difference {worst:.2e} (tol 1e-5) {notes:?}"))
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn information_equality() -> Verdict {
    let spec = presets::poisson_arch(100_000, SEED);
    let data = simulate(&spec).unwrap();
    let cfg = DpdConfig::for_data(0.0, spec.family, spec.model, &data).unwrap();
    let res = fit(&cfg, &data, None, &FitOptions { covariance: false, ..FitOptions::default() }).unwrap();
    let s = sandwich(&cfg, &res.theta, &data).unwrap();
    let ratio = frobenius(&(&s.i_hat - &s.j_hat)) / frobenius(&s.j_hat);
    verdict(ratio < 0.05, format!("||I - J|| / ||J|| = {ratio:.4} at n = 1e5 (tol 0.05)"))
}

fn martingale_score() -> Verdict {
    let spec = presets::poisson_arch(100_000, SEED);
    let (data, lambda) = simulate_with_lambda(&spec).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for alpha in [0.0, 0.5, 1.0] {
        let h: Vec<f64> = lambda.iter().zip(&data.y).map(|(&l, &y)| h_alpha(&spec.family, alpha, l, y).unwrap()).collect();
        let n = h.len() as f64;
        let mean = h.iter().sum::<f64>() / n;
        let se = (h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
        pass &= mean.abs() <= 4.0 * se;
        parts.push(format!("alpha {alpha}: mean {mean:.2e} = {:.2} SE", mean / se));
    }
    verdict(pass, parts.join("; "))
}

fn coverage_at(spec: &SimSpec) -> f64 {
    let (data, lambda) = simulate_with_lambda(spec).unwrap();
    let inside = lambda
        .iter()
        .zip(&data.y)
        .filter(|(&l, &y)| {
            let (lo, hi) = prediction_interval(&spec.family, l, 0.95).unwrap();
            lo <= y && y <= hi
        })
        .count();
    inside as f64 / data.len() as f64
}

fn interval_coverage() -> Verdict {
    let moderate = SimSpec {
        family: ConditionalFamily::poisson(),
        model: ingarch(1, 1),
        theta: vec![5.0, 0.3, 0.6],
        driver: CovariateDriver::None,
        n: 10_000,
        burn_in: 500,
        seed: SEED,
        stream: 0,
    };
    let low = presets::poisson_arch(10_000, SEED);
    let c_low = coverage_at(&low);
    println!("INFO coverage on the low-mean ARCH-covariate scenario (mean count about 2.5): {c_low:.4}");
    let c = coverage_at(&moderate);
    verdict(
        (0.93..=0.97).contains(&c),
        format!("Poisson INGARCH(1,1), theta (5, 0.3, 0.6), stationary mean 50, n = 1e4: coverage {c:.4}"),
    )
}

fn sign_test_p(wins: usize, losses: usize) -> f64 {
    // One-sided P(X >= wins) for X ~ Bin(wins + losses, 1/2).
    let m = wins + losses;
    let mut p = 0.0;
    let mut c = 1.0f64;
    for k in 0..=m {
        if k >= wins {
            p += c;
        }
        c = c * (m - k) as f64 / (k + 1) as f64;
    }
    p / 2f64.powi(m as i32)
}

fn tune_sign_test() -> Verdict {
    let mut wins = 0;
    let mut losses = 0;
    let opts = FitOptions::default();
    for r in 0..50u64 {
        let clean = simulate(&presets::poisson_arch(N, SEED).with_seed(SEED, 2 * r)).unwrap();
        let dirty = contaminate(&clean, &presets::poisson_arch_outliers(SEED).with_seed(SEED, 2 * r + 1)).unwrap();
        let model = presets::poisson_arch(N, 0).model;
        let alpha_opt = |data: &Dataset| {
            let cfg = DpdConfig::for_data(1.0, ConditionalFamily::poisson(), model.clone(), data)
                .unwrap()
                .with_init(LambdaInit::EmpiricalMean);
            tune(&cfg, data, None, &opts).map(|t| t.alpha_opt)
        };
        match (alpha_opt(&clean), alpha_opt(&dirty)) {
            (Ok(a), Ok(b)) if b > a => wins += 1,
            (Ok(a), Ok(b)) if b < a => losses += 1,
            (Ok(_), Ok(_)) => {}
            (e1, e2) => return verdict(false, format!("replication {r}: tune failed ({:?}, {:?})", e1.err(), e2.err())),
        }
    }
    let p = sign_test_p(wins, losses);
    verdict(p < 0.05, format!("50 pairs: contaminated above clean {wins}, below {losses}, ties {}; sign test p = {p:.2e}", 50 - wins - losses))
}

fn run(label: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
    });
    println!("{} {label}: {} [{:.1}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail, start.elapsed().as_secs_f64());
    v.pass
}

fn main() {
    let mut ok = true;
    let clean = catch_unwind(clean_mc).ok();
    let clean_missing = || verdict(false, "clean Monte Carlo run failed");
    ok &= run("1 clean means at alpha 0", || clean.as_ref().map_or_else(clean_missing, table1_means));
    ok &= run("2 efficiency ordering", || clean.as_ref().map_or_else(clean_missing, efficiency_ordering));
    ok &= run("3 contaminated robustness", contaminated_robustness);
    ok &= run("4 knot recovery", knot_recovery);
    ok &= run("5 divergence nonnegativity", divergence_nonnegativity);
    ok &= run("6 derivative suite", derivative_suite);
    ok &= run("7 MLE cross-check", mle_cross_check);
    ok &= run("8 information equality", information_equality);
    ok &= run("9 martingale score", martingale_score);
    ok &= run("10 interval coverage", interval_coverage);
    ok &= run("11 tune sign test", tune_sign_test);
    if !ok {
        std::process::exit(1);
    }
}
