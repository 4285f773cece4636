//! Primal active-set solver for small convex QPs `min ½sᵀHs + gᵀs`, `A s ≤ b`.

use nalgebra::{DMatrix, DVector};

/// Linear inequality rows `a_i·s ≤ b_i`.
pub(crate) struct Constraints {
    pub rows: Vec<DVector<f64>>,
    pub rhs: Vec<f64>,
}

const MAX_ITER: usize = 200;
const TOL: f64 = 1e-13;

/// Solves from the feasible point `s = 0` (requires `b ≥ 0`). `h` must be
/// positive definite.
pub(crate) fn solve(h: &DMatrix<f64>, g: &DVector<f64>, cons: &Constraints) -> DVector<f64> {
    let d = g.len();
    let mut s = DVector::zeros(d);
    let mut working: Vec<usize> = Vec::new();
    for _ in 0..MAX_ITER {
        let m = working.len();
        let mut kkt = DMatrix::zeros(d + m, d + m);
        kkt.view_mut((0, 0), (d, d)).copy_from(h);
        for (k, &c) in working.iter().enumerate() {
            for j in 0..d {
                kkt[(d + k, j)] = cons.rows[c][j];
                kkt[(j, d + k)] = cons.rows[c][j];
            }
        }
        let mut rhs = DVector::zeros(d + m);
        rhs.rows_mut(0, d).copy_from(&-(h * &s + g));
        let Some(sol) = kkt.lu().solve(&rhs) else {
            break;
        };
        let p = sol.rows(0, d).into_owned();
        let scale = 1.0 + s.amax();
        if p.amax() <= TOL * scale {
            // Stationary on the working set: drop the most negative multiplier.
            let mu = sol.rows(d, m);
            match mu.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) {
                Some((k, &v)) if v < -TOL => {
                    working.remove(k);
                }
                _ => return s,
            }
            continue;
        }
        let mut step = 1.0;
        let mut blocking = None;
        for (i, (row, &b)) in cons.rows.iter().zip(&cons.rhs).enumerate() {
            if working.contains(&i) {
                continue;
            }
            let ap = row.dot(&p);
            if ap > TOL {
                let t = ((b - row.dot(&s)) / ap).max(0.0);
                if t < step {
                    step = t;
                    blocking = Some(i);
                }
            }
        }
        s += &p * step;
        if let Some(i) = blocking {
            working.push(i);
        }
    }
    s
}
