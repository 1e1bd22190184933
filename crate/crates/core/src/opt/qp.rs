//! Dense strictly convex quadratic programs
//! `min 1/2 x'Hx + g'x  s.t.  a_i'x >= b_i` by the dual active-set method
//! of Goldfarb and Idnani. The dual method starts at the unconstrained
//! minimizer and needs no feasible starting point; it detects infeasibility
//! when a violated constraint can be neither reached nor traded.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{dot, norm2, DenseCholesky, DenseMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// One nonnegative multiplier per constraint, zero for inactive rows.
    pub multipliers: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Solves the QP; `h` must be symmetric positive definite.
pub fn solve_qp(h: &DenseMatrix, g: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<QpSolution> {
    let n = g.len();
    if h.rows != n || h.cols != n || a.len() != b.len() || a.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("inconsistent QP dimensions".into()));
    }
    let chol = DenseCholesky::factor(h).map_err(|_| Error::QpFailure("Hessian is not positive definite".into()))?;
    let mut x: Vec<f64> = chol.solve(g).iter().map(|v| -v).collect();
    let norms: Vec<f64> = a.iter().map(|r| norm2(r).max(f64::MIN_POSITIVE)).collect();
    let hinv_a: Vec<Vec<f64>> = a.iter().map(|r| chol.solve(r)).collect();
    let scale = 1.0 + b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let feas_tol = 1e-12 * scale;

    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let max_iter = 50 * (n + a.len()) + 100;

    loop {
        // most violated constraint, measured in the scaled residual
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..a.len() {
            if active.contains(&i) {
                continue;
            }
            let s = (dot(&a[i], &x) - b[i]) / norms[i];
            if s < -feas_tol && pick.is_none_or(|(_, best)| s < best) {
                pick = Some((i, s));
            }
        }
        let Some((p, _)) = pick else { break };
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::QpFailure("iteration limit reached".into()));
            }
            let k = active.len();
            // r = (N' H^-1 N)^-1 N' H^-1 a_p, z = H^-1 a_p - H^-1 N r
            let mut z = hinv_a[p].clone();
            let mut r = vec![0.0; k];
            if k > 0 {
                let mut m = DenseMatrix::zeros(k, k);
                for (i, &ai) in active.iter().enumerate() {
                    for (j, &aj) in active.iter().enumerate() {
                        m[(i, j)] = dot(&a[ai], &hinv_a[aj]);
                    }
                }
                let rhs: Vec<f64> = active.iter().map(|&ai| dot(&a[ai], &hinv_a[p])).collect();
                let mc = DenseCholesky::factor(&m)
                    .map_err(|_| Error::QpFailure("active constraints became dependent".into()))?;
                r = mc.solve(&rhs);
                for (j, &aj) in active.iter().enumerate() {
                    for (zi, hi) in z.iter_mut().zip(&hinv_a[aj]) {
                        *zi -= r[j] * hi;
                    }
                }
            }
            // largest dual step keeping active multipliers nonnegative
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for j in 0..k {
                if r[j] > 1e-14 {
                    let t = u[j] / r[j];
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let za = dot(&z, &a[p]);
            let s = dot(&a[p], &x) - b[p];
            let t2 = if norm2(&z) > 1e-14 * (1.0 + norm2(&hinv_a[p])) && za > 0.0 { -s / za } else { f64::INFINITY };
            if t1.is_infinite() && t2.is_infinite() {
                return Err(Error::QpFailure("constraints are inconsistent".into()));
            }
            if t2.is_infinite() {
                // pure dual step, then drop the blocking constraint
                for j in 0..k {
                    u[j] -= t1 * r[j];
                }
                up += t1;
                let j = drop.expect("finite dual step has a blocking constraint");
                active.remove(j);
                u.remove(j);
                continue;
            }
            let t = t1.min(t2);
            for (xi, zi) in x.iter_mut().zip(&z) {
                *xi += t * zi;
            }
            for j in 0..k {
                u[j] -= t * r[j];
            }
            up += t;
            if t2 <= t1 {
                active.push(p);
                u.push(up);
                break;
            }
            let j = drop.expect("partial step has a blocking constraint");
            active.remove(j);
            u.remove(j);
        }
    }
    let mut multipliers = vec![0.0; a.len()];
    for (j, &i) in active.iter().enumerate() {
        multipliers[i] = u[j].max(0.0);
    }
    let objective = 0.5 * h.quad_form(&x) + dot(g, &x);
    Ok(QpSolution { x, multipliers, objective, iterations })
}
