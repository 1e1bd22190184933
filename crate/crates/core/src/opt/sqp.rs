//! Sequential quadratic programming with a damped BFGS Lagrangian Hessian
//! and an l1 merit line search.

use alloc::vec;
use alloc::vec::Vec;

use super::qp::solve_qp;
use super::{Termination, TraceRow};
use crate::error::{Error, Result};
use crate::math::{dot, norm_inf, DenseMatrix};

/// Smooth problem `min f(x)  s.t.  c(x) <= 0,  lower <= x <= upper`.
pub trait Nlp {
    fn dim(&self) -> usize;
    fn n_constraints(&self) -> usize;
    /// Bounds; infinite entries are absent.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// Values, plus gradient and constraint Jacobian when `derivatives`.
    fn eval(&self, x: &[f64], derivatives: bool) -> Result<NlpPoint>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpPoint {
    pub f: f64,
    pub c: Vec<f64>,
    /// Empty unless derivatives were requested.
    pub grad: Vec<f64>,
    pub jac: Vec<Vec<f64>>,
}

impl NlpPoint {
    pub fn max_violation(&self) -> f64 {
        self.c.iter().fold(0.0_f64, |m, v| m.max(*v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpOptions {
    /// Tolerance on the scaled KKT residual and on constraint violation.
    pub tol: f64,
    pub max_iter: usize,
    /// Powell damping threshold.
    pub damping: f64,
    /// Sufficient decrease constant of the Armijo rule.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for SqpOptions {
    fn default() -> Self {
        SqpOptions { tol: 1e-3, max_iter: 10, damping: 0.2, armijo: 1e-4, max_backtracks: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqpOutcome {
    pub x: Vec<f64>,
    pub point: NlpPoint,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub kkt: f64,
    pub trace: Vec<TraceRow>,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Gradient of `f + sum mu_i c_i`.
fn lagrangian_grad(pt: &NlpPoint, mu: &[f64]) -> Vec<f64> {
    let mut g = pt.grad.clone();
    for (m, row) in mu.iter().zip(&pt.jac) {
        for (gi, ri) in g.iter_mut().zip(row) {
            *gi += m * ri;
        }
    }
    g
}

/// Scaled KKT residual: stationarity with bound multipliers eliminated,
/// violation and complementarity.
fn kkt_residual(pt: &NlpPoint, mu: &[f64], x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let g = lagrangian_grad(pt, mu);
    let mut stat: f64 = 0.0;
    for i in 0..x.len() {
        let width = 1e-9 * (1.0 + x[i].abs());
        let at_lo = x[i] <= lo[i] + width;
        let at_hi = x[i] >= hi[i] - width;
        let r = if at_lo && g[i] > 0.0 || at_hi && g[i] < 0.0 { 0.0 } else { g[i] };
        stat = stat.max(r.abs());
    }
    let stat = stat / norm_inf(&pt.grad).max(1.0);
    let viol = pt.max_violation();
    let comp = mu.iter().zip(&pt.c).fold(0.0_f64, |m, (u, c)| m.max((u * c).abs())) / pt.f.abs().max(1.0);
    stat.max(viol).max(comp)
}

/// Step from the QP `min 1/2 d'Bd + g'd  s.t.  c + J d <= 0,  lo <= x + d <= hi`,
/// falling back to an elastic relaxation if the linearization is inconsistent.
fn qp_step(b: &DenseMatrix, pt: &NlpPoint, x: &[f64], lo: &[f64], hi: &[f64], penalty: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    let m = pt.c.len();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..m {
        rows.push(pt.jac[i].iter().map(|v| -v).collect::<Vec<_>>());
        rhs.push(pt.c[i]);
    }
    for i in 0..n {
        let mut e = vec![0.0; n];
        if lo[i].is_finite() {
            e[i] = 1.0;
            rows.push(e.clone());
            rhs.push(lo[i] - x[i]);
        }
        if hi[i].is_finite() {
            e[i] = -1.0;
            rows.push(e);
            rhs.push(x[i] - hi[i]);
        }
    }
    match solve_qp(b, &pt.grad, &rows, &rhs) {
        Ok(s) => Ok((s.x, s.multipliers[..m].to_vec())),
        Err(Error::QpFailure(_)) => {
            // elastic: c + J d <= t, t >= 0, cost penalty * t
            let mut be = DenseMatrix::zeros(n + 1, n + 1);
            for i in 0..n {
                for j in 0..n {
                    be[(i, j)] = b[(i, j)];
                }
            }
            be[(n, n)] = 1e-6 * penalty.max(1.0);
            let mut ge = pt.grad.clone();
            ge.push(penalty);
            let mut er: Vec<Vec<f64>> = rows
                .iter()
                .enumerate()
                .map(|(k, r)| {
                    let mut r = r.clone();
                    r.push(if k < m { 1.0 } else { 0.0 });
                    r
                })
                .collect();
            let mut t = vec![0.0; n + 1];
            t[n] = 1.0;
            er.push(t);
            let mut erhs = rhs.clone();
            erhs.push(0.0);
            let s = solve_qp(&be, &ge, &er, &erhs)?;
            Ok((s.x[..n].to_vec(), s.multipliers[..m].to_vec()))
        }
        Err(e) => Err(e),
    }
}

/// Powell-damped BFGS update of `b` with step `s` and gradient change `y`.
pub fn damped_bfgs(b: &mut DenseMatrix, s: &[f64], y: &[f64], threshold: f64) {
    let bs = b.matvec(s);
    let sbs = dot(s, &bs);
    if !(sbs > 0.0) {
        return;
    }
    let sy = dot(s, y);
    let theta = if sy >= threshold * sbs { 1.0 } else { (1.0 - threshold) * sbs / (sbs - sy) };
    let r: Vec<f64> = y.iter().zip(&bs).map(|(yi, bi)| theta * yi + (1.0 - theta) * bi).collect();
    let sr = dot(s, &r);
    if !(sr > 0.0) {
        return;
    }
    let n = s.len();
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] += r[i] * r[j] / sr - bs[i] * bs[j] / sbs;
        }
    }
}

fn merit(pt: &NlpPoint, penalty: f64) -> f64 {
    pt.f + penalty * pt.c.iter().map(|c| c.max(0.0)).sum::<f64>()
}

pub fn solve_nlp<P: Nlp + ?Sized>(nlp: &P, x0: &[f64], opts: &SqpOptions) -> Result<SqpOutcome> {
    let n = nlp.dim();
    if x0.len() != n {
        return Err(Error::InvalidInput("start point has the wrong dimension".into()));
    }
    let (lo, hi) = nlp.bounds();
    let mut x = x0.to_vec();
    project(&mut x, &lo, &hi);
    let mut pt = nlp.eval(&x, true)?;
    let mut b = DenseMatrix::identity(n);
    let g0 = crate::math::norm2(&pt.grad).max(1e-8);
    for v in b.data.iter_mut() {
        *v *= g0;
    }
    let mut mu = vec![0.0; pt.c.len()];
    let mut penalty: f64 = 1.0;
    let mut trace = vec![TraceRow { iter: 0, objective: pt.f, max_violation: pt.max_violation(), step_norm: 0.0 }];
    let mut kkt = f64::INFINITY;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    for k in 1..=opts.max_iter {
        let (d, mu_new) = qp_step(&b, &pt, &x, &lo, &hi, 1e3 * penalty.max(norm_inf(&pt.grad)))?;
        penalty = penalty.max(1.5 * mu_new.iter().fold(0.0_f64, |m, v| m.max(*v)));
        let phi0 = merit(&pt, penalty);
        let lin_viol: f64 = (0..pt.c.len()).map(|i| (pt.c[i] + dot(&pt.jac[i], &d)).max(0.0)).sum();
        let viol: f64 = pt.c.iter().map(|c| c.max(0.0)).sum();
        let slope = (dot(&pt.grad, &d) + penalty * (lin_viol - viol)).min(0.0);

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            project(&mut xt, &lo, &hi);
            let trial = nlp.eval(&xt, false)?;
            if merit(&trial, penalty) <= phi0 + opts.armijo * alpha * slope {
                accepted = Some(xt);
                break;
            }
            alpha *= 0.5;
        }
        iterations = k;
        let Some(xn) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };
        let ptn = nlp.eval(&xn, true)?;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let gl_new = lagrangian_grad(&ptn, &mu_new);
        let gl_old = lagrangian_grad(&pt, &mu_new);
        let y: Vec<f64> = gl_new.iter().zip(&gl_old).map(|(a, b)| a - b).collect();
        damped_bfgs(&mut b, &s, &y, opts.damping);
        x = xn;
        pt = ptn;
        mu = mu_new;
        let step = norm_inf(&s);
        trace.push(TraceRow { iter: k, objective: pt.f, max_violation: pt.max_violation(), step_norm: step });
        kkt = kkt_residual(&pt, &mu, &x, &lo, &hi);
        let tiny = step <= 1e-10 * (1.0 + norm_inf(&x));
        if kkt <= opts.tol || (tiny && pt.max_violation() <= opts.tol) {
            termination = Termination::Converged;
            break;
        }
    }
    if iterations == 0 {
        kkt = kkt_residual(&pt, &mu, &x, &lo, &hi);
    }
    if pt.max_violation() > opts.tol {
        termination = Termination::Infeasible;
    }
    Ok(SqpOutcome { x, point: pt, multipliers: mu, iterations, termination, kkt, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Closure<F> {
        n: usize,
        m: usize,
        lo: Vec<f64>,
        hi: Vec<f64>,
        f: F,
    }

    impl<F: Fn(&[f64]) -> NlpPoint> Nlp for Closure<F> {
        fn dim(&self) -> usize {
            self.n
        }
        fn n_constraints(&self) -> usize {
            self.m
        }
        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (self.lo.clone(), self.hi.clone())
        }
        fn eval(&self, x: &[f64], _: bool) -> Result<NlpPoint> {
            Ok((self.f)(x))
        }
    }

    #[test]
    fn active_lower_bound() {
        // min x^2 s.t. x >= 1
        let p = Closure {
            n: 1,
            m: 1,
            lo: vec![f64::NEG_INFINITY],
            hi: vec![f64::INFINITY],
            f: |x: &[f64]| NlpPoint { f: x[0] * x[0], c: vec![1.0 - x[0]], grad: vec![2.0 * x[0]], jac: vec![vec![-1.0]] },
        };
        let r = solve_nlp(&p, &[3.0], &SqpOptions::default()).unwrap();
        assert_eq!(r.termination, Termination::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!((r.multipliers[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn bilinear_cost_with_a_sum_constraint() {
        // min p1 p2 s.t. p1 + p2 >= 4, p >= 1: optima (1, 3) and (3, 1), value 3.
        // Vertex enumeration: on p1 + p2 = 4 the cost p1 (4 - p1) is concave,
        // so the minimum over [1, 3] sits at an end point.
        let p = Closure {
            n: 2,
            m: 1,
            lo: vec![1.0, 1.0],
            hi: vec![f64::INFINITY; 2],
            f: |x: &[f64]| NlpPoint {
                f: x[0] * x[1],
                c: vec![4.0 - x[0] - x[1]],
                grad: vec![x[1], x[0]],
                jac: vec![vec![-1.0, -1.0]],
            },
        };
        let r = solve_nlp(&p, &[2.5, 1.8], &SqpOptions { max_iter: 30, ..Default::default() }).unwrap();
        assert!((r.point.f - 3.0).abs() < 1e-3, "{:?}", r);
        let corner = (r.x[0] - 1.0).abs().min((r.x[1] - 1.0).abs());
        assert!(corner < 1e-3);
    }

    #[test]
    fn inconsistent_linearization_uses_the_elastic_step() {
        // min x s.t. x^2 >= 4 on [0, 10]; at x = 0.1 the linearization asks
        // for x >= 20, beyond the upper bound
        let p = Closure {
            n: 1,
            m: 1,
            lo: vec![0.0],
            hi: vec![10.0],
            f: |x: &[f64]| NlpPoint { f: x[0], c: vec![4.0 - x[0] * x[0]], grad: vec![1.0], jac: vec![vec![-2.0 * x[0]]] },
        };
        let r = solve_nlp(&p, &[0.1], &SqpOptions { max_iter: 40, ..Default::default() }).unwrap();
        assert!(r.point.c[0] <= 1e-3);
        assert!((r.x[0] - 2.0).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn damping_keeps_the_matrix_positive_definite() {
        let mut b = DenseMatrix::identity(2);
        damped_bfgs(&mut b, &[1.0, 0.0], &[-1.0, 0.5], 0.2);
        assert!(b[(0, 0)] > 0.0);
        assert!(b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)] > 0.0);
        // secant condition with the damped vector
        let mut c = DenseMatrix::identity(2);
        damped_bfgs(&mut c, &[1.0, 1.0], &[2.0, 3.0], 0.2);
        let bs = c.matvec(&[1.0, 1.0]);
        assert!((bs[0] - 2.0).abs() < 1e-12 && (bs[1] - 3.0).abs() < 1e-12);
    }
}
