//! Small numerical kernels shared by the modules: a second-order jet in the
//! three design parameters, dense Cholesky for the reduced and QP systems,
//! pairwise summation and Gauss-Legendre rules.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// Value, gradient and Hessian of a scalar function of `P = (p1, p2, p3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; 3],
    pub h: [[f64; 3]; 3],
}

impl Jet {
    pub const fn constant(v: f64) -> Self {
        Jet { v, g: [0.0; 3], h: [[0.0; 3]; 3] }
    }

    /// Affine function `v + g . (P - P0)` evaluated at `P0`.
    pub const fn affine(v: f64, g: [f64; 3]) -> Self {
        Jet { v, g, h: [[0.0; 3]; 3] }
    }

    pub fn recip(self) -> Self {
        let inv = 1.0 / self.v;
        let inv2 = inv * inv;
        let inv3 = inv2 * inv;
        let mut out = Jet::constant(inv);
        for i in 0..3 {
            out.g[i] = -self.g[i] * inv2;
            for j in 0..3 {
                out.h[i][j] = -self.h[i][j] * inv2 + 2.0 * self.g[i] * self.g[j] * inv3;
            }
        }
        out
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        self.v += o.v;
        for i in 0..3 {
            self.g[i] += o.g[i];
            for j in 0..3 {
                self.h[i][j] += o.h[i][j];
            }
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        self.v = -self.v;
        for i in 0..3 {
            self.g[i] = -self.g[i];
            for j in 0..3 {
                self.h[i][j] = -self.h[i][j];
            }
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut out = Jet::constant(self.v * o.v);
        for i in 0..3 {
            out.g[i] = self.g[i] * o.v + self.v * o.g[i];
            for j in 0..3 {
                out.h[i][j] = self.h[i][j] * o.v
                    + self.v * o.h[i][j]
                    + self.g[i] * o.g[j]
                    + self.g[j] * o.g[i];
            }
        }
        out
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, s: f64) -> Jet {
        self.v *= s;
        for i in 0..3 {
            self.g[i] *= s;
            for j in 0..3 {
                self.h[i][j] *= s;
            }
        }
        self
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

/// Arithmetic needed to evaluate the geometry weights either as plain values
/// or as jets.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(&self) -> f64;
    fn scale(self, s: f64) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
}

impl Scalar for Jet {
    fn from_f64(v: f64) -> Self {
        Jet::constant(v)
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
}

/// Pairwise summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &DenseMatrix) {
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }
}

impl core::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower Cholesky factor of a dense SPD matrix.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        let n = a.rows;
        let mut l = a.data.clone();
        for j in 0..n {
            let mut d = l[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::SolveFailure(alloc::format!("dense pivot {j} is {d:e}")));
            }
            let d = sqrt(d);
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = l[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(DenseCholesky { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[i * n + k] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = libm::cos(core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Smallest eigenvalue of the symmetric pencil `a - lambda b` with both 2x2
/// matrices symmetric positive definite.
pub fn min_generalized_eig_2x2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> f64 {
    if a == b {
        return 1.0;
    }
    // reduce to the standard problem C = L^-1 a L^-T with b = L L^T
    let l00 = sqrt(b[0][0]);
    let l10 = b[1][0] / l00;
    let l11 = sqrt(b[1][1] - l10 * l10);
    let c00 = a[0][0] / (l00 * l00);
    let c10 = (a[1][0] - l10 * c00 * l00) / (l00 * l11);
    let c11 = (a[1][1] - 2.0 * l10 * c10 * l11 - l10 * l10 * c00) / (l11 * l11);
    let mean = 0.5 * (c00 + c11);
    let half = 0.5 * (c00 - c11);
    mean - sqrt(half * half + c10 * c10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_quotient_matches_hand_derivatives() {
        // f = p1 / p2 at (2, 4)
        let p1 = Jet::affine(2.0, [1.0, 0.0, 0.0]);
        let p2 = Jet::affine(4.0, [0.0, 1.0, 0.0]);
        let f = p1 / p2;
        assert!((f.v - 0.5).abs() < 1e-15);
        assert!((f.g[0] - 0.25).abs() < 1e-15);
        assert!((f.g[1] + 2.0 / 16.0).abs() < 1e-15);
        assert!((f.h[0][1] + 1.0 / 16.0).abs() < 1e-15);
        assert!((f.h[1][1] - 4.0 / 64.0).abs() < 1e-15);
        assert_eq!(f.h[0][1], f.h[1][0]);
    }

    #[test]
    fn gauss_legendre_five_points() {
        let (x, w) = gauss_legendre(5);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        assert!((x[4] - 0.906_179_845_938_664).abs() < 1e-14);
        assert!((w[2] - 128.0 / 225.0).abs() < 1e-14);
        // degree 9 exact
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((i - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn dense_cholesky_solves() {
        let mut a = DenseMatrix::zeros(3, 3);
        a.data = vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let f = DenseCholesky::factor(&a).unwrap();
        let x = f.solve(&[1.0, 2.0, 3.0]);
        let r = a.matvec(&x);
        for (ri, bi) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((ri - bi).abs() < 1e-14);
        }
        let mut bad = DenseMatrix::identity(2);
        bad[(1, 1)] = -1.0;
        assert!(DenseCholesky::factor(&bad).is_err());
    }

    #[test]
    fn generalized_eigenvalue_of_diagonal_pencil() {
        let l = min_generalized_eig_2x2([[0.5, 0.0], [0.0, 2.0]], [[1.0, 0.0], [0.0, 1.0]]);
        assert!((l - 0.5).abs() < 1e-15);
        let l = min_generalized_eig_2x2([[2.0, 0.3], [0.3, 1.0]], [[2.0, 0.3], [0.3, 1.0]]);
        assert!((l - 1.0).abs() < 1e-14);
        // a = diag(1, 3), b = [[2, 1], [1, 1]]: det(a - l b) = l^2 - 7 l + 3
        let l = min_generalized_eig_2x2([[1.0, 0.0], [0.0, 3.0]], [[2.0, 1.0], [1.0, 1.0]]);
        assert!((l - (7.0 - 37f64.sqrt()) / 2.0).abs() < 1e-14);
    }
}
