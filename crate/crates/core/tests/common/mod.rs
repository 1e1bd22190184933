#![allow(dead_code)]

use pmopt_core::fem::{AffineModel, FemOptions, MaterialTable};
use pmopt_core::geom::{build_geometry, GeometryNumbers, ParamDomain, ParamVector};

pub fn model(level: u32) -> AffineModel {
    let tri = build_geometry(&GeometryNumbers::default(), &ParamDomain::benchmark()).unwrap();
    AffineModel::assemble_reference(&tri, MaterialTable::default(), FemOptions { level, ..FemOptions::default() }).unwrap()
}

/// Gauss-Legendre rule on `[-1, 1]` by Newton iteration on the three-term recurrence.
pub fn legendre_rule(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Tensor rule for the uniform distribution on `center +- half_width`,
/// weights summing to one.
pub fn uniform_tensor(center: &ParamVector, half_width: f64, n: usize) -> Vec<(ParamVector, f64)> {
    let r = legendre_rule(n);
    let mut out = Vec::with_capacity(n * n * n);
    for (a, wa) in &r {
        for (b, wb) in &r {
            for (c, wc) in &r {
                let p = ParamVector::new(center.p1() + half_width * a, center.p2() + half_width * b, center.p3() + half_width * c);
                out.push((p, wa * wb * wc / 8.0));
            }
        }
    }
    out
}

/// Weighted mean and standard deviation.
pub fn moments(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    let var: f64 = values.iter().zip(weights).map(|(v, w)| w * (v - mean) * (v - mean)).sum();
    (mean, var.max(0.0).sqrt())
}
