//! Forward parametric sensitivities of the field and of the EMF.
//!
//! Differentiating `K(P) u(P) = j(P)` gives `K s_i = dj/dp_i - dK/dp_i u` and
//! `K s_ij = d2j - d2K u - dK_i s_j - dK_j s_i`. Both reuse the factorization
//! of the primal solve; the matrix derivatives come from the weight
//! derivatives times the fixed blocks.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fem::{AffineModel, FieldSolution, FlatDerivatives};
use crate::math::axpy;

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBundle {
    /// `du/dp_i`
    pub first: [Vec<f64>; 3],
    /// Packed upper triangle `(0,0) (0,1) (0,2) (1,1) (1,2) (2,2)`, empty for order 1.
    second: Vec<Vec<f64>>,
    pub gradient: [f64; 3],
    pub hessian: Option<[[f64; 3]; 3]>,
}

fn packed(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    [[0, 1, 2], [1, 3, 4], [2, 4, 5]][a][b]
}

impl SensitivityBundle {
    pub fn order(&self) -> usize {
        if self.second.is_empty() {
            1
        } else {
            2
        }
    }

    /// `d2u/dp_i dp_j`; the same vector for `(i, j)` and `(j, i)`.
    pub fn second(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.second.get(packed(i, j)).map(Vec::as_slice)
    }
}

fn design(sol: &FieldSolution) -> Result<crate::geom::ParamVector> {
    sol.p.ok_or_else(|| Error::InvalidInput("solution carries no design vector".into()))
}

pub fn first_order(model: &AffineModel, sol: &FieldSolution) -> Result<SensitivityBundle> {
    let d = model.weight_derivatives(&design(sol)?, 1)?;
    Ok(with_derivatives(model, sol, &d, None))
}

/// Adds second-order sensitivities to a first-order bundle.
pub fn second_order(model: &AffineModel, sol: &FieldSolution, bundle: &SensitivityBundle) -> Result<SensitivityBundle> {
    let d = model.weight_derivatives(&design(sol)?, 2)?;
    Ok(with_derivatives(model, sol, &d, Some(bundle)))
}

/// Sensitivities for explicitly given weight derivatives; second order when
/// `d` carries Hessians. A first-order bundle, if given, is reused.
pub fn with_derivatives(
    model: &AffineModel,
    sol: &FieldSolution,
    d: &FlatDerivatives,
    first: Option<&SensitivityBundle>,
) -> SensitivityBundle {
    let n = model.dim();
    let factor = sol.factor();
    let ku: Vec<Vec<f64>> = model.stiffness.iter().map(|t| t.block.matvec(&sol.u)).collect();

    let first: [Vec<f64>; 3] = match first {
        Some(b) => b.first.clone(),
        None => core::array::from_fn(|i| {
            let mut rhs = vec![0.0; n];
            for s in &model.sources {
                axpy(d.source_grad[s.weight][i], &s.vector, &mut rhs);
            }
            for (t, y) in model.stiffness.iter().zip(&ku) {
                axpy(-d.stiffness_grad[t.weight][i], y, &mut rhs);
            }
            factor.solve(&rhs)
        }),
    };
    let gradient = core::array::from_fn(|i| model.emf(&first[i]));

    let mut second = Vec::new();
    let mut hessian = None;
    if d.order() == 2 {
        let ks: Vec<[Vec<f64>; 3]> = model
            .stiffness
            .iter()
            .map(|t| core::array::from_fn(|j| t.block.matvec(&first[j])))
            .collect();
        let mut h = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in i..3 {
                let mut rhs = vec![0.0; n];
                for s in &model.sources {
                    axpy(d.source_hess[s.weight][i][j], &s.vector, &mut rhs);
                }
                for (k, t) in model.stiffness.iter().enumerate() {
                    axpy(-d.stiffness_hess[t.weight][i][j], &ku[k], &mut rhs);
                    axpy(-d.stiffness_grad[t.weight][i], &ks[k][j], &mut rhs);
                    axpy(-d.stiffness_grad[t.weight][j], &ks[k][i], &mut rhs);
                }
                let s = factor.solve(&rhs);
                h[i][j] = model.emf(&s);
                h[j][i] = h[i][j];
                second.push(s);
            }
        }
        hessian = Some(h);
    }
    SensitivityBundle { first, second, gradient, hessian }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{FemOptions, FlatWeights, MaterialTable};
    use crate::geom::{build_geometry, GeometryNumbers, ParamDomain, ParamVector};

    fn model() -> AffineModel {
        let tri = build_geometry(&GeometryNumbers::default(), &ParamDomain::benchmark()).unwrap();
        AffineModel::assemble_reference(&tri, MaterialTable::default(), FemOptions { level: 2, ..Default::default() })
            .unwrap()
    }

    fn emf(m: &AffineModel, p: &ParamVector) -> f64 {
        m.emf(&m.solve(p).unwrap().u)
    }

    #[test]
    fn gradient_and_hessian_match_differences() {
        let m = model();
        let p = ParamVector::new(15.0, 4.0, 7.0);
        let sol = m.solve(&p).unwrap();
        let b1 = first_order(&m, &sol).unwrap();
        let b2 = second_order(&m, &sol, &b1).unwrap();
        assert_eq!(b1.gradient, b2.gradient);
        let h = b2.hessian.unwrap();
        for i in 0..3 {
            let mut e = [0.0; 3];
            e[i] = 1e-4;
            let fd = (emf(&m, &p.offset(&e)) - emf(&m, &p.offset(&e.map(|x| -x)))) / 2e-4;
            assert!((fd - b1.gradient[i]).abs() <= 1e-4 * b1.gradient[i].abs().max(1e-3), "{i}: {fd} {}", b1.gradient[i]);
            for j in 0..3 {
                assert_eq!(h[i][j], h[j][i]);
                assert_eq!(b2.second(i, j), b2.second(j, i));
            }
        }
        for s in &b1.first {
            assert!(s.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn frozen_parameter_has_zero_sensitivity() {
        let m = model();
        let p = ParamVector::new(15.0, 4.0, 7.0);
        let sol = m.solve(&p).unwrap();
        let mut d = m.weight_derivatives(&p, 2).unwrap();
        for g in d.stiffness_grad.iter_mut().chain(d.source_grad.iter_mut()) {
            g[1] = 0.0;
        }
        for h in d.stiffness_hess.iter_mut().chain(d.source_hess.iter_mut()) {
            for k in 0..3 {
                h[1][k] = 0.0;
                h[k][1] = 0.0;
            }
        }
        let b = with_derivatives(&m, &sol, &d, None);
        assert!(b.first[1].iter().all(|x| *x == 0.0));
        assert_eq!(b.gradient[1], 0.0);
        assert!(b.second(1, 2).unwrap().iter().all(|x| *x == 0.0));
        assert!(b.first[0].iter().any(|x| *x != 0.0));
    }

    #[test]
    fn quadratic_weights_fixture() {
        // every weight replaced by w(P) = w_ref * (1 + a . x + x^T C x / 2),
        // x = P - P0: finite differences of the gradient reproduce the Hessian
        let m = model();
        let p0 = ParamVector::new(15.0, 4.0, 7.0);
        let base = m.weights(&p0).unwrap();
        let a = [0.03, -0.02, 0.01];
        let c = [[0.004, 0.001, -0.002], [0.001, 0.003, 0.0], [-0.002, 0.0, 0.002]];
        let scale = |x: [f64; 3]| {
            let mut v = 1.0;
            for i in 0..3 {
                v += a[i] * x[i];
                for j in 0..3 {
                    v += 0.5 * x[i] * c[i][j] * x[j];
                }
            }
            let g: [f64; 3] = core::array::from_fn(|i| a[i] + (0..3).map(|j| c[i][j] * x[j]).sum::<f64>());
            (v, g)
        };
        let at = |x: [f64; 3], order: usize| {
            let (v, g) = scale(x);
            let w = FlatWeights {
                stiffness: base.stiffness.iter().map(|b| b * v).collect(),
                source: base.source.iter().map(|b| b * v).collect(),
            };
            let d = FlatDerivatives {
                stiffness_grad: base.stiffness.iter().map(|b| g.map(|gi| b * gi)).collect(),
                source_grad: base.source.iter().map(|b| g.map(|gi| b * gi)).collect(),
                stiffness_hess: if order == 2 { base.stiffness.iter().map(|b| c.map(|r| r.map(|x| b * x))).collect() } else { Vec::new() },
                source_hess: if order == 2 { base.source.iter().map(|b| c.map(|r| r.map(|x| b * x))).collect() } else { Vec::new() },
            };
            let sol = m.solve_weights(w).unwrap();
            with_derivatives(&m, &sol, &d, None)
        };
        let h = at([0.0; 3], 2).hessian.unwrap();
        let step = 1e-3;
        for j in 0..3 {
            let mut e = [0.0; 3];
            e[j] = step;
            let gp = at(e, 1).gradient;
            let gm = at(e.map(|x| -x), 1).gradient;
            for i in 0..3 {
                let fd = (gp[i] - gm[i]) / (2.0 * step);
                assert!((fd - h[i][j]).abs() <= 1e-6 * h[i][j].abs().max(1.0), "{i}{j}: {fd} {}", h[i][j]);
            }
        }
    }
}
