//! Moments of scalar functions of uniformly distributed design vectors.
//!
//! Expectations are weighted sums over a node set: a tensor Gauss-Legendre
//! grid (stochastic quadrature) or equally weighted pseudo-random samples
//! (Monte Carlo). Sums are pairwise so results do not depend on how values
//! were produced, and variances use the two-pass shifted form, so a constant
//! function has variance exactly zero.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::ParamVector;
use crate::math::{gauss_legendre, norm2, pairwise_sum, sqrt};

/// Independent uniform components `p_i ~ U(mean_i - half_width_i, mean_i + half_width_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformBox {
    pub mean: ParamVector,
    pub half_width: [f64; 3],
}

impl UniformBox {
    pub fn new(mean: ParamVector, half_width: [f64; 3]) -> Result<Self> {
        if half_width.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidInput("uniform half-widths must be finite and nonnegative".into()));
        }
        Ok(UniformBox { mean, half_width })
    }

    /// Same half-width in every component.
    pub fn isotropic(mean: ParamVector, delta: f64) -> Result<Self> {
        Self::new(mean, [delta; 3])
    }

    /// Standard deviation per component, `delta / sqrt(3)`.
    pub fn std(&self) -> [f64; 3] {
        self.half_width.map(|d| d / sqrt(3.0))
    }

    pub fn lower(&self) -> [f64; 3] {
        core::array::from_fn(|i| self.mean.0[i] - self.half_width[i])
    }

    pub fn upper(&self) -> [f64; 3] {
        core::array::from_fn(|i| self.mean.0[i] + self.half_width[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentMethod {
    /// Tensor Gauss-Legendre quadrature.
    Sq,
    /// Monte Carlo sampling.
    Mc,
    /// First-order Taylor expansion.
    Lin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    pub variance: f64,
    pub std: f64,
    pub method: MomentMethod,
    /// Number of function evaluations.
    pub samples: usize,
    /// Standard error of the mean, Monte Carlo only.
    pub std_error: Option<f64>,
    pub seed: Option<u64>,
}

/// Nodes and weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<ParamVector>,
    pub weights: Vec<f64>,
    pub method: MomentMethod,
    pub seed: Option<u64>,
}

/// One-dimensional Gauss-Legendre rule mapped to `[m - d, m + d]` with weights
/// summing to one; a zero width collapses to the single node `m`.
fn axis_rule(m: f64, d: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    if d == 0.0 || n <= 1 {
        return (vec![m], vec![1.0]);
    }
    let (x, w) = gauss_legendre(n);
    (x.iter().map(|x| m + d * x).collect(), w.iter().map(|w| 0.5 * w).collect())
}

impl Rule {
    /// Tensor Gauss-Legendre grid with `n[i]` nodes along axis `i`.
    pub fn tensor(dist: &UniformBox, n: [usize; 3]) -> Result<Self> {
        if n.contains(&0) {
            return Err(Error::InvalidInput("quadrature needs at least one node per axis".into()));
        }
        let axes: [(Vec<f64>, Vec<f64>); 3] =
            core::array::from_fn(|i| axis_rule(dist.mean.0[i], dist.half_width[i], n[i]));
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (z, wz) in axes[2].0.iter().zip(&axes[2].1) {
            for (y, wy) in axes[1].0.iter().zip(&axes[1].1) {
                for (x, wx) in axes[0].0.iter().zip(&axes[0].1) {
                    nodes.push(ParamVector::new(*x, *y, *z));
                    weights.push(wx * wy * wz);
                }
            }
        }
        Ok(Rule { nodes, weights, method: MomentMethod::Sq, seed: None })
    }

    /// `n` equally weighted samples from a seeded ChaCha8 stream.
    pub fn monte_carlo(dist: &UniformBox, n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput("Monte Carlo needs at least two samples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = (dist.lower(), dist.upper());
        let nodes = (0..n)
            .map(|_| {
                ParamVector(core::array::from_fn(|i| {
                    let u: f64 = rng.gen();
                    lo[i] + (hi[i] - lo[i]) * u
                }))
            })
            .collect();
        Ok(Rule { nodes, weights: vec![1.0 / n as f64; n], method: MomentMethod::Mc, seed: Some(seed) })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Weighted mean of `values` at the nodes.
    pub fn mean(&self, values: &[f64]) -> f64 {
        let terms: Vec<f64> = values.iter().zip(&self.weights).map(|(v, w)| v * w).collect();
        pairwise_sum(&terms)
    }

    /// Moments of node values; Monte Carlo uses the `n - 1` divisor.
    pub fn moments(&self, values: &[f64]) -> MomentEstimate {
        let mean = self.mean(values);
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let mut variance = self.mean(&sq);
        let n = values.len();
        let mut std_error = None;
        if self.method == MomentMethod::Mc {
            variance *= n as f64 / (n as f64 - 1.0);
            std_error = Some(sqrt(variance / n as f64));
        }
        MomentEstimate {
            mean,
            variance,
            std: sqrt(variance),
            method: self.method,
            samples: n,
            std_error,
            seed: self.seed,
        }
    }
}

/// Stochastic-quadrature moments with `nodes_per_dim` Gauss-Legendre nodes per axis.
pub fn sq_moments<F>(mut f: F, dist: &UniformBox, nodes_per_dim: usize) -> Result<MomentEstimate>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let rule = Rule::tensor(dist, [nodes_per_dim; 3])?;
    let values = rule.nodes.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
    Ok(rule.moments(&values))
}

/// Monte Carlo moments from `n` samples.
pub fn mc_moments<F>(mut f: F, dist: &UniformBox, n: usize, seed: u64) -> Result<MomentEstimate>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let rule = Rule::monte_carlo(dist, n, seed)?;
    let values = rule.nodes.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
    Ok(rule.moments(&values))
}

/// Mean and standard deviation of the first-order Taylor model.
pub fn linearized_moments(value: f64, gradient: &[f64; 3], dist: &UniformBox) -> MomentEstimate {
    let s = dist.std();
    let scaled: [f64; 3] = core::array::from_fn(|i| s[i] * gradient[i]);
    let std = norm2(&scaled);
    MomentEstimate {
        mean: value,
        variance: std * std,
        std,
        method: MomentMethod::Lin,
        samples: 1,
        std_error: None,
        seed: None,
    }
}

/// Nodes of the outer (frozen component) and inner (free components) grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SobolGrid {
    pub outer: usize,
    pub inner: usize,
}

impl Default for SobolGrid {
    fn default() -> Self {
        SobolGrid { outer: 9, inner: 5 }
    }
}

/// First-order Sobol indices `Var(E[f | p_i]) / Var(f)`.
pub fn sobol_first_order<F>(mut f: F, dist: &UniformBox, grid: SobolGrid) -> Result<[f64; 3]>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let total_rule = Rule::tensor(dist, [grid.outer; 3])?;
    let values = total_rule.nodes.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
    let total = total_rule.moments(&values);
    if total.variance == 0.0 || total.variance <= 1e-14 * total.mean * total.mean {
        return Err(Error::ZeroVariance);
    }
    let mut s = [0.0; 3];
    for (i, si) in s.iter_mut().enumerate() {
        let (xs, ws) = axis_rule(dist.mean.0[i], dist.half_width[i], grid.outer);
        let mut counts = [grid.inner; 3];
        counts[i] = 1;
        let mut conditional = Vec::with_capacity(xs.len());
        for x in &xs {
            let mut frozen = *dist;
            frozen.mean.0[i] = *x;
            frozen.half_width[i] = 0.0;
            let inner = Rule::tensor(&frozen, counts)?;
            let v = inner.nodes.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
            conditional.push(inner.mean(&v));
        }
        let outer = Rule { nodes: Vec::new(), weights: ws, method: MomentMethod::Sq, seed: None };
        *si = outer.moments(&conditional).variance / total.variance;
    }
    Ok(s)
}
