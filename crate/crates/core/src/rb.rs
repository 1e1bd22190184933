//! Certified reduced basis models and the partitioned dictionary.
//!
//! Each reduced model lives on one box ("cube") of the parameter space. Its
//! basis is built greedily from full solves and is orthonormal in the energy
//! inner product `<v, w>_X = v^T K(P_a) w` of an anchor design `P_a` near the
//! cube centre. The error estimator is `||r(P)||_X* / alpha(P)`: the residual
//! dual norm is evaluated from the Riesz representers of all affine residual
//! pieces, orthonormalized offline, so online it is `||R c(P)||_2` with a
//! small triangular `R`. The coercivity bound `alpha` compares the per
//! macro-triangle metric tensors at `P` and at `P_a`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fem::{AffineModel, FlatWeights};
use crate::geom::{AffineWeights, MacroTriangulation, ParamVector};
use crate::math::{axpy, dot, min_generalized_eig_2x2, norm2, sqrt, DenseCholesky, DenseMatrix};
use crate::sparse::SkylineCholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Axis-aligned parameter box `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cube {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Cube {
    pub fn contains(&self, p: &ParamVector) -> bool {
        (0..3).all(|i| p.0[i] >= self.lo[i] && p.0[i] <= self.hi[i])
    }

    pub fn midpoint(&self) -> ParamVector {
        ParamVector(core::array::from_fn(|i| 0.5 * (self.lo[i] + self.hi[i])))
    }

    /// Tensor grid with `n[i]` equispaced points per axis, ends included.
    pub fn grid(&self, n: [usize; 3]) -> Vec<ParamVector> {
        let axis = |i: usize| -> Vec<f64> {
            if n[i] <= 1 {
                return vec![0.5 * (self.lo[i] + self.hi[i])];
            }
            (0..n[i]).map(|k| self.lo[i] + (self.hi[i] - self.lo[i]) * k as f64 / (n[i] - 1) as f64).collect()
        };
        let (a, b, c) = (axis(0), axis(1), axis(2));
        let mut out = Vec::with_capacity(a.len() * b.len() * c.len());
        for z in &c {
            for y in &b {
                for x in &a {
                    out.push(ParamVector::new(*x, *y, *z));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyOptions {
    /// Stop when the largest estimator over the training set falls below
    /// `tol` times the energy norm of the first snapshot.
    pub tol: f64,
    pub max_dim: usize,
    /// Training grid per cube.
    pub grid: [usize; 3],
    /// Training stays within this distance (mm, max-norm) of the design domain.
    pub margin: f64,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        GreedyOptions { tol: 1e-4, max_dim: 100, grid: [6, 16, 4], margin: 0.5 }
    }
}

/// Metric tensor `[[xx, xy], [xy, yy]]` of every macro-triangle.
pub fn metrics(w: &AffineWeights) -> Vec<[[f64; 2]; 2]> {
    w.subdomains
        .iter()
        .map(|s| [[s.stiffness[0], s.stiffness[2]], [s.stiffness[3], s.stiffness[1]]])
        .collect()
}

/// Lower bound of `inf v^T K(P) v / v^T K(P_a) v` from the metric tensors.
pub fn coercivity_bound(at: &[[[f64; 2]; 2]], anchor: &[[[f64; 2]; 2]]) -> f64 {
    at.iter().zip(anchor).fold(1.0_f64, |m, (a, b)| m.min(min_generalized_eig_2x2(*a, *b)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel {
    pub cube: Cube,
    pub anchor: ParamVector,
    /// Basis vectors over the free DoFs, orthonormal in the anchor energy.
    pub basis: Vec<Vec<f64>>,
    pub k0: DenseMatrix,
    /// `(raw weight index, projected block)`
    pub stiffness: Vec<(usize, DenseMatrix)>,
    pub j0: Vec<f64>,
    pub sources: Vec<(usize, Vec<f64>)>,
    pub qoi: Vec<f64>,
    /// Triangular factor of the residual representers; columns follow
    /// `[j0, sources.., then per basis vector n: K0 psi_n, K_t psi_n ..]`.
    pub residual_factor: DenseMatrix,
    pub anchor_metrics: Vec<[[f64; 2]; 2]>,
    /// `||q||_X*`, turns the field bound into an EMF bound.
    pub qoi_dual_norm: f64,
    /// Energy norm of the first snapshot, scale of the greedy tolerance.
    pub scale: f64,
    pub snapshots: Vec<ParamVector>,
    /// Largest training estimator before each accepted snapshot.
    pub greedy_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSolution {
    pub coeffs: Vec<f64>,
    pub emf: f64,
    /// Bound on the energy-norm error of the lifted field.
    pub estimator: f64,
    /// Bound on the EMF error.
    pub emf_bound: f64,
    pub coercivity: f64,
    pub gradient: Option<[f64; 3]>,
    pub hessian: Option<[[f64; 3]; 3]>,
    /// Floating point operations spent online.
    pub flops: u64,
}

impl ReducedModel {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    fn operator(&self, w: &FlatWeights, flops: &mut u64) -> DenseMatrix {
        let mut k = self.k0.clone();
        for (t, m) in &self.stiffness {
            k.add_scaled(w.stiffness[*t], m);
        }
        *flops += (2 * self.stiffness.len() * self.k0.data.len()) as u64;
        k
    }

    fn rhs(&self, w: &FlatWeights, flops: &mut u64) -> Vec<f64> {
        let mut f = self.j0.clone();
        for (s, v) in &self.sources {
            axpy(w.source[*s], v, &mut f);
        }
        *flops += (2 * self.sources.len() * f.len()) as u64;
        f
    }

    fn coefficients(&self, w: &FlatWeights, u: &[f64]) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.residual_factor.cols);
        c.push(1.0);
        c.extend(self.sources.iter().map(|(s, _)| w.source[*s]));
        for un in u {
            c.push(-un);
            c.extend(self.stiffness.iter().map(|(t, _)| -w.stiffness[*t] * un));
        }
        c
    }

    /// Dual norm of the residual of coefficients `u` at weights `w`.
    fn residual_norm(&self, w: &FlatWeights, u: &[f64], flops: &mut u64) -> f64 {
        let c = self.coefficients(w, u);
        let r = &self.residual_factor;
        let mut s = 0.0;
        for i in 0..r.rows {
            // upper trapezoidal: row i starts at its pivot column
            let row = r.row(i);
            let v: f64 = row.iter().zip(&c).skip(i).map(|(a, b)| a * b).sum();
            s += v * v;
        }
        *flops += (r.rows * r.cols) as u64;
        sqrt(s)
    }

    /// Estimator and coefficients at a design, no derivatives.
    pub fn solve(&self, tri: &MacroTriangulation, p: &ParamVector, order: usize) -> Result<ReducedSolution> {
        let aw = tri.affine_weights(p)?;
        let w = FlatWeights::from_affine(&aw);
        let mut flops = 0;
        let k = self.operator(&w, &mut flops);
        let chol = DenseCholesky::factor(&k)?;
        let d = self.dim();
        flops += (d * d * d / 3 + 2 * d * d) as u64;
        let f = self.rhs(&w, &mut flops);
        let coeffs = chol.solve(&f);
        let emf = dot(&self.qoi, &coeffs);
        let alpha = coercivity_bound(&metrics(&aw), &self.anchor_metrics);
        flops += (8 * aw.subdomains.len()) as u64;
        if !(alpha > 0.0) {
            return Err(Error::NonpositiveCoercivity(alpha));
        }
        let estimator = self.residual_norm(&w, &coeffs, &mut flops) / alpha;
        let (gradient, hessian) = if order > 0 {
            let (g, h) = self.derivatives(tri, p, order, &chol, &coeffs, &mut flops)?;
            (Some(g), h)
        } else {
            (None, None)
        };
        Ok(ReducedSolution {
            emf,
            estimator,
            emf_bound: self.qoi_dual_norm * estimator,
            coercivity: alpha,
            coeffs,
            gradient,
            hessian,
            flops,
        })
    }

    /// Reduced sensitivities, the exact derivatives of the reduced EMF.
    fn derivatives(
        &self,
        tri: &MacroTriangulation,
        p: &ParamVector,
        order: usize,
        chol: &DenseCholesky,
        u: &[f64],
        flops: &mut u64,
    ) -> Result<([f64; 3], Option<[[f64; 3]; 3]>)> {
        let d = self.dim();
        let der = crate::fem::FlatDerivatives::from_geometry(&tri.weight_derivatives(p, order.min(2))?);
        let ku: Vec<Vec<f64>> = self.stiffness.iter().map(|(_, m)| m.matvec(u)).collect();
        *flops += (2 * self.stiffness.len() * d * d) as u64;
        let s: [Vec<f64>; 3] = core::array::from_fn(|i| {
            let mut rhs = vec![0.0; d];
            for (s, v) in &self.sources {
                axpy(der.source_grad[*s][i], v, &mut rhs);
            }
            for ((t, _), y) in self.stiffness.iter().zip(&ku) {
                axpy(-der.stiffness_grad[*t][i], y, &mut rhs);
            }
            chol.solve(&rhs)
        });
        *flops += (3 * (2 * d * d + 2 * (self.stiffness.len() + self.sources.len()) * d)) as u64;
        let g = core::array::from_fn(|i| dot(&self.qoi, &s[i]));
        if order < 2 {
            return Ok((g, None));
        }
        let ks: Vec<[Vec<f64>; 3]> =
            self.stiffness.iter().map(|(_, m)| core::array::from_fn(|j| m.matvec(&s[j]))).collect();
        let mut h = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in i..3 {
                let mut rhs = vec![0.0; d];
                for (s, v) in &self.sources {
                    axpy(der.source_hess[*s][i][j], v, &mut rhs);
                }
                for (k, (t, _)) in self.stiffness.iter().enumerate() {
                    axpy(-der.stiffness_hess[*t][i][j], &ku[k], &mut rhs);
                    axpy(-der.stiffness_grad[*t][i], &ks[k][j], &mut rhs);
                    axpy(-der.stiffness_grad[*t][j], &ks[k][i], &mut rhs);
                }
                h[i][j] = dot(&self.qoi, &chol.solve(&rhs));
                h[j][i] = h[i][j];
            }
        }
        *flops += (6 * self.stiffness.len() * d * d + 6 * (2 * d * d + 6 * self.stiffness.len() * d)) as u64;
        Ok((g, Some(h)))
    }

    /// Lifts reduced coefficients to a full DoF vector.
    pub fn lift(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.basis.first().map_or(0, Vec::len)];
        for (c, psi) in coeffs.iter().zip(&self.basis) {
            axpy(*c, psi, &mut u);
        }
        u
    }
}

/// Riesz representers of the residual pieces, orthonormalized in `X`.
struct Representers<'a> {
    x: &'a SkylineCholesky,
    /// Orthonormal representers and their images under `X`.
    q: Vec<Vec<f64>>,
    xq: Vec<Vec<f64>>,
    cols: Vec<Vec<f64>>,
}

impl<'a> Representers<'a> {
    fn new(x: &'a SkylineCholesky) -> Self {
        Representers { x, q: Vec::new(), xq: Vec::new(), cols: Vec::new() }
    }

    /// Appends the representer of the functional `r`.
    fn push(&mut self, r: &[f64]) {
        let mut z = self.x.solve(r);
        let mut xz = r.to_vec();
        let norm0 = sqrt(dot(&z, &xz).max(0.0));
        let mut col = vec![0.0; self.q.len()];
        for _ in 0..2 {
            for k in 0..self.q.len() {
                let c = dot(&self.q[k], &xz);
                col[k] += c;
                axpy(-c, &self.q[k], &mut z);
                axpy(-c, &self.xq[k], &mut xz);
            }
        }
        let norm = sqrt(dot(&z, &xz).max(0.0));
        if norm > 1e-12 * norm0 && norm > 0.0 {
            for v in z.iter_mut() {
                *v /= norm;
            }
            for v in xz.iter_mut() {
                *v /= norm;
            }
            self.q.push(z);
            self.xq.push(xz);
            col.push(norm);
        }
        self.cols.push(col);
    }

    fn factor(&self) -> DenseMatrix {
        let mut r = DenseMatrix::zeros(self.q.len(), self.cols.len());
        for (j, col) in self.cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                r[(i, j)] = *v;
            }
        }
        r
    }
}

/// Greedy training of one reduced model on `cube`.
pub fn greedy_train(
    model: &AffineModel,
    cube: Cube,
    training: &[ParamVector],
    opts: &GreedyOptions,
) -> Result<ReducedModel> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput(format!("greedy tolerance must be positive, got {}", opts.tol)));
    }
    if opts.max_dim == 0 {
        return Err(Error::InvalidInput("maximum basis size must be at least 1".into()));
    }
    let tri = &model.tri;
    // keep designs with a valid geometry; remember their weights
    let mut cands: Vec<(ParamVector, AffineWeights, FlatWeights)> = training
        .iter()
        .filter(|p| cube.contains(p))
        .filter_map(|p| tri.affine_weights(p).ok().map(|w| (*p, w.clone(), FlatWeights::from_affine(&w))))
        .collect();
    if cands.is_empty() {
        return Err(Error::TrainingFailure("no valid training design in the cube".into()));
    }
    let mid = cube.midpoint();
    let anchor = cands
        .iter()
        .map(|c| c.0)
        .min_by(|a, b| a.max_abs_diff(&mid).total_cmp(&b.max_abs_diff(&mid)))
        .unwrap();
    let anchor_w = model.weights(&anchor)?;
    let anchor_metrics = metrics(&tri.affine_weights(&anchor)?);
    let x_factor = model.operator(&anchor_w).factor()?;
    let xdot = |a: &[f64], b: &[f64]| dot(a, &model.matvec(&anchor_w, b));

    let mut rm = ReducedModel {
        cube,
        anchor,
        basis: Vec::new(),
        k0: DenseMatrix::zeros(0, 0),
        stiffness: model.stiffness.iter().map(|t| (t.weight, DenseMatrix::zeros(0, 0))).collect(),
        j0: Vec::new(),
        sources: model.sources.iter().map(|s| (s.weight, Vec::new())).collect(),
        qoi: Vec::new(),
        residual_factor: DenseMatrix::zeros(0, 0),
        anchor_metrics,
        qoi_dual_norm: sqrt(dot(&model.qoi, &x_factor.solve(&model.qoi)).max(0.0)),
        scale: 0.0,
        snapshots: Vec::new(),
        greedy_history: Vec::new(),
    };
    let mut reps = Representers::new(&x_factor);
    reps.push(&model.j0);
    for s in &model.sources {
        reps.push(&s.vector);
    }
    // images of the basis under every block: [K0 psi, K_t psi ..]
    let mut images: Vec<Vec<Vec<f64>>> = Vec::new();

    loop {
        rm.residual_factor = reps.factor();
        // estimator over the remaining candidates
        let mut best: Option<(usize, f64)> = None;
        for (k, (_, aw, w)) in cands.iter().enumerate() {
            let mut flops = 0;
            let u = if rm.dim() == 0 {
                Vec::new()
            } else {
                let kr = rm.operator(w, &mut flops);
                match DenseCholesky::factor(&kr) {
                    Ok(c) => c.solve(&rm.rhs(w, &mut flops)),
                    Err(_) => continue,
                }
            };
            let alpha = coercivity_bound(&metrics(aw), &rm.anchor_metrics);
            let est = rm.residual_norm(w, &u, &mut flops) / alpha;
            if best.is_none_or(|(_, b)| est > b) {
                best = Some((k, est));
            }
        }
        let Some((k, est)) = best else { break };
        if rm.dim() > 0 && (est <= opts.tol * rm.scale || rm.dim() >= opts.max_dim) {
            break;
        }
        let (p, _, w) = cands.swap_remove(k);
        let snap = model.solve_weights(w)?.u;
        // Gram-Schmidt in X, twice
        let mut psi = snap.clone();
        let norm0 = sqrt(xdot(&psi, &psi));
        if rm.dim() == 0 {
            rm.scale = norm0;
        }
        for _ in 0..2 {
            for b in &rm.basis {
                let c = xdot(b, &psi);
                axpy(-c, b, &mut psi);
            }
        }
        let norm = sqrt(xdot(&psi, &psi));
        if !(norm > 1e-12 * norm0) {
            // numerically dependent snapshot: drop the design, keep going
            if cands.is_empty() {
                break;
            }
            continue;
        }
        for v in psi.iter_mut() {
            *v /= norm;
        }
        // drift check, re-orthogonalize once more if needed
        let drift = rm.basis.iter().map(|b| xdot(b, &psi).abs()).fold(0.0, f64::max);
        if drift > 1e-8 {
            for b in &rm.basis {
                let c = xdot(b, &psi);
                axpy(-c, b, &mut psi);
            }
            let n = sqrt(xdot(&psi, &psi));
            for v in psi.iter_mut() {
                *v /= n;
            }
        }
        rm.greedy_history.push(est);
        rm.snapshots.push(p);
        let mut img = vec![model.k0.matvec(&psi)];
        img.extend(model.stiffness.iter().map(|t| t.block.matvec(&psi)));
        rm.basis.push(psi);
        images.push(img);
        project(model, &mut rm, &images);
        let n = rm.dim() - 1;
        for v in &images[n] {
            reps.push(v);
        }
        if cands.is_empty() {
            rm.residual_factor = reps.factor();
            break;
        }
    }
    if rm.dim() == 0 {
        return Err(Error::TrainingFailure("no snapshot could be added".into()));
    }
    Ok(rm)
}

/// Extends the projected blocks by the newest basis vector.
fn project(model: &AffineModel, rm: &mut ReducedModel, images: &[Vec<Vec<f64>>]) {
    let d = rm.dim();
    let n = d - 1;
    let grow = |m: &DenseMatrix| {
        let mut g = DenseMatrix::zeros(d, d);
        for i in 0..m.rows {
            for j in 0..m.cols {
                g[(i, j)] = m[(i, j)];
            }
        }
        g
    };
    let fill = |m: &mut DenseMatrix, img: &[f64]| {
        for i in 0..d {
            let v = dot(&rm.basis[i], img);
            m[(i, n)] = v;
            m[(n, i)] = v;
        }
    };
    let mut k0 = grow(&rm.k0);
    fill(&mut k0, &images[n][0]);
    let mut stiffness = Vec::with_capacity(rm.stiffness.len());
    for (k, (t, m)) in rm.stiffness.iter().enumerate() {
        let mut g = grow(m);
        fill(&mut g, &images[n][k + 1]);
        stiffness.push((*t, g));
    }
    rm.k0 = k0;
    rm.stiffness = stiffness;
    let psi = &rm.basis[n];
    rm.j0.push(dot(psi, &model.j0));
    for ((_, v), s) in rm.sources.iter_mut().zip(&model.sources) {
        v.push(dot(psi, &s.vector));
    }
    rm.qoi.push(dot(psi, &model.qoi));
}

/// Breakpoints of the partition grid per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Breakpoints(pub [Vec<f64>; 3]);

impl Breakpoints {
    pub fn benchmark() -> Self {
        Breakpoints([
            vec![0.5, 3.0, 6.0, 8.0, 11.0, 13.0, 16.0, 18.0, 21.0, 23.0, 26.5],
            vec![0.5, 7.5, 10.5],
            vec![4.5, 7.5, 14.5],
        ])
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.0 {
            if b.len() < 2 || b.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidInput("breakpoints must be strictly increasing, at least two".into()));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 3] {
        core::array::from_fn(|i| self.0[i].len() - 1)
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cube(&self, index: usize) -> Cube {
        let [n1, n2, _] = self.shape();
        let idx = [index % n1, (index / n1) % n2, index / (n1 * n2)];
        Cube {
            lo: core::array::from_fn(|i| self.0[i][idx[i]]),
            hi: core::array::from_fn(|i| self.0[i][idx[i] + 1]),
        }
    }

    /// Cube index of `p`; on a breakpoint the lower cube wins.
    pub fn locate(&self, p: &ParamVector) -> Option<usize> {
        let mut idx = [0; 3];
        for i in 0..3 {
            let b = &self.0[i];
            let x = p.0[i];
            if !(x >= b[0] && x <= b[b.len() - 1]) {
                return None;
            }
            idx[i] = (0..b.len() - 1).find(|&k| x <= b[k + 1])?;
        }
        let [n1, n2, _] = self.shape();
        Some(idx[0] + n1 * (idx[1] + n2 * idx[2]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub breakpoints: Breakpoints,
    pub cubes: Vec<Option<ReducedModel>>,
    /// `(cube index, message)` of cubes that could not be trained.
    pub failures: Vec<(usize, String)>,
}

impl Dictionary {
    pub fn from_cubes(breakpoints: Breakpoints, results: Vec<Result<ReducedModel>>) -> Self {
        let mut failures = Vec::new();
        let cubes = results
            .into_iter()
            .enumerate()
            .map(|(i, r)| match r {
                Ok(m) => Some(m),
                Err(e) => {
                    failures.push((i, format!("{e}")));
                    None
                }
            })
            .collect();
        Dictionary { breakpoints, cubes, failures }
    }

    pub fn lookup(&self, p: &ParamVector) -> Result<&ReducedModel> {
        let i = self.breakpoints.locate(p).ok_or(Error::OutsideDictionary)?;
        self.cubes[i].as_ref().ok_or(Error::OutsideDictionary)
    }

    pub fn trained(&self) -> impl Iterator<Item = &ReducedModel> {
        self.cubes.iter().flatten()
    }

    pub fn max_dim(&self) -> usize {
        self.trained().map(ReducedModel::dim).max().unwrap_or(0)
    }
}

/// Training designs of a cube: grid points near the design domain (within
/// `margin`) with a valid geometry, topped up with seeded uniform draws from
/// the bounding box of that set until there are as many as grid points. A
/// cube with no such design trains on its valid-geometry part instead.
pub fn training_set(tri: &MacroTriangulation, cube: &Cube, grid: [usize; 3], margin: f64, seed: u64) -> Vec<ParamVector> {
    let reach = tri.domain.grown(margin).clipped(cube.lo, cube.hi);
    let (lo, hi) = reach.hull();
    let near = |p: &ParamVector| reach.contains(p, 0.0) && tri.check_positive(p).is_ok();
    let valid = |p: &ParamVector| tri.check_positive(p).is_ok();
    let target: usize = grid.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |accept: &dyn Fn(&ParamVector) -> bool, lo: [f64; 3], hi: [f64; 3]| {
        let mut set: Vec<ParamVector> = cube.grid(grid).into_iter().filter(|p| accept(p)).collect();
        for _ in 0..100 * target {
            if set.len() >= target {
                break;
            }
            let p = ParamVector(core::array::from_fn(|i| lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>()));
            if accept(&p) {
                set.push(p);
            }
        }
        set
    };
    let set = if (0..3).all(|i| lo[i] <= hi[i]) { fill(&near, lo, hi) } else { Vec::new() };
    if set.is_empty() {
        fill(&valid, cube.lo, cube.hi)
    } else {
        set
    }
}

/// Trains the model of one cube on its training set.
pub fn train_cube(model: &AffineModel, breakpoints: &Breakpoints, index: usize, opts: &GreedyOptions) -> Result<ReducedModel> {
    let cube = breakpoints.cube(index);
    greedy_train(model, cube, &training_set(&model.tri, &cube, opts.grid, opts.margin, index as u64), opts)
}

/// Trains every cube in turn; failures are recorded and the build goes on.
pub fn build_dictionary(model: &AffineModel, breakpoints: Breakpoints, opts: &GreedyOptions) -> Result<Dictionary> {
    breakpoints.validate()?;
    let results = (0..breakpoints.len()).map(|i| train_cube(model, &breakpoints, i, opts)).collect();
    Ok(Dictionary::from_cubes(breakpoints, results))
}

/// Energy norm `sqrt(v^T K(P_a) v)` of the anchor of `rm`.
pub fn anchor_norm(model: &AffineModel, rm: &ReducedModel, v: &[f64]) -> Result<f64> {
    let w = model.weights(&rm.anchor)?;
    Ok(sqrt(dot(v, &model.matvec(&w, v)).max(0.0)))
}

/// `||Psi^T X Psi - I||_max` of a reduced model.
pub fn orthonormality_defect(model: &AffineModel, rm: &ReducedModel) -> Result<f64> {
    let w = model.weights(&rm.anchor)?;
    let xb: Vec<Vec<f64>> = rm.basis.iter().map(|b| model.matvec(&w, b)).collect();
    let mut worst = 0.0_f64;
    for (i, a) in rm.basis.iter().enumerate() {
        for (j, xbj) in xb.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(a, xbj) - target).abs());
        }
    }
    Ok(worst)
}

/// Relative 2-norm distance, used by callers comparing reduced and full fields.
pub fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&diff) / norm2(b).max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{FemOptions, MaterialTable};
    use crate::geom::{build_geometry, GeometryNumbers, ParamDomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> AffineModel {
        let tri = build_geometry(&GeometryNumbers::default(), &ParamDomain::benchmark()).unwrap();
        AffineModel::assemble_reference(&tri, MaterialTable::default(), FemOptions { level: 2, ..Default::default() })
            .unwrap()
    }

    const CUBE: Cube = Cube { lo: [13.0, 2.0, 5.0], hi: [16.0, 5.0, 7.5] };

    fn random_in(rng: &mut ChaCha8Rng, c: &Cube) -> ParamVector {
        ParamVector(core::array::from_fn(|i| c.lo[i] + (c.hi[i] - c.lo[i]) * rng.gen::<f64>()))
    }

    #[test]
    fn training_set_fills_the_reachable_part_of_a_cut_cube() {
        let m = model();
        let cut = Breakpoints::benchmark().cube(30);
        let near = |p: &ParamVector| m.tri.domain.within(p, 0.5) && m.tri.check_positive(p).is_ok();
        let on_grid = cut.grid([6, 16, 4]).iter().filter(|p| near(p)).count();
        let set = training_set(&m.tri, &cut, [6, 16, 4], 0.5, 30);
        assert!(on_grid < set.len() && set.len() == 384, "{on_grid} {}", set.len());
        assert!(set.iter().all(|p| cut.contains(p) && near(p)));
        assert_eq!(set, training_set(&m.tri, &cut, [6, 16, 4], 0.5, 30));
        // nothing within a negative margin: falls back to valid geometry
        let far = training_set(&m.tri, &cut, [6, 16, 4], -5.0, 30);
        assert!(far.iter().all(|p| cut.contains(p) && m.tri.check_positive(p).is_ok()));
        assert!(far.iter().any(|p| !near(p)));
    }

    #[test]
    fn infinite_tolerance_stops_after_one_snapshot() {
        let m = model();
        let opts = GreedyOptions { tol: f64::INFINITY, ..Default::default() };
        let rm = greedy_train(&m, CUBE, &CUBE.grid([3, 3, 3]), &opts).unwrap();
        assert_eq!(rm.dim(), 1);
    }

    #[test]
    fn single_training_point_is_reproduced() {
        let m = model();
        let p = ParamVector::new(14.0, 3.0, 6.0);
        let rm = greedy_train(&m, CUBE, &[p], &GreedyOptions::default()).unwrap();
        assert_eq!(rm.dim(), 1);
        let s = rm.solve(&m.tri, &p, 0).unwrap();
        let full = m.emf(&m.solve(&p).unwrap().u);
        assert!(s.estimator <= 1e-8 * rm.scale, "{}", s.estimator);
        assert!((s.emf - full).abs() <= 1e-8 * full.abs());
    }

    #[test]
    fn estimator_bounds_the_true_error() {
        let m = model();
        let rm = greedy_train(&m, CUBE, &CUBE.grid([4, 3, 3]), &GreedyOptions { tol: 1e-3, ..Default::default() })
            .unwrap();
        assert!(orthonormality_defect(&m, &rm).unwrap() < 1e-10);
        let s = rm.solve(&m.tri, &rm.anchor, 0).unwrap();
        assert_eq!(s.coercivity, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = random_in(&mut rng, &CUBE);
            let s = rm.solve(&m.tri, &p, 0).unwrap();
            let u = m.solve(&p).unwrap().u;
            let mut e = rm.lift(&s.coeffs);
            for (a, b) in e.iter_mut().zip(&u) {
                *a -= b;
            }
            let err = anchor_norm(&m, &rm, &e).unwrap();
            assert!(err <= s.estimator, "{err} > {}", s.estimator);
            assert!((s.emf - m.emf(&u)).abs() <= s.emf_bound * (1.0 + 1e-9) + 1e-12);
        }
        for p in &rm.snapshots {
            assert!(rm.solve(&m.tri, p, 0).unwrap().estimator <= 1e-8 * rm.scale);
        }
    }

    #[test]
    fn reduced_derivatives_match_differences() {
        let m = model();
        let rm = greedy_train(&m, CUBE, &CUBE.grid([4, 3, 3]), &GreedyOptions::default()).unwrap();
        let p = ParamVector::new(14.2, 3.3, 6.1);
        let s = rm.solve(&m.tri, &p, 2).unwrap();
        let g = s.gradient.unwrap();
        let h = s.hessian.unwrap();
        for i in 0..3 {
            let mut e = [0.0; 3];
            e[i] = 1e-4;
            let fp = rm.solve(&m.tri, &p.offset(&e), 1).unwrap();
            let fm = rm.solve(&m.tri, &p.offset(&e.map(|x| -x)), 1).unwrap();
            let fd = (fp.emf - fm.emf) / 2e-4;
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-2));
            for j in 0..3 {
                let fd2 = (fp.gradient.unwrap()[j] - fm.gradient.unwrap()[j]) / 2e-4;
                assert!((fd2 - h[i][j]).abs() <= 1e-4 * h[i][j].abs().max(1e-2));
            }
        }
    }

    #[test]
    fn breakpoint_ties_go_to_the_lower_cube() {
        let b = Breakpoints::benchmark();
        assert_eq!(b.len(), 40);
        assert_eq!(b.shape(), [10, 2, 2]);
        let i = b.locate(&ParamVector::new(3.0, 7.5, 7.5)).unwrap();
        let c = b.cube(i);
        assert_eq!((c.lo, c.hi), ([0.5, 0.5, 4.5], [3.0, 7.5, 7.5]));
        assert_eq!(b.locate(&ParamVector::new(27.0, 2.0, 6.0)), None);
        for k in 0..b.len() {
            assert_eq!(b.locate(&b.cube(k).midpoint()), Some(k));
        }
    }

    #[test]
    fn single_cube_dictionary_acts_as_one_model() {
        let m = model();
        let bp = Breakpoints([vec![13.0, 16.0], vec![2.0, 5.0], vec![5.0, 7.5]]);
        let opts = GreedyOptions { grid: [3, 2, 2], ..Default::default() };
        let dict = build_dictionary(&m, bp, &opts).unwrap();
        assert_eq!(dict.cubes.len(), 1);
        let p = ParamVector::new(14.0, 3.0, 6.0);
        let direct = greedy_train(&m, CUBE, &CUBE.grid([3, 2, 2]), &opts).unwrap();
        assert_eq!(dict.lookup(&p).unwrap().solve(&m.tri, &p, 0), direct.solve(&m.tri, &p, 0));
        assert_eq!(dict.lookup(&ParamVector::new(20.0, 3.0, 6.0)), Err(Error::OutsideDictionary));
    }

    #[test]
    fn online_work_does_not_scale_with_the_mesh() {
        let m = model();
        let rm = greedy_train(&m, CUBE, &CUBE.grid([4, 3, 3]), &GreedyOptions::default()).unwrap();
        let s = rm.solve(&m.tri, &ParamVector::new(14.0, 3.0, 6.0), 0).unwrap();
        let d = rm.dim() as u64;
        let t = rm.stiffness.len() as u64;
        let cols = rm.residual_factor.cols as u64;
        assert!(s.flops <= 2 * (d * d * d + 4 * t * d * d + cols * cols) + 1000);
        let other = rm.solve(&m.tri, &ParamVector::new(15.5, 4.5, 7.0), 0).unwrap();
        assert_eq!(s.flops, other.flops);
    }
}
