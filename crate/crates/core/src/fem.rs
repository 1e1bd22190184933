//! Linear magnetostatic finite element model with an affine parameter split.
//!
//! The scalar vector potential `A_z` is discretized with linear elements on
//! the fine mesh. Element matrices of the decomposition box are integrated
//! once on the reference configuration and grouped by macro-triangle and by
//! derivative pair, so the stiffness at any design is
//! `K(P) = K0 + sum_t theta_t(P) K_t` and the magnet load is
//! `j(P) = j0 + sum_s phi_s(P) j_s`. Terms whose weights are constant over
//! the design space are folded into `K0`/`j0`, terms with proportional
//! weights are merged.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{AffineWeights, MacroTriangulation, ParamVector, Region, WeightDerivatives};
use crate::math::{dot, norm2};
use crate::mesh::FineMesh;
use crate::sparse::{SkylineCholesky, SkylineLayout, SkylineMatrix, SymBlock};

/// Reluctivities per region, relative to the vacuum value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialTable {
    pub iron: f64,
    pub air: f64,
    pub magnet: f64,
}

impl MaterialTable {
    /// Iron with relative permeability `mu_r`, air and magnet at vacuum.
    pub fn with_iron_permeability(mu_r: f64) -> Self {
        MaterialTable { iron: 1.0 / mu_r, air: 1.0, magnet: 1.0 }
    }

    pub fn reluctivity(&self, r: Region) -> f64 {
        match r {
            Region::Iron => self.iron,
            Region::Air => self.air,
            Region::Magnet => self.magnet,
        }
    }

    fn validate(&self) -> Result<()> {
        for nu in [self.iron, self.air, self.magnet] {
            if !(nu > 0.0) || !nu.is_finite() {
                return Err(Error::SingularMaterial(nu));
            }
        }
        Ok(())
    }
}

impl Default for MaterialTable {
    fn default() -> Self {
        Self::with_iron_permeability(500.0)
    }
}

/// How the EMF constant `c_E` is fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmfScale {
    /// Chosen so the EMF at the reference design equals the given value.
    CalibrateTo(f64),
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FemOptions {
    /// Lattice refinement level of the macro-triangles.
    pub level: u32,
    /// Magnet remanence, magnetization along `+y`.
    pub remanence: f64,
    pub emf: EmfScale,
    /// Fold constant and merge proportional affine terms.
    pub compress: bool,
}

impl Default for FemOptions {
    fn default() -> Self {
        FemOptions { level: 4, remanence: 1.0, emf: EmfScale::CalibrateTo(30.37), compress: true }
    }
}

/// Stiffness block kinds per macro-triangle: `dx dx`, `dy dy` and the
/// symmetrized mixed block `dx dy + dy dx`.
pub const BLOCKS_PER_SUBDOMAIN: usize = 3;
/// Magnet load kinds per macro-triangle: `dx` and `dy` parts.
pub const SOURCES_PER_SUBDOMAIN: usize = 2;

/// Affine weights flattened to one value per raw term.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatWeights {
    /// Index `3 l + k` for block kind `k` of macro-triangle `l`.
    pub stiffness: Vec<f64>,
    /// Index `2 l + c` for load kind `c` of macro-triangle `l`.
    pub source: Vec<f64>,
}

impl FlatWeights {
    pub fn from_affine(w: &AffineWeights) -> Self {
        let stiffness = w.subdomains.iter().flat_map(|s| [s.stiffness[0], s.stiffness[1], s.stiffness[2]]).collect();
        let source = w.subdomains.iter().flat_map(|s| s.source).collect();
        FlatWeights { stiffness, source }
    }
}

/// Flattened first and second weight derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatDerivatives {
    pub stiffness_grad: Vec<[f64; 3]>,
    pub source_grad: Vec<[f64; 3]>,
    /// Empty for first order.
    pub stiffness_hess: Vec<[[f64; 3]; 3]>,
    pub source_hess: Vec<[[f64; 3]; 3]>,
}

impl FlatDerivatives {
    pub fn from_geometry(d: &WeightDerivatives) -> Self {
        let stiffness_grad = d.gradient.iter().flat_map(|s| [s.stiffness[0], s.stiffness[1], s.stiffness[2]]).collect();
        let source_grad = d.gradient.iter().flat_map(|s| s.source).collect();
        let stiffness_hess = d.hessian.iter().flat_map(|s| [s.stiffness[0], s.stiffness[1], s.stiffness[2]]).collect();
        let source_hess = d.hessian.iter().flat_map(|s| s.source).collect();
        FlatDerivatives { stiffness_grad, source_grad, stiffness_hess, source_hess }
    }

    pub fn order(&self) -> usize {
        if self.stiffness_hess.is_empty() {
            1
        } else {
            2
        }
    }
}

/// A parameter-dependent stiffness block and the raw weight it scales with.
#[derive(Debug, Clone)]
pub struct StiffnessTerm {
    pub weight: usize,
    pub block: SymBlock,
    positions: Vec<usize>,
}

/// A parameter-dependent load vector and the raw weight it scales with.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTerm {
    pub weight: usize,
    pub vector: Vec<f64>,
}

/// Reference-configuration blocks of the affinely decomposed system.
#[derive(Debug, Clone)]
pub struct AffineModel {
    pub tri: MacroTriangulation,
    pub mesh: FineMesh,
    pub materials: MaterialTable,
    pub options: FemOptions,
    /// Free-DoF index of every mesh node, `None` on the Dirichlet boundary.
    pub dof: Vec<Option<usize>>,
    pub k0: SymBlock,
    pub stiffness: Vec<StiffnessTerm>,
    /// Parameter-independent load (coil current and folded magnet terms).
    pub j0: Vec<f64>,
    pub sources: Vec<SourceTerm>,
    /// EMF functional: `E0 = qoi . u`.
    pub qoi: Vec<f64>,
    pub emf_constant: f64,
    layout: Arc<SkylineLayout>,
    k0_values: Vec<f64>,
}

/// Solution at one design together with the factorized operator.
#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub p: Option<ParamVector>,
    /// Free DoFs; Dirichlet DoFs are zero and not stored.
    pub u: Vec<f64>,
    pub weights: FlatWeights,
    factor: Arc<SkylineCholesky>,
}

impl FieldSolution {
    pub fn factor(&self) -> &SkylineCholesky {
        &self.factor
    }
}

struct Element {
    nodes: [usize; 3],
    area: f64,
    grad: [[f64; 2]; 3],
}

fn element(pos: &[[f64; 2]], t: &[usize; 3]) -> Element {
    let (a, b, c) = (pos[t[0]], pos[t[1]], pos[t[2]]);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let p = [a, b, c];
    let mut grad = [[0.0; 2]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        grad[i] = [(p[j][1] - p[k][1]) / det, (p[k][0] - p[j][0]) / det];
    }
    Element { nodes: *t, area: 0.5 * det, grad }
}

impl AffineModel {
    pub fn assemble_reference(tri: &MacroTriangulation, materials: MaterialTable, options: FemOptions) -> Result<Self> {
        materials.validate()?;
        if !options.remanence.is_finite() {
            return Err(Error::InvalidInput("remanence must be finite".into()));
        }
        let mesh = FineMesh::build(tri, options.level)?;
        let mut dof = vec![None; mesh.num_nodes()];
        let mut n = 0;
        for (i, d) in mesh.dirichlet.iter().enumerate() {
            if !d {
                dof[i] = Some(n);
                n += 1;
            }
        }
        let pos = mesh.positions(tri, &tri.reference());
        let nl = tri.len();
        let mut k0 = SymBlock::new(n);
        let mut raw: Vec<SymBlock> = (0..nl * BLOCKS_PER_SUBDOMAIN).map(|_| SymBlock::new(n)).collect();
        let mut raw_src = vec![vec![0.0; n]; nl * SOURCES_PER_SUBDOMAIN];
        for (e, t) in mesh.triangles.iter().enumerate() {
            let el = element(&pos, t);
            let nu = materials.reluctivity(mesh.region[e]);
            for a in 0..3 {
                let Some(i) = dof[el.nodes[a]] else { continue };
                if let (Some(l), Region::Magnet) = (mesh.owner[e], mesh.region[e]) {
                    raw_src[2 * l][i] -= options.remanence * el.area * el.grad[a][0];
                    raw_src[2 * l + 1][i] -= options.remanence * el.area * el.grad[a][1];
                }
                for b in 0..=a {
                    let Some(j) = dof[el.nodes[b]] else { continue };
                    let (ga, gb) = (el.grad[a], el.grad[b]);
                    let s = nu * el.area;
                    match mesh.owner[e] {
                        None => k0.push(i, j, s * (ga[0] * gb[0] + ga[1] * gb[1])),
                        Some(l) => {
                            raw[3 * l].push(i, j, s * ga[0] * gb[0]);
                            raw[3 * l + 1].push(i, j, s * ga[1] * gb[1]);
                            raw[3 * l + 2].push(i, j, s * (ga[0] * gb[1] + ga[1] * gb[0]));
                        }
                    }
                }
            }
        }
        k0.compress();
        for b in raw.iter_mut() {
            b.compress();
        }

        let mut j0 = vec![0.0; n];
        let (stiff_terms, source_terms) = if options.compress {
            compress_terms(tri, &mut k0, raw, &mut j0, raw_src)?
        } else {
            let s = raw.into_iter().enumerate().filter(|(_, b)| b.nnz() > 0).collect();
            let j = raw_src.into_iter().enumerate().filter(|(_, v)| v.iter().any(|x| *x != 0.0)).collect();
            (s, j)
        };

        let mut all: Vec<&SymBlock> = vec![&k0];
        all.extend(stiff_terms.iter().map(|(_, b)| b));
        let layout = Arc::new(SkylineLayout::new(n, &all));
        let mut k0m = SkylineMatrix::zeros(layout.clone());
        k0m.add_block(1.0, &k0, &layout.positions(&k0)?);
        let k0_values = k0m.values_mut().to_vec();
        let stiffness = stiff_terms
            .into_iter()
            .map(|(weight, block)| {
                let positions = layout.positions(&block)?;
                Ok(StiffnessTerm { weight, block, positions })
            })
            .collect::<Result<Vec<_>>>()?;
        let sources = source_terms.into_iter().map(|(weight, vector)| SourceTerm { weight, vector }).collect();

        let [a, b] = mesh.probes;
        let (ia, ib) = match (dof[a], dof[b]) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::InvalidInput("EMF probes lie on the Dirichlet boundary".into())),
        };
        let mut qoi = vec![0.0; n];
        qoi[ia] = 1.0;
        qoi[ib] = -1.0;
        let mut model = AffineModel {
            tri: tri.clone(),
            mesh,
            materials,
            options,
            dof,
            k0,
            stiffness,
            j0,
            sources,
            qoi,
            emf_constant: 1.0,
            layout,
            k0_values,
        };
        let c = match options.emf {
            EmfScale::Constant(c) => c,
            EmfScale::CalibrateTo(target) => {
                let raw = model.emf(&model.solve(&tri.reference())?.u);
                if !(raw.abs() > 0.0) || !raw.is_finite() {
                    return Err(Error::InvalidInput(format!("cannot calibrate the EMF, flux difference is {raw:e}")));
                }
                target / raw
            }
        };
        model.emf_constant = c;
        for q in model.qoi.iter_mut() {
            *q *= c;
        }
        Ok(model)
    }

    /// Number of free DoFs.
    pub fn dim(&self) -> usize {
        self.j0.len()
    }

    pub fn layout(&self) -> &Arc<SkylineLayout> {
        &self.layout
    }

    pub fn weights(&self, p: &ParamVector) -> Result<FlatWeights> {
        Ok(FlatWeights::from_affine(&self.tri.affine_weights(p)?))
    }

    pub fn weight_derivatives(&self, p: &ParamVector, order: usize) -> Result<FlatDerivatives> {
        Ok(FlatDerivatives::from_geometry(&self.tri.weight_derivatives(p, order)?))
    }

    pub fn operator(&self, w: &FlatWeights) -> SkylineMatrix {
        let mut m = SkylineMatrix::zeros(self.layout.clone());
        m.values_mut().copy_from_slice(&self.k0_values);
        for t in &self.stiffness {
            m.add_block(w.stiffness[t.weight], &t.block, &t.positions);
        }
        m
    }

    pub fn rhs(&self, w: &FlatWeights) -> Vec<f64> {
        let mut f = self.j0.clone();
        for s in &self.sources {
            crate::math::axpy(w.source[s.weight], &s.vector, &mut f);
        }
        f
    }

    /// `K(P) x` from the blocks.
    pub fn matvec(&self, w: &FlatWeights, x: &[f64]) -> Vec<f64> {
        let mut y = self.k0.matvec(x);
        for t in &self.stiffness {
            t.block.matvec_add(w.stiffness[t.weight], x, &mut y);
        }
        y
    }

    /// `K(P)` from the blocks as a single coordinate list.
    pub fn stiffness_matrix(&self, w: &FlatWeights) -> SymBlock {
        let mut k = self.k0.clone();
        for t in &self.stiffness {
            k.extend_scaled(w.stiffness[t.weight], &t.block);
        }
        k.compress();
        k
    }

    pub fn solve(&self, p: &ParamVector) -> Result<FieldSolution> {
        let w = self.weights(p)?;
        let mut sol = self.solve_weights(w)?;
        sol.p = Some(*p);
        Ok(sol)
    }

    /// Solve with explicitly given weights.
    pub fn solve_weights(&self, weights: FlatWeights) -> Result<FieldSolution> {
        let factor = Arc::new(self.operator(&weights).factor()?);
        let u = factor.solve(&self.rhs(&weights));
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::SolveFailure("non-finite solution".into()));
        }
        Ok(FieldSolution { p: None, u, weights, factor })
    }

    /// Relative residual `||K u - j|| / ||j||`.
    pub fn relative_residual(&self, sol: &FieldSolution) -> f64 {
        let f = self.rhs(&sol.weights);
        let mut r = self.matvec(&sol.weights, &sol.u);
        for (ri, fi) in r.iter_mut().zip(&f) {
            *ri -= fi;
        }
        let nf = norm2(&f);
        if nf == 0.0 {
            norm2(&r)
        } else {
            norm2(&r) / nf
        }
    }

    /// EMF of a free-DoF vector; linear in `u`.
    pub fn emf(&self, u: &[f64]) -> f64 {
        dot(&self.qoi, u)
    }

    /// Nodal values with the Dirichlet zeros filled in.
    pub fn nodal(&self, u: &[f64]) -> Vec<f64> {
        self.dof.iter().map(|d| d.map_or(0.0, |i| u[i])).collect()
    }

    /// Stiffness and load assembled element by element on the mapped mesh.
    pub fn assemble_direct(&self, p: &ParamVector) -> Result<(SymBlock, Vec<f64>)> {
        self.tri.check_positive(p)?;
        let n = self.dim();
        let pos = self.mesh.positions(&self.tri, p);
        let mut k = SymBlock::new(n);
        let mut f = vec![0.0; n];
        for (e, t) in self.mesh.triangles.iter().enumerate() {
            let el = element(&pos, t);
            let nu = self.materials.reluctivity(self.mesh.region[e]);
            for a in 0..3 {
                let Some(i) = self.dof[el.nodes[a]] else { continue };
                if self.mesh.region[e] == Region::Magnet {
                    f[i] -= self.options.remanence * el.area * el.grad[a][0];
                }
                for b in 0..=a {
                    let Some(j) = self.dof[el.nodes[b]] else { continue };
                    let (ga, gb) = (el.grad[a], el.grad[b]);
                    k.push(i, j, nu * el.area * (ga[0] * gb[0] + ga[1] * gb[1]));
                }
            }
        }
        k.compress();
        Ok((k, f))
    }
}

type Terms = (Vec<(usize, SymBlock)>, Vec<(usize, Vec<f64>)>);

/// Folds constant weights into the parameter-free parts and merges terms with
/// proportional weights, judged on a fixed sample of designs.
fn compress_terms(
    tri: &MacroTriangulation,
    k0: &mut SymBlock,
    raw: Vec<SymBlock>,
    j0: &mut [f64],
    raw_src: Vec<Vec<f64>>,
) -> Result<Terms> {
    let samples = weight_samples(tri)?;
    let stiff: Vec<Vec<f64>> = samples.iter().map(|w| w.stiffness.clone()).collect();
    let src: Vec<Vec<f64>> = samples.iter().map(|w| w.source.clone()).collect();

    let mut stiff_terms: Vec<(usize, SymBlock)> = Vec::new();
    for (t, block) in raw.into_iter().enumerate() {
        if block.nnz() == 0 {
            continue;
        }
        match classify(&stiff, t, stiff_terms.iter().map(|(r, _)| *r)) {
            Kind::Zero => {}
            Kind::Constant(c) => {
                k0.extend_scaled(c, &block);
            }
            Kind::Proportional(r, c) => {
                let target = &mut stiff_terms.iter_mut().find(|(w, _)| *w == r).unwrap().1;
                target.extend_scaled(c, &block);
            }
            Kind::New => stiff_terms.push((t, block)),
        }
    }
    k0.compress();
    for (_, b) in stiff_terms.iter_mut() {
        b.compress();
    }
    stiff_terms.retain(|(_, b)| b.nnz() > 0);

    let mut source_terms: Vec<(usize, Vec<f64>)> = Vec::new();
    for (s, v) in raw_src.into_iter().enumerate() {
        if v.iter().all(|x| *x == 0.0) {
            continue;
        }
        match classify(&src, s, source_terms.iter().map(|(r, _)| *r)) {
            Kind::Zero => {}
            Kind::Constant(c) => crate::math::axpy(c, &v, j0),
            Kind::Proportional(r, c) => {
                let target = &mut source_terms.iter_mut().find(|(w, _)| *w == r).unwrap().1;
                crate::math::axpy(c, &v, target);
            }
            Kind::New => source_terms.push((s, v)),
        }
    }
    Ok((stiff_terms, source_terms))
}

enum Kind {
    Zero,
    Constant(f64),
    Proportional(usize, f64),
    New,
}

fn classify(samples: &[Vec<f64>], t: usize, existing: impl Iterator<Item = usize>) -> Kind {
    let vals: Vec<f64> = samples.iter().map(|w| w[t]).collect();
    let scale = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale < 1e-14 {
        return Kind::Zero;
    }
    let tol = 1e-12 * scale;
    if vals.iter().all(|v| (v - vals[0]).abs() <= tol) {
        return Kind::Constant(vals[0]);
    }
    for r in existing {
        let base: Vec<f64> = samples.iter().map(|w| w[r]).collect();
        let k = (0..base.len()).max_by(|a, b| base[*a].abs().total_cmp(&base[*b].abs())).unwrap();
        if base[k] == 0.0 {
            continue;
        }
        let c = vals[k] / base[k];
        if vals.iter().zip(&base).all(|(v, b)| (v - c * b).abs() <= tol) {
            return Kind::Proportional(r, c);
        }
    }
    Kind::New
}

/// Weights at the reference, at the corners of the parameter hull that keep
/// the geometry valid, and at fixed pseudo-random designs inside the hull.
fn weight_samples(tri: &MacroTriangulation) -> Result<Vec<FlatWeights>> {
    let r = tri.reference();
    let mut out = vec![FlatWeights::from_affine(&tri.affine_weights(&r)?)];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut tries = 0;
    while out.len() < 48 && tries < 10_000 {
        tries += 1;
        let p = ParamVector::new(
            r.p1() * rng.gen_range(0.05..1.4),
            r.p2() * rng.gen_range(0.1..1.4),
            r.p3() * rng.gen_range(0.7..2.0),
        );
        if let Ok(w) = tri.affine_weights(&p) {
            out.push(FlatWeights::from_affine(&w));
        }
    }
    if out.len() < 8 {
        return Err(Error::DegenerateGeometry("too few valid designs to classify affine terms".into()));
    }
    Ok(out)
}
