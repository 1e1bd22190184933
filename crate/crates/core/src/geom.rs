//! Parametrized pole window and its macro-triangulation.
//!
//! The pole window is a rectangle `[-w, w] x [0, y_top]` holding a rotor iron
//! block, an airgap band and a stator iron block. A decomposition box below
//! the rotor surface contains the buried magnet of width `p1`, height `p2`,
//! whose top edge lies `p3` below the rotor surface. The box is split into 16
//! macro-triangles whose vertices are affine functions of the design vector,
//! so every macro-triangle is mapped from its reference shape by an affine
//! map `x -> B(P) x + c(P)`. The stiffness weights are the entries of
//! `B^-1 B^-T det B` and the magnet source weights the first column of
//! `adj B`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::math::{Jet, Scalar};

/// Design vector `(p1, p2, p3)`: magnet width, magnet height and depth of the
/// magnet below the rotor surface, all in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamVector(pub [f64; 3]);

impl ParamVector {
    pub const fn new(p1: f64, p2: f64, p3: f64) -> Self {
        ParamVector([p1, p2, p3])
    }

    pub fn p1(&self) -> f64 {
        self.0[0]
    }

    pub fn p2(&self) -> f64 {
        self.0[1]
    }

    pub fn p3(&self) -> f64 {
        self.0[2]
    }

    /// Magnet cross-section area `p1 * p2` in mm^2.
    pub fn area(&self) -> f64 {
        self.0[0] * self.0[1]
    }

    pub fn offset(&self, d: &[f64; 3]) -> Self {
        ParamVector([self.0[0] + d[0], self.0[1] + d[1], self.0[2] + d[2]])
    }

    pub fn max_abs_diff(&self, o: &ParamVector) -> f64 {
        (0..3).fold(0.0_f64, |m, i| m.max((self.0[i] - o.0[i]).abs()))
    }
}

impl From<[f64; 3]> for ParamVector {
    fn from(p: [f64; 3]) -> Self {
        ParamVector(p)
    }
}

/// Polytope `{ P : a_k . P <= b_k }` of admissible designs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDomain {
    pub rows: Vec<([f64; 3], f64)>,
}

impl ParamDomain {
    /// Bounds `(1, 1, 5) <= P`, `p3 <= 14` and the two coupling rows
    /// `p2 + p3 <= 15`, `3 p1 - 2 p3 <= 50`.
    pub fn benchmark() -> Self {
        ParamDomain {
            rows: alloc::vec![
                ([-1.0, 0.0, 0.0], -1.0),
                ([0.0, -1.0, 0.0], -1.0),
                ([0.0, 0.0, -1.0], -5.0),
                ([0.0, 0.0, 1.0], 14.0),
                ([0.0, 1.0, 1.0], 15.0),
                ([3.0, 0.0, -2.0], 50.0),
            ],
        }
    }

    pub fn contains(&self, p: &ParamVector, tol: f64) -> bool {
        self.rows.iter().all(|(a, b)| dot3(a, &p.0) <= b + tol)
    }

    /// Whether `p` lies within `margin` (max-norm) of the polytope.
    pub fn within(&self, p: &ParamVector, margin: f64) -> bool {
        self.grown(margin).contains(p, 0.0)
    }

    /// The polytope with every row shifted outward by `margin ||a_k||_1`,
    /// i.e. its max-norm neighbourhood of radius `margin`.
    pub fn grown(&self, margin: f64) -> ParamDomain {
        let rows = self.rows.iter().map(|(a, b)| (*a, b + margin * (a[0].abs() + a[1].abs() + a[2].abs()))).collect();
        ParamDomain { rows }
    }

    /// Intersection with the box `[lo, hi]`.
    pub fn clipped(&self, lo: [f64; 3], hi: [f64; 3]) -> ParamDomain {
        let mut rows = self.rows.clone();
        for i in 0..3 {
            let mut e = [0.0; 3];
            e[i] = 1.0;
            rows.push((e, hi[i]));
            e[i] = -1.0;
            rows.push((e, -lo[i]));
        }
        ParamDomain { rows }
    }

    /// Vertices of the polytope by enumeration of all row triples.
    pub fn vertices(&self) -> Vec<ParamVector> {
        let m = self.rows.len();
        let mut out: Vec<ParamVector> = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                for k in j + 1..m {
                    let a = [self.rows[i].0, self.rows[j].0, self.rows[k].0];
                    let b = [self.rows[i].1, self.rows[j].1, self.rows[k].1];
                    if let Some(x) = solve3(a, b) {
                        let p = ParamVector(x);
                        if self.contains(&p, 1e-9) && !out.iter().any(|q| q.max_abs_diff(&p) < 1e-9) {
                            out.push(p);
                        }
                    }
                }
            }
        }
        out
    }

    /// Bounding box `(lower, upper)` of the polytope; `lower > upper` when
    /// it is empty.
    pub fn hull(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in self.vertices() {
            for i in 0..3 {
                lo[i] = lo[i].min(v.0[i]);
                hi[i] = hi[i].max(v.0[i]);
            }
        }
        (lo, hi)
    }
}

pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = det3(&a);
    if det.abs() < 1e-12 {
        return None;
    }
    let mut x = [0.0; 3];
    for c in 0..3 {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        x[c] = det3(&m) / det;
    }
    Some(x)
}

fn det3(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Dimensions of the pole window in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryNumbers {
    /// Window is `[-half_width, half_width]` wide.
    pub half_width: f64,
    /// Height of the rotor surface above the bottom of the window.
    pub rotor_surface: f64,
    pub airgap: f64,
    /// Top of the stator block (top of the window).
    pub stator_top: f64,
    /// Decomposition box is `[-box_half_width, box_half_width]` wide.
    pub box_half_width: f64,
    /// Decomposition box spans `[rotor_surface - box_depth, rotor_surface]`.
    pub box_depth: f64,
    /// EMF probes sit at `(-probe_x, mid-gap)` and `(probe_x, mid-gap)`.
    pub probe_x: f64,
    /// Air notch `notch_width x notch_depth` in the rotor iron next to each
    /// top corner of the box; keeps the pole piece above the magnet from
    /// touching the rotor body in a single point.
    pub notch_width: f64,
    pub notch_depth: f64,
    /// Configuration on which the affine blocks are assembled.
    pub reference: ParamVector,
}

impl Default for GeometryNumbers {
    fn default() -> Self {
        GeometryNumbers {
            half_width: 30.0,
            rotor_surface: 25.0,
            airgap: 1.0,
            stator_top: 40.0,
            box_half_width: 15.0,
            box_depth: 17.0,
            probe_x: 15.0,
            notch_width: 1.875,
            notch_depth: 4.25,
            reference: ParamVector::new(19.0, 7.0, 7.0),
        }
    }
}

impl GeometryNumbers {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.half_width,
            self.rotor_surface,
            self.airgap,
            self.stator_top,
            self.box_half_width,
            self.box_depth,
            self.probe_x,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("geometry dimensions must be positive".into()));
        }
        if self.box_half_width >= self.half_width || self.box_depth >= self.rotor_surface {
            return Err(Error::InvalidInput("decomposition box must lie inside the rotor".into()));
        }
        if self.stator_top <= self.rotor_surface + self.airgap {
            return Err(Error::InvalidInput("stator must lie above the airgap".into()));
        }
        if !(self.notch_width >= 0.0 && self.notch_depth >= 0.0)
            || self.box_half_width + self.notch_width >= self.half_width
            || self.notch_depth >= self.rotor_surface
        {
            return Err(Error::InvalidInput("notch must fit into the rotor beside the box".into()));
        }
        if self.probe_x >= self.half_width {
            return Err(Error::InvalidInput("probes must lie inside the window".into()));
        }
        Ok(())
    }

    pub fn box_bottom(&self) -> f64 {
        self.rotor_surface - self.box_depth
    }

    /// Area of the decomposition box.
    pub fn box_area(&self) -> f64 {
        2.0 * self.box_half_width * self.box_depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Magnet,
    Iron,
    Air,
}

/// Point whose position is `base + lin . P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinePoint {
    pub base: [f64; 2],
    pub lin: [[f64; 3]; 2],
}

impl AffinePoint {
    pub const fn fixed(x: f64, y: f64) -> Self {
        AffinePoint { base: [x, y], lin: [[0.0; 3]; 2] }
    }

    pub fn at(&self, p: &ParamVector) -> [f64; 2] {
        [self.base[0] + dot3(&self.lin[0], &p.0), self.base[1] + dot3(&self.lin[1], &p.0)]
    }

    pub fn is_fixed(&self) -> bool {
        self.lin.iter().all(|r| r.iter().all(|v| *v == 0.0))
    }

    fn jet(&self, p: &ParamVector) -> [Jet; 2] {
        let x = self.at(p);
        [Jet::affine(x[0], self.lin[0]), Jet::affine(x[1], self.lin[1])]
    }
}

/// Sixteen macro-triangles tiling the decomposition box.
#[derive(Debug, Clone)]
pub struct MacroTriangulation {
    pub numbers: GeometryNumbers,
    pub vertices: Vec<AffinePoint>,
    /// Counter-clockwise at the reference configuration.
    pub triangles: Vec<[usize; 3]>,
    pub regions: Vec<Region>,
    /// Admissible designs the triangulation was validated on.
    pub domain: ParamDomain,
    /// Inverse edge matrices `[v1 - v0, v2 - v0]^-1` at the reference.
    ref_edge_inv: Vec<[[f64; 2]; 2]>,
}

/// Indices of the named macro vertices.
pub mod vertex {
    pub const BOX_BL: usize = 0;
    pub const BOX_BM: usize = 1;
    pub const BOX_BR: usize = 2;
    pub const BOX_RM: usize = 3;
    pub const BOX_TR: usize = 4;
    pub const BOX_TM: usize = 5;
    pub const BOX_TL: usize = 6;
    pub const BOX_LM: usize = 7;
    pub const MAG_BL: usize = 8;
    pub const MAG_BR: usize = 9;
    pub const MAG_TR: usize = 10;
    pub const MAG_TL: usize = 11;
    pub const MAG_C: usize = 12;
}

/// Magnet rectangle of a design: `(x_left, x_right, y_bottom, y_top)`.
pub fn magnet_rect(numbers: &GeometryNumbers, p: &ParamVector) -> (f64, f64, f64, f64) {
    let top = numbers.rotor_surface - p.p3();
    (-0.5 * p.p1(), 0.5 * p.p1(), top - p.p2(), top)
}

/// Builds the macro-triangulation and checks it on every vertex of `domain`.
pub fn build_geometry(numbers: &GeometryNumbers, domain: &ParamDomain) -> Result<MacroTriangulation> {
    use vertex::*;
    numbers.validate()?;
    let w = numbers.box_half_width;
    let ys = numbers.rotor_surface;
    let yb = numbers.box_bottom();
    let ym = 0.5 * (ys + yb);
    let mut vertices = alloc::vec![AffinePoint::fixed(0.0, 0.0); 13];
    vertices[BOX_BL] = AffinePoint::fixed(-w, yb);
    vertices[BOX_BM] = AffinePoint::fixed(0.0, yb);
    vertices[BOX_BR] = AffinePoint::fixed(w, yb);
    vertices[BOX_RM] = AffinePoint::fixed(w, ym);
    vertices[BOX_TR] = AffinePoint::fixed(w, ys);
    vertices[BOX_TM] = AffinePoint::fixed(0.0, ys);
    vertices[BOX_TL] = AffinePoint::fixed(-w, ys);
    vertices[BOX_LM] = AffinePoint::fixed(-w, ym);
    let left = [-0.5, 0.0, 0.0];
    let right = [0.5, 0.0, 0.0];
    let top = [0.0, 0.0, -1.0];
    let bottom = [0.0, -1.0, -1.0];
    vertices[MAG_BL] = AffinePoint { base: [0.0, ys], lin: [left, bottom] };
    vertices[MAG_BR] = AffinePoint { base: [0.0, ys], lin: [right, bottom] };
    vertices[MAG_TR] = AffinePoint { base: [0.0, ys], lin: [right, top] };
    vertices[MAG_TL] = AffinePoint { base: [0.0, ys], lin: [left, top] };
    vertices[MAG_C] = AffinePoint { base: [0.0, ys], lin: [[0.0; 3], [0.0, -0.5, -1.0]] };

    let layout: [([usize; 3], Region); 16] = [
        // magnet, fanned around its centre
        ([MAG_C, MAG_BL, MAG_BR], Region::Magnet),
        ([MAG_C, MAG_BR, MAG_TR], Region::Magnet),
        ([MAG_C, MAG_TR, MAG_TL], Region::Magnet),
        ([MAG_C, MAG_TL, MAG_BL], Region::Magnet),
        // one triangle per box edge segment
        ([BOX_TL, MAG_TL, BOX_TM], Region::Iron),
        ([BOX_TM, MAG_TR, BOX_TR], Region::Iron),
        ([BOX_TR, MAG_TR, BOX_RM], Region::Air),
        ([BOX_RM, MAG_BR, BOX_BR], Region::Air),
        ([BOX_BR, MAG_BR, BOX_BM], Region::Iron),
        ([BOX_BM, MAG_BL, BOX_BL], Region::Iron),
        ([BOX_BL, MAG_BL, BOX_LM], Region::Air),
        ([BOX_LM, MAG_TL, BOX_TL], Region::Air),
        // one triangle per magnet edge
        ([BOX_TM, MAG_TL, MAG_TR], Region::Iron),
        ([BOX_RM, MAG_TR, MAG_BR], Region::Air),
        ([BOX_BM, MAG_BR, MAG_BL], Region::Iron),
        ([BOX_LM, MAG_BL, MAG_TL], Region::Air),
    ];

    let reference = numbers.reference;
    let mut triangles = Vec::with_capacity(16);
    let mut regions = Vec::with_capacity(16);
    let mut ref_edge_inv = Vec::with_capacity(16);
    for (tri, region) in layout {
        let mut t = tri;
        if signed_area(&vertices, &t, &reference) < 0.0 {
            t.swap(1, 2);
        }
        let e = edge_matrix(&vertices, &t, &reference);
        let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
        if !(det > 0.0) {
            return Err(Error::DegenerateGeometry(format!(
                "macro-triangle {t:?} is degenerate at the reference configuration"
            )));
        }
        ref_edge_inv.push([[e[1][1] / det, -e[0][1] / det], [-e[1][0] / det, e[0][0] / det]]);
        triangles.push(t);
        regions.push(region);
    }
    let tri = MacroTriangulation { numbers: numbers.clone(), vertices, triangles, regions, domain: domain.clone(), ref_edge_inv };
    for corner in domain.vertices() {
        tri.check_positive(&corner)?;
    }
    Ok(tri)
}

fn edge_matrix(vertices: &[AffinePoint], t: &[usize; 3], p: &ParamVector) -> [[f64; 2]; 2] {
    let a = vertices[t[0]].at(p);
    let b = vertices[t[1]].at(p);
    let c = vertices[t[2]].at(p);
    [[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]]
}

fn signed_area(vertices: &[AffinePoint], t: &[usize; 3], p: &ParamVector) -> f64 {
    let e = edge_matrix(vertices, t, p);
    0.5 * (e[0][0] * e[1][1] - e[0][1] * e[1][0])
}

/// Weights of one macro-triangle: stiffness weights for the `xx`, `yy`, `xy`
/// and `yx` blocks and the two source weights of the magnet blocks
/// (`x`- and `y`-derivative parts).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubdomainWeights<T> {
    pub stiffness: [T; 4],
    pub source: [T; 2],
}

/// Affine weights of all macro-triangles at one design.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineWeights {
    pub subdomains: Vec<SubdomainWeights<f64>>,
}

/// First (and optionally second) derivatives of every weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDerivatives {
    pub order: usize,
    /// `gradient[l].stiffness[k][i] = d theta^l_k / d p_i`
    pub gradient: Vec<SubdomainWeights<[f64; 3]>>,
    /// `hessian[l].stiffness[k][i][j]`, empty for order 1.
    pub hessian: Vec<SubdomainWeights<[[f64; 3]; 3]>>,
}

impl MacroTriangulation {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn reference(&self) -> ParamVector {
        self.numbers.reference
    }

    pub fn vertex_positions(&self, p: &ParamVector) -> Vec<[f64; 2]> {
        self.vertices.iter().map(|v| v.at(p)).collect()
    }

    pub fn signed_areas(&self, p: &ParamVector) -> Vec<f64> {
        self.triangles.iter().map(|t| signed_area(&self.vertices, t, p)).collect()
    }

    /// Fails with [`Error::DegenerateGeometry`] unless every macro-triangle
    /// keeps a clearly positive orientation at `p`.
    pub fn check_positive(&self, p: &ParamVector) -> Result<()> {
        if p.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateGeometry(format!("non-finite design {:?}", p.0)));
        }
        for (l, (t, a)) in self.triangles.iter().zip(self.signed_areas(p)).enumerate() {
            let ref_area = signed_area(&self.vertices, t, &self.numbers.reference);
            if !(a > 1e-8 * ref_area) {
                return Err(Error::DegenerateGeometry(format!(
                    "macro-triangle {l} has area {a:e} at P = {:?}",
                    p.0
                )));
            }
        }
        Ok(())
    }

    /// Affine map `B` of triangle `l`, evaluated in any scalar type.
    fn jacobian<T: Scalar>(&self, l: usize, verts: &[[T; 2]]) -> [[T; 2]; 2] {
        let t = &self.triangles[l];
        let e = [
            [verts[t[1]][0] - verts[t[0]][0], verts[t[2]][0] - verts[t[0]][0]],
            [verts[t[1]][1] - verts[t[0]][1], verts[t[2]][1] - verts[t[0]][1]],
        ];
        let r = &self.ref_edge_inv[l];
        let mut b = [[T::from_f64(0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                b[i][j] = e[i][0].scale(r[0][j]) + e[i][1].scale(r[1][j]);
            }
        }
        b
    }

    fn weights_generic<T: Scalar>(&self, verts: &[[T; 2]]) -> Vec<SubdomainWeights<T>> {
        (0..self.len())
            .map(|l| {
                let b = self.jacobian(l, verts);
                let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
                let g00 = (b[1][1] * b[1][1] + b[0][1] * b[0][1]) / det;
                let g11 = (b[1][0] * b[1][0] + b[0][0] * b[0][0]) / det;
                let g01 = -(b[1][1] * b[1][0] + b[0][1] * b[0][0]) / det;
                SubdomainWeights { stiffness: [g00, g11, g01, g01], source: [b[1][1], -b[1][0]] }
            })
            .collect()
    }

    pub fn affine_weights(&self, p: &ParamVector) -> Result<AffineWeights> {
        self.check_positive(p)?;
        let verts = self.vertex_positions(p);
        Ok(AffineWeights { subdomains: self.weights_generic(&verts) })
    }

    /// Weights together with their first and second derivatives.
    pub fn weight_jets(&self, p: &ParamVector) -> Result<Vec<SubdomainWeights<Jet>>> {
        self.check_positive(p)?;
        let verts: Vec<[Jet; 2]> = self.vertices.iter().map(|v| v.jet(p)).collect();
        Ok(self.weights_generic(&verts))
    }

    pub fn weight_derivatives(&self, p: &ParamVector, order: usize) -> Result<WeightDerivatives> {
        if !(1..=2).contains(&order) {
            return Err(Error::InvalidInput(format!("derivative order {order} not in 1..=2")));
        }
        let jets = self.weight_jets(p)?;
        let gradient = jets
            .iter()
            .map(|w| SubdomainWeights { stiffness: w.stiffness.map(|j| j.g), source: w.source.map(|j| j.g) })
            .collect();
        let hessian = if order == 2 {
            jets.iter()
                .map(|w| SubdomainWeights { stiffness: w.stiffness.map(|j| j.h), source: w.source.map(|j| j.h) })
                .collect()
        } else {
            Vec::new()
        };
        Ok(WeightDerivatives { order, gradient, hessian })
    }

    /// Plain-text dump: vertices at `p`, then triangles with region tags.
    pub fn dump(&self, p: &ParamVector) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# macro-triangulation at P = ({}, {}, {})", p.p1(), p.p2(), p.p3());
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for (i, v) in self.vertex_positions(p).iter().enumerate() {
            let _ = writeln!(s, "{i} {:.12} {:.12}", v[0], v[1]);
        }
        let _ = writeln!(s, "triangles {}", self.triangles.len());
        for (i, (t, r)) in self.triangles.iter().zip(&self.regions).enumerate() {
            let tag = match r {
                Region::Magnet => "magnet",
                Region::Iron => "iron",
                Region::Air => "air",
            };
            let _ = writeln!(s, "{i} {} {} {} {tag}", t[0], t[1], t[2]);
        }
        s
    }
}
