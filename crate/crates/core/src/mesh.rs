//! Fine triangular mesh of the pole window.
//!
//! Inside the decomposition box every macro-triangle carries a uniform
//! lattice refinement with `2^level` segments per macro edge. Outside the box
//! a tensor grid is used whose lines pass through the box boundary nodes, so
//! the two parts are conforming. Nodes inside the box follow their
//! macro-triangle when the design changes; all other nodes are fixed.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::{MacroTriangulation, ParamVector, Region};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeLoc {
    Fixed([f64; 2]),
    /// Barycentric coordinates with respect to macro-triangle `tri`.
    Macro { tri: usize, bary: [f64; 3] },
}

#[derive(Debug, Clone)]
pub struct FineMesh {
    pub level: u32,
    pub nodes: Vec<NodeLoc>,
    /// Counter-clockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    /// Owning macro-triangle, `None` outside the decomposition box.
    pub owner: Vec<Option<usize>>,
    pub region: Vec<Region>,
    pub dirichlet: Vec<bool>,
    /// EMF probe nodes `(left, right)`.
    pub probes: [usize; 2],
}

fn key(p: [f64; 2]) -> (i64, i64) {
    (libm::round(p[0] * 1e6) as i64, libm::round(p[1] * 1e6) as i64)
}

fn lines(start: f64, end: f64, segments: usize, out: &mut Vec<f64>) {
    for k in 0..segments {
        out.push(start + (end - start) * k as f64 / segments as f64);
    }
}

impl FineMesh {
    pub fn build(tri: &MacroTriangulation, level: u32) -> Result<Self> {
        if level > 8 {
            return Err(Error::InvalidInput(alloc::format!("refinement level {level} is too large")));
        }
        let n = 1usize << level;
        let geo = &tri.numbers;
        let reference = tri.reference();
        let mut nodes: Vec<NodeLoc> = Vec::new();
        let mut triangles = Vec::new();
        let mut owner = Vec::new();
        let mut region = Vec::new();

        // Lattice nodes of the macro-triangles, shared along macro edges.
        let mut vertex_node: BTreeMap<usize, usize> = BTreeMap::new();
        let mut edge_node: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
        let ref_pos = tri.vertex_positions(&reference);
        for (l, t) in tri.triangles.iter().enumerate() {
            let mut local = alloc::vec![usize::MAX; (n + 1) * (n + 1)];
            for j in 0..=n {
                for i in 0..=(n - j) {
                    let bary = [1.0 - (i + j) as f64 / n as f64, i as f64 / n as f64, j as f64 / n as f64];
                    // classify lattice point: macro vertex, macro edge or interior
                    let shared = if i == 0 && j == 0 {
                        Some((t[0], None))
                    } else if i == n {
                        Some((t[1], None))
                    } else if j == n {
                        Some((t[2], None))
                    } else if j == 0 {
                        Some((t[0], Some((t[1], i))))
                    } else if i == 0 {
                        Some((t[0], Some((t[2], j))))
                    } else if i + j == n {
                        Some((t[1], Some((t[2], j))))
                    } else {
                        None
                    };
                    let mut new_node = || {
                        let fixed = (0..3).all(|k| bary[k] == 0.0 || tri.vertices[t[k]].is_fixed());
                        let loc = if fixed {
                            let mut pos = [0.0; 2];
                            for k in 0..3 {
                                pos[0] += bary[k] * ref_pos[t[k]][0];
                                pos[1] += bary[k] * ref_pos[t[k]][1];
                            }
                            NodeLoc::Fixed(pos)
                        } else {
                            NodeLoc::Macro { tri: l, bary }
                        };
                        nodes.push(loc);
                        nodes.len() - 1
                    };
                    let id = match shared {
                        None => new_node(),
                        Some((v, None)) => *vertex_node.entry(v).or_insert_with(new_node),
                        Some((a, Some((b, k)))) => {
                            let k = if a < b { (a, b, k) } else { (b, a, n - k) };
                            *edge_node.entry(k).or_insert_with(new_node)
                        }
                    };
                    local[j * (n + 1) + i] = id;
                }
            }
            let at = |i: usize, j: usize| local[j * (n + 1) + i];
            for j in 0..n {
                for i in 0..(n - j) {
                    triangles.push([at(i, j), at(i + 1, j), at(i, j + 1)]);
                    owner.push(Some(l));
                    region.push(tri.regions[l]);
                    if i + j + 1 < n {
                        triangles.push([at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)]);
                        owner.push(Some(l));
                        region.push(tri.regions[l]);
                    }
                }
            }
        }

        // Box boundary nodes for the conforming outer grid.
        let mut boundary: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for (id, loc) in nodes.iter().enumerate() {
            if let NodeLoc::Fixed(p) = loc {
                boundary.insert(key(*p), id);
            }
        }

        let w = geo.box_half_width;
        let hx = w / n as f64;
        let hy = geo.box_depth / (2 * n) as f64;
        let side = libm::round((geo.half_width - w) / hx).max(1.0) as usize;
        let mut xs = Vec::new();
        lines(-geo.half_width, -w, side, &mut xs);
        lines(-w, w, 2 * n, &mut xs);
        lines(w, geo.half_width, side, &mut xs);
        xs.push(geo.half_width);

        let yb = geo.box_bottom();
        let ys = geo.rotor_surface;
        let yg = ys + geo.airgap;
        let below = libm::round(yb / hy).max(1.0) as usize;
        let gap = 2 * (libm::round(geo.airgap / (2.0 * hy)).max(2.0) as usize);
        let stator = libm::round((geo.stator_top - yg) / hy).max(1.0) as usize;
        let mut ys_lines = Vec::new();
        lines(0.0, yb, below, &mut ys_lines);
        lines(yb, ys, 2 * n, &mut ys_lines);
        lines(ys, yg, gap, &mut ys_lines);
        lines(yg, geo.stator_top, stator, &mut ys_lines);
        ys_lines.push(geo.stator_top);

        let inside = |x: f64, y: f64| x > -w + 1e-9 && x < w - 1e-9 && y > yb + 1e-9 && y < ys - 1e-9;
        let nx = xs.len();
        let ny = ys_lines.len();
        let mut grid = alloc::vec![usize::MAX; nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                let p = [xs[ix], ys_lines[iy]];
                if inside(p[0], p[1]) {
                    continue;
                }
                let on_box = p[0] >= -w - 1e-9 && p[0] <= w + 1e-9 && p[1] >= yb - 1e-9 && p[1] <= ys + 1e-9;
                grid[iy * nx + ix] = if on_box {
                    *boundary.get(&key(p)).ok_or_else(|| {
                        Error::InvalidInput(alloc::format!("outer grid misses box boundary node at {p:?}"))
                    })?
                } else {
                    nodes.push(NodeLoc::Fixed(p));
                    nodes.len() - 1
                };
            }
        }
        for iy in 0..ny - 1 {
            for ix in 0..nx - 1 {
                let cx = 0.5 * (xs[ix] + xs[ix + 1]);
                let cy = 0.5 * (ys_lines[iy] + ys_lines[iy + 1]);
                if inside(cx, cy) {
                    continue;
                }
                let n00 = grid[iy * nx + ix];
                let n10 = grid[iy * nx + ix + 1];
                let n01 = grid[(iy + 1) * nx + ix];
                let n11 = grid[(iy + 1) * nx + ix + 1];
                let notch = cx.abs() > w
                    && cx.abs() < w + geo.notch_width
                    && cy > ys - geo.notch_depth;
                let reg = if cy < ys && !notch {
                    Region::Iron
                } else if cy < yg {
                    Region::Air
                } else {
                    Region::Iron
                };
                let pair = if cx < 0.0 { [[n00, n10, n11], [n00, n11, n01]] } else { [[n00, n10, n01], [n10, n11, n01]] };
                for t in pair {
                    triangles.push(t);
                    owner.push(None);
                    region.push(reg);
                }
            }
        }

        let eps = 1e-9;
        let dirichlet = nodes
            .iter()
            .map(|loc| match loc {
                NodeLoc::Fixed(p) => {
                    (p[0].abs() - geo.half_width).abs() < eps || p[1].abs() < eps || (p[1] - geo.stator_top).abs() < eps
                }
                NodeLoc::Macro { .. } => false,
            })
            .collect();

        let probe_y = ys + 0.5 * geo.airgap;
        let iy = ys_lines
            .iter()
            .position(|y| (y - probe_y).abs() < 1e-9)
            .ok_or_else(|| Error::InvalidInput("no grid line at mid-gap".into()))?;
        let nearest = |x: f64| {
            (0..nx)
                .min_by(|a, b| (xs[*a] - x).abs().total_cmp(&(xs[*b] - x).abs()))
                .unwrap_or(0)
        };
        let probes = [grid[iy * nx + nearest(-geo.probe_x)], grid[iy * nx + nearest(geo.probe_x)]];

        Ok(FineMesh { level, nodes, triangles, owner, region, dirichlet, probes })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Node coordinates of the mapped mesh at design `p`.
    pub fn positions(&self, tri: &MacroTriangulation, p: &ParamVector) -> Vec<[f64; 2]> {
        let verts = tri.vertex_positions(p);
        self.nodes
            .iter()
            .map(|loc| match loc {
                NodeLoc::Fixed(x) => *x,
                NodeLoc::Macro { tri: l, bary } => {
                    let t = &tri.triangles[*l];
                    let mut x = [0.0; 2];
                    for k in 0..3 {
                        x[0] += bary[k] * verts[t[k]][0];
                        x[1] += bary[k] * verts[t[k]][1];
                    }
                    x
                }
            })
            .collect()
    }
}
