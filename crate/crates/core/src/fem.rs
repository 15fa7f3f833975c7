//! Structured Q1 meshes on periodic strips, quadrature and constrained DOF maps.

use serde::{Deserialize, Serialize};

use crate::linalg::{CsrMatrix, TripletBuilder};

/// Rectangular mesh of `[0, lx) × [0, 1]`, periodic in x.
///
/// Node (i, j) with i ∈ 0..nx, j ∈ 0..=ny has index `j * nx + i`; the column x = lx is
/// identified with x = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StripMesh {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
}

impl StripMesh {
    pub fn new(nx: usize, ny: usize, lx: f64) -> Self {
        assert!(nx >= 2 && ny >= 1 && lx > 0.0, "degenerate strip mesh");
        StripMesh { nx, ny, lx }
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.nx + (i % self.nx)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.lx * i as f64 / self.nx as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 / self.ny as f64
    }

    pub fn node_coords(&self, n: usize) -> (f64, f64) {
        (self.x(n % self.nx), self.y(n / self.nx))
    }

    /// Counter-clockwise corner nodes of element (ei, ej).
    pub fn element_nodes(&self, ei: usize, ej: usize) -> [usize; 4] {
        [self.node(ei, ej), self.node(ei + 1, ej), self.node(ei + 1, ej + 1), self.node(ei, ej + 1)]
    }

    pub fn elements(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ny).flat_map(move |ej| (0..self.nx).map(move |ei| (ei, ej)))
    }

    /// Quadrature points of element (ei, ej) for an `order`-point Gauss rule per direction.
    pub fn quad_points(&self, ei: usize, ej: usize, order: usize) -> Vec<QuadPoint> {
        let (pts, wts) = gauss_rule(order);
        let (hx, hy) = (self.hx(), self.hy());
        let (x0, y0) = (hx * ei as f64, hy * ej as f64);
        let mut out = Vec::with_capacity(order * order);
        for (a, &s) in pts.iter().enumerate() {
            for (b, &r) in pts.iter().enumerate() {
                out.push(QuadPoint::new(x0, y0, hx, hy, s, r, wts[a] * wts[b] * hx * hy));
            }
        }
        out
    }

    /// The element-centre point (one-point rule, weight = element area).
    pub fn center_point(&self, ei: usize, ej: usize) -> QuadPoint {
        let (hx, hy) = (self.hx(), self.hy());
        QuadPoint::new(hx * ei as f64, hy * ej as f64, hx, hy, 0.5, 0.5, hx * hy)
    }

    /// Locates the element containing (x, y) and the local coordinates inside it.
    pub fn locate(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let xs = x.rem_euclid(self.lx) / self.hx();
        let ei = (xs.floor() as usize).min(self.nx - 1);
        let ys = (y.clamp(0.0, 1.0)) / self.hy();
        let ej = (ys.floor() as usize).min(self.ny - 1);
        (ei, ej, xs - ei as f64, ys - ej as f64)
    }

    /// Bilinear interpolation of a nodal field.
    pub fn interpolate(&self, field: &[f64], x: f64, y: f64) -> f64 {
        let (ei, ej, s, r) = self.locate(x, y);
        let n = self.element_nodes(ei, ej);
        let w = shape(s, r);
        (0..4).map(|k| w[k] * field[n[k]]).sum()
    }
}

fn shape(s: f64, r: f64) -> [f64; 4] {
    [(1.0 - s) * (1.0 - r), s * (1.0 - r), s * r, (1.0 - s) * r]
}

/// Gauss–Legendre points and weights on [0, 1].
pub fn gauss_rule(order: usize) -> (Vec<f64>, Vec<f64>) {
    match order {
        1 => (vec![0.5], vec![1.0]),
        2 => {
            let d = 0.5 / 3f64.sqrt();
            (vec![0.5 - d, 0.5 + d], vec![0.5, 0.5])
        }
        3 => {
            let d = 0.5 * (0.6f64).sqrt();
            (vec![0.5 - d, 0.5, 0.5 + d], vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
        }
        _ => panic!("unsupported Gauss order {order}"),
    }
}

/// Bilinear shape functions and their physical gradients at one point.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
    pub n: [f64; 4],
    pub dx: [f64; 4],
    pub dy: [f64; 4],
}

impl QuadPoint {
    fn new(x0: f64, y0: f64, hx: f64, hy: f64, s: f64, r: f64, weight: f64) -> Self {
        QuadPoint {
            x: x0 + s * hx,
            y: y0 + r * hy,
            weight,
            n: shape(s, r),
            dx: [-(1.0 - r) / hx, (1.0 - r) / hx, r / hx, -r / hx],
            dy: [-(1.0 - s) / hy, -s / hy, s / hy, (1.0 - s) / hy],
        }
    }

    /// (value, ∂x, ∂y) of a nodal field given the element's node list.
    pub fn eval(&self, nodes: &[usize; 4], field: &[f64]) -> (f64, f64, f64) {
        let mut v = (0.0, 0.0, 0.0);
        for k in 0..4 {
            let f = field[nodes[k]];
            v.0 += self.n[k] * f;
            v.1 += self.dx[k] * f;
            v.2 += self.dy[k] * f;
        }
        v
    }
}

/// Role of one full degree of freedom in the reduced system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dof {
    /// Homogeneous Dirichlet value.
    Fixed,
    Free(usize),
    /// value = coef × reduced unknown.
    Tied(usize, f64),
}

impl Dof {
    fn target(self) -> Option<(usize, f64)> {
        match self {
            Dof::Fixed => None,
            Dof::Free(k) => Some((k, 1.0)),
            Dof::Tied(k, c) => Some((k, c)),
        }
    }
}

/// Map from full DOFs (component-major: `comp * n_nodes + node`) to reduced unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    pub n_nodes: usize,
    pub n_comp: usize,
    dofs: Vec<Dof>,
    n_free: usize,
}

impl DofMap {
    /// `classify(comp, node)` returns `None` for a fixed DOF, `Some(None)` for a free one and
    /// `Some(Some((master_comp, coef)))` for a DOF tied to another component at the same node.
    pub fn build(n_nodes: usize, n_comp: usize, classify: impl Fn(usize, usize) -> Option<Option<(usize, f64)>>) -> Self {
        let mut dofs = vec![Dof::Fixed; n_nodes * n_comp];
        let mut n_free = 0;
        // masters first so ties can refer to them
        for node in 0..n_nodes {
            for c in 0..n_comp {
                if let Some(None) = classify(c, node) {
                    dofs[c * n_nodes + node] = Dof::Free(n_free);
                    n_free += 1;
                }
            }
        }
        for c in 0..n_comp {
            for node in 0..n_nodes {
                if let Some(Some((mc, coef))) = classify(c, node) {
                    dofs[c * n_nodes + node] = match dofs[mc * n_nodes + node] {
                        Dof::Free(k) => Dof::Tied(k, coef),
                        _ => panic!("tied DOF must refer to a free master"),
                    };
                }
            }
        }
        DofMap { n_nodes, n_comp, dofs, n_free }
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn dof(&self, comp: usize, node: usize) -> Dof {
        self.dofs[comp * self.n_nodes + node]
    }

    /// Full nodal vector (component-major) from reduced unknowns.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.dofs.iter().map(|d| d.target().map_or(0.0, |(k, c)| c * x[k])).collect()
    }

    /// Tᵀ v: reduce a load vector given per full DOF.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.n_free];
        for (d, v) in self.dofs.iter().zip(full) {
            if let Some((k, c)) = d.target() {
                r[k] += c * v;
            }
        }
        r
    }
}

/// Scatters local element matrices into Tᵀ K T.
pub struct ReducedAssembler<'a> {
    map: &'a DofMap,
    triplets: TripletBuilder,
}

impl<'a> ReducedAssembler<'a> {
    pub fn new(map: &'a DofMap) -> Self {
        ReducedAssembler { map, triplets: TripletBuilder::new(map.n_free()) }
    }

    /// `full` lists full DOF indices for the rows/cols of `local` (row-major, len² entries).
    pub fn add_local(&mut self, full: &[usize], local: &[f64]) {
        let m = full.len();
        for a in 0..m {
            let Some((ra, ca)) = self.map.dofs[full[a]].target() else { continue };
            for b in 0..m {
                let Some((rb, cb)) = self.map.dofs[full[b]].target() else { continue };
                self.triplets.add(ra, rb, ca * cb * local[a * m + b]);
            }
        }
    }

    pub fn finish(self) -> CsrMatrix {
        self.triplets.build()
    }
}

/// Full stiffness for unconstrained DOFs (every node free); used for energy evaluations.
pub fn full_dof_indices(mesh: &StripMesh, nodes: &[usize; 4], n_comp: usize) -> Vec<usize> {
    let nn = mesh.n_nodes();
    (0..n_comp).flat_map(|c| nodes.iter().map(move |&n| c * nn + n)).collect()
}
