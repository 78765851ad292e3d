//! Lagrange function spaces on a [`Mesh`]: continuous P1 scalars (optionally mean-zero)
//! and continuous P2 vectors with homogeneous Dirichlet data.
//!
//! P2 nodes are numbered vertices first, then edge midpoints in mesh edge order. Vector
//! degrees of freedom are component-blocked: `dof = component * num_nodes + node`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::quadrature::Quadrature;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    P1Scalar,
    P1MeanZero,
    P2VectorDirichlet,
}

impl SpaceKind {
    pub fn is_p1(self) -> bool {
        matches!(self, SpaceKind::P1Scalar | SpaceKind::P1MeanZero)
    }
}

#[derive(Debug, Clone)]
pub struct FunctionSpace {
    pub kind: SpaceKind,
    pub mesh: Arc<Mesh>,
    pub dof_count: usize,
    pub dof_coords: Vec<[f64; 2]>,
    /// Dirichlet flag per dof; all false for scalar spaces.
    pub dirichlet: Vec<bool>,
}

impl FunctionSpace {
    pub fn p1(mesh: Arc<Mesh>) -> Self {
        Self::scalar(mesh, SpaceKind::P1Scalar)
    }

    pub fn p1_mean_zero(mesh: Arc<Mesh>) -> Self {
        Self::scalar(mesh, SpaceKind::P1MeanZero)
    }

    fn scalar(mesh: Arc<Mesh>, kind: SpaceKind) -> Self {
        let n = mesh.num_vertices();
        Self { kind, dof_count: n, dof_coords: mesh.vertices.clone(), dirichlet: vec![false; n], mesh }
    }

    pub fn p2_vector(mesh: Arc<Mesh>) -> Self {
        let nodes = p2_node_coords(&mesh);
        let nn = nodes.len();
        let mut boundary = vec![false; nn];
        for &v in &mesh.boundary_vertices {
            boundary[v] = true;
        }
        for e in 0..mesh.num_edges() {
            if mesh.is_boundary_edge(e) {
                boundary[mesh.num_vertices() + e] = true;
            }
        }
        let mut dof_coords = nodes.clone();
        dof_coords.extend_from_slice(&nodes);
        let mut dirichlet = boundary.clone();
        dirichlet.extend_from_slice(&boundary);
        Self { kind: SpaceKind::P2VectorDirichlet, dof_count: 2 * nn, dof_coords, dirichlet, mesh }
    }

    /// Number of scalar P2 nodes (vector spaces) or vertices (scalar spaces).
    pub fn num_nodes(&self) -> usize {
        match self.kind {
            SpaceKind::P2VectorDirichlet => self.dof_count / 2,
            _ => self.dof_count,
        }
    }

    pub fn is_mean_zero(&self) -> bool {
        self.kind == SpaceKind::P1MeanZero
    }

    pub fn same_mesh(&self, other: &FunctionSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || self.mesh.fingerprint() == other.mesh.fingerprint()
    }

    pub fn zeros(&self) -> FieldVector {
        FieldVector { kind: self.kind, coeffs: vec![0.0; self.dof_count] }
    }

    pub fn constant(&self, c: f64) -> FieldVector {
        assert!(self.kind.is_p1(), "constants are only representable in P1 spaces");
        FieldVector { kind: self.kind, coeffs: vec![c; self.dof_count] }
    }

    /// Nodal interpolant of a scalar function.
    pub fn interpolate_scalar(&self, f: impl Fn([f64; 2]) -> f64) -> FieldVector {
        assert!(self.kind.is_p1());
        FieldVector { kind: self.kind, coeffs: self.dof_coords.iter().map(|&x| f(x)).collect() }
    }

    /// Nodal interpolant of a vector function; Dirichlet dofs are set to zero.
    pub fn interpolate_vector(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> FieldVector {
        assert_eq!(self.kind, SpaceKind::P2VectorDirichlet);
        let nn = self.num_nodes();
        let mut coeffs = vec![0.0; self.dof_count];
        for i in 0..nn {
            let v = f(self.dof_coords[i]);
            coeffs[i] = v[0];
            coeffs[nn + i] = v[1];
        }
        for (c, &d) in coeffs.iter_mut().zip(&self.dirichlet) {
            if d {
                *c = 0.0;
            }
        }
        FieldVector { kind: self.kind, coeffs }
    }

    pub fn check(&self, field: &FieldVector) -> Result<()> {
        let compatible = field.kind == self.kind
            || (field.kind.is_p1() && self.kind.is_p1());
        if !compatible {
            return Err(Error::SpaceMismatch(format!("field of kind {:?} used with space {:?}", field.kind, self.kind)));
        }
        if field.coeffs.len() != self.dof_count {
            return Err(Error::DimensionMismatch { expected: self.dof_count, got: field.coeffs.len() });
        }
        Ok(())
    }
}

/// Coefficient vector of one finite element function.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    pub kind: SpaceKind,
    pub coeffs: Vec<f64>,
}

impl FieldVector {
    pub fn new(kind: SpaceKind, coeffs: Vec<f64>) -> Self {
        Self { kind, coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `a * self + b * other`
    pub fn combine(&self, a: f64, other: &FieldVector, b: f64) -> FieldVector {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        FieldVector {
            kind: self.kind,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> FieldVector {
        FieldVector { kind: self.kind, coeffs: self.coeffs.iter().map(|x| a * x).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn with_kind(mut self, kind: SpaceKind) -> FieldVector {
        self.kind = kind;
        self
    }
}

/// Per-triangle affine geometry.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub area: f64,
    pub vertices: [[f64; 2]; 3],
    /// Constant gradients of the barycentric coordinates.
    pub grad_lambda: [[f64; 2]; 3],
}

impl ElementGeometry {
    pub fn new(mesh: &Mesh, t: usize) -> Self {
        let [a, b, c] = mesh.triangles[t];
        let p = [mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]];
        let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let inv = 1.0 / det;
        let grad_lambda = [
            [(p[1][1] - p[2][1]) * inv, (p[2][0] - p[1][0]) * inv],
            [(p[2][1] - p[0][1]) * inv, (p[0][0] - p[2][0]) * inv],
            [(p[0][1] - p[1][1]) * inv, (p[1][0] - p[0][0]) * inv],
        ];
        Self { area: 0.5 * det, vertices: p, grad_lambda }
    }

    pub fn point(&self, l: [f64; 3]) -> [f64; 2] {
        let p = &self.vertices;
        [
            l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
            l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
        ]
    }

    /// Gradients of the six P2 basis functions at barycentric point `l`.
    pub fn p2_gradients(&self, l: [f64; 3]) -> [[f64; 2]; 6] {
        let g = &self.grad_lambda;
        let mut out = [[0.0; 2]; 6];
        for i in 0..3 {
            let s = 4.0 * l[i] - 1.0;
            out[i] = [s * g[i][0], s * g[i][1]];
        }
        for (k, (i, j)) in [(1, 2), (2, 0), (0, 1)].into_iter().enumerate() {
            out[3 + k] = [
                4.0 * (l[i] * g[j][0] + l[j] * g[i][0]),
                4.0 * (l[i] * g[j][1] + l[j] * g[i][1]),
            ];
        }
        out
    }
}

/// Values of the six P2 basis functions (vertices, then midsides opposite each vertex).
pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
        4.0 * l[0] * l[1],
    ]
}

pub fn p1_dofs(mesh: &Mesh, t: usize) -> [usize; 3] {
    mesh.triangles[t]
}

pub fn p2_nodes(mesh: &Mesh, t: usize) -> [usize; 6] {
    let [a, b, c] = mesh.triangles[t];
    let [e0, e1, e2] = mesh.triangle_edges[t];
    let nv = mesh.num_vertices();
    [a, b, c, nv + e0, nv + e1, nv + e2]
}

pub fn p2_node_coords(mesh: &Mesh) -> Vec<[f64; 2]> {
    let mut nodes = mesh.vertices.clone();
    nodes.extend(mesh.edges.iter().map(|&[a, b]| {
        let (p, q) = (mesh.vertices[a], mesh.vertices[b]);
        [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
    }));
    nodes
}

/// Tabulated reference data for one quadrature rule.
#[derive(Debug, Clone)]
pub struct ReferenceTables {
    pub quad: Quadrature,
    pub p2: Vec<[f64; 6]>,
}

impl ReferenceTables {
    pub fn new(quad: Quadrature) -> Self {
        let p2 = quad.points.iter().map(|&l| p2_values(l)).collect();
        Self { quad, p2 }
    }
}

impl Default for ReferenceTables {
    fn default() -> Self {
        Self::new(Quadrature::degree6())
    }
}

/// Evaluates a P1 field and its gradient inside triangle `t` at barycentric point `l`.
pub fn eval_p1(mesh: &Mesh, geo: &ElementGeometry, t: usize, coeffs: &[f64], l: [f64; 3]) -> (f64, [f64; 2]) {
    let d = p1_dofs(mesh, t);
    let mut v = 0.0;
    let mut g = [0.0; 2];
    for i in 0..3 {
        let c = coeffs[d[i]];
        v += c * l[i];
        g[0] += c * geo.grad_lambda[i][0];
        g[1] += c * geo.grad_lambda[i][1];
    }
    (v, g)
}

/// Evaluates a P2 vector field and its Jacobian `J[c][d] = d u_c / d x_d`.
pub fn eval_p2_vector(
    mesh: &Mesh,
    geo: &ElementGeometry,
    t: usize,
    coeffs: &[f64],
    l: [f64; 3],
) -> ([f64; 2], [[f64; 2]; 2]) {
    let nodes = p2_nodes(mesh, t);
    let nn = coeffs.len() / 2;
    let vals = p2_values(l);
    let grads = geo.p2_gradients(l);
    let mut u = [0.0; 2];
    let mut j = [[0.0; 2]; 2];
    for a in 0..6 {
        for c in 0..2 {
            let k = coeffs[c * nn + nodes[a]];
            u[c] += k * vals[a];
            j[c][0] += k * grads[a][0];
            j[c][1] += k * grads[a][1];
        }
    }
    (u, j)
}
