//! Structured triangulations of axis-aligned rectangles and uniform red refinement.
//!
//! Triangles are stored counter-clockwise. Edges are keyed by sorted vertex pairs, and
//! each triangle records the global edge opposite each of its local vertices, which is
//! what the quadratic element needs for its midside nodes.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Axis-aligned rectangle `(x0, y0, x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn unit() -> Self {
        Self::new(0.0, 0.0, 1.0, 1.0)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn on_boundary(&self, p: [f64; 2]) -> bool {
        let tol = 1e-12 * (self.x1 - self.x0).abs().max((self.y1 - self.y0).abs());
        (p[0] - self.x0).abs() <= tol
            || (p[0] - self.x1).abs() <= tol
            || (p[1] - self.y0).abs() <= tol
            || (p[1] - self.y1).abs() <= tol
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Sorted vertex pairs, one per unique edge.
    pub edges: Vec<[usize; 2]>,
    /// `triangle_edges[t][k]` is the edge opposite local vertex `k`.
    pub triangle_edges: Vec<[usize; 3]>,
    /// Sorted, deduplicated vertex indices on the rectangle boundary.
    pub boundary_vertices: Vec<usize>,
    /// Boundary edges oriented so the domain lies on the left.
    pub boundary_edges: Vec<[usize; 2]>,
    pub h_max: f64,
    pub rect: Rect,
}

impl Mesh {
    /// Uniform `nx x ny` grid of cells, each split along its lower-left to upper-right diagonal.
    pub fn structured(nx: usize, ny: usize, rect: Rect) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidMesh(format!("cell counts must be positive, got {nx} x {ny}")));
        }
        if !(rect.x1 > rect.x0) || !(rect.y1 > rect.y0) {
            return Err(Error::InvalidMesh(format!("degenerate rectangle {rect:?}")));
        }
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            let y = if j == ny { rect.y1 } else { rect.y0 + (rect.y1 - rect.y0) * j as f64 / ny as f64 };
            for i in 0..=nx {
                let x = if i == nx { rect.x1 } else { rect.x0 + (rect.x1 - rect.x0) * i as f64 / nx as f64 };
                vertices.push([x, y]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        Ok(Self::from_parts(vertices, triangles, rect))
    }

    pub fn unit_square(n: usize) -> Result<Mesh> {
        Self::structured(n, n, Rect::unit())
    }

    fn from_parts(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>, rect: Rect) -> Mesh {
        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * triangles.len() / 2 + 8);
        let mut edges = Vec::new();
        let mut edge_use = Vec::new();
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for tri in &triangles {
            let mut te = [0usize; 3];
            for k in 0..3 {
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                let key = (a.min(b), a.max(b));
                let e = *edge_index.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edge_use.push(0u32);
                    edges.len() - 1
                });
                edge_use[e] += 1;
                te[k] = e;
            }
            triangle_edges.push(te);
        }

        // Edges used once are on the boundary; keep the orientation of the owning triangle.
        let mut boundary_edges = Vec::new();
        for (tri, te) in triangles.iter().zip(&triangle_edges) {
            for k in 0..3 {
                if edge_use[te[k]] == 1 {
                    boundary_edges.push([tri[(k + 1) % 3], tri[(k + 2) % 3]]);
                }
            }
        }
        let boundary_vertices: Vec<usize> =
            (0..vertices.len()).filter(|&v| rect.on_boundary(vertices[v])).collect();

        let h_max = edges
            .iter()
            .map(|&[a, b]| dist(vertices[a], vertices[b]))
            .fold(0.0, f64::max);

        Mesh { vertices, triangles, edges, triangle_edges, boundary_vertices, boundary_edges, h_max, rect }
    }

    /// Red refinement: every triangle is split into four through its edge midpoints.
    pub fn refine_uniform(&self) -> Mesh {
        let nv = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend(self.edges.iter().map(|&[a, b]| {
            let (p, q) = (self.vertices[a], self.vertices[b]);
            [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
        }));
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for (tri, te) in self.triangles.iter().zip(&self.triangle_edges) {
            // midpoint opposite local vertex k
            let m = [nv + te[0], nv + te[1], nv + te[2]];
            triangles.push([tri[0], m[2], m[1]]);
            triangles.push([m[2], tri[1], m[0]]);
            triangles.push([m[1], m[0], tri[2]]);
            triangles.push([m[0], m[1], m[2]]);
        }
        Self::from_parts(vertices, triangles, self.rect)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    /// Longest edge of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        dist(p, q).max(dist(q, r)).max(dist(r, p))
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        let [a, b] = self.edges[e];
        let (p, q) = (self.vertices[a], self.vertices[b]);
        self.rect.on_boundary(p)
            && self.rect.on_boundary(q)
            && self.rect.on_boundary([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])])
    }

    /// Cheap structural identity used to check that cached operators belong to this mesh.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        mix(self.vertices.len() as u64);
        mix(self.triangles.len() as u64);
        for v in &self.vertices {
            mix(v[0].to_bits());
            mix(v[1].to_bits());
        }
        for t in &self.triangles {
            mix(t[0] as u64);
            mix(t[1] as u64);
            mix(t[2] as u64);
        }
        h
    }
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn single_cell() {
        let m = Mesh::unit_square(1).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_triangles(), 2);
        assert!((m.h_max - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn counts_and_area() {
        let m = Mesh::unit_square(2).unwrap();
        assert_eq!(m.num_vertices(), 9);
        assert_eq!(m.num_triangles(), 8);
        let m = Mesh::unit_square(4).unwrap();
        assert!((m.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Mesh::structured(0, 3, Rect::unit()).is_err());
        assert!(Mesh::structured(2, 2, Rect::new(0.0, 0.0, 0.0, 1.0)).is_err());
        assert!(Mesh::structured(2, 2, Rect::new(1.0, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn refine_counts() {
        let m = Mesh::unit_square(1).unwrap().refine_uniform();
        assert_eq!(m.num_triangles(), 8);
        assert_eq!(m.num_vertices(), 9);
    }

    fn check_invariants(m: &Mesh) {
        for t in 0..m.num_triangles() {
            assert!(m.signed_area(t) > 0.0, "triangle {t} not positively oriented");
        }
        assert!((m.total_area() - m.rect.area()).abs() <= 1e-12 * m.rect.area());
        // conformity: each interior directed edge appears once in each direction
        let mut directed = HashSet::new();
        for tri in &m.triangles {
            for k in 0..3 {
                assert!(directed.insert((tri[k], tri[(k + 1) % 3])), "duplicate directed edge");
            }
        }
        let mut boundary_count = 0;
        for &(a, b) in &directed {
            if !directed.contains(&(b, a)) {
                boundary_count += 1;
            }
        }
        assert_eq!(boundary_count, m.boundary_edges.len());
        // Euler relation for a simply connected domain
        let (v, e, t) = (m.num_vertices() as i64, m.num_edges() as i64, m.num_triangles() as i64);
        assert_eq!(v - e + t, 1);
        // boundary vertices are exactly those on the rectangle boundary
        let expected: Vec<usize> = (0..m.num_vertices())
            .filter(|&i| {
                let p = m.vertices[i];
                p[0] == m.rect.x0 || p[0] == m.rect.x1 || p[1] == m.rect.y0 || p[1] == m.rect.y1
            })
            .collect();
        assert_eq!(expected, m.boundary_vertices);
        let dmax = (0..m.num_triangles()).map(|t| m.diameter(t)).fold(0.0, f64::max);
        let dmin = (0..m.num_triangles()).map(|t| m.diameter(t)).fold(f64::INFINITY, f64::min);
        assert!(dmax / dmin <= 2.0);
    }

    #[test]
    fn invariants_through_refinement() {
        let mut m = Mesh::structured(3, 2, Rect::new(-1.0, 0.5, 2.0, 1.5)).unwrap();
        for _ in 0..3 {
            check_invariants(&m);
            let r = m.refine_uniform();
            assert!((r.h_max - m.h_max / 2.0).abs() < 1e-14);
            assert!((r.total_area() - m.total_area()).abs() < 1e-12);
            m = r;
        }
    }

    #[test]
    fn refined_matches_structured_counts() {
        let a = Mesh::unit_square(2).unwrap().refine_uniform();
        let b = Mesh::unit_square(4).unwrap();
        assert_eq!(a.num_vertices(), b.num_vertices());
        assert_eq!(a.num_edges(), b.num_edges());
        assert_eq!(a.boundary_edges.len(), 16);
    }
}
