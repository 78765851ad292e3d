//! Ritz and Stokes projections, the discrete Laplacian and the discrete negative norm.
//!
//! A [`ProjectionContext`] owns the three function spaces on one mesh together with the
//! assembled matrices and factorizations that every projection and diagnostic reuses.

use std::sync::Arc;

use crate::assembly::{
    assemble_divergence, assemble_mass, assemble_stiffness, load_gradient, load_scalar, load_stokes_momentum,
};
use crate::error::{Error, Result};
use crate::linsolve::{ConstantModeLu, SpdFactor};
use crate::mesh::Mesh;
use crate::space::{FieldVector, FunctionSpace, SpaceKind};
use crate::sparse::{SparseMatrix, TripletBuilder};

pub struct ProjectionContext {
    pub mesh: Arc<Mesh>,
    /// P1 space for the phase field and chemical potential.
    pub phase: FunctionSpace,
    pub pressure: FunctionSpace,
    pub velocity: FunctionSpace,
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
    pub vel_mass: SparseMatrix,
    pub vel_stiffness: SparseMatrix,
    /// Rows are pressure dofs, columns velocity dofs.
    pub divergence: SparseMatrix,
    /// `m_i = (1, xi_i)`, so that `m . v` is the integral of a P1 field.
    pub basis_integrals: Vec<f64>,
    pub area: f64,
    pub eta: f64,
    fingerprint: u64,
    mass_factor: SpdFactor,
    ritz: ConstantModeLu,
    stokes: ConstantModeLu,
}

impl std::fmt::Debug for ProjectionContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProjectionContext")
            .field("vertices", &self.mesh.num_vertices())
            .field("triangles", &self.mesh.num_triangles())
            .field("eta", &self.eta)
            .finish_non_exhaustive()
    }
}

impl ProjectionContext {
    pub fn new(mesh: Arc<Mesh>, eta: f64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::InvalidInput(format!("eta must be positive, got {eta}")));
        }
        let phase = FunctionSpace::p1(mesh.clone());
        let pressure = FunctionSpace::p1_mean_zero(mesh.clone());
        let velocity = FunctionSpace::p2_vector(mesh.clone());
        let mass = assemble_mass(&phase);
        let stiffness = assemble_stiffness(&phase);
        let vel_mass = assemble_mass(&velocity);
        let vel_stiffness = assemble_stiffness(&velocity);
        let divergence = assemble_divergence(&velocity, &pressure)?;
        let basis_integrals = mass.row_sums();
        let area = mesh.total_area();

        let mass_factor = SpdFactor::new(&mass)?;
        let n1 = phase.dof_count;
        let nv = velocity.dof_count;
        let mut ritz = ConstantModeLu::new(0..n1, basis_integrals.clone())?;
        ritz.factor(&stiffness)?;
        let mut stokes = ConstantModeLu::new(nv..nv + n1, basis_integrals.clone())?;
        stokes.factor(&stokes_matrix(&vel_stiffness.scaled(eta), &divergence, &velocity.dirichlet))?;

        Ok(Self {
            fingerprint: mesh.fingerprint(),
            mesh,
            phase,
            pressure,
            velocity,
            mass,
            stiffness,
            vel_mass,
            vel_stiffness,
            divergence,
            basis_integrals,
            area,
            eta,
            mass_factor,
            ritz,
            stokes,
        })
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Verifies that `field` lives on this context's mesh with the expected kind.
    pub fn check_field(&self, field: &FieldVector, kind: SpaceKind) -> Result<()> {
        let space = match kind {
            SpaceKind::P1Scalar => &self.phase,
            SpaceKind::P1MeanZero => &self.pressure,
            SpaceKind::P2VectorDirichlet => &self.velocity,
        };
        space.check(field)
    }

    /// `(v, 1)` for a P1 field.
    pub fn integral(&self, v: &[f64]) -> f64 {
        dot(&self.basis_integrals, v)
    }

    /// Solves `M x = b` with the cached Cholesky factor.
    pub fn solve_mass(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.mass_factor.solve(b)
    }

    /// Solves `A x = b` subject to `(x, 1) = mean_value`. `b` must be orthogonal to the
    /// constants for the multiplier to vanish.
    pub fn solve_neumann(&self, b: &[f64], mean_value: f64) -> Result<Vec<f64>> {
        Ok(self.ritz.solve(b, mean_value)?.0)
    }

    /// Ritz projection of an analytic function with gradient `grad`.
    pub fn ritz_project(&self, phi: impl Fn([f64; 2]) -> f64, grad: impl Fn([f64; 2]) -> [f64; 2]) -> Result<FieldVector> {
        let rhs = load_gradient(&self.phase, grad);
        let mean: f64 = load_scalar(&self.phase, phi).iter().sum();
        Ok(FieldVector::new(SpaceKind::P1Scalar, self.solve_neumann(&rhs, mean)?))
    }

    /// Ritz projection of a function that is already a member of the P1 space.
    pub fn ritz_project_discrete(&self, phi: &FieldVector) -> Result<FieldVector> {
        self.phase.check(phi)?;
        let rhs = self.stiffness.mul_vec(&phi.coeffs);
        Ok(FieldVector::new(SpaceKind::P1Scalar, self.solve_neumann(&rhs, self.integral(&phi.coeffs))?))
    }

    /// Stokes projection of an analytic pair. `jac[c][d] = d u_c / d x_d` and `div` is its
    /// trace; `u` itself only enters through these derivatives.
    pub fn stokes_project(
        &self,
        jac: impl Fn([f64; 2]) -> [[f64; 2]; 2],
        p: impl Fn([f64; 2]) -> f64,
    ) -> Result<(FieldVector, FieldVector)> {
        let mom = load_stokes_momentum(&self.velocity, self.eta, &jac, p);
        let cont = load_scalar(&self.pressure, |x| {
            let j = jac(x);
            j[0][0] + j[1][1]
        });
        self.solve_stokes(mom, cont)
    }

    /// Stokes projection of a discrete pair `(u_h, p_h)`.
    pub fn stokes_project_discrete(&self, u: &FieldVector, p: &FieldVector) -> Result<(FieldVector, FieldVector)> {
        self.velocity.check(u)?;
        self.pressure.check(p)?;
        let mut mom = self.vel_stiffness.mul_vec(&u.coeffs);
        mom.iter_mut().for_each(|v| *v *= self.eta);
        self.divergence.mul_transpose_vec_add(&p.coeffs, -1.0, &mut mom);
        let cont = self.divergence.mul_vec(&u.coeffs);
        self.solve_stokes(mom, cont)
    }

    fn solve_stokes(&self, mut mom: Vec<f64>, cont: Vec<f64>) -> Result<(FieldVector, FieldVector)> {
        let nv = self.velocity.dof_count;
        let np = self.pressure.dof_count;
        for (r, &d) in mom.iter_mut().zip(&self.velocity.dirichlet) {
            if d {
                *r = 0.0;
            }
        }
        // The continuity rows only see compatible data up to the constant mode, which the
        // multiplier absorbs.
        let mut rhs = mom;
        rhs.extend_from_slice(&cont);
        let (x, _) = self.stokes.solve(&rhs, 0.0)?;
        let u = FieldVector::new(SpaceKind::P2VectorDirichlet, x[..nv].to_vec());
        let p = FieldVector::new(SpaceKind::P1MeanZero, x[nv..nv + np].to_vec());
        Ok((u, p))
    }

    /// `Delta_h v`, defined by `(Delta_h v, xi) = -a(v, xi)`. The result has zero mean.
    pub fn discrete_laplacian(&self, v: &FieldVector) -> Result<FieldVector> {
        self.phase.check(v)?;
        let mut rhs = self.stiffness.mul_vec(&v.coeffs);
        rhs.iter_mut().for_each(|r| *r = -*r);
        Ok(FieldVector::new(SpaceKind::P1MeanZero, self.solve_mass(&rhs)?))
    }

    fn require_mean_zero(&self, v: &FieldVector) -> Result<()> {
        self.phase.check(v)?;
        let mean = self.integral(&v.coeffs);
        if mean.abs() > 1e-10 * self.area * v.max_abs().max(1.0) {
            return Err(Error::NotMeanZero { mean });
        }
        Ok(())
    }

    /// `T_h(zeta)`: the mean-zero solution of `a(T_h zeta, xi) = (zeta, xi)`.
    pub fn t_operator(&self, zeta: &FieldVector) -> Result<FieldVector> {
        self.require_mean_zero(zeta)?;
        let rhs = self.mass.mul_vec(&zeta.coeffs);
        Ok(FieldVector::new(SpaceKind::P1MeanZero, self.solve_neumann(&rhs, 0.0)?))
    }

    /// `||v||_{-1,h} = sqrt((T_h v, v))` for mean-zero `v`.
    pub fn minus_one_norm(&self, v: &FieldVector) -> Result<f64> {
        let t = self.t_operator(v)?;
        Ok(self.mass.bilinear(&t.coeffs, &v.coeffs).max(0.0).sqrt())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Stokes saddle matrix `[[V, -C^T], [C, 0]]` with identity rows and zeroed columns for
/// Dirichlet velocity dofs. The zero-mean pressure border is handled by the solver.
fn stokes_matrix(vel_block: &SparseMatrix, div: &SparseMatrix, dirichlet: &[bool]) -> SparseMatrix {
    let nv = vel_block.nrows();
    let np = div.nrows();
    let n = nv + np;
    let mut b = TripletBuilder::with_capacity(n, n, vel_block.nnz() + 2 * div.nnz() + nv);
    b.push_block_filtered(0, 0, vel_block, 1.0, |r, c| !dirichlet[r] && !dirichlet[c]);
    for (i, &d) in dirichlet.iter().enumerate() {
        if d {
            b.push(i, i, 1.0);
        }
    }
    b.push_block_transposed_filtered(0, nv, div, -1.0, |r, _| !dirichlet[r]);
    b.push_block_filtered(nv, 0, div, 1.0, |_, c| !dirichlet[c]);
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{scalar_error, vector_error};
    use std::f64::consts::PI;

    fn ctx(n: usize) -> ProjectionContext {
        ProjectionContext::new(Arc::new(Mesh::unit_square(n).unwrap()), 1.0).unwrap()
    }

    #[test]
    fn ritz_reproduces_members_and_constants() {
        let c = ctx(6);
        let v = c.phase.interpolate_scalar(|x| (3.0 * x[0]).sin() + x[1] * x[1]);
        let r = c.ritz_project_discrete(&v).unwrap();
        for (a, b) in r.coeffs.iter().zip(&v.coeffs) {
            assert!((a - b).abs() < 1e-11);
        }
        let k = c.ritz_project(|_| 2.5, |_| [0.0, 0.0]).unwrap();
        assert!(k.coeffs.iter().all(|v| (v - 2.5).abs() < 1e-12));
        // a linear function is a member of P1
        let l = c.ritz_project(|x| 2.0 * x[0] - x[1], |_| [2.0, -1.0]).unwrap();
        for (v, x) in l.coeffs.iter().zip(&c.phase.dof_coords) {
            assert!((v - (2.0 * x[0] - x[1])).abs() < 1e-11);
        }
    }

    #[test]
    fn ritz_h1_error_rate_is_one() {
        let f = |x: [f64; 2]| (PI * x[0]).cos() * (PI * x[1]).cos();
        let g = |x: [f64; 2]| [-PI * (PI * x[0]).sin() * (PI * x[1]).cos(), -PI * (PI * x[0]).cos() * (PI * x[1]).sin()];
        let errs: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&n| {
                let c = ctx(n);
                let r = c.ritz_project(f, g).unwrap();
                scalar_error(&c, &r.coeffs, f, g).1
            })
            .collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((rate - 1.0).abs() < 0.1, "rate {rate}");
        }
    }

    #[test]
    fn stokes_zero_and_discrete_reproduction() {
        let c = ctx(4);
        let (u, p) = c.stokes_project(|_| [[0.0; 2]; 2], |_| 0.0).unwrap();
        assert!(u.max_abs() < 1e-14 && p.max_abs() < 1e-14);

        // A discrete pair with c(u, q) = 0 for all q: take the Stokes projection of a
        // smooth pair, then project that again.
        let (u1, p1) = c.stokes_project(stream_jacobian, |x| pressure(x)).unwrap();
        let (u2, p2) = c.stokes_project_discrete(&u1, &p1).unwrap();
        let du = u1.combine(1.0, &u2, -1.0).max_abs();
        let dp = p1.combine(1.0, &p2, -1.0).max_abs();
        assert!(du < 1e-10 && dp < 1e-10, "{du} {dp}");
        let div = c.divergence.mul_vec(&u1.coeffs);
        assert!(div.iter().all(|v| v.abs() < 1e-12));
        assert!(c.integral(&p1.coeffs).abs() < 1e-12);
    }

    fn stream_velocity(x: [f64; 2]) -> [f64; 2] {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        // psi = sin^2(pi x) sin^2(pi y), u = (psi_y, -psi_x)
        [2.0 * PI * sx * sx * sy * cy, -2.0 * PI * sx * cx * sy * sy]
    }

    fn stream_jacobian(x: [f64; 2]) -> [[f64; 2]; 2] {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        let p2 = 2.0 * PI * PI;
        [
            [p2 * 2.0 * sx * cx * sy * cy, p2 * sx * sx * (cy * cy - sy * sy)],
            [-p2 * (cx * cx - sx * sx) * sy * sy, -p2 * 2.0 * sx * cx * sy * cy],
        ]
    }

    fn pressure(x: [f64; 2]) -> f64 {
        (PI * x[0]).sin() * (PI * x[1]).sin() - 4.0 / (PI * PI)
    }

    #[test]
    fn stokes_l2_error_is_second_order() {
        let errs: Vec<(f64, f64)> = [8, 16, 32]
            .iter()
            .map(|&n| {
                let c = ctx(n);
                let (u, _) = c.stokes_project(stream_jacobian, pressure).unwrap();
                vector_error(&c, &u.coeffs, stream_velocity, stream_jacobian)
            })
            .collect();
        for w in errs.windows(2) {
            let rate = (w[0].0 / w[1].0).log2();
            assert!(rate > 1.8, "L2 rate {rate}");
            let h1 = (w[0].1 / w[1].1).log2();
            assert!(h1 > 0.9, "H1 rate {h1}");
        }
    }

    #[test]
    fn laplacian_identities() {
        let c = ctx(8);
        let k = c.discrete_laplacian(&c.phase.constant(3.0)).unwrap();
        assert!(k.max_abs() < 1e-12);
        let v = c.phase.interpolate_scalar(|x| (2.0 * x[0]).sin() * x[1] + x[0]);
        let w = c.phase.interpolate_scalar(|x| x[0] * x[1]);
        let lv = c.discrete_laplacian(&v).unwrap();
        assert!(c.integral(&lv.coeffs).abs() < 1e-12);
        let lhs = c.mass.bilinear(&lv.coeffs, &lv.coeffs);
        let rhs = -c.stiffness.bilinear(&v.coeffs, &lv.coeffs);
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs());
        let lin = c.discrete_laplacian(&v.combine(2.0, &w, -0.5)).unwrap();
        let lw = c.discrete_laplacian(&w).unwrap();
        let expect = lv.combine(2.0, &lw, -0.5);
        assert!(lin.combine(1.0, &expect, -1.0).max_abs() < 1e-10 * expect.max_abs());
    }

    #[test]
    fn laplacian_of_quadratic_approaches_four_inside() {
        let c = ctx(64);
        let v = c.phase.interpolate_scalar(|x| x[0] * x[0] + x[1] * x[1]);
        let l = c.discrete_laplacian(&v).unwrap();
        let interior: Vec<f64> = c
            .phase
            .dof_coords
            .iter()
            .zip(&l.coeffs)
            .filter(|(x, _)| x[0] > 0.25 && x[0] < 0.75 && x[1] > 0.25 && x[1] < 0.75)
            .map(|(_, v)| *v)
            .collect();
        let avg = interior.iter().sum::<f64>() / interior.len() as f64;
        assert!((avg - 4.0).abs() < 0.5, "{avg}");
    }

    #[test]
    fn minus_one_norm_properties() {
        let c = ctx(8);
        assert_eq!(c.minus_one_norm(&c.phase.zeros()).unwrap(), 0.0);
        assert!(matches!(c.minus_one_norm(&c.phase.constant(1.0)), Err(Error::NotMeanZero { .. })));
        let mean_free = |f: FieldVector| {
            let m = c.integral(&f.coeffs) / c.area;
            FieldVector::new(f.kind, f.coeffs.iter().map(|x| x - m).collect())
        };
        let v = mean_free(c.phase.interpolate_scalar(|x| (5.0 * x[0]).sin() + x[1] * x[1] * x[0]));
        let w = mean_free(c.phase.interpolate_scalar(|x| (3.0 * x[1]).cos() * x[0]));
        let n = c.minus_one_norm(&v).unwrap();
        assert!(n > 0.0);
        let n3 = c.minus_one_norm(&v.scaled(-3.0)).unwrap();
        assert!((n3 - 3.0 * n).abs() < 1e-10 * n3);
        let pair = c.mass.bilinear(&v.coeffs, &w.coeffs).abs();
        let grad_w = c.stiffness.bilinear(&w.coeffs, &w.coeffs).sqrt();
        assert!(pair <= n * grad_w * (1.0 + 1e-12));
    }
}
