//! Global assembly of the bilinear and frozen-coefficient trilinear forms.
//!
//! Every form is integrated with the degree-6 rule, which is exact for all integrands
//! that arise with P1 phase/pressure and P2 velocity fields (the cubic nonlinearity
//! against a P1 test function is degree 4; the convection forms are degree 5).

use crate::error::{Error, Result};
use crate::sparse::{SparseMatrix, TripletBuilder};
use crate::space::{p1_dofs, p2_nodes, ElementGeometry, FieldVector, FunctionSpace, ReferenceTables, SpaceKind};

/// `chi(a, b) = (a^2 + b^2)/2 * (a + b)/2`
#[inline]
pub fn chi(a: f64, b: f64) -> f64 {
    0.5 * (a * a + b * b) * 0.5 * (a + b)
}

/// Partial derivative of [`chi`] with respect to its first argument.
#[inline]
pub fn chi_da(a: f64, b: f64) -> f64 {
    0.5 * a * (a + b) + 0.25 * (a * a + b * b)
}

fn require_p1(space: &FunctionSpace, what: &str) -> Result<()> {
    if !space.kind.is_p1() {
        return Err(Error::SpaceMismatch(format!("{what} requires a P1 scalar space, got {:?}", space.kind)));
    }
    Ok(())
}

fn require_vector(space: &FunctionSpace, what: &str) -> Result<()> {
    if space.kind != SpaceKind::P2VectorDirichlet {
        return Err(Error::SpaceMismatch(format!("{what} requires the P2 vector space, got {:?}", space.kind)));
    }
    Ok(())
}

fn require_same_mesh(a: &FunctionSpace, b: &FunctionSpace) -> Result<()> {
    if !a.same_mesh(b) {
        return Err(Error::SpaceMismatch("spaces live on different meshes".into()));
    }
    Ok(())
}

/// L2 Gram matrix of the space. For the vector space the two components form identical
/// diagonal blocks.
pub fn assemble_mass(space: &FunctionSpace) -> SparseMatrix {
    let mesh = &*space.mesh;
    let tab = ReferenceTables::default();
    let q = &tab.quad;
    match space.kind {
        SpaceKind::P1Scalar | SpaceKind::P1MeanZero => {
            let mut b = TripletBuilder::with_capacity(space.dof_count, space.dof_count, 9 * mesh.num_triangles());
            for t in 0..mesh.num_triangles() {
                let geo = ElementGeometry::new(mesh, t);
                let d = p1_dofs(mesh, t);
                let mut local = [[0.0; 3]; 3];
                for (l, w) in q.points.iter().zip(&q.weights) {
                    for i in 0..3 {
                        for j in 0..3 {
                            local[i][j] += w * l[i] * l[j];
                        }
                    }
                }
                for i in 0..3 {
                    for j in 0..3 {
                        b.push(d[i], d[j], geo.area * local[i][j]);
                    }
                }
            }
            b.build()
        }
        SpaceKind::P2VectorDirichlet => {
            let nn = space.num_nodes();
            let mut b = TripletBuilder::with_capacity(space.dof_count, space.dof_count, 72 * mesh.num_triangles());
            for t in 0..mesh.num_triangles() {
                let geo = ElementGeometry::new(mesh, t);
                let nodes = p2_nodes(mesh, t);
                let mut local = [[0.0; 6]; 6];
                for (n, w) in tab.p2.iter().zip(&q.weights) {
                    for i in 0..6 {
                        for j in 0..6 {
                            local[i][j] += w * n[i] * n[j];
                        }
                    }
                }
                for c in 0..2 {
                    for i in 0..6 {
                        for j in 0..6 {
                            b.push(c * nn + nodes[i], c * nn + nodes[j], geo.area * local[i][j]);
                        }
                    }
                }
            }
            b.build()
        }
    }
}

/// Gram matrix of the form `a(u, v) = (grad u, grad v)`.
pub fn assemble_stiffness(space: &FunctionSpace) -> SparseMatrix {
    let mesh = &*space.mesh;
    let tab = ReferenceTables::default();
    let q = &tab.quad;
    match space.kind {
        SpaceKind::P1Scalar | SpaceKind::P1MeanZero => {
            let mut b = TripletBuilder::with_capacity(space.dof_count, space.dof_count, 9 * mesh.num_triangles());
            for t in 0..mesh.num_triangles() {
                let geo = ElementGeometry::new(mesh, t);
                let d = p1_dofs(mesh, t);
                let g = &geo.grad_lambda;
                for i in 0..3 {
                    for j in 0..3 {
                        b.push(d[i], d[j], geo.area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]));
                    }
                }
            }
            b.build()
        }
        SpaceKind::P2VectorDirichlet => {
            let nn = space.num_nodes();
            let mut b = TripletBuilder::with_capacity(space.dof_count, space.dof_count, 72 * mesh.num_triangles());
            for t in 0..mesh.num_triangles() {
                let geo = ElementGeometry::new(mesh, t);
                let nodes = p2_nodes(mesh, t);
                let mut local = [[0.0; 6]; 6];
                for (l, w) in q.points.iter().zip(&q.weights) {
                    let gr = geo.p2_gradients(*l);
                    for i in 0..6 {
                        for j in 0..6 {
                            local[i][j] += w * (gr[i][0] * gr[j][0] + gr[i][1] * gr[j][1]);
                        }
                    }
                }
                for c in 0..2 {
                    for i in 0..6 {
                        for j in 0..6 {
                            b.push(c * nn + nodes[i], c * nn + nodes[j], geo.area * local[i][j]);
                        }
                    }
                }
            }
            b.build()
        }
    }
}

/// `C[q, v] = (div v, q)` with pressure rows and velocity columns.
pub fn assemble_divergence(vel: &FunctionSpace, pres: &FunctionSpace) -> Result<SparseMatrix> {
    require_vector(vel, "divergence")?;
    require_p1(pres, "divergence")?;
    require_same_mesh(vel, pres)?;
    let mesh = &*vel.mesh;
    let nn = vel.num_nodes();
    let q = ReferenceTables::default().quad;
    let mut b = TripletBuilder::with_capacity(pres.dof_count, vel.dof_count, 36 * mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t);
        let d = p1_dofs(mesh, t);
        let nodes = p2_nodes(mesh, t);
        // local[c][i][a] = int d_c N_a * lambda_i
        let mut local = [[[0.0; 6]; 3]; 2];
        for (l, w) in q.points.iter().zip(&q.weights) {
            let gr = geo.p2_gradients(*l);
            for c in 0..2 {
                for i in 0..3 {
                    for a in 0..6 {
                        local[c][i][a] += w * gr[a][c] * l[i];
                    }
                }
            }
        }
        for c in 0..2 {
            for i in 0..3 {
                for a in 0..6 {
                    b.push(d[i], c * nn + nodes[a], geo.area * local[c][i][a]);
                }
            }
        }
    }
    Ok(b.build())
}

/// Frozen-`psi` form `b(psi, v, nu) = (grad psi . v, nu)` with test rows `nu` and
/// velocity columns `v`.
pub fn assemble_phase_convection(psi: &FieldVector, vel: &FunctionSpace, test: &FunctionSpace) -> Result<SparseMatrix> {
    require_vector(vel, "phase convection")?;
    require_p1(test, "phase convection")?;
    require_same_mesh(vel, test)?;
    test.check(psi)?;
    let mesh = &*vel.mesh;
    let nn = vel.num_nodes();
    let tab = ReferenceTables::default();
    let q = &tab.quad;
    let mut b = TripletBuilder::with_capacity(test.dof_count, vel.dof_count, 36 * mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t);
        let d = p1_dofs(mesh, t);
        let nodes = p2_nodes(mesh, t);
        let mut grad_psi = [0.0; 2];
        for i in 0..3 {
            grad_psi[0] += psi.coeffs[d[i]] * geo.grad_lambda[i][0];
            grad_psi[1] += psi.coeffs[d[i]] * geo.grad_lambda[i][1];
        }
        let mut local = [[0.0; 6]; 3];
        for ((l, n), w) in q.points.iter().zip(&tab.p2).zip(&q.weights) {
            for i in 0..3 {
                for a in 0..6 {
                    local[i][a] += w * n[a] * l[i];
                }
            }
        }
        for c in 0..2 {
            for i in 0..3 {
                for a in 0..6 {
                    b.push(d[i], c * nn + nodes[a], geo.area * grad_psi[c] * local[i][a]);
                }
            }
        }
    }
    Ok(b.build())
}

/// Frozen-`u` skew-symmetrized convection `B(u, v, w) = 1/2 [(u.grad v, w) - (u.grad w, v)]`
/// with test rows `w` and trial columns `v`. The result is exactly antisymmetric.
pub fn assemble_skew_convection(u_tilde: &FieldVector, vel: &FunctionSpace) -> Result<SparseMatrix> {
    require_vector(vel, "skew convection")?;
    vel.check(u_tilde)?;
    let mesh = &*vel.mesh;
    let nn = vel.num_nodes();
    let tab = ReferenceTables::default();
    let q = &tab.quad;
    let mut b = TripletBuilder::with_capacity(vel.dof_count, vel.dof_count, 72 * mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t);
        let nodes = p2_nodes(mesh, t);
        let mut local = [[0.0; 6]; 6];
        for ((l, n), w) in q.points.iter().zip(&tab.p2).zip(&q.weights) {
            let gr = geo.p2_gradients(*l);
            let mut u = [0.0; 2];
            for a in 0..6 {
                u[0] += u_tilde.coeffs[nodes[a]] * n[a];
                u[1] += u_tilde.coeffs[nn + nodes[a]] * n[a];
            }
            // advective derivative of each basis function
            let mut adv = [0.0; 6];
            for a in 0..6 {
                adv[a] = u[0] * gr[a][0] + u[1] * gr[a][1];
            }
            for i in 0..6 {
                for j in (i + 1)..6 {
                    local[i][j] += w * 0.5 * (adv[j] * n[i] - adv[i] * n[j]);
                }
            }
        }
        for c in 0..2 {
            for i in 0..6 {
                for j in 0..6 {
                    let v = match i.cmp(&j) {
                        std::cmp::Ordering::Less => geo.area * local[i][j],
                        std::cmp::Ordering::Greater => -(geo.area * local[j][i]),
                        std::cmp::Ordering::Equal => 0.0,
                    };
                    b.push(c * nn + nodes[i], c * nn + nodes[j], v);
                }
            }
        }
    }
    Ok(b.build())
}

/// Residual `r_i = (chi(phi_new, phi_old), psi_i)` and its Jacobian with respect to the
/// coefficients of `phi_new`, both evaluated at quadrature points from the interpolated
/// P1 values.
pub fn assemble_chi_residual_and_jacobian(
    phi_new: &FieldVector,
    phi_old: &FieldVector,
    test: &FunctionSpace,
) -> Result<(FieldVector, SparseMatrix)> {
    assemble_pointwise_nonlinearity(phi_new, phi_old, test, chi, chi_da)
}

/// Same as [`assemble_chi_residual_and_jacobian`] for the fully implicit cubic `phi_new^3`.
pub fn assemble_cube_residual_and_jacobian(phi_new: &FieldVector, test: &FunctionSpace) -> Result<(FieldVector, SparseMatrix)> {
    assemble_pointwise_nonlinearity(phi_new, phi_new, test, |a, _| a * a * a, |a, _| 3.0 * a * a)
}

/// `(f(a, b), psi_i)` and `(df/da(a, b) phi_j, psi_i)` for P1 fields `a`, `b`.
pub fn assemble_pointwise_nonlinearity(
    phi_new: &FieldVector,
    phi_old: &FieldVector,
    test: &FunctionSpace,
    f: impl Fn(f64, f64) -> f64,
    df: impl Fn(f64, f64) -> f64,
) -> Result<(FieldVector, SparseMatrix)> {
    require_p1(test, "pointwise nonlinearity")?;
    test.check(phi_new)?;
    test.check(phi_old)?;
    let mesh = &*test.mesh;
    let q = ReferenceTables::default().quad;
    let mut residual = vec![0.0; test.dof_count];
    let mut b = TripletBuilder::with_capacity(test.dof_count, test.dof_count, 9 * mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t);
        let d = p1_dofs(mesh, t);
        let mut r_loc = [0.0; 3];
        let mut j_loc = [[0.0; 3]; 3];
        for (l, w) in q.points.iter().zip(&q.weights) {
            let mut a = 0.0;
            let mut bb = 0.0;
            for i in 0..3 {
                a += phi_new.coeffs[d[i]] * l[i];
                bb += phi_old.coeffs[d[i]] * l[i];
            }
            let x = f(a, bb);
            let dx = df(a, bb);
            for i in 0..3 {
                r_loc[i] += w * x * l[i];
                for j in 0..3 {
                    j_loc[i][j] += w * dx * l[i] * l[j];
                }
            }
        }
        for i in 0..3 {
            residual[d[i]] += geo.area * r_loc[i];
            for j in 0..3 {
                b.push(d[i], d[j], geo.area * j_loc[i][j]);
            }
        }
    }
    Ok((FieldVector::new(test.kind, residual), b.build()))
}

/// `(f, xi_i)` for a scalar function `f`.
pub fn load_scalar(space: &FunctionSpace, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    assert!(space.kind.is_p1());
    let mesh = &*space.mesh;
    let q = ReferenceTables::default().quad;
    let mut out = vec![0.0; space.dof_count];
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t);
        let d = p1_dofs(mesh, t);
        for (l, w) in q.points.iter().zip(&q.weights) {
            let fx = f(geo.point(*l));
            for i in 0..3 {
                out[d[i]] += geo.area * w * fx * l[i];
            }
        }
    }
    out
}

/// `(g, grad xi_i)` for a vector-valued `g` (typically an analytic gradient).
pub fn load_gradient(space: &FunctionSpace, g: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    assert!(space.kind.is_p1());
    let mesh = &*space.mesh;
    let q = ReferenceTables::default().quad;
    let mut out = vec![0.0; space.dof_count];
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t);
        let d = p1_dofs(mesh, t);
        for (l, w) in q.points.iter().zip(&q.weights) {
            let gx = g(geo.point(*l));
            for i in 0..3 {
                let gl = geo.grad_lambda[i];
                out[d[i]] += geo.area * w * (gx[0] * gl[0] + gx[1] * gl[1]);
            }
        }
    }
    out
}

/// `(f, v_i)` for a vector function `f` against the P2 vector basis.
pub fn load_vector(space: &FunctionSpace, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
    assert_eq!(space.kind, SpaceKind::P2VectorDirichlet);
    let mesh = &*space.mesh;
    let nn = space.num_nodes();
    let tab = ReferenceTables::default();
    let q = &tab.quad;
    let mut out = vec![0.0; space.dof_count];
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t);
        let nodes = p2_nodes(mesh, t);
        for ((l, n), w) in q.points.iter().zip(&tab.p2).zip(&q.weights) {
            let fx = f(geo.point(*l));
            for a in 0..6 {
                out[nodes[a]] += geo.area * w * fx[0] * n[a];
                out[nn + nodes[a]] += geo.area * w * fx[1] * n[a];
            }
        }
    }
    out
}

/// `eta (J, grad v_i) - (p, div v_i)` where `J[c][d] = d u_c / d x_d` and `p` are analytic.
pub fn load_stokes_momentum(
    space: &FunctionSpace,
    eta: f64,
    jac: impl Fn([f64; 2]) -> [[f64; 2]; 2],
    p: impl Fn([f64; 2]) -> f64,
) -> Vec<f64> {
    assert_eq!(space.kind, SpaceKind::P2VectorDirichlet);
    let mesh = &*space.mesh;
    let nn = space.num_nodes();
    let q = ReferenceTables::default().quad;
    let mut out = vec![0.0; space.dof_count];
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t);
        let nodes = p2_nodes(mesh, t);
        for (l, w) in q.points.iter().zip(&q.weights) {
            let x = geo.point(*l);
            let jx = jac(x);
            let px = p(x);
            let gr = geo.p2_gradients(*l);
            for a in 0..6 {
                for c in 0..2 {
                    let visc = eta * (jx[c][0] * gr[a][0] + jx[c][1] * gr[a][1]);
                    out[c * nn + nodes[a]] += geo.area * w * (visc - px * gr[a][c]);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use std::sync::Arc;

    fn spaces(n: usize) -> (FunctionSpace, FunctionSpace) {
        let mesh = Arc::new(Mesh::unit_square(n).unwrap());
        (FunctionSpace::p1(mesh.clone()), FunctionSpace::p2_vector(mesh))
    }

    #[test]
    fn p1_local_mass_matches_closed_form() {
        // one triangle (0,0),(1,0),(1,1) of the single-cell mesh has area 1/2
        let (p1, _) = spaces(1);
        let m = assemble_mass(&p1);
        let tri = p1.mesh.triangles[0];
        // the reference matrix (A/12)[[2,1,1],[1,2,1],[1,1,2]] summed over the two
        // triangles; vertex 0 and 2 are shared by both triangles
        let a = 0.5 / 12.0;
        assert!((m.get(tri[1], tri[1]) - 2.0 * a).abs() < 1e-16);
        assert!((m.get(tri[0], tri[0]) - 4.0 * a).abs() < 1e-16);
        assert!((m.get(tri[0], tri[1]) - a).abs() < 1e-16);
        assert!((m.get(tri[0], tri[2]) - 2.0 * a).abs() < 1e-16);
        assert_eq!(m.max_abs_asymmetry(), 0.0);
    }

    #[test]
    fn mass_of_one_is_area() {
        let (p1, v) = spaces(4);
        let m = assemble_mass(&p1);
        let one = vec![1.0; p1.dof_count];
        assert!((m.bilinear(&one, &one) - 1.0).abs() < 1e-12);
        let mv = assemble_mass(&v);
        let mut e = vec![0.0; v.dof_count];
        e[..v.num_nodes()].iter_mut().for_each(|x| *x = 1.0);
        assert!((mv.bilinear(&e, &e) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_kernel_and_linear_energy() {
        let (p1, _) = spaces(4);
        let a = assemble_stiffness(&p1);
        let c = vec![3.7; p1.dof_count];
        assert!(a.mul_vec(&c).iter().all(|v| v.abs() < 1e-13));
        let f = p1.interpolate_scalar(|x| x[0]);
        assert!((a.bilinear(&f.coeffs, &f.coeffs) - 1.0).abs() < 1e-12);
        assert_eq!(a.max_abs_asymmetry(), 0.0);
    }

    #[test]
    fn divergence_annihilates_constants_for_dirichlet_fields() {
        let (p1, v) = spaces(3);
        let c = assemble_divergence(&v, &p1).unwrap();
        let mut field = v.interpolate_vector(|x| [x[0] * x[1], (x[0] - 0.3).sin()]);
        assert!(c.mul_transpose_vec(&vec![1.0; p1.dof_count]).len() == v.dof_count);
        let total: f64 = c.mul_vec(&field.coeffs).iter().sum();
        assert!(total.abs() < 1e-14);
        field.coeffs.iter_mut().for_each(|x| *x = 0.0);
        assert!(c.mul_vec(&field.coeffs).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn divergence_of_linear_field_elementwise() {
        // v = (x, -y) is divergence free pointwise; interior nodal interpolant with boundary
        // zeroed has (div v, 1) = 0 and against interior hat functions equals the exact
        // integrals computed from the unzeroed interpolant's boundary layer.
        let (p1, v) = spaces(2);
        let c = assemble_divergence(&v, &p1).unwrap();
        let nn = v.num_nodes();
        let mut full = vec![0.0; v.dof_count];
        for i in 0..nn {
            full[i] = v.dof_coords[i][0];
            full[nn + i] = -v.dof_coords[i][1];
        }
        // unzeroed interpolant reproduces (x, -y) exactly, so C v = 0 row by row
        assert!(c.mul_vec(&full).iter().all(|x| x.abs() < 1e-15));
        // v = (x, 0): div v = 1, so C v equals the integrals of the hat functions
        let mut vx = vec![0.0; v.dof_count];
        for i in 0..nn {
            vx[i] = v.dof_coords[i][0];
        }
        let expect = assemble_mass(&p1).row_sums();
        for (a, b) in c.mul_vec(&vx).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn phase_convection_constant_psi_is_zero() {
        let (p1, v) = spaces(3);
        let psi = p1.constant(0.7);
        let b = assemble_phase_convection(&psi, &v, &p1).unwrap();
        assert_eq!(b.max_abs(), 0.0);
    }

    #[test]
    fn phase_convection_psi_x_against_unit_velocity() {
        // psi = x, v = (1, 0) (unzeroed interpolant): (grad psi . v, nu_i) = int nu_i
        let (p1, v) = spaces(3);
        let psi = p1.interpolate_scalar(|x| x[0]);
        let b = assemble_phase_convection(&psi, &v, &p1).unwrap();
        let nn = v.num_nodes();
        let mut ones = vec![0.0; v.dof_count];
        ones[..nn].iter_mut().for_each(|x| *x = 1.0);
        let expect = assemble_mass(&p1).row_sums();
        for (a, b) in b.mul_vec(&ones).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn skew_convection_is_exactly_antisymmetric() {
        let (_, v) = spaces(3);
        let u = v.interpolate_vector(|x| [(3.0 * x[1]).sin(), x[0] * x[0] - 0.2]);
        let k = assemble_skew_convection(&u, &v).unwrap();
        assert_eq!(k.max_abs_transpose_combination(-1.0), 0.0);
        let w: Vec<f64> = (0..v.dof_count).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        assert!(k.bilinear(&w, &w).abs() < 1e-13);
        let zero = assemble_skew_convection(&v.zeros(), &v).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn chi_values() {
        assert_eq!(chi(1.0, 1.0), 1.0);
        for c in [-2.0f64, 0.0, 0.5] {
            assert!((chi(c, c) - c.powi(3)).abs() < 1e-15);
        }
        assert_eq!(chi(1.0, -1.0), 0.0);
    }

    #[test]
    fn chi_residual_constant_state() {
        let (p1, _) = spaces(3);
        let c = -0.6;
        let (r, _) = assemble_chi_residual_and_jacobian(&p1.constant(c), &p1.constant(c), &p1).unwrap();
        let rs = assemble_mass(&p1).row_sums();
        for (a, b) in r.coeffs.iter().zip(&rs) {
            assert!((a - c * c * c * b).abs() < 1e-15);
        }
        let (r, _) = assemble_chi_residual_and_jacobian(&p1.constant(1.0), &p1.constant(-1.0), &p1).unwrap();
        assert!(r.coeffs.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn chi_jacobian_matches_central_differences() {
        let (p1, _) = spaces(3);
        let n = p1.dof_count;
        let field = |seed: usize| {
            let c = (0..n).map(|i| (((i + 1) * (seed + 3) * 2654435761usize) % 1000) as f64 / 500.0 - 1.0).collect();
            FieldVector::new(p1.kind, c)
        };
        let (a, b) = (field(1), field(2));
        let (_, jac) = assemble_chi_residual_and_jacobian(&a, &b, &p1).unwrap();
        let h = 1e-5;
        for j in 0..n {
            let mut plus = a.clone();
            plus.coeffs[j] += h;
            let mut minus = a.clone();
            minus.coeffs[j] -= h;
            let (rp, _) = assemble_chi_residual_and_jacobian(&plus, &b, &p1).unwrap();
            let (rm, _) = assemble_chi_residual_and_jacobian(&minus, &b, &p1).unwrap();
            for i in 0..n {
                let fd = (rp.coeffs[i] - rm.coeffs[i]) / (2.0 * h);
                assert!((fd - jac.get(i, j)).abs() < 1e-8, "({i}, {j})");
            }
        }
    }

    #[test]
    fn space_mismatch_errors() {
        let (p1, v) = spaces(2);
        assert!(assemble_divergence(&p1, &p1).is_err());
        assert!(assemble_phase_convection(&v.zeros(), &v, &p1).is_err());
        assert!(assemble_skew_convection(&p1.zeros(), &v).is_err());
        let other = FunctionSpace::p1(Arc::new(Mesh::unit_square(3).unwrap()));
        assert!(assemble_divergence(&v, &other).is_err());
    }
}
