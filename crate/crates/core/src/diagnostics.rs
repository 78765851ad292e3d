//! Energies, the discrete energy-law ledger, and field norms.
//!
//! Every quadratic quantity is evaluated with the assembled matrices; the double-well
//! integral is the only term computed by quadrature (exactly, since it is degree 4).

use crate::error::{Error, Result};
use crate::projections::ProjectionContext;
use crate::scheme::PhysParams;
use crate::space::{eval_p1, eval_p2_vector, ElementGeometry, FieldVector, ReferenceTables, SpaceKind};

/// `int (phi^2 - 1)^2`
pub fn double_well_integral(ctx: &ProjectionContext, phi: &FieldVector) -> Result<f64> {
    ctx.phase.check(phi)?;
    let mesh = &*ctx.mesh;
    let q = ReferenceTables::default().quad;
    let mut total = 0.0;
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t);
        let mut s = 0.0;
        for (l, w) in q.points.iter().zip(&q.weights) {
            let (v, _) = eval_p1(mesh, &geo, t, &phi.coeffs, *l);
            let d = v * v - 1.0;
            s += w * d * d;
        }
        total += geo.area * s;
    }
    Ok(total)
}

/// `E(phi, u) = int (1/4 eps)(phi^2 - 1)^2 + (eps/2)|grad phi|^2 + (1/2 gamma)|u|^2`
pub fn energy_e(ctx: &ProjectionContext, phi: &FieldVector, u: &FieldVector, params: &PhysParams) -> Result<f64> {
    ctx.velocity.check(u)?;
    let eps = params.epsilon;
    let well = double_well_integral(ctx, phi)?;
    let grad = ctx.stiffness.bilinear(&phi.coeffs, &phi.coeffs);
    let kinetic = ctx.vel_mass.bilinear(&u.coeffs, &u.coeffs);
    Ok(well / (4.0 * eps) + 0.5 * eps * grad + kinetic / (2.0 * params.gamma))
}

/// Modified energy `F = E + (1/4 eps)||phi_new - phi_old||^2 + (eps/8)||grad(phi_new - phi_old)||^2`.
pub fn energy_f(
    ctx: &ProjectionContext,
    phi_new: &FieldVector,
    phi_old: &FieldVector,
    u: &FieldVector,
    params: &PhysParams,
) -> Result<f64> {
    ctx.phase.check(phi_old)?;
    let e = energy_e(ctx, phi_new, u, params)?;
    let d = phi_new.combine(1.0, phi_old, -1.0);
    let l2 = ctx.mass.bilinear(&d.coeffs, &d.coeffs);
    let h1 = ctx.stiffness.bilinear(&d.coeffs, &d.coeffs);
    Ok(e + l2 / (4.0 * params.epsilon) + params.epsilon / 8.0 * h1)
}

/// Energy-law terms of one step `m -> m + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepEnergy {
    /// `F(phi^{m+1}, phi^m, u^{m+1})`
    pub f_new: f64,
    pub grad_mu_sq: f64,
    pub grad_ubar_sq: f64,
    /// `||phi^{m+1} - 2 phi^m + phi^{m-1}||^2`
    pub jump_l2: f64,
    pub jump_h1: f64,
    /// `tau (eps ||grad mu||^2 + (eta/gamma) ||grad ubar||^2)`
    pub dissipation: f64,
    /// `(1/4 eps) jump_l2 + (eps/8) jump_h1`
    pub jump: f64,
}

/// Accumulates the energy law `F^{l+1} + sum(dissipation + jump) = F^1` over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub f1: f64,
    pub cumulative: f64,
    pub steps: Vec<StepEnergy>,
}

impl EnergyLedger {
    pub fn new(f1: f64) -> Self {
        Self { f1, cumulative: 0.0, steps: Vec::new() }
    }

    /// Records a step and returns the law residual at that step.
    pub fn push(&mut self, step: StepEnergy) -> f64 {
        self.cumulative += step.dissipation + step.jump;
        self.steps.push(step);
        (step.f_new + self.cumulative - self.f1).abs()
    }

    /// Residual after the last recorded step.
    pub fn residual(&self) -> Result<f64> {
        energy_law_residual(self.f1, &self.steps)
    }
}

/// `|F^{l+1} + sum_{m=1}^{l} (dissipation + jump) - F^1|` with `l = history.len()`.
pub fn energy_law_residual(f1: f64, history: &[StepEnergy]) -> Result<f64> {
    let last = history.last().ok_or_else(|| Error::InvalidInput("energy-law residual needs at least one step".into()))?;
    let sum: f64 = history.iter().map(|s| s.dissipation + s.jump).sum();
    Ok((last.f_new + sum - f1).abs())
}

/// Relative defects of the two algebraic identities behind the discrete energy law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityDefects {
    /// `(chi(phi^{m+1}, phi^m) - phi_tilde, delta phi)` against its telescoped form.
    pub nonlinear: f64,
    /// `a(phi_check, delta phi)` against its telescoped form.
    pub gradient: f64,
}

/// Checks both splitting identities for a triple `(phi^{m+1}, phi^m, phi^{m-1})` of P1
/// fields. Each defect is `|lhs - rhs|` divided by the sum of the magnitudes of all terms.
pub fn splitting_identity_defects(
    ctx: &ProjectionContext,
    next: &FieldVector,
    curr: &FieldVector,
    prev: &FieldVector,
    tau: f64,
) -> Result<IdentityDefects> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {tau}")));
    }
    for f in [next, curr, prev] {
        ctx.phase.check(f)?;
    }
    let dt = next.combine(1.0 / tau, curr, -1.0 / tau);
    let jump = next.combine(1.0, curr, -1.0);
    let jump_prev = curr.combine(1.0, prev, -1.0);
    let second = jump.combine(1.0, &jump_prev, -1.0);
    let l2 = |v: &FieldVector| ctx.mass.bilinear(&v.coeffs, &v.coeffs);
    let h1 = |v: &FieldVector| ctx.stiffness.bilinear(&v.coeffs, &v.coeffs);
    let defect = |lhs: f64, terms: &[f64]| {
        let rhs: f64 = terms.iter().sum();
        let scale = terms.iter().fold(lhs.abs(), |s, t| s + t.abs());
        if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale }
    };

    let (chi, _) = crate::assembly::assemble_chi_residual_and_jacobian(next, curr, &ctx.phase)?;
    let tilde = curr.combine(1.5, prev, -0.5);
    let lhs = chi.coeffs.iter().zip(&dt.coeffs).map(|(a, b)| a * b).sum::<f64>() - ctx.mass.bilinear(&tilde.coeffs, &dt.coeffs);
    let q = 0.25 / tau;
    let nonlinear = defect(
        lhs,
        &[
            q * double_well_integral(ctx, next)?,
            -q * double_well_integral(ctx, curr)?,
            q * l2(&jump),
            -q * l2(&jump_prev),
            q * l2(&second),
        ],
    );

    let check = next.combine(0.75, prev, 0.25);
    let lhs = ctx.stiffness.bilinear(&check.coeffs, &dt.coeffs);
    let gradient = defect(
        lhs,
        &[
            0.5 / tau * h1(next),
            -0.5 / tau * h1(curr),
            0.125 / tau * h1(&second),
            0.125 / tau * h1(&jump),
            -0.125 / tau * h1(&jump_prev),
        ],
    );
    Ok(IdentityDefects { nonlinear, gradient })
}

/// One time-series row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub e: f64,
    pub f: f64,
    pub grad_mu_sq: f64,
    pub grad_ubar_sq: f64,
    pub jump_l2: f64,
    pub jump_h1: f64,
    pub energy_law_residual: f64,
    pub mass: f64,
    pub linf_phi: f64,
    pub l2_mu_half: f64,
    /// `||Delta_h phi_check||`
    pub laplacian_check_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub h1_semi: f64,
    /// Nodal maximum: exact for P1, a lower bound for P2.
    pub linf_nodal: f64,
    pub minus_one: Option<f64>,
    pub discrete_laplacian_l2: Option<f64>,
}

/// L2, H1-seminorm and nodal max of a field, plus the optional P1-only norms.
pub fn norms(ctx: &ProjectionContext, field: &FieldVector, minus_one: bool, laplacian: bool) -> Result<Norms> {
    let (m, a) = match field.kind {
        SpaceKind::P2VectorDirichlet => {
            ctx.velocity.check(field)?;
            (&ctx.vel_mass, &ctx.vel_stiffness)
        }
        _ => {
            ctx.phase.check(field)?;
            (&ctx.mass, &ctx.stiffness)
        }
    };
    let p1 = field.kind.is_p1();
    if (minus_one || laplacian) && !p1 {
        return Err(Error::SpaceMismatch("negative and Laplacian norms are defined for P1 fields only".into()));
    }
    let minus_one = if minus_one { Some(ctx.minus_one_norm(field)?) } else { None };
    let discrete_laplacian_l2 = if laplacian {
        let l = ctx.discrete_laplacian(field)?;
        Some(ctx.mass.bilinear(&l.coeffs, &l.coeffs).max(0.0).sqrt())
    } else {
        None
    };
    Ok(Norms {
        l2: m.bilinear(&field.coeffs, &field.coeffs).max(0.0).sqrt(),
        h1_semi: a.bilinear(&field.coeffs, &field.coeffs).max(0.0).sqrt(),
        linf_nodal: field.max_abs(),
        minus_one,
        discrete_laplacian_l2,
    })
}

/// `(||v_h - f||, ||grad(v_h - f)||)` by quadrature for a P1 field.
pub fn scalar_error(
    ctx: &ProjectionContext,
    coeffs: &[f64],
    f: impl Fn([f64; 2]) -> f64,
    grad: impl Fn([f64; 2]) -> [f64; 2],
) -> (f64, f64) {
    let mesh = &*ctx.mesh;
    let q = ReferenceTables::default().quad;
    let (mut l2, mut h1) = (0.0, 0.0);
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t);
        for (l, w) in q.points.iter().zip(&q.weights) {
            let x = geo.point(*l);
            let (v, g) = eval_p1(mesh, &geo, t, coeffs, *l);
            let ge = grad(x);
            let d = v - f(x);
            l2 += geo.area * w * d * d;
            h1 += geo.area * w * ((g[0] - ge[0]).powi(2) + (g[1] - ge[1]).powi(2));
        }
    }
    (l2.sqrt(), h1.sqrt())
}

/// `(||u_h - u||, ||grad(u_h - u)||)` by quadrature for a P2 vector field.
pub fn vector_error(
    ctx: &ProjectionContext,
    coeffs: &[f64],
    u: impl Fn([f64; 2]) -> [f64; 2],
    jac: impl Fn([f64; 2]) -> [[f64; 2]; 2],
) -> (f64, f64) {
    let mesh = &*ctx.mesh;
    let q = ReferenceTables::default().quad;
    let (mut l2, mut h1) = (0.0, 0.0);
    for t in 0..mesh.num_triangles() {
        let geo = ElementGeometry::new(mesh, t);
        for (l, w) in q.points.iter().zip(&q.weights) {
            let x = geo.point(*l);
            let (v, j) = eval_p2_vector(mesh, &geo, t, coeffs, *l);
            let ve = u(x);
            let je = jac(x);
            for c in 0..2 {
                l2 += geo.area * w * (v[c] - ve[c]).powi(2);
                for d in 0..2 {
                    h1 += geo.area * w * (j[c][d] - je[c][d]).powi(2);
                }
            }
        }
    }
    (l2.sqrt(), h1.sqrt())
}
