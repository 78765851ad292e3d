//! The second-order convex-splitting time stepper.
//!
//! Each step solves the coupled system for `(phi^{m+1}, mu^{m+1/2}, u^{m+1}, p^{m+1})`
//! monolithically with Newton's method. The only nonlinearity is the cubic `chi` term, so
//! the Jacobian is a fixed linear part plus one re-linearized block.
//!
//! Unknown layout: `[phi (n1), mu (n1), u (nv), p (n1), lambda (1)]`, where `lambda` is
//! the multiplier enforcing the zero mean of the pressure.

use crate::assembly::{
    assemble_chi_residual_and_jacobian, assemble_cube_residual_and_jacobian, assemble_phase_convection,
    assemble_skew_convection, load_scalar, load_vector,
};
use crate::diagnostics::{energy_f, StepEnergy};
use crate::error::{Error, Result};
use crate::linsolve::ConstantModeLu;
use crate::projections::ProjectionContext;
use crate::space::{FieldVector, SpaceKind};
use crate::sparse::{SparseMatrix, TripletBuilder};

pub use crate::assembly::chi;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    /// Interface width.
    pub epsilon: f64,
    /// Viscosity, the inverse Reynolds number.
    pub eta: f64,
    /// Capillary coefficient, the inverse modified Weber number.
    pub gamma: f64,
}

impl PhysParams {
    pub fn new(epsilon: f64, eta: f64, gamma: f64) -> Result<Self> {
        let p = Self { epsilon, eta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon", self.epsilon), ("eta", self.eta), ("gamma", self.gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Uniform partition of `[0, T]` into `steps` intervals of length `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub tau: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(tau: f64, steps: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { tau, steps })
    }

    /// Grid with `steps = round(final_time / tau)`.
    pub fn to_time(tau: f64, final_time: f64) -> Result<Self> {
        Self::new(tau, (final_time / tau).round() as usize)
    }

    pub fn final_time(&self) -> f64 {
        self.steps as f64 * self.tau
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Bound on `max_i |R_i| / max_j |J_ij|`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tol: 1e-11, max_iters: 30 }
    }
}

/// Two time levels of phase and velocity plus the current pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeState {
    pub m: usize,
    pub t: f64,
    pub phi_curr: FieldVector,
    pub phi_prev: FieldVector,
    pub u_curr: FieldVector,
    pub u_prev: FieldVector,
    pub p_curr: FieldVector,
    pub mu_half_prev: Option<FieldVector>,
    /// `(phi^0, 1)`, the reference for mass drift.
    pub mass0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub newton_iters: usize,
    pub final_residual: f64,
    /// Scaled residual before each Newton update and after the last one.
    pub residual_history: Vec<f64>,
    /// `|F^{m+1} + dissipation + jump - F^m|` for this step; `None` for forced steps,
    /// where no energy law holds.
    pub energy_law_residual: Option<f64>,
    pub mass_drift: f64,
    pub energy: StepEnergy,
}

/// Right-hand sides added to the phase and momentum equations (manufactured solutions).
pub trait Forcing: Sync {
    fn f_phi(&self, x: [f64; 2], t: f64) -> f64;
    fn f_u(&self, x: [f64; 2], t: f64) -> [f64; 2];
}

/// Closed-form fields needed to initialize by projection.
pub trait ExactFields: Sync {
    fn phi(&self, x: [f64; 2], t: f64) -> f64;
    fn grad_phi(&self, x: [f64; 2], t: f64) -> [f64; 2];
    fn u(&self, x: [f64; 2], t: f64) -> [f64; 2];
    /// `J[c][d] = d u_c / d x_d`
    fn grad_u(&self, x: [f64; 2], t: f64) -> [[f64; 2]; 2];
    fn p(&self, x: [f64; 2], t: f64) -> f64;
}

/// `(delta_tau, bar, tilde, check)` averages of three consecutive levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Averages {
    pub delta_tau: FieldVector,
    pub bar: FieldVector,
    pub tilde: FieldVector,
    pub check: FieldVector,
}

pub fn averages(new: &FieldVector, curr: &FieldVector, prev: &FieldVector, tau: f64) -> Result<Averages> {
    for f in [curr, prev] {
        if f.kind != new.kind || f.len() != new.len() {
            return Err(Error::SpaceMismatch("averages of fields from different spaces".into()));
        }
    }
    Ok(Averages {
        delta_tau: new.combine(1.0 / tau, curr, -1.0 / tau),
        bar: new.combine(0.5, curr, 0.5),
        tilde: curr.combine(1.5, prev, -0.5),
        check: new.combine(0.75, prev, 0.25),
    })
}

/// What data the first level is built from.
pub enum InitialData<'a> {
    /// Ritz and Stokes projections of exact fields at `t = 0` and `t = tau`.
    Exact(&'a dyn ExactFields),
    /// Only `t = 0` data; level one comes from a first-order convex-splitting step.
    Bootstrap { phi0: FieldVector, u0: FieldVector },
}

enum Nonlinearity {
    /// `chi(phi, phi^m)`
    Chi,
    /// `phi^3`
    Cube,
}

/// Everything that distinguishes the second-order step from the first-order bootstrap.
struct Stencil<'a> {
    /// Weight of the new level in the implicit velocity and pressure averages.
    theta: f64,
    phi_m: &'a FieldVector,
    u_m: &'a FieldVector,
    p_m: &'a FieldVector,
    /// Frozen phase in convection and in the explicit concave term.
    phi_frozen: FieldVector,
    u_frozen: FieldVector,
    /// Weight of the new level in the stiffness term of the chemical potential.
    lap_new: f64,
    /// Known part of that stiffness term, `(1 - lap_new) phi_explicit`.
    lap_known: Option<&'a FieldVector>,
    nonlinearity: Nonlinearity,
    /// Forcing evaluation time.
    t_force: f64,
}

/// Newton system for one step.
struct StepSystem {
    linear: SparseMatrix,
    rhs: Vec<f64>,
    n1: usize,
    nv: usize,
}

impl StepSystem {
    fn n(&self) -> usize {
        3 * self.n1 + self.nv + 1
    }
}

/// Owns the cached factorization used across steps on one mesh.
pub struct Scheme<'a> {
    pub ctx: &'a ProjectionContext,
    pub params: PhysParams,
    pub tau: f64,
    pub newton: NewtonConfig,
    lu: ConstantModeLu,
}

impl<'a> Scheme<'a> {
    pub fn new(ctx: &'a ProjectionContext, params: PhysParams, tau: f64, newton: NewtonConfig) -> Result<Self> {
        params.validate()?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
        }
        if ctx.eta != params.eta {
            return Err(Error::InvalidInput(format!(
                "context was built with eta = {} but params.eta = {}",
                ctx.eta, params.eta
            )));
        }
        let n1 = ctx.phase.dof_count;
        let o_p = 2 * n1 + ctx.velocity.dof_count;
        let lu = ConstantModeLu::new(o_p..o_p + n1, ctx.basis_integrals.clone())?;
        Ok(Self { ctx, params, tau, newton, lu })
    }

    /// Builds level 0 and level 1.
    pub fn initialize(&mut self, data: InitialData<'_>, forcing: Option<&dyn Forcing>) -> Result<SchemeState> {
        let ctx = self.ctx;
        let tau = self.tau;
        match data {
            InitialData::Exact(ex) => {
                let ritz = |t: f64| ctx.ritz_project(|x| ex.phi(x, t), |x| ex.grad_phi(x, t));
                let stokes = |t: f64| ctx.stokes_project(|x| ex.grad_u(x, t), |x| ex.p(x, t));
                let phi0 = ritz(0.0)?;
                let phi1 = ritz(tau)?;
                let (u0, _) = stokes(0.0)?;
                let (u1, p1) = stokes(tau)?;
                let mu = self.mu_half_initial(&phi1, &phi0)?;
                Ok(SchemeState {
                    m: 1,
                    t: tau,
                    mass0: ctx.integral(&phi0.coeffs),
                    phi_curr: phi1,
                    phi_prev: phi0,
                    u_curr: u1,
                    u_prev: u0,
                    p_curr: p1,
                    mu_half_prev: Some(mu),
                })
            }
            InitialData::Bootstrap { phi0, u0 } => {
                ctx.phase.check(&phi0)?;
                ctx.velocity.check(&u0)?;
                let phi0 = phi0.with_kind(SpaceKind::P1Scalar);
                let mut u0 = u0;
                for (c, &d) in u0.coeffs.iter_mut().zip(&ctx.velocity.dirichlet) {
                    if d {
                        *c = 0.0;
                    }
                }
                let p0 = ctx.pressure.zeros();
                let stencil = Stencil {
                    theta: 1.0,
                    phi_m: &phi0,
                    u_m: &u0,
                    p_m: &p0,
                    phi_frozen: phi0.clone(),
                    u_frozen: u0.clone(),
                    lap_new: 1.0,
                    lap_known: None,
                    nonlinearity: Nonlinearity::Cube,
                    t_force: tau,
                };
                let guess = self.pack(&phi0, &ctx.phase.zeros(), &u0, &p0);
                let (x, _, _) = self.solve_stencil(&stencil, guess, forcing)?;
                let (phi1, mu, u1, p1) = self.unpack(&x);
                Ok(SchemeState {
                    m: 1,
                    t: tau,
                    mass0: ctx.integral(&phi0.coeffs),
                    phi_curr: phi1,
                    phi_prev: phi0,
                    u_curr: u1,
                    u_prev: u0,
                    p_curr: p1,
                    mu_half_prev: Some(mu),
                })
            }
        }
    }

    /// Advances `state` from level `m` to `m + 1`, returning `mu^{m+1/2}` and a report.
    pub fn step(&mut self, state: &SchemeState, forcing: Option<&dyn Forcing>) -> Result<(SchemeState, FieldVector, StepReport)> {
        if state.m < 1 {
            return Err(Error::InvalidInput("the second-order step needs two previous levels (m >= 1)".into()));
        }
        let ctx = self.ctx;
        let quarter_prev = state.phi_prev.scaled(0.25);
        let stencil = Stencil {
            theta: 0.5,
            phi_m: &state.phi_curr,
            u_m: &state.u_curr,
            p_m: &state.p_curr,
            phi_frozen: state.phi_curr.combine(1.5, &state.phi_prev, -0.5),
            u_frozen: state.u_curr.combine(1.5, &state.u_prev, -0.5),
            lap_new: 0.75,
            lap_known: Some(&quarter_prev),
            nonlinearity: Nonlinearity::Chi,
            t_force: state.t + 0.5 * self.tau,
        };
        let phi_guess = state.phi_curr.combine(2.0, &state.phi_prev, -1.0);
        let u_guess = state.u_curr.combine(2.0, &state.u_prev, -1.0);
        let mu_guess = state.mu_half_prev.clone().unwrap_or_else(|| ctx.phase.zeros());
        let guess = self.pack(&phi_guess, &mu_guess, &u_guess, &state.p_curr);
        let (x, iters, history) = self.solve_stencil(&stencil, guess, forcing)?;
        let (phi, mu, u, p) = self.unpack(&x);

        let energy = self.step_energy(&phi, &state.phi_curr, &state.phi_prev, &mu, &u, &state.u_curr);
        let f_old = energy_f(ctx, &state.phi_curr, &state.phi_prev, &state.u_curr, &self.params)?;
        let law = (energy.f_new + energy.dissipation + energy.jump - f_old).abs();
        let mass_drift = (ctx.integral(&phi.coeffs) - state.mass0).abs();
        let report = StepReport {
            newton_iters: iters,
            final_residual: *history.last().unwrap(),
            residual_history: history,
            energy_law_residual: forcing.is_none().then_some(law),
            mass_drift,
            energy,
        };
        let next = SchemeState {
            m: state.m + 1,
            t: state.t + self.tau,
            phi_curr: phi,
            phi_prev: state.phi_curr.clone(),
            u_curr: u,
            u_prev: state.u_curr.clone(),
            p_curr: p,
            mu_half_prev: Some(mu.clone()),
            mass0: state.mass0,
        };
        Ok((next, mu, report))
    }

    /// Terms of the energy law contributed by the step `m -> m + 1`.
    pub fn step_energy(
        &self,
        phi_new: &FieldVector,
        phi_curr: &FieldVector,
        phi_prev: &FieldVector,
        mu: &FieldVector,
        u_new: &FieldVector,
        u_curr: &FieldVector,
    ) -> StepEnergy {
        let ctx = self.ctx;
        let PhysParams { epsilon, eta, gamma } = self.params;
        let ubar = u_new.combine(0.5, u_curr, 0.5);
        let grad_mu_sq = ctx.stiffness.bilinear(&mu.coeffs, &mu.coeffs);
        let grad_ubar_sq = ctx.vel_stiffness.bilinear(&ubar.coeffs, &ubar.coeffs);
        let second = FieldVector::new(
            SpaceKind::P1Scalar,
            (0..phi_new.len())
                .map(|i| phi_new.coeffs[i] - 2.0 * phi_curr.coeffs[i] + phi_prev.coeffs[i])
                .collect(),
        );
        let jump_l2 = ctx.mass.bilinear(&second.coeffs, &second.coeffs);
        let jump_h1 = ctx.stiffness.bilinear(&second.coeffs, &second.coeffs);
        let f_new = energy_f(ctx, phi_new, phi_curr, u_new, &self.params).expect("fields checked by the solver");
        StepEnergy {
            f_new,
            grad_mu_sq,
            grad_ubar_sq,
            jump_l2,
            jump_h1,
            dissipation: self.tau * (epsilon * grad_mu_sq + eta / gamma * grad_ubar_sq),
            jump: jump_l2 / (4.0 * epsilon) + epsilon / 8.0 * jump_h1,
        }
    }

    /// `mu^{1/2}` from `(mu, psi) = (1/eps)(chi(phi1, phi0) - bar, psi) + eps a(bar, psi)`.
    pub fn mu_half_initial(&self, phi1: &FieldVector, phi0: &FieldVector) -> Result<FieldVector> {
        let ctx = self.ctx;
        let eps = self.params.epsilon;
        let (chi_res, _) = assemble_chi_residual_and_jacobian(phi1, phi0, &ctx.phase)?;
        let bar = phi1.combine(0.5, phi0, 0.5);
        let mut rhs: Vec<f64> = chi_res.coeffs.iter().map(|v| v / eps).collect();
        ctx.mass.mul_vec_add(&bar.coeffs, -1.0 / eps, &mut rhs);
        ctx.stiffness.mul_vec_add(&bar.coeffs, eps, &mut rhs);
        Ok(FieldVector::new(SpaceKind::P1Scalar, ctx.solve_mass(&rhs)?))
    }

    /// `rho^{1/2}` from `(rho, nu) = (delta_tau phi, nu) + eps a(mu, nu) + b(bar phi, bar u, nu)`.
    pub fn rho_half_residual(
        &self,
        phi1: &FieldVector,
        phi0: &FieldVector,
        u1: &FieldVector,
        u0: &FieldVector,
        mu_half: &FieldVector,
    ) -> Result<FieldVector> {
        let ctx = self.ctx;
        let bar = phi1.combine(0.5, phi0, 0.5);
        let ubar = u1.combine(0.5, u0, 0.5);
        let b = assemble_phase_convection(&bar, &ctx.velocity, &ctx.phase)?;
        let dphi = phi1.combine(1.0 / self.tau, phi0, -1.0 / self.tau);
        let mut rhs = ctx.mass.mul_vec(&dphi.coeffs);
        ctx.stiffness.mul_vec_add(&mu_half.coeffs, self.params.epsilon, &mut rhs);
        b.mul_vec_add(&ubar.coeffs, 1.0, &mut rhs);
        Ok(FieldVector::new(SpaceKind::P1Scalar, ctx.solve_mass(&rhs)?))
    }

    fn pack(&self, phi: &FieldVector, mu: &FieldVector, u: &FieldVector, p: &FieldVector) -> Vec<f64> {
        let mut x = Vec::with_capacity(3 * phi.len() + u.len() + 1);
        x.extend_from_slice(&phi.coeffs);
        x.extend_from_slice(&mu.coeffs);
        x.extend_from_slice(&u.coeffs);
        x.extend_from_slice(&p.coeffs);
        x.push(0.0);
        x
    }

    fn unpack(&self, x: &[f64]) -> (FieldVector, FieldVector, FieldVector, FieldVector) {
        let n1 = self.ctx.phase.dof_count;
        let nv = self.ctx.velocity.dof_count;
        let o_u = 2 * n1;
        let o_p = o_u + nv;
        (
            FieldVector::new(SpaceKind::P1Scalar, x[..n1].to_vec()),
            FieldVector::new(SpaceKind::P1Scalar, x[n1..o_u].to_vec()),
            FieldVector::new(SpaceKind::P2VectorDirichlet, x[o_u..o_p].to_vec()),
            FieldVector::new(SpaceKind::P1MeanZero, x[o_p..o_p + n1].to_vec()),
        )
    }

    fn build_system(&self, s: &Stencil<'_>, forcing: Option<&dyn Forcing>) -> Result<StepSystem> {
        let ctx = self.ctx;
        let PhysParams { epsilon: eps, eta, gamma } = self.params;
        let tau = self.tau;
        let th = s.theta;
        let n1 = ctx.phase.dof_count;
        let nv = ctx.velocity.dof_count;
        let (o_mu, o_u) = (n1, 2 * n1);
        let o_p = o_u + nv;
        let o_l = o_p + n1;
        let n = o_l;
        let dir = &ctx.velocity.dirichlet;

        let bphi = assemble_phase_convection(&s.phi_frozen, &ctx.velocity, &ctx.phase)?;
        let k = assemble_skew_convection(&s.u_frozen, &ctx.velocity)?;

        let cap = 4 * ctx.mass.nnz() + 3 * bphi.nnz() + 3 * ctx.vel_mass.nnz() + 2 * ctx.divergence.nnz() + 2 * n1 + nv;
        let mut b = TripletBuilder::with_capacity(n, n, cap);
        // phase equation
        b.push_block(0, 0, &ctx.mass, 1.0 / tau);
        b.push_block(0, o_mu, &ctx.stiffness, eps);
        b.push_block_filtered(0, o_u, &bphi, th, |_, c| !dir[c]);
        // chemical potential; the mass pattern of the nonlinear block coincides with the
        // stiffness pattern, so both are pushed to reserve it
        b.push_block(o_mu, 0, &ctx.stiffness, eps * s.lap_new);
        b.push_block(o_mu, 0, &ctx.mass, 0.0);
        b.push_block(o_mu, o_mu, &ctx.mass, -1.0);
        // momentum
        let free = |r: usize, c: usize| !dir[r] && !dir[c];
        b.push_block_filtered(o_u, o_u, &ctx.vel_mass, 1.0 / tau, free);
        b.push_block_filtered(o_u, o_u, &ctx.vel_stiffness, th * eta, free);
        b.push_block_filtered(o_u, o_u, &k, th, free);
        for (i, &d) in dir.iter().enumerate() {
            if d {
                b.push(o_u + i, o_u + i, 1.0);
            }
        }
        b.push_block_transposed_filtered(o_u, o_p, &ctx.divergence, -th, |r, _| !dir[r]);
        b.push_block_transposed_filtered(o_u, o_mu, &bphi, -gamma, |r, _| !dir[r]);
        // continuity; the mean constraint border is applied in `evaluate`
        b.push_block_filtered(o_p, o_u, &ctx.divergence, th, |_, c| !dir[c]);
        let linear = b.build();

        let mut rhs = vec![0.0; n + 1];
        let ex = 1.0 - th;
        {
            let r = &mut rhs[..n1];
            ctx.mass.mul_vec_add(&s.phi_m.coeffs, 1.0 / tau, r);
            if ex != 0.0 {
                bphi.mul_vec_add(&s.u_m.coeffs, -ex, r);
            }
            if let Some(f) = forcing {
                let load = load_scalar(&ctx.phase, |x| f.f_phi(x, s.t_force));
                r.iter_mut().zip(&load).for_each(|(a, b)| *a += b);
            }
        }
        {
            let r = &mut rhs[o_mu..o_u];
            ctx.mass.mul_vec_add(&s.phi_frozen.coeffs, 1.0 / eps, r);
            if let Some(known) = s.lap_known {
                ctx.stiffness.mul_vec_add(&known.coeffs, -eps, r);
            }
        }
        {
            let r = &mut rhs[o_u..o_p];
            ctx.vel_mass.mul_vec_add(&s.u_m.coeffs, 1.0 / tau, r);
            if ex != 0.0 {
                ctx.vel_stiffness.mul_vec_add(&s.u_m.coeffs, -ex * eta, r);
                k.mul_vec_add(&s.u_m.coeffs, -ex, r);
                ctx.divergence.mul_transpose_vec_add(&s.p_m.coeffs, ex, r);
            }
            if let Some(f) = forcing {
                let load = load_vector(&ctx.velocity, |x| f.f_u(x, s.t_force));
                r.iter_mut().zip(&load).for_each(|(a, b)| *a += b);
            }
            for (v, &d) in r.iter_mut().zip(dir) {
                if d {
                    *v = 0.0;
                }
            }
        }
        if ex != 0.0 {
            ctx.divergence.mul_vec_add(&s.u_m.coeffs, -ex, &mut rhs[o_p..o_l]);
        }
        Ok(StepSystem { linear, rhs, n1, nv })
    }

    /// Residual and Jacobian at `x`. The Jacobian omits the multiplier border.
    fn evaluate(&self, sys: &StepSystem, s: &Stencil<'_>, x: &[f64]) -> Result<(Vec<f64>, SparseMatrix)> {
        let ctx = self.ctx;
        let n1 = sys.n1;
        let eps = self.params.epsilon;
        let phi = FieldVector::new(SpaceKind::P1Scalar, x[..n1].to_vec());
        let (nl, jac_nl) = match s.nonlinearity {
            Nonlinearity::Chi => assemble_chi_residual_and_jacobian(&phi, s.phi_m, &ctx.phase)?,
            Nonlinearity::Cube => assemble_cube_residual_and_jacobian(&phi, &ctx.phase)?,
        };
        let o_p = 2 * n1 + sys.nv;
        let o_l = o_p + n1;
        let mut r = sys.linear.mul_vec(&x[..o_l]);
        r.push(dot(&ctx.basis_integrals, &x[o_p..o_l]));
        r.iter_mut().zip(&sys.rhs).for_each(|(a, b)| *a -= b);
        r[n1..2 * n1].iter_mut().zip(&nl.coeffs).for_each(|(a, b)| *a += b / eps);
        let lambda = x[o_l];
        r[o_p..o_l].iter_mut().zip(&ctx.basis_integrals).for_each(|(a, w)| *a += w * lambda);
        let mut jac = sys.linear.clone();
        jac.add_block_in_pattern(n1, 0, &jac_nl, 1.0 / eps)?;
        Ok((r, jac))
    }

    fn solve_stencil(&mut self, s: &Stencil<'_>, mut x: Vec<f64>, forcing: Option<&dyn Forcing>) -> Result<(Vec<f64>, usize, Vec<f64>)> {
        let sys = self.build_system(s, forcing)?;
        debug_assert_eq!(x.len(), sys.n());
        let (mut r, mut jac) = self.evaluate(&sys, s, &x)?;
        let w = &self.ctx.basis_integrals;
        let o_p = 2 * sys.n1 + sys.nv;
        let mut res = scaled_residual(&r, &jac, w, o_p);
        let mut history = vec![res];
        let mut iters = 0;
        while res > self.newton.tol {
            if iters == self.newton.max_iters {
                return Err(Error::NewtonDiverged { iterations: iters, residual: res });
            }
            self.lu.factor(&jac)?;
            let dx = self.lu.solve_stacked(&r)?;
            iters += 1;
            // damped update; the full step is accepted whenever it does not increase the residual
            let mut alpha = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a - alpha * d).collect();
                let (r_t, jac_t) = self.evaluate(&sys, s, &trial)?;
                let res_t = scaled_residual(&r_t, &jac_t, w, o_p);
                if res_t <= res || alpha < 1e-3 || res_t <= self.newton.tol {
                    x = trial;
                    r = r_t;
                    jac = jac_t;
                    res = res_t;
                    break;
                }
                alpha *= 0.5;
            }
            history.push(res);
            if !res.is_finite() {
                return Err(Error::NewtonDiverged { iterations: iters, residual: res });
            }
        }
        Ok((x, iters, history))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max_i |R_i| / max_j |J_ij|`, where `J` is `jac` bordered by the weights `w` in the
/// rows starting at `border_start` and in the trailing row.
fn scaled_residual(r: &[f64], jac: &SparseMatrix, w: &[f64], border_start: usize) -> f64 {
    let n = jac.nrows();
    let w_max = w.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    r.iter()
        .enumerate()
        .map(|(i, v)| {
            let s = if i == n {
                w_max
            } else if i >= border_start {
                jac.row_abs_max(i).max(w[i - border_start].abs())
            } else {
                jac.row_abs_max(i)
            };
            if s > 0.0 {
                v.abs() / s
            } else {
                v.abs()
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use std::sync::Arc;

    fn ctx(n: usize) -> ProjectionContext {
        ProjectionContext::new(Arc::new(Mesh::unit_square(n).unwrap()), 1.0).unwrap()
    }

    fn params() -> PhysParams {
        PhysParams::new(0.1, 1.0, 1.0).unwrap()
    }

    #[test]
    fn chi_values() {
        assert_eq!(chi(1.0, 1.0), 1.0);
        for c in [-2.0, 0.0, 0.5] {
            assert!((chi(c, c) - c * c * c).abs() < 1e-15);
        }
        assert_eq!(chi(1.0, -1.0), 0.0);
    }

    #[test]
    fn averages_arithmetic() {
        let k = SpaceKind::P1Scalar;
        let f = |v: f64| FieldVector::new(k, vec![v; 3]);
        let a = averages(&f(2.0), &f(1.0), &f(0.0), 1.0).unwrap();
        assert_eq!(a.delta_tau, f(1.0));
        assert_eq!(a.bar, f(1.5));
        assert_eq!(a.tilde, f(1.5));
        assert_eq!(a.check, f(1.5));
        let c = averages(&f(0.3), &f(0.3), &f(0.3), 0.1).unwrap();
        assert_eq!(c.delta_tau, f(0.0));
        assert!((c.tilde.coeffs[0] - 0.3).abs() < 1e-16);
        // tilde is exact on linear-in-time data at the half step
        let tau = 0.2;
        let lin = averages(&f(3.0 * tau), &f(2.0 * tau), &f(tau), tau).unwrap();
        assert!((lin.tilde.coeffs[0] - 2.5 * tau).abs() < 1e-15);
    }

    fn constant_state(c: &ProjectionContext, s: &mut Scheme<'_>, value: f64) -> SchemeState {
        s.initialize(
            InitialData::Bootstrap { phi0: c.phase.constant(value), u0: c.velocity.zeros() },
            None,
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_is_preserved() {
        let c = ctx(4);
        let mut s = Scheme::new(&c, params(), 0.01, NewtonConfig::default()).unwrap();
        let st = constant_state(&c, &mut s, 1.0);
        assert!(st.phi_curr.coeffs.iter().all(|v| (v - 1.0).abs() < 1e-13));
        let (next, mu, rep) = s.step(&st, None).unwrap();
        assert!(rep.newton_iters <= 2);
        assert!(mu.max_abs() < 1e-12);
        assert!(next.phi_curr.coeffs.iter().all(|v| (v - 1.0).abs() < 1e-13));
        assert!(next.u_curr.max_abs() < 1e-13 && next.p_curr.max_abs() < 1e-13);
        assert!(rep.energy_law_residual.unwrap() < 1e-13);
    }

    #[test]
    fn constant_state_has_constant_potential() {
        let c = ctx(4);
        let eps = params().epsilon;
        let mut s = Scheme::new(&c, params(), 0.05, NewtonConfig::default()).unwrap();
        for value in [0.3, -0.7] {
            let st = constant_state(&c, &mut s, value);
            let (next, mu, _) = s.step(&st, None).unwrap();
            let expect = (value * value * value - value) / eps;
            assert!(next.phi_curr.coeffs.iter().all(|v| (v - value).abs() < 1e-12));
            assert!(mu.coeffs.iter().all(|v| (v - expect).abs() < 1e-10), "{:?}", &mu.coeffs[..3]);
            let mu0 = s.mu_half_initial(&st.phi_curr, &st.phi_prev).unwrap();
            assert!(mu0.coeffs.iter().all(|v| (v - expect).abs() < 1e-10));
        }
    }

    fn random_phase(c: &ProjectionContext, seed: u64) -> FieldVector {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        FieldVector::new(SpaceKind::P1Scalar, (0..c.phase.dof_count).map(|_| rng.random_range(-0.05..0.05)).collect())
    }

    #[test]
    fn energy_law_and_mass_on_random_run() {
        let c = ctx(8);
        let mut s = Scheme::new(&c, params(), 0.01, NewtonConfig::default()).unwrap();
        let phi0 = random_phase(&c, 7);
        let mut st = s.initialize(InitialData::Bootstrap { phi0, u0: c.velocity.zeros() }, None).unwrap();
        assert!((c.integral(&st.phi_curr.coeffs) - st.mass0).abs() < 1e-12);
        let f1 = energy_f(&c, &st.phi_curr, &st.phi_prev, &st.u_curr, &params()).unwrap();
        for _ in 0..10 {
            let (next, _, rep) = s.step(&st, None).unwrap();
            assert!(rep.newton_iters <= 6, "{:?}", rep.residual_history);
            assert!(rep.energy_law_residual.unwrap() <= 1e-8 * f1.max(1.0));
            assert!(rep.mass_drift < 1e-12);
            assert!(rep.energy.f_new <= f1);
            let div = c.divergence.mul_vec(&next.u_curr.combine(0.5, &st.u_curr, 0.5).coeffs);
            assert!(div.iter().all(|v| v.abs() < 1e-12));
            st = next;
        }
    }

    #[test]
    fn rho_half_vanishes_at_equilibrium_and_has_zero_mean() {
        let c = ctx(6);
        let mut s = Scheme::new(&c, params(), 0.01, NewtonConfig::default()).unwrap();
        let st = constant_state(&c, &mut s, 1.0);
        let mu = s.mu_half_initial(&st.phi_curr, &st.phi_prev).unwrap();
        let rho = s.rho_half_residual(&st.phi_curr, &st.phi_prev, &st.u_curr, &st.u_prev, &mu).unwrap();
        assert!(rho.max_abs() < 1e-12);

        let phi0 = random_phase(&c, 3);
        let st = s.initialize(InitialData::Bootstrap { phi0, u0: c.velocity.zeros() }, None).unwrap();
        let mu = s.mu_half_initial(&st.phi_curr, &st.phi_prev).unwrap();
        let rho = s.rho_half_residual(&st.phi_curr, &st.phi_prev, &st.u_curr, &st.u_prev, &mu).unwrap();
        assert!(c.integral(&rho.coeffs).abs() < 1e-10);
    }

    #[test]
    fn step_requires_two_levels() {
        let c = ctx(2);
        let mut s = Scheme::new(&c, params(), 0.01, NewtonConfig::default()).unwrap();
        let mut st = constant_state(&c, &mut s, 1.0);
        st.m = 0;
        assert!(s.step(&st, None).is_err());
        assert!(Scheme::new(&c, PhysParams { epsilon: 0.1, eta: 2.0, gamma: 1.0 }, 0.01, NewtonConfig::default()).is_err());
    }
}
