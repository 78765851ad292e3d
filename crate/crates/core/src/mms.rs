//! Manufactured solutions and convergence studies.
//!
//! The scheme itself has no source terms. For rate verification the residuals of the
//! strong form evaluated at a closed-form solution are added to the right-hand sides of
//! the phase and momentum equations at `t_{m+1/2}`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::diagnostics::{scalar_error, vector_error};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Rect};
use crate::projections::ProjectionContext;
use crate::scheme::{ExactFields, Forcing, InitialData, NewtonConfig, PhysParams, Scheme, SchemeState};
use crate::space::FieldVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolutionKind {
    /// `phi = cos(pi x) cos(pi y) cos t`, `u = curl(sin^2(pi x) sin^2(pi y) sin t)`,
    /// `p = sin(pi x) cos(pi y) sin t`.
    Trig,
    /// `phi = 1`, `u = 0`, `p = 0`.
    Equilibrium,
}

/// A closed-form solution on the unit square together with its forcing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedSolution {
    pub name: &'static str,
    pub kind: SolutionKind,
    pub params: PhysParams,
}

pub const BUILTIN_NAMES: [&str; 2] = ["trig", "equilibrium"];

/// Looks up a registered solution.
pub fn builtin_solution(name: &str, params: PhysParams) -> Result<ManufacturedSolution> {
    let (name, kind) = match name {
        "trig" | "default" => ("trig", SolutionKind::Trig),
        "equilibrium" => ("equilibrium", SolutionKind::Equilibrium),
        other => return Err(Error::InvalidInput(format!("unknown manufactured solution '{other}'"))),
    };
    params.validate()?;
    Ok(ManufacturedSolution { name, kind, params })
}

struct Trig {
    sx: f64,
    cx: f64,
    sy: f64,
    cy: f64,
    s2x: f64,
    c2x: f64,
    s2y: f64,
    c2y: f64,
}

impl Trig {
    fn at(x: [f64; 2]) -> Self {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        let (s2x, c2x) = (2.0 * PI * x[0]).sin_cos();
        let (s2y, c2y) = (2.0 * PI * x[1]).sin_cos();
        Self { sx, cx, sy, cy, s2x, c2x, s2y, c2y }
    }

    /// Spatial factor of `u` (multiplied by `sin t`).
    fn u(&self) -> [f64; 2] {
        [PI * self.sx * self.sx * self.s2y, -PI * self.s2x * self.sy * self.sy]
    }

    fn grad_u(&self) -> [[f64; 2]; 2] {
        let p2 = PI * PI;
        [
            [p2 * self.s2x * self.s2y, 2.0 * p2 * self.sx * self.sx * self.c2y],
            [-2.0 * p2 * self.c2x * self.sy * self.sy, -p2 * self.s2x * self.s2y],
        ]
    }

    fn lap_u(&self) -> [f64; 2] {
        let p3 = 2.0 * PI * PI * PI;
        [p3 * self.s2y * (2.0 * self.c2x - 1.0), p3 * self.s2x * (1.0 - 2.0 * self.c2y)]
    }
}

impl ManufacturedSolution {
    /// Derivative of `mu` with respect to `phi`, as a function of `phi` alone.
    fn dmu_dphi(&self, phi: f64) -> f64 {
        let eps = self.params.epsilon;
        (3.0 * phi * phi - 1.0) / eps + 2.0 * PI * PI * eps
    }

    pub fn mu(&self, x: [f64; 2], t: f64) -> f64 {
        match self.kind {
            SolutionKind::Equilibrium => 0.0,
            SolutionKind::Trig => {
                // -eps Laplacian(phi) = 2 pi^2 eps phi
                let eps = self.params.epsilon;
                let phi = self.phi(x, t);
                (phi * phi * phi - phi) / eps + 2.0 * PI * PI * eps * phi
            }
        }
    }

    pub fn grad_mu(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        match self.kind {
            SolutionKind::Equilibrium => [0.0; 2],
            SolutionKind::Trig => {
                let d = self.dmu_dphi(self.phi(x, t));
                let g = self.grad_phi(x, t);
                [d * g[0], d * g[1]]
            }
        }
    }

    /// `Laplacian(mu) = mu''(phi) |grad phi|^2 + mu'(phi) Laplacian(phi)`
    pub fn lap_mu(&self, x: [f64; 2], t: f64) -> f64 {
        match self.kind {
            SolutionKind::Equilibrium => 0.0,
            SolutionKind::Trig => {
                let phi = self.phi(x, t);
                let g = self.grad_phi(x, t);
                let d2 = 6.0 * phi / self.params.epsilon;
                d2 * (g[0] * g[0] + g[1] * g[1]) + self.dmu_dphi(phi) * (-2.0 * PI * PI * phi)
            }
        }
    }

    pub fn phi_t(&self, x: [f64; 2], t: f64) -> f64 {
        match self.kind {
            SolutionKind::Equilibrium => 0.0,
            SolutionKind::Trig => {
                let s = Trig::at(x);
                -s.cx * s.cy * t.sin()
            }
        }
    }
}

impl ExactFields for ManufacturedSolution {
    fn phi(&self, x: [f64; 2], t: f64) -> f64 {
        match self.kind {
            SolutionKind::Equilibrium => 1.0,
            SolutionKind::Trig => {
                let s = Trig::at(x);
                s.cx * s.cy * t.cos()
            }
        }
    }

    fn grad_phi(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        match self.kind {
            SolutionKind::Equilibrium => [0.0; 2],
            SolutionKind::Trig => {
                let s = Trig::at(x);
                let c = -PI * t.cos();
                [c * s.sx * s.cy, c * s.cx * s.sy]
            }
        }
    }

    fn u(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        match self.kind {
            SolutionKind::Equilibrium => [0.0; 2],
            SolutionKind::Trig => {
                let v = Trig::at(x).u();
                [v[0] * t.sin(), v[1] * t.sin()]
            }
        }
    }

    fn grad_u(&self, x: [f64; 2], t: f64) -> [[f64; 2]; 2] {
        match self.kind {
            SolutionKind::Equilibrium => [[0.0; 2]; 2],
            SolutionKind::Trig => {
                let j = Trig::at(x).grad_u();
                let s = t.sin();
                [[j[0][0] * s, j[0][1] * s], [j[1][0] * s, j[1][1] * s]]
            }
        }
    }

    fn p(&self, x: [f64; 2], t: f64) -> f64 {
        match self.kind {
            SolutionKind::Equilibrium => 0.0,
            SolutionKind::Trig => {
                let s = Trig::at(x);
                s.sx * s.cy * t.sin()
            }
        }
    }
}

impl Forcing for ManufacturedSolution {
    /// `phi_t + u . grad phi - eps Laplacian(mu)`
    fn f_phi(&self, x: [f64; 2], t: f64) -> f64 {
        if self.kind == SolutionKind::Equilibrium {
            return 0.0;
        }
        let u = self.u(x, t);
        let g = self.grad_phi(x, t);
        self.phi_t(x, t) + u[0] * g[0] + u[1] * g[1] - self.params.epsilon * self.lap_mu(x, t)
    }

    /// `u_t - eta Laplacian(u) + u . grad u + grad p - gamma mu grad phi`
    fn f_u(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        if self.kind == SolutionKind::Equilibrium {
            return [0.0; 2];
        }
        let s = Trig::at(x);
        let (st, ct) = t.sin_cos();
        let us = s.u();
        let lap = s.lap_u();
        let j = self.grad_u(x, t);
        let u = self.u(x, t);
        let grad_p = [PI * s.cx * s.cy * st, -PI * s.sx * s.sy * st];
        let mu = self.mu(x, t);
        let gphi = self.grad_phi(x, t);
        let PhysParams { eta, gamma, .. } = self.params;
        let mut f = [0.0; 2];
        for c in 0..2 {
            let adv = u[0] * j[c][0] + u[1] * j[c][1];
            f[c] = us[c] * ct - eta * lap[c] * st + adv + grad_p[c] - gamma * mu * gphi[c];
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyMode {
    /// Fixed mesh, refined time step.
    Temporal,
    /// Fixed time step, refined mesh.
    Spatial,
    /// Both refined together.
    Coupled,
}

impl std::str::FromStr for StudyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal" => Ok(Self::Temporal),
            "spatial" => Ok(Self::Spatial),
            "coupled" => Ok(Self::Coupled),
            _ => Err(Error::InvalidInput(format!("unknown study mode '{s}'"))),
        }
    }
}

impl std::fmt::Display for StudyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Temporal => "temporal",
            Self::Spatial => "spatial",
            Self::Coupled => "coupled",
        })
    }
}

/// One refinement level: `n x n` cells on the unit square and step `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub n: usize,
    pub tau: f64,
}

/// What the discrete solution is compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorReference {
    /// The exact fields; total errors.
    Exact,
    /// Ritz projection of `phi` and `mu` and Stokes projection of `u` at each level.
    Projection,
    /// A run on the same mesh with the given, much smaller, step: the time
    /// discretization error alone. Only available in temporal studies.
    FineStep(f64),
}

impl std::fmt::Display for ErrorReference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Exact => f.write_str("exact"),
            Self::Projection => f.write_str("projection"),
            Self::FineStep(tau) => write!(f, "fine-step(tau = {tau})"),
        }
    }
}

/// Every level and half-step chemical potential of one run.
#[derive(Debug, Clone)]
pub struct ReferenceRun {
    pub tau: f64,
    /// `phi[m]` at `t = m tau`.
    pub phi: Vec<FieldVector>,
    pub u: Vec<FieldVector>,
    pub p: Vec<FieldVector>,
    /// `mu_half[m]` at `t = (m + 1/2) tau`.
    pub mu_half: Vec<FieldVector>,
}

impl ReferenceRun {
    /// Levels 0 and 1 of a run with step `tau`, taken from this run.
    pub fn start(&self, ctx: &ProjectionContext, tau: f64) -> Result<SchemeState> {
        let k = self.index(tau)?;
        Ok(SchemeState {
            m: 1,
            t: tau,
            phi_curr: self.phi[k].clone(),
            phi_prev: self.phi[0].clone(),
            u_curr: self.u[k].clone(),
            u_prev: self.u[0].clone(),
            p_curr: self.p[k].clone(),
            mu_half_prev: None,
            mass0: ctx.integral(&self.phi[0].coeffs),
        })
    }

    fn index(&self, t: f64) -> Result<usize> {
        let k = (t / self.tau).round();
        if (k * self.tau - t).abs() > 1e-9 * self.tau.max(t) || k < 0.0 || k as usize >= self.phi.len() {
            return Err(Error::InvalidInput(format!("t = {t} is not a level of the reference run")));
        }
        Ok(k as usize)
    }

    /// `mu` at a level or half level, averaging the two neighbouring half steps at levels.
    fn mu_at(&self, t: f64) -> Result<FieldVector> {
        let k = ((t / self.tau) - 0.5).round();
        if (((k + 0.5) * self.tau) - t).abs() <= 1e-9 * self.tau.max(t) && k >= 0.0 && (k as usize) < self.mu_half.len() {
            return Ok(self.mu_half[k as usize].clone());
        }
        let m = self.index(t)?;
        if m == 0 || m > self.mu_half.len() - 1 {
            return Err(Error::InvalidInput(format!("no reference potential around t = {t}")));
        }
        Ok(self.mu_half[m - 1].combine(0.5, &self.mu_half[m], 0.5))
    }
}

/// Errors of one run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorNorms {
    /// `max_m ||grad(phi(t_m) - phi_h^m)||`
    pub phi_linf_h1: f64,
    /// `max_m ||u(t_m) - u_h^m||`
    pub u_linf_l2: f64,
    /// `(tau sum ||grad(mu(t_{m+1/2}) - mu_h^{m+1/2})||^2)^{1/2}`
    pub mu_l2_h1: f64,
    /// `(tau sum ||grad(ubar - ubar_h)||^2)^{1/2}`
    pub ubar_l2_h1: f64,
}

impl ErrorNorms {
    /// Square root of the sum of the squared norms (the energy-norm error).
    pub fn combined(&self) -> f64 {
        (self.phi_linf_h1.powi(2) + self.u_linf_l2.powi(2) + self.mu_l2_h1.powi(2) + self.ubar_l2_h1.powi(2)).sqrt()
    }
}

/// Running error accumulator for one simulation against a manufactured solution.
pub struct ErrorTracker<'a> {
    ctx: &'a ProjectionContext,
    sol: &'a ManufacturedSolution,
    reference: ErrorReference,
    run: Option<&'a ReferenceRun>,
    tau: f64,
    norms: ErrorNorms,
    mu_sum: f64,
    ubar_sum: f64,
}

impl<'a> ErrorTracker<'a> {
    /// Tracker against the exact fields or their projections.
    pub fn new(ctx: &'a ProjectionContext, sol: &'a ManufacturedSolution, reference: ErrorReference, tau: f64) -> Self {
        Self { ctx, sol, reference, run: None, tau, norms: ErrorNorms::default(), mu_sum: 0.0, ubar_sum: 0.0 }
    }

    /// Tracker against a stored fine-step run on the same mesh.
    pub fn against_run(ctx: &'a ProjectionContext, sol: &'a ManufacturedSolution, run: &'a ReferenceRun, tau: f64) -> Self {
        let reference = ErrorReference::FineStep(run.tau);
        Self { ctx, sol, reference, run: Some(run), tau, norms: ErrorNorms::default(), mu_sum: 0.0, ubar_sum: 0.0 }
    }

    fn run(&self) -> Result<&'a ReferenceRun> {
        self.run.ok_or_else(|| Error::InvalidInput("fine-step reference without a stored run".into()))
    }

    fn h1_diff(&self, a: &FieldVector, b: &FieldVector) -> f64 {
        let d = a.combine(1.0, b, -1.0);
        self.ctx.stiffness.bilinear(&d.coeffs, &d.coeffs).max(0.0).sqrt()
    }

    fn phi_err(&self, phi: &FieldVector, t: f64) -> Result<f64> {
        let s = self.sol;
        Ok(match self.reference {
            ErrorReference::FineStep(_) => {
                let run = self.run()?;
                self.h1_diff(&run.phi[run.index(t)?], phi)
            }
            ErrorReference::Exact => scalar_error(self.ctx, &phi.coeffs, |x| s.phi(x, t), |x| s.grad_phi(x, t)).1,
            ErrorReference::Projection => self.h1_diff(&self.ctx.ritz_project(|x| s.phi(x, t), |x| s.grad_phi(x, t))?, phi),
        })
    }

    /// The discrete velocity `u` is compared against at `t`, when there is one.
    fn discrete_u(&self, t: f64) -> Result<FieldVector> {
        let s = self.sol;
        match self.reference {
            ErrorReference::FineStep(_) => {
                let run = self.run()?;
                Ok(run.u[run.index(t)?].clone())
            }
            _ => Ok(self.ctx.stokes_project(|x| s.grad_u(x, t), |x| s.p(x, t))?.0),
        }
    }

    fn u_err(&self, u: &FieldVector, t: f64) -> Result<f64> {
        let s = self.sol;
        Ok(match self.reference {
            ErrorReference::Exact => vector_error(self.ctx, &u.coeffs, |x| s.u(x, t), |x| s.grad_u(x, t)).0,
            _ => {
                let d = self.discrete_u(t)?.combine(1.0, u, -1.0);
                self.ctx.vel_mass.bilinear(&d.coeffs, &d.coeffs).max(0.0).sqrt()
            }
        })
    }

    /// Records level `m` of the discrete solution.
    pub fn record_level(&mut self, phi: &FieldVector, u: &FieldVector, t: f64) -> Result<()> {
        self.norms.phi_linf_h1 = self.norms.phi_linf_h1.max(self.phi_err(phi, t)?);
        self.norms.u_linf_l2 = self.norms.u_linf_l2.max(self.u_err(u, t)?);
        Ok(())
    }

    /// Records the half-step quantities of the step ending at `t_new`.
    pub fn record_half_step(&mut self, mu: &FieldVector, u_new: &FieldVector, u_old: &FieldVector, t_new: f64) -> Result<()> {
        let s = self.sol;
        let ctx = self.ctx;
        let t_half = t_new - 0.5 * self.tau;
        let t_old = t_new - self.tau;
        let ubar = u_new.combine(0.5, u_old, 0.5);
        let (emu, eubar) = match self.reference {
            ErrorReference::Exact => {
                let emu = scalar_error(ctx, &mu.coeffs, |x| s.mu(x, t_half), |x| s.grad_mu(x, t_half)).1;
                let avg_jac = |x: [f64; 2]| {
                    let a = s.grad_u(x, t_new);
                    let b = s.grad_u(x, t_old);
                    [[0.5 * (a[0][0] + b[0][0]), 0.5 * (a[0][1] + b[0][1])], [0.5 * (a[1][0] + b[1][0]), 0.5 * (a[1][1] + b[1][1])]]
                };
                let avg_u = |x: [f64; 2]| {
                    let a = s.u(x, t_new);
                    let b = s.u(x, t_old);
                    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
                };
                (emu, vector_error(ctx, &ubar.coeffs, avg_u, avg_jac).1)
            }
            ErrorReference::Projection | ErrorReference::FineStep(_) => {
                let rmu = match self.reference {
                    ErrorReference::FineStep(_) => self.run()?.mu_at(t_half)?,
                    _ => ctx.ritz_project(|x| s.mu(x, t_half), |x| s.grad_mu(x, t_half))?,
                };
                let emu = self.h1_diff(&rmu, mu);
                let pu = self.discrete_u(t_new)?.combine(0.5, &self.discrete_u(t_old)?, 0.5);
                let du = pu.combine(1.0, &ubar, -1.0);
                (emu, ctx.vel_stiffness.bilinear(&du.coeffs, &du.coeffs).max(0.0).sqrt())
            }
        };
        self.mu_sum += self.tau * emu * emu;
        self.ubar_sum += self.tau * eubar * eubar;
        self.norms.mu_l2_h1 = self.mu_sum.sqrt();
        self.norms.ubar_l2_h1 = self.ubar_sum.sqrt();
        Ok(())
    }

    pub fn norms(&self) -> ErrorNorms {
        self.norms
    }
}

/// All errors of a stored run (levels `0..=M` and half steps `1..M`).
pub fn error_norms(
    ctx: &ProjectionContext,
    sol: &ManufacturedSolution,
    reference: ErrorReference,
    tau: f64,
    history: &[SchemeState],
    mu_half: &[FieldVector],
) -> Result<ErrorNorms> {
    let mut tr = ErrorTracker::new(ctx, sol, reference, tau);
    if let Some(first) = history.first() {
        tr.record_level(&first.phi_prev, &first.u_prev, first.t - tau)?;
    }
    for st in history {
        tr.record_level(&st.phi_curr, &st.u_curr, st.t)?;
    }
    for (w, mu) in history.windows(2).zip(mu_half) {
        tr.record_half_step(mu, &w[1].u_curr, &w[0].u_curr, w[1].t)?;
    }
    Ok(tr.norms())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub tau: f64,
    pub steps: usize,
    pub errors: ErrorNorms,
    pub max_newton_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub mode: StudyMode,
    pub reference: ErrorReference,
    pub final_time: f64,
    pub rows: Vec<ConvergenceRow>,
}

/// Observed orders between consecutive rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub phi_linf_h1: f64,
    pub u_linf_l2: f64,
    pub mu_l2_h1: f64,
    pub ubar_l2_h1: f64,
    pub combined: f64,
}

impl ConvergenceTable {
    /// `log(e_k / e_{k+1}) / log(s_k / s_{k+1})` where `s` is `tau` in temporal mode and
    /// `h` otherwise.
    pub fn rates(&self) -> Vec<Rates> {
        self.rows
            .windows(2)
            .map(|w| {
                let (a, b) = (&w[0], &w[1]);
                let ratio = match self.mode {
                    StudyMode::Temporal => a.tau / b.tau,
                    _ => a.h / b.h,
                }
                .ln();
                let r = |x: f64, y: f64| (x / y).ln() / ratio;
                Rates {
                    phi_linf_h1: r(a.errors.phi_linf_h1, b.errors.phi_linf_h1),
                    u_linf_l2: r(a.errors.u_linf_l2, b.errors.u_linf_l2),
                    mu_l2_h1: r(a.errors.mu_l2_h1, b.errors.mu_l2_h1),
                    ubar_l2_h1: r(a.errors.ubar_l2_h1, b.errors.ubar_l2_h1),
                    combined: r(a.errors.combined(), b.errors.combined()),
                }
            })
            .collect()
    }
}

/// Worker count for independent levels: `CHNS_THREADS` if set, else available cores.
pub fn worker_count() -> usize {
    std::env::var("CHNS_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn checked_steps(tau: f64, final_time: f64) -> Result<usize> {
    let steps = (final_time / tau).round() as usize;
    if steps < 2 || ((steps as f64) * tau - final_time).abs() > 1e-9 * final_time {
        return Err(Error::InvalidInput(format!("tau = {tau} does not divide T = {final_time} into at least two steps")));
    }
    Ok(steps)
}

/// Marches from `start`, or from projected exact data, handing every state and half-step
/// potential to `visit`. Returns the largest Newton iteration count.
fn march(
    ctx: &ProjectionContext,
    sol: &ManufacturedSolution,
    tau: f64,
    steps: usize,
    newton: NewtonConfig,
    start: Option<SchemeState>,
    mut visit: impl FnMut(&SchemeState, Option<(&FieldVector, &SchemeState)>) -> Result<()>,
) -> Result<usize> {
    let mut scheme = Scheme::new(ctx, sol.params, tau, newton)?;
    let mut state = match start {
        Some(s) => s,
        None => scheme.initialize(InitialData::Exact(sol), Some(sol))?,
    };
    visit(&state, None)?;
    let mut max_iters = 0;
    for _ in 1..steps {
        let (next, mu, report) = scheme.step(&state, Some(sol))?;
        max_iters = max_iters.max(report.newton_iters);
        visit(&next, Some((&mu, &state)))?;
        state = next;
    }
    Ok(max_iters)
}

fn track(tr: &mut ErrorTracker<'_>, st: &SchemeState, step: Option<(&FieldVector, &SchemeState)>) -> Result<()> {
    match step {
        None => {
            tr.record_level(&st.phi_prev, &st.u_prev, st.t - tr.tau)?;
            tr.record_level(&st.phi_curr, &st.u_curr, st.t)
        }
        Some((mu, prev)) => {
            tr.record_level(&st.phi_curr, &st.u_curr, st.t)?;
            tr.record_half_step(mu, &st.u_curr, &prev.u_curr, st.t)
        }
    }
}

fn context(n: usize, eta: f64) -> Result<ProjectionContext> {
    ProjectionContext::new(Arc::new(Mesh::structured(n, n, Rect::unit())?), eta)
}

/// Initializes from projections of the exact solution and marches to `final_time`.
pub fn run_level(
    sol: &ManufacturedSolution,
    level: Level,
    final_time: f64,
    reference: ErrorReference,
    newton: NewtonConfig,
) -> Result<ConvergenceRow> {
    if let ErrorReference::FineStep(_) = reference {
        return Err(Error::InvalidInput("fine-step errors need a stored reference run".into()));
    }
    let ctx = context(level.n, sol.params.eta)?;
    let steps = checked_steps(level.tau, final_time)?;
    let mut tracker = ErrorTracker::new(&ctx, sol, reference, level.tau);
    let max_newton_iters = march(&ctx, sol, level.tau, steps, newton, None, |st, step| track(&mut tracker, st, step))?;
    Ok(ConvergenceRow { h: ctx.mesh.h_max, tau: level.tau, steps, errors: tracker.norms(), max_newton_iters })
}

/// Stores every level of a run on `ctx`.
pub fn reference_run(ctx: &ProjectionContext, sol: &ManufacturedSolution, tau: f64, final_time: f64, newton: NewtonConfig) -> Result<ReferenceRun> {
    let steps = checked_steps(tau, final_time)?;
    let mut run = ReferenceRun { tau, phi: Vec::new(), u: Vec::new(), p: Vec::new(), mu_half: Vec::new() };
    let start = Scheme::new(ctx, sol.params, tau, newton)?.initialize(InitialData::Exact(sol), Some(sol))?;
    // the pressure at t = 0 never enters the second-order step
    let p0 = ctx.stokes_project(|x| sol.grad_u(x, 0.0), |x| sol.p(x, 0.0))?.1;
    march(ctx, sol, tau, steps, newton, Some(start), |st, step| {
        match step {
            None => {
                run.phi.extend([st.phi_prev.clone(), st.phi_curr.clone()]);
                run.u.extend([st.u_prev.clone(), st.u_curr.clone()]);
                run.p.extend([p0.clone(), st.p_curr.clone()]);
                if let Some(mu) = &st.mu_half_prev {
                    run.mu_half.push(mu.clone());
                }
            }
            Some((mu, _)) => {
                run.phi.push(st.phi_curr.clone());
                run.u.push(st.u_curr.clone());
                run.p.push(st.p_curr.clone());
                run.mu_half.push(mu.clone());
            }
        }
        Ok(())
    })?;
    if run.mu_half.len() != steps {
        return Err(Error::Invariant("reference run is missing the first half-step potential".into()));
    }
    Ok(run)
}

/// Temporal study on one `n x n` mesh measured against a run with step `tau_ref`, which
/// must divide every step in `taus`. Each level starts from the reference run's first two
/// levels. The levels run concurrently after the reference.
pub fn run_fine_step_study(
    sol: &ManufacturedSolution,
    n: usize,
    taus: &[f64],
    tau_ref: f64,
    final_time: f64,
    newton: NewtonConfig,
) -> Result<ConvergenceTable> {
    if taus.windows(2).any(|w| w[1] >= w[0]) || taus.last().is_some_and(|&t| t <= tau_ref) {
        return Err(Error::InvalidInput("steps must decrease and stay above the reference step".into()));
    }
    for &tau in taus {
        let r = tau / tau_ref;
        if (r - r.round()).abs() > 1e-9 * r {
            return Err(Error::InvalidInput(format!("reference step {tau_ref} does not divide {tau}")));
        }
    }
    let ctx = context(n, sol.params.eta)?;
    let run = reference_run(&ctx, sol, tau_ref, final_time, newton)?;
    let (ctx, run) = (&ctx, &run);
    let results: Vec<Result<ConvergenceRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = taus
            .iter()
            .map(|&tau| {
                s.spawn(move || {
                    let steps = checked_steps(tau, final_time)?;
                    let mut tracker = ErrorTracker::against_run(ctx, sol, run, tau);
                    let start = run.start(ctx, tau)?;
                    let max_newton_iters = march(ctx, sol, tau, steps, newton, Some(start), |st, step| track(&mut tracker, st, step))?;
                    Ok(ConvergenceRow { h: ctx.mesh.h_max, tau, steps, errors: tracker.norms(), max_newton_iters })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Invariant("study worker panicked".into())))).collect()
    });
    Ok(ConvergenceTable {
        mode: StudyMode::Temporal,
        reference: ErrorReference::FineStep(tau_ref),
        final_time,
        rows: results.into_iter().collect::<Result<_>>()?,
    })
}

/// Runs every level (concurrently, up to [`worker_count`]) and tabulates errors.
pub fn run_convergence_study(
    sol: &ManufacturedSolution,
    levels: &[Level],
    final_time: f64,
    mode: StudyMode,
    reference: ErrorReference,
    newton: NewtonConfig,
) -> Result<ConvergenceTable> {
    if let ErrorReference::FineStep(_) = reference {
        return Err(Error::InvalidInput("use run_fine_step_study for fine-step references".into()));
    }
    for w in levels.windows(2) {
        let ok = match mode {
            StudyMode::Temporal => w[1].n == w[0].n && w[1].tau < w[0].tau,
            StudyMode::Spatial => w[1].tau == w[0].tau && w[1].n > w[0].n,
            StudyMode::Coupled => w[1].tau < w[0].tau && w[1].n > w[0].n,
        };
        if !ok {
            return Err(Error::InvalidInput(format!("levels are not monotone for a {mode} study")));
        }
    }
    let workers = worker_count().max(1);
    let mut rows: Vec<Option<Result<ConvergenceRow>>> = (0..levels.len()).map(|_| None).collect();
    // largest levels first so the slowest work starts early
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| {
        let cost = |l: &Level| (l.n * l.n) as f64 / l.tau;
        cost(&levels[b]).total_cmp(&cost(&levels[a]))
    });
    for chunk in order.chunks(workers) {
        let results: Vec<(usize, Result<ConvergenceRow>)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| (i, s.spawn(move || run_level(sol, levels[i], final_time, reference, newton))))
                .collect();
            handles
                .into_iter()
                .map(|(i, h)| (i, h.join().unwrap_or_else(|_| Err(Error::Invariant("study worker panicked".into())))))
                .collect()
        });
        for (i, r) in results {
            rows[i] = Some(r);
        }
    }
    let rows = rows.into_iter().map(|r| r.expect("every level ran")).collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceTable { mode, reference, final_time, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sol() -> ManufacturedSolution {
        builtin_solution("trig", PhysParams::new(0.1, 1.0, 1.0).unwrap()).unwrap()
    }

    fn points(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect()
    }

    #[test]
    fn boundary_and_divergence() {
        let s = sol();
        for k in 0..50 {
            let a = k as f64 / 50.0;
            for x in [[a, 0.0], [a, 1.0], [0.0, a], [1.0, a]] {
                let u = s.u(x, 0.7);
                assert!(u[0].abs() < 1e-14 && u[1].abs() < 1e-14);
                // homogeneous Neumann data for phi and mu
                let n = if x[0] == 0.0 || x[0] == 1.0 { 0 } else { 1 };
                assert!(s.grad_phi(x, 0.7)[n].abs() < 1e-14);
                assert!(s.grad_mu(x, 0.7)[n].abs() < 1e-12);
            }
        }
        for x in points(1000, 1) {
            let j = s.grad_u(x, 0.3);
            assert!((j[0][0] + j[1][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn mu_matches_finite_difference_laplacian() {
        let s = sol();
        let eps = s.params.epsilon;
        let h = 1e-4;
        for x in points(200, 2) {
            let t = 0.4;
            let f = |dx: f64, dy: f64| s.phi([x[0] + dx, x[1] + dy], t);
            let lap = (f(h, 0.0) + f(-h, 0.0) + f(0.0, h) + f(0.0, -h) - 4.0 * f(0.0, 0.0)) / (h * h);
            let phi = s.phi(x, t);
            let mu_fd = (phi * phi * phi - phi) / eps - eps * lap;
            assert!((mu_fd - s.mu(x, t)).abs() < 1e-5, "{mu_fd} {}", s.mu(x, t));
        }
    }

    /// Forcing rebuilt from central differences of the closed-form fields.
    #[test]
    fn forcing_matches_finite_differences() {
        let s = sol();
        let PhysParams { epsilon: eps, eta, gamma } = s.params;
        let h = 1e-4;
        for x in points(100, 3) {
            let t = 0.35;
            let e = [[h, 0.0], [0.0, h]];
            let sh = |x: [f64; 2], d: [f64; 2], k: f64| [x[0] + k * d[0], x[1] + k * d[1]];
            let lap = |f: &dyn Fn([f64; 2]) -> f64| {
                (f(sh(x, e[0], 1.0)) + f(sh(x, e[0], -1.0)) + f(sh(x, e[1], 1.0)) + f(sh(x, e[1], -1.0)) - 4.0 * f(x)) / (h * h)
            };
            let grad = |f: &dyn Fn([f64; 2]) -> f64| {
                [(f(sh(x, e[0], 1.0)) - f(sh(x, e[0], -1.0))) / (2.0 * h), (f(sh(x, e[1], 1.0)) - f(sh(x, e[1], -1.0))) / (2.0 * h)]
            };
            let phi_t = (s.phi(x, t + h) - s.phi(x, t - h)) / (2.0 * h);
            let gphi = grad(&|y| s.phi(y, t));
            let u = s.u(x, t);
            let f_phi = phi_t + u[0] * gphi[0] + u[1] * gphi[1] - eps * lap(&|y| s.mu(y, t));
            assert!((f_phi - s.f_phi(x, t)).abs() < 1e-4 * (1.0 + f_phi.abs()), "{f_phi} {}", s.f_phi(x, t));

            let gp = grad(&|y| s.p(y, t));
            let mu = s.mu(x, t);
            let fu = s.f_u(x, t);
            for c in 0..2 {
                let uc = |y: [f64; 2]| s.u(y, t)[c];
                let ut = (s.u(x, t + h)[c] - s.u(x, t - h)[c]) / (2.0 * h);
                let gu = grad(&uc);
                let f = ut - eta * lap(&uc) + u[0] * gu[0] + u[1] * gu[1] + gp[c] - gamma * mu * gphi[c];
                assert!((f - fu[c]).abs() < 1e-4 * (1.0 + f.abs()), "{c}: {f} {}", fu[c]);
            }
        }
    }

    #[test]
    fn equilibrium_is_reproduced_exactly() {
        let s = builtin_solution("equilibrium", PhysParams::new(0.1, 1.0, 1.0).unwrap()).unwrap();
        let row = run_level(&s, Level { n: 4, tau: 0.1 }, 0.5, ErrorReference::Exact, NewtonConfig::default()).unwrap();
        assert!(row.errors.combined() < 1e-9, "{:?}", row.errors);
        assert!(builtin_solution("nope", s.params).is_err());
    }

    #[test]
    fn zero_field_error_is_exact_norm() {
        let s = sol();
        let ctx = ProjectionContext::new(Arc::new(Mesh::unit_square(8).unwrap()), 1.0).unwrap();
        let t = 0.0;
        let mut tr = ErrorTracker::new(&ctx, &s, ErrorReference::Exact, 0.1);
        tr.record_level(&ctx.phase.zeros(), &ctx.velocity.zeros(), t).unwrap();
        // ||grad phi(0)||^2 = pi^2 / 2 on the unit square
        assert!((tr.norms().phi_linf_h1 - (PI * PI / 2.0).sqrt()).abs() < 1e-9);
        assert_eq!(tr.norms().u_linf_l2, 0.0);
    }

    #[test]
    fn rates_from_table() {
        let row = |h: f64, tau: f64, e: f64| ConvergenceRow {
            h,
            tau,
            steps: 1,
            errors: ErrorNorms { phi_linf_h1: e, u_linf_l2: e, mu_l2_h1: e, ubar_l2_h1: e },
            max_newton_iters: 1,
        };
        let t = ConvergenceTable {
            mode: StudyMode::Temporal,
            reference: ErrorReference::Exact,
            final_time: 1.0,
            rows: vec![row(0.1, 0.1, 4.0), row(0.1, 0.05, 1.0)],
        };
        let r = t.rates();
        assert!((r[0].phi_linf_h1 - 2.0).abs() < 1e-14 && (r[0].combined - 2.0).abs() < 1e-14);
    }
}
