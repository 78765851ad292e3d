//! Browser bindings: an unforced spinodal-decomposition run on the unit square and an
//! explorer for the extremal sequences of the discrete Grönwall lemmas.

use std::sync::Arc;

use chns::cli::runner::random_phase;
use chns::diagnostics::energy_f;
use chns::gronwall::{self, check_gronwall_standard, check_gronwall_weighted, extremal_standard, extremal_weighted};
use chns::scheme::{InitialData, NewtonConfig};
use chns::{Mesh, PhysParams, ProjectionContext, Scheme, SchemeState};
use wasm_bindgen::prelude::*;

fn js(e: chns::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Spinodal run on an `n x n` mesh with `eta = gamma = 1`, started from seeded noise.
#[wasm_bindgen]
pub struct Simulation {
    ctx: ProjectionContext,
    params: PhysParams,
    tau: f64,
    state: SchemeState,
    f: f64,
    newton_iters: usize,
}

impl Simulation {
    fn build(n: usize, epsilon: f64, tau: f64, seed: u64) -> chns::Result<Self> {
        let params = PhysParams::new(epsilon, 1.0, 1.0)?;
        let ctx = ProjectionContext::new(Arc::new(Mesh::unit_square(n)?), params.eta)?;
        let phi0 = random_phase(&ctx, seed);
        let u0 = ctx.velocity.zeros();
        let state = Scheme::new(&ctx, params, tau, NewtonConfig::default())?.initialize(InitialData::Bootstrap { phi0, u0 }, None)?;
        let f = energy_f(&ctx, &state.phi_curr, &state.phi_prev, &state.u_curr, &params)?;
        Ok(Self { ctx, params, tau, state, f, newton_iters: 0 })
    }

    fn march(&mut self, steps: usize) -> chns::Result<()> {
        let mut scheme = Scheme::new(&self.ctx, self.params, self.tau, NewtonConfig::default())?;
        for _ in 0..steps {
            let (next, _, report) = scheme.step(&self.state, None)?;
            self.f = report.energy.f_new;
            self.newton_iters = report.newton_iters;
            self.state = next;
        }
        Ok(())
    }
}

#[wasm_bindgen]
impl Simulation {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, epsilon: f64, tau: f64, seed: u32) -> Result<Simulation, JsError> {
        Self::build(n, epsilon, tau, seed.into()).map_err(js)
    }

    /// Takes `steps` time steps.
    pub fn advance(&mut self, steps: usize) -> Result<(), JsError> {
        self.march(steps).map_err(js)
    }

    /// Vertex values of the phase field, row by row from the bottom, `(n + 1)^2` entries.
    pub fn phi(&self) -> Vec<f64> {
        self.state.phi_curr.coeffs.clone()
    }

    /// Vertices per side.
    #[wasm_bindgen(getter)]
    pub fn side(&self) -> usize {
        ((self.ctx.mesh.num_vertices() as f64).sqrt().round()) as usize
    }

    #[wasm_bindgen(getter)]
    pub fn level(&self) -> usize {
        self.state.m
    }

    #[wasm_bindgen(getter)]
    pub fn time(&self) -> f64 {
        self.state.t
    }

    /// Modified energy `F` of the current pair of levels.
    #[wasm_bindgen(getter)]
    pub fn energy(&self) -> f64 {
        self.f
    }

    /// `(phi^m - phi^0, 1)`
    #[wasm_bindgen(getter)]
    pub fn mass_drift(&self) -> f64 {
        self.ctx.integral(&self.state.phi_curr.coeffs) - self.state.mass0
    }

    #[wasm_bindgen(getter)]
    pub fn newton_iters(&self) -> usize {
        self.newton_iters
    }
}

/// Extremal sequence for given `c`, together with the lemma's bound at every step.
#[wasm_bindgen]
pub struct GronwallView {
    a: Vec<f64>,
    bound: Vec<f64>,
    uniform_bound: f64,
    violation: Option<usize>,
}

impl GronwallView {
    /// `alpha = 0` selects the standard lemma, `0 < alpha < 1` the weighted one.
    fn build(c: &[f64], tau: f64, c2: f64, a0: f64, alpha: f64) -> chns::Result<Self> {
        let b = vec![0.0; c.len() + 1];
        let (input, report) = if alpha == 0.0 {
            let input = extremal_standard(c, &b, tau, c2);
            let r = check_gronwall_standard(&input)?;
            (input, r)
        } else {
            let input = extremal_weighted(c, &b, tau, c2, a0, alpha);
            let r = check_gronwall_weighted(&input, alpha)?;
            (input, r)
        };
        Ok(Self { a: input.a, bound: report.bound.clone(), uniform_bound: report.uniform_bound, violation: report.first_violation() })
    }
}

#[wasm_bindgen]
impl GronwallView {
    #[wasm_bindgen(constructor)]
    pub fn new(c: Vec<f64>, tau: f64, c2: f64, a0: f64, alpha: f64) -> Result<GronwallView, JsError> {
        Self::build(&c, tau, c2, a0, alpha).map_err(js)
    }

    /// `a_0, ..., a_M`
    pub fn sequence(&self) -> Vec<f64> {
        self.a.clone()
    }

    /// Bound on `a_l` for `l = 1..=M`.
    pub fn bound(&self) -> Vec<f64> {
        self.bound.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn uniform_bound(&self) -> f64 {
        self.uniform_bound
    }

    /// First step where the conclusion fails, if any.
    #[wasm_bindgen(getter)]
    pub fn violation(&self) -> Option<usize> {
        self.violation
    }
}

/// Growth constant of the weighted lemma.
#[wasm_bindgen]
pub fn growth_constant(alpha: f64) -> Result<f64, JsError> {
    gronwall::a_alpha(alpha).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulation_conserves_mass_and_dissipates() {
        let mut s = Simulation::build(6, 0.1, 0.01, 4).unwrap();
        assert_eq!(s.side(), 7);
        assert_eq!(s.phi().len(), 49);
        let f1 = s.energy();
        s.march(5).unwrap();
        assert_eq!(s.level(), 6);
        assert!(s.energy() <= f1 + 1e-12);
        assert!(s.mass_drift().abs() < 1e-12);
        assert!(s.newton_iters() >= 1);
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(Simulation::build(0, 0.1, 0.01, 0).is_err());
        assert!(Simulation::build(4, -1.0, 0.01, 0).is_err());
        assert!(GronwallView::build(&[1.0], -0.1, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn extremal_sequences_stay_below_bound() {
        let c = vec![2.0; 20];
        for alpha in [0.0, 1.0 / 3.0] {
            let v = GronwallView::build(&c, 0.05, 1.0, 0.5, alpha).unwrap();
            assert_eq!(v.sequence().len(), 21);
            assert_eq!(v.bound().len(), 20);
            assert!(v.violation().is_none());
            assert!(v.sequence()[1..].iter().zip(v.bound()).all(|(a, b)| *a <= b * (1.0 + 1e-12)));
        }
    }
}
