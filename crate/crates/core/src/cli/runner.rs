//! Executes a [`RunConfig`] and writes its artifacts.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Format, InitKind, Mode, RunConfig, StudyKind};
use super::output::{
    write_energy_csv, write_rates_csv, write_sweep_csv, write_vtk, EnergyRow, Snapshot, SweepRow,
};
use crate::diagnostics::{energy_e, energy_f, EnergyLedger};
use crate::error::{Error, Result};
use crate::gronwall;
use crate::mesh::Mesh;
use crate::mms::{builtin_solution, run_convergence_study, run_fine_step_study, ConvergenceTable, ErrorReference, Level, StudyMode};
use crate::projections::ProjectionContext;
use crate::scheme::{Forcing, InitialData, Scheme, SchemeState};
use crate::space::FieldVector;

/// Name of the file written next to partial outputs when a run fails.
pub const FAILURE_MARKER: &str = "FAILED";

/// Energy-law tolerance relative to `max(1, F^1)`.
pub const ENERGY_LAW_TOLERANCE: f64 = 1e-8;
/// Mass-drift tolerance relative to `|Omega|`.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Simulate { rows: Vec<EnergyRow> },
    Study { table: ConvergenceTable },
    Sweep { rows: Vec<SweepRow> },
    Gronwall { summary: gronwall::SelftestSummary },
}

/// Runs `config`, writing artifacts to its output directory. On error a failure marker
/// holding the message is written and the error returned.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let dir = &config.output.directory;
    std::fs::create_dir_all(dir)?;
    let marker = dir.join(FAILURE_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker)?;
    }
    let result = match config.mode {
        Mode::Simulate => simulate(config, dir).map(|rows| RunOutcome::Simulate { rows }),
        Mode::MmsStudy => study(config, dir).map(|table| RunOutcome::Study { table }),
        Mode::StabilitySweep => sweep(config, dir).map(|rows| RunOutcome::Sweep { rows }),
        Mode::GronwallSelftest => gronwall_selftest(config, dir).map(|summary| RunOutcome::Gronwall { summary }),
    };
    if let Err(e) = &result {
        std::fs::write(&marker, format!("{} failed: {e}\n", config.mode))?;
    }
    result
}

/// Per-vertex uniform noise in `[-0.05, 0.05]`.
pub fn random_phase(ctx: &ProjectionContext, seed: u64) -> FieldVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = ctx.phase.zeros();
    phi.coeffs.iter_mut().for_each(|v| *v = rng.random_range(-0.05..=0.05));
    phi
}

fn context(config: &RunConfig) -> Result<ProjectionContext> {
    let mesh = Mesh::structured(config.mesh.nx, config.mesh.ny, config.mesh.rect)?;
    ProjectionContext::new(Arc::new(mesh), config.params.eta)
}

#[derive(Default)]
struct Trajectory {
    max_newton_iters: usize,
    max_mass_drift: f64,
    max_law_residual: f64,
    f_max: f64,
}

/// Marches `steps` steps with step `tau`, appending one row per level from 1 to `rows`
/// (which keeps the partial series on failure) and calling `snapshot` on every level.
fn march(
    config: &RunConfig,
    ctx: &ProjectionContext,
    tau: f64,
    steps: usize,
    rows: &mut Vec<EnergyRow>,
    mut snapshot: impl FnMut(&SchemeState, Option<&FieldVector>) -> Result<()>,
) -> Result<Trajectory> {
    let params = config.params;
    let mut scheme = Scheme::new(ctx, params, tau, config.newton)?;
    let sol = match &config.init {
        InitKind::ExactMms(name) => Some(builtin_solution(name, params)?),
        _ => None,
    };
    let forcing = sol.as_ref().map(|s| s as &dyn Forcing);
    let mut state = match &config.init {
        InitKind::ExactMms(_) => scheme.initialize(InitialData::Exact(sol.as_ref().unwrap()), forcing)?,
        InitKind::RandomSeed(seed) => {
            scheme.initialize(InitialData::Bootstrap { phi0: random_phase(ctx, *seed), u0: ctx.velocity.zeros() }, None)?
        }
        InitKind::Constant(c) => {
            scheme.initialize(InitialData::Bootstrap { phi0: ctx.phase.constant(*c), u0: ctx.velocity.zeros() }, None)?
        }
    };
    let f1 = energy_f(ctx, &state.phi_curr, &state.phi_prev, &state.u_curr, &params)?;
    let mut ledger = EnergyLedger::new(f1);
    let law_bound = ENERGY_LAW_TOLERANCE * f1.max(1.0);
    let mass_bound = MASS_TOLERANCE * ctx.area;
    let row = |st: &SchemeState, f: f64, gmu: f64, gu: f64, law: f64| -> Result<EnergyRow> {
        Ok(EnergyRow {
            m: st.m,
            t: st.t,
            e: energy_e(ctx, &st.phi_curr, &st.u_curr, &params)?,
            f,
            grad_mu_sq: gmu,
            grad_ubar_sq: gu,
            energy_law_residual: law,
            mass: ctx.integral(&st.phi_curr.coeffs),
            linf_phi: st.phi_curr.max_abs(),
        })
    };
    rows.push(row(&state, f1, 0.0, 0.0, 0.0)?);
    let mut traj = Trajectory { f_max: f1, ..Default::default() };
    snapshot(&state, state.mu_half_prev.as_ref())?;
    for _ in 1..steps {
        let (next, mu, report) = scheme.step(&state, forcing)?;
        let law = ledger.push(report.energy);
        let e = report.energy;
        rows.push(row(&next, e.f_new, e.grad_mu_sq, e.grad_ubar_sq, if forcing.is_some() { f64::NAN } else { law })?);
        traj.max_newton_iters = traj.max_newton_iters.max(report.newton_iters);
        traj.max_mass_drift = traj.max_mass_drift.max(report.mass_drift);
        traj.f_max = traj.f_max.max(e.f_new);
        if forcing.is_none() {
            traj.max_law_residual = traj.max_law_residual.max(law);
            if !(law <= law_bound) {
                return Err(Error::Invariant(format!("energy law residual {law:e} exceeds {law_bound:e} at m = {}", next.m)));
            }
            if !(report.mass_drift <= mass_bound) {
                return Err(Error::Invariant(format!("mass drift {:e} exceeds {mass_bound:e} at m = {}", report.mass_drift, next.m)));
            }
        }
        snapshot(&next, Some(&mu))?;
        state = next;
    }
    Ok(traj)
}

fn simulate(config: &RunConfig, dir: &Path) -> Result<Vec<EnergyRow>> {
    let ctx = context(config)?;
    let vtk = config.output.formats.contains(&Format::Vtk);
    let every = config.output.snapshot_every;
    let mut rows = Vec::with_capacity(config.steps);
    let result = march(config, &ctx, config.tau, config.steps, &mut rows, |st, mu| {
        if vtk && (st.m % every == 0 || st.m == 1 || st.m == config.steps) {
            let path = dir.join(format!("snapshot_{:05}.vtk", st.m));
            write_vtk(&path, &Snapshot { mesh: &ctx.mesh, phi: &st.phi_curr, mu, p: &st.p_curr, u: &st.u_curr, t: st.t })?;
        }
        Ok(())
    });
    if config.output.formats.contains(&Format::Csv) && !rows.is_empty() {
        write_energy_csv(&dir.join("energy.csv"), &rows)?;
    }
    result.map(|_| rows)
}

fn study(config: &RunConfig, dir: &Path) -> Result<ConvergenceTable> {
    let s = &config.study;
    let sol = builtin_solution(&s.solution, config.params)?;
    let table = match s.kind {
        StudyKind::Temporal => run_fine_step_study(&sol, s.n, &s.taus, s.tau_ref, s.final_time, config.newton)?,
        StudyKind::Spatial => {
            let levels: Vec<Level> = s.meshes.iter().map(|&n| Level { n, tau: s.tau }).collect();
            run_convergence_study(&sol, &levels, s.final_time, StudyMode::Spatial, ErrorReference::Exact, config.newton)?
        }
    };
    write_rates_csv(&dir.join("rates.csv"), &table)?;
    Ok(table)
}

fn sweep(config: &RunConfig, dir: &Path) -> Result<Vec<SweepRow>> {
    let ctx = context(config)?;
    let mut rows = Vec::new();
    let mut failure = None;
    for &tau in &config.sweep_taus {
        let mut series = Vec::new();
        match march(config, &ctx, tau, config.steps, &mut series, |_, _| Ok(())) {
            Ok(t) => {
                let f1 = series[0].f;
                // F is allowed to sit at F^1 up to the energy-law tolerance
                let slack = ENERGY_LAW_TOLERANCE * f1.max(1.0);
                rows.push(SweepRow {
                    tau,
                    steps: config.steps,
                    max_newton_iters: t.max_newton_iters,
                    f1,
                    f_max: t.f_max,
                    max_mass_drift: t.max_mass_drift,
                    max_law_residual: t.max_law_residual,
                    monotone: series.iter().all(|r| r.f <= f1 + slack),
                });
            }
            Err(e) => {
                failure.get_or_insert(format!("tau = {tau}: {e}"));
            }
        }
    }
    write_sweep_csv(&dir.join("stability.csv"), &rows)?;
    if let Some(msg) = failure {
        return Err(Error::Invariant(msg));
    }
    if let Some(r) = rows.iter().find(|r| !r.monotone) {
        return Err(Error::Invariant(format!("F exceeded F^1 at tau = {}", r.tau)));
    }
    Ok(rows)
}

fn gronwall_selftest(config: &RunConfig, dir: &Path) -> Result<gronwall::SelftestSummary> {
    let seed = match config.init {
        InitKind::RandomSeed(s) => s,
        _ => 0,
    };
    let s = gronwall::selftest(config.gronwall_instances, seed)?;
    let alpha_third = gronwall::a_alpha(1.0 / 3.0)?;
    let text = format!(
        "lemma,instances,violations\nstandard,{},{}\nweighted,{},{}\n# hypothesis failures: {}; A(1/3) = {}\n",
        s.standard_instances, s.standard_violations, s.weighted_instances, s.weighted_violations, s.hypothesis_failures, alpha_third
    );
    std::fs::write(dir.join("gronwall.csv"), text)?;
    if !s.passed() || alpha_third != 1.5 {
        return Err(Error::Invariant(format!("Grönwall self-test failed: {s:?}, A(1/3) = {alpha_third}")));
    }
    Ok(s)
}
