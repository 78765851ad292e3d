//! Run configuration: a TOML file, command-line overrides, documented defaults.
//!
//! Every key is optional. Unknown keys are rejected and every error names the offending
//! key path (e.g. `params.epsilon`).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::mesh::Rect;
use crate::mms::BUILTIN_NAMES;
use crate::scheme::{NewtonConfig, PhysParams};

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-11;
pub const DEFAULT_MAX_ITERS: usize = 30;
pub const DEFAULT_EPSILON: f64 = 0.1;
/// Interface width used by manufactured-solution studies when none is configured.
pub const DEFAULT_STUDY_EPSILON: f64 = 0.5;
pub const STABILITY_TAUS: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    MmsStudy,
    StabilitySweep,
    GronwallSelftest,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Simulate => "simulate",
            Mode::MmsStudy => "mms-study",
            Mode::StabilitySweep => "stability-sweep",
            Mode::GronwallSelftest => "gronwall-selftest",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitKind {
    /// Projections of a manufactured solution at `t = 0` and `t = tau`; the run is forced.
    ExactMms(String),
    /// Uniform noise in `[-0.05, 0.05]` per vertex, `u = 0`.
    RandomSeed(u64),
    Constant(f64),
}

impl FromStr for InitKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, arg) = s.split_once(':').ok_or_else(|| format!("expected `kind:value`, got `{s}`"))?;
        match kind {
            "exact-mms" => {
                if !BUILTIN_NAMES.contains(&arg) && arg != "default" {
                    return Err(format!("unknown manufactured solution `{arg}` (known: {})", BUILTIN_NAMES.join(", ")));
                }
                Ok(InitKind::ExactMms(arg.to_string()))
            }
            "random-seed" => arg.parse().map(InitKind::RandomSeed).map_err(|e| format!("bad seed `{arg}`: {e}")),
            "constant" => match arg.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(InitKind::Constant(v)),
                _ => Err(format!("bad constant `{arg}`")),
            },
            _ => Err(format!("unknown init kind `{kind}` (expected exact-mms, random-seed or constant)")),
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitKind::ExactMms(n) => write!(f, "exact-mms:{n}"),
            InitKind::RandomSeed(s) => write!(f, "random-seed:{s}"),
            InitKind::Constant(c) => write!(f, "constant:{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Vtk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    /// Fixed mesh, decreasing steps, errors against a fine-step run on the same mesh.
    Temporal,
    /// Fixed step, refined meshes, errors against the exact solution.
    Spatial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub snapshot_every: usize,
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub kind: StudyKind,
    pub solution: String,
    pub final_time: f64,
    /// Temporal: the mesh `n x n` and the step ladder.
    pub n: usize,
    pub taus: Vec<f64>,
    pub tau_ref: f64,
    /// Spatial: the meshes and the step.
    pub meshes: Vec<usize>,
    pub tau: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            kind: StudyKind::Temporal,
            solution: "trig".into(),
            final_time: 0.5,
            n: 64,
            taus: vec![0.1, 0.05, 0.025],
            tau_ref: 1.0 / 320.0,
            meshes: vec![8, 16, 32],
            tau: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub mesh: MeshConfig,
    pub tau: f64,
    pub steps: usize,
    pub params: PhysParams,
    pub init: InitKind,
    pub newton: NewtonConfig,
    pub output: OutputConfig,
    pub study: StudyConfig,
    pub sweep_taus: Vec<f64>,
    pub gronwall_instances: usize,
}

impl RunConfig {
    pub fn final_time(&self) -> f64 {
        self.tau * self.steps as f64
    }
}

// Raw file layout. Everything is optional so that defaults and flags can be layered.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    mode: Option<Mode>,
    init: Option<String>,
    mesh: Option<FileMesh>,
    grid: Option<FileGrid>,
    params: Option<FileParams>,
    newton: Option<FileNewton>,
    output: Option<FileOutput>,
    study: Option<FileStudy>,
    sweep: Option<FileSweep>,
    gronwall: Option<FileGronwall>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileMesh {
    nx: Option<usize>,
    ny: Option<usize>,
    /// `[x0, y0, x1, y1]`
    rect: Option<[f64; 4]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileGrid {
    tau: Option<f64>,
    steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileParams {
    epsilon: Option<f64>,
    eta: Option<f64>,
    gamma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileNewton {
    tol: Option<f64>,
    max_iters: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOutput {
    directory: Option<PathBuf>,
    snapshot_every: Option<usize>,
    formats: Option<Vec<Format>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileStudy {
    kind: Option<StudyKind>,
    solution: Option<String>,
    final_time: Option<f64>,
    n: Option<usize>,
    taus: Option<Vec<f64>>,
    tau_ref: Option<f64>,
    meshes: Option<Vec<usize>>,
    tau: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSweep {
    taus: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileGronwall {
    instances: Option<usize>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub mesh: Option<(usize, usize)>,
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub tol: Option<f64>,
}

fn config_error(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { key: key.into(), message: message.into() }
}

fn parse_file(text: &str) -> Result<FileConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| config_error("<document>", e.message().to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        config_error(if key == "." { "<root>".to_string() } else { key }, e.inner().message().to_string())
    })
}

/// Reads `path` (if any), applies `flags`, fills defaults and validates.
pub fn parse_config(path: Option<&Path>, flags: &Overrides) -> Result<RunConfig> {
    let file = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| config_error("<file>", format!("{}: {e}", p.display())))?;
            parse_file(&text)?
        }
        None => FileConfig::default(),
    };
    resolve(file, flags)
}

/// [`parse_config`] for in-memory TOML.
pub fn parse_config_str(text: &str, flags: &Overrides) -> Result<RunConfig> {
    resolve(parse_file(text)?, flags)
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(config_error(key, format!("must be positive, got {v}")))
    }
}

fn at_least_one(key: &str, v: usize) -> Result<usize> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(config_error(key, "must be at least 1"))
    }
}

fn resolve(file: FileConfig, flags: &Overrides) -> Result<RunConfig> {
    let mode = flags.mode.or(file.mode).unwrap_or(Mode::Simulate);

    let fm = file.mesh.unwrap_or_default();
    let (nx, ny) = flags.mesh.unwrap_or((fm.nx.unwrap_or(16), fm.ny.unwrap_or(16)));
    let [x0, y0, x1, y1] = fm.rect.unwrap_or([0.0, 0.0, 1.0, 1.0]);
    if !(x1 > x0 && y1 > y0) || [x0, y0, x1, y1].iter().any(|v| !v.is_finite()) {
        return Err(config_error("mesh.rect", "expected finite [x0, y0, x1, y1] with x1 > x0 and y1 > y0"));
    }
    let mesh = MeshConfig { nx: at_least_one("mesh.nx", nx)?, ny: at_least_one("mesh.ny", ny)?, rect: Rect::new(x0, y0, x1, y1) };

    let fg = file.grid.unwrap_or_default();
    let tau = positive("grid.tau", flags.tau.or(fg.tau).unwrap_or(DEFAULT_TAU))?;
    let steps = at_least_one("grid.steps", fg.steps.unwrap_or(DEFAULT_STEPS))?;

    let fp = file.params.unwrap_or_default();
    let eps_default = if mode == Mode::MmsStudy { DEFAULT_STUDY_EPSILON } else { DEFAULT_EPSILON };
    let params = PhysParams {
        epsilon: positive("params.epsilon", flags.epsilon.or(fp.epsilon).unwrap_or(eps_default))?,
        eta: positive("params.eta", flags.eta.or(fp.eta).unwrap_or(1.0))?,
        gamma: positive("params.gamma", flags.gamma.or(fp.gamma).unwrap_or(1.0))?,
    };

    let init = match (flags.seed, file.init) {
        (Some(seed), _) => InitKind::RandomSeed(seed),
        (None, Some(s)) => s.parse().map_err(|m| config_error("init", m))?,
        (None, None) => InitKind::RandomSeed(0),
    };

    let fnw = file.newton.unwrap_or_default();
    let newton = NewtonConfig {
        tol: positive("newton.tol", flags.tol.or(fnw.tol).unwrap_or(DEFAULT_TOL))?,
        max_iters: at_least_one("newton.max_iters", fnw.max_iters.unwrap_or(DEFAULT_MAX_ITERS))?,
    };

    let fo = file.output.unwrap_or_default();
    let output = OutputConfig {
        directory: flags.out.clone().or(fo.directory).unwrap_or_else(|| PathBuf::from("out")),
        snapshot_every: at_least_one("output.snapshot_every", fo.snapshot_every.unwrap_or(10))?,
        formats: fo.formats.unwrap_or_else(|| vec![Format::Csv, Format::Vtk]),
    };

    let fs = file.study.unwrap_or_default();
    let d = StudyConfig::default();
    let study = StudyConfig {
        kind: fs.kind.unwrap_or(d.kind),
        solution: fs.solution.unwrap_or(d.solution),
        final_time: positive("study.final_time", fs.final_time.unwrap_or(d.final_time))?,
        n: at_least_one("study.n", fs.n.unwrap_or(d.n))?,
        taus: fs.taus.unwrap_or(d.taus),
        tau_ref: positive("study.tau_ref", fs.tau_ref.unwrap_or(d.tau_ref))?,
        meshes: fs.meshes.unwrap_or(d.meshes),
        tau: positive("study.tau", fs.tau.unwrap_or(d.tau))?,
    };
    if !BUILTIN_NAMES.contains(&study.solution.as_str()) && study.solution != "default" {
        return Err(config_error("study.solution", format!("unknown manufactured solution `{}`", study.solution)));
    }
    for (i, &t) in study.taus.iter().enumerate() {
        positive(&format!("study.taus[{i}]"), t)?;
    }
    for (i, &n) in study.meshes.iter().enumerate() {
        at_least_one(&format!("study.meshes[{i}]"), n)?;
    }

    let sweep_taus = file.sweep.and_then(|s| s.taus).unwrap_or_else(|| STABILITY_TAUS.to_vec());
    for (i, &t) in sweep_taus.iter().enumerate() {
        positive(&format!("sweep.taus[{i}]"), t)?;
    }
    let gronwall_instances = at_least_one("gronwall.instances", file.gronwall.and_then(|g| g.instances).unwrap_or(1000))?;

    Ok(RunConfig { mode, mesh, tau, steps, params, init, newton, output, study, sweep_taus, gronwall_instances })
}
