//! CSV time series and legacy-VTK snapshots.
//!
//! Floats are written in scientific notation with 17 significant digits, which
//! round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::mms::ConvergenceTable;
use crate::space::FieldVector;

/// `x` with 17 significant digits, e.g. `1.0000000000000000e-2`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(&r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of `energy.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRow {
    pub m: usize,
    pub t: f64,
    pub e: f64,
    pub f: f64,
    pub grad_mu_sq: f64,
    pub grad_ubar_sq: f64,
    pub energy_law_residual: f64,
    pub mass: f64,
    pub linf_phi: f64,
}

pub const ENERGY_COLUMNS: [&str; 9] = ["m", "t", "E", "F", "grad_mu_sq", "grad_ubar_sq", "energy_law_residual", "mass", "linf_phi"];

pub fn write_energy_csv(path: &Path, rows: &[EnergyRow]) -> Result<()> {
    write_csv(
        path,
        &ENERGY_COLUMNS,
        rows.iter().map(|r| {
            let mut v = vec![r.m.to_string()];
            v.extend([r.t, r.e, r.f, r.grad_mu_sq, r.grad_ubar_sq, r.energy_law_residual, r.mass, r.linf_phi].map(fmt_f64));
            v
        }),
    )
}

/// Reads a file written by [`write_energy_csv`].
pub fn read_energy_csv(path: &Path) -> Result<Vec<EnergyRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(String::from).collect();
    if header != ENERGY_COLUMNS {
        return Err(Error::InvalidInput(format!("unexpected energy.csv header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let f = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| Error::InvalidInput(format!("bad number `{}`", &rec[i]))) };
        rows.push(EnergyRow {
            m: rec[0].parse().map_err(|_| Error::InvalidInput(format!("bad step `{}`", &rec[0])))?,
            t: f(1)?,
            e: f(2)?,
            f: f(3)?,
            grad_mu_sq: f(4)?,
            grad_ubar_sq: f(5)?,
            energy_law_residual: f(6)?,
            mass: f(7)?,
            linf_phi: f(8)?,
        });
    }
    Ok(rows)
}

/// `rates.csv`: one row per level, observed orders against the previous row (empty in
/// the first row).
pub fn write_rates_csv(path: &Path, table: &ConvergenceTable) -> Result<()> {
    let header = [
        "h", "tau", "steps", "phi_linf_h1", "u_linf_l2", "mu_l2_h1", "ubar_l2_h1", "combined", "rate_phi_linf_h1",
        "rate_u_linf_l2", "rate_mu_l2_h1", "rate_ubar_l2_h1", "rate_combined", "max_newton_iters",
    ];
    let rates = table.rates();
    write_csv(
        path,
        &header,
        table.rows.iter().enumerate().map(|(i, row)| {
            let e = &row.errors;
            let mut v = vec![fmt_f64(row.h), fmt_f64(row.tau), row.steps.to_string()];
            v.extend([e.phi_linf_h1, e.u_linf_l2, e.mu_l2_h1, e.ubar_l2_h1, e.combined()].map(fmt_f64));
            match i.checked_sub(1).map(|k| rates[k]) {
                Some(r) => v.extend([r.phi_linf_h1, r.u_linf_l2, r.mu_l2_h1, r.ubar_l2_h1, r.combined].map(fmt_f64)),
                None => v.extend(std::iter::repeat_n(String::new(), 5)),
            }
            v.push(row.max_newton_iters.to_string());
            v
        }),
    )
}

/// Per-step outcome of a stability sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub steps: usize,
    pub max_newton_iters: usize,
    pub f1: f64,
    pub f_max: f64,
    pub max_mass_drift: f64,
    pub max_law_residual: f64,
    pub monotone: bool,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let header = ["tau", "steps", "max_newton_iters", "F1", "F_max", "max_mass_drift", "max_energy_law_residual", "verdict"];
    write_csv(
        path,
        &header,
        rows.iter().map(|r| {
            vec![
                fmt_f64(r.tau),
                r.steps.to_string(),
                r.max_newton_iters.to_string(),
                fmt_f64(r.f1),
                fmt_f64(r.f_max),
                fmt_f64(r.max_mass_drift),
                fmt_f64(r.max_law_residual),
                if r.monotone { "pass" } else { "fail" }.to_string(),
            ]
        }),
    )
}

/// Fields of one snapshot, all sampled at mesh vertices.
pub struct Snapshot<'a> {
    pub mesh: &'a Mesh,
    pub phi: &'a FieldVector,
    pub mu: Option<&'a FieldVector>,
    pub p: &'a FieldVector,
    /// P2 velocity, restricted to its vertex nodes.
    pub u: &'a FieldVector,
    pub t: f64,
}

const VTK_TRIANGLE: u8 = 5;

/// Legacy ASCII VTK (version 3.0) unstructured grid with point data.
pub fn vtk_string(s: &Snapshot<'_>) -> String {
    let mesh = s.mesh;
    let nv = mesh.num_vertices();
    let nt = mesh.num_triangles();
    let nn = s.u.len() / 2;
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "chns snapshot t={}", fmt_f64(s.t));
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(out, "POINTS {nv} double");
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {} 0", fmt_f64(v[0]), fmt_f64(v[1]));
    }
    let _ = writeln!(out, "CELLS {nt} {}", 4 * nt);
    for t in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(out, "{VTK_TRIANGLE}");
    }
    let _ = writeln!(out, "POINT_DATA {nv}");
    let mut scalar = |name: &str, f: &FieldVector| {
        let _ = writeln!(out, "SCALARS {name} double 1");
        let _ = writeln!(out, "LOOKUP_TABLE default");
        for v in &f.coeffs[..nv] {
            let _ = writeln!(out, "{}", fmt_f64(*v));
        }
    };
    scalar("phi", s.phi);
    if let Some(mu) = s.mu {
        scalar("mu", mu);
    }
    scalar("p", s.p);
    let _ = writeln!(out, "VECTORS u double");
    for i in 0..nv {
        let _ = writeln!(out, "{} {} 0", fmt_f64(s.u.coeffs[i]), fmt_f64(s.u.coeffs[nn + i]));
    }
    out
}

pub fn write_vtk(path: &Path, s: &Snapshot<'_>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(vtk_string(s).as_bytes())?;
    w.flush()?;
    Ok(())
}

/// What a legacy VTK unstructured-grid file declares and contains.
#[derive(Debug, Clone, PartialEq)]
pub struct VtkSummary {
    pub version: String,
    pub title: String,
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<Vec<usize>>,
    pub cell_types: Vec<u8>,
    /// `(name, components, values)` in file order.
    pub point_data: Vec<(String, usize, Vec<f64>)>,
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::InvalidInput(format!("vtk: {}", msg.into()))
}

/// Parses the ASCII legacy format subset used by unstructured grids with point data,
/// checking every declared count.
pub fn parse_vtk(text: &str) -> Result<VtkSummary> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err("empty file"))?;
    let version = header
        .strip_prefix("# vtk DataFile Version ")
        .ok_or_else(|| parse_err(format!("bad header `{header}`")))?
        .trim()
        .to_string();
    let title = lines.next().ok_or_else(|| parse_err("missing title"))?.to_string();
    if lines.next().map(str::trim) != Some("ASCII") {
        return Err(parse_err("only ASCII files are supported"));
    }
    let mut tokens = lines.flat_map(str::split_whitespace).peekable();
    let mut next = |what: &str| tokens.next().ok_or_else(|| parse_err(format!("unexpected end of file, expected {what}")));
    fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
        s.parse().map_err(|_| parse_err(format!("bad number `{s}`")))
    }
    let expect = |got: &str, want: &str| -> Result<()> {
        if got == want {
            Ok(())
        } else {
            Err(parse_err(format!("expected `{want}`, got `{got}`")))
        }
    };
    expect(next("DATASET")?, "DATASET")?;
    expect(next("type")?, "UNSTRUCTURED_GRID")?;
    expect(next("POINTS")?, "POINTS")?;
    let np: usize = num(next("point count")?)?;
    next("point type")?;
    let mut points = Vec::with_capacity(np);
    for _ in 0..np {
        points.push([num(next("x")?)?, num(next("y")?)?, num(next("z")?)?]);
    }
    expect(next("CELLS")?, "CELLS")?;
    let nc: usize = num(next("cell count")?)?;
    let size: usize = num(next("cell list size")?)?;
    let mut cells = Vec::with_capacity(nc);
    let mut read = 0;
    for _ in 0..nc {
        let k: usize = num(next("cell size")?)?;
        let mut c = Vec::with_capacity(k);
        for _ in 0..k {
            let i: usize = num(next("cell index")?)?;
            if i >= np {
                return Err(parse_err(format!("cell index {i} out of range")));
            }
            c.push(i);
        }
        read += k + 1;
        cells.push(c);
    }
    if read != size {
        return Err(parse_err(format!("CELLS declares size {size}, found {read}")));
    }
    expect(next("CELL_TYPES")?, "CELL_TYPES")?;
    let nct: usize = num(next("cell type count")?)?;
    if nct != nc {
        return Err(parse_err(format!("{nct} cell types for {nc} cells")));
    }
    let mut cell_types = Vec::with_capacity(nc);
    for _ in 0..nc {
        cell_types.push(num(next("cell type")?)?);
    }
    let mut point_data = Vec::new();
    if let Ok(tok) = next("POINT_DATA") {
        expect(tok, "POINT_DATA")?;
        let n: usize = num(next("point data count")?)?;
        if n != np {
            return Err(parse_err(format!("POINT_DATA {n} for {np} points")));
        }
        while let Ok(kind) = next("attribute") {
            let name = next("attribute name")?.to_string();
            next("data type")?;
            let comps = match kind {
                "SCALARS" => {
                    let c: usize = num(next("component count")?)?;
                    expect(next("LOOKUP_TABLE")?, "LOOKUP_TABLE")?;
                    next("table name")?;
                    c
                }
                "VECTORS" => 3,
                other => return Err(parse_err(format!("unsupported attribute `{other}`"))),
            };
            let mut values = Vec::with_capacity(np * comps);
            for _ in 0..np * comps {
                values.push(num(next("attribute value")?)?);
            }
            point_data.push((name, comps, values));
        }
    }
    Ok(VtkSummary { version, title, points, cells, cell_types, point_data })
}
