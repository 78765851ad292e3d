use std::path::Path;
use std::process::Command;

use chns::cli::config::{parse_config_str, Overrides};
use chns::cli::output::{parse_vtk, read_energy_csv};
use chns::cli::runner::{run, RunOutcome, FAILURE_MARKER};

fn config(dir: &Path, body: &str) -> chns::cli::RunConfig {
    let text = format!("{body}\n[output]\ndirectory = {:?}\n", dir.to_str().unwrap());
    parse_config_str(&text, &Overrides::default()).unwrap()
}

#[test]
fn equilibrium_run_has_zero_energy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "mode = \"simulate\"\ninit = \"constant:1\"\n[mesh]\nnx = 4\nny = 4\n[grid]\ntau = 0.1\nsteps = 5",
    );
    let RunOutcome::Simulate { rows } = run(&cfg).unwrap() else { panic!("wrong outcome") };
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert!(r.e.abs() < 1e-14 && r.f.abs() < 1e-14, "{r:?}");
        assert!((r.mass - 1.0).abs() < 1e-12 && (r.linf_phi - 1.0).abs() < 1e-12);
    }
    let back = read_energy_csv(&dir.path().join("energy.csv")).unwrap();
    assert_eq!(back, rows);
    assert!(!dir.path().join(FAILURE_MARKER).exists());
}

#[test]
fn seeded_runs_are_bitwise_reproducible() {
    let body = "mode = \"simulate\"\ninit = \"random-seed:3\"\n[mesh]\nnx = 6\nny = 6\n[grid]\ntau = 0.01\nsteps = 6\n[output]\nformats = [\"csv\"]";
    let text = |dir: &Path| format!("{body}\ndirectory = {:?}\n", dir.to_str().unwrap());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        run(&parse_config_str(&text(d.path()), &Overrides::default()).unwrap()).unwrap();
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("energy.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert!(!a.path().join("snapshot_00001.vtk").exists());
}

#[test]
fn failed_run_leaves_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "mode = \"simulate\"\ninit = \"random-seed:1\"\n[mesh]\nnx = 4\nny = 4\n[grid]\ntau = 0.5\nsteps = 4\n[newton]\ntol = 1e-300\nmax_iters = 1",
    );
    assert!(run(&cfg).is_err());
    let marker = std::fs::read_to_string(dir.path().join(FAILURE_MARKER)).unwrap();
    assert!(marker.starts_with("simulate failed:"), "{marker}");
    // Newton already fails in the bootstrap step, so no level was produced
    assert!(!dir.path().join("energy.csv").exists());
    // a later successful run in the same directory clears the marker
    let ok = config(dir.path(), "mode = \"simulate\"\ninit = \"constant:1\"\n[mesh]\nnx = 2\nny = 2\n[grid]\nsteps = 2");
    run(&ok).unwrap();
    assert!(!dir.path().join(FAILURE_MARKER).exists());
}

#[test]
fn snapshots_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "mode = \"simulate\"\ninit = \"random-seed:2\"\n[mesh]\nnx = 3\nny = 2\n[grid]\ntau = 0.01\nsteps = 3",
    );
    run(&cfg).unwrap();
    for m in [1, 3] {
        let text = std::fs::read_to_string(dir.path().join(format!("snapshot_{m:05}.vtk"))).unwrap();
        let s = parse_vtk(&text).unwrap();
        assert_eq!(s.points.len(), 12);
        assert_eq!(s.cells.len(), 12);
        assert!(s.point_data.iter().any(|(name, comps, v)| name == "phi" && *comps == 1 && v.len() == 12));
    }
}

#[test]
fn binary_reports_config_errors_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[grid]\ntau = \"fast\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_chns")).arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.tau"));
    let out = Command::new(env!("CARGO_BIN_EXE_chns")).args(["--mode", "simulate", "--epsilon", "-1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn binary_runs_gronwall_selftest() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_chns"))
        .args(["--mode", "gronwall-selftest", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("gronwall.csv")).unwrap();
    assert!(csv.contains("standard,") && csv.contains("A(1/3) = 1.5"));
}
