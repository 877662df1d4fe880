use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn slender(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slender")).args(args).output().expect("binary runs")
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.conf"))
}

fn run_preset(name: &str, steps: &str, seed: &str, out: &Path) -> Output {
    let cfg = preset(name);
    slender(&["run", "--config", cfg.to_str().unwrap(), "--steps", steps, "--seed", seed, "--output", out.to_str().unwrap()])
}

#[test]
fn equilibrium_preset_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_preset("equilibrium", "20", "3", dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = dir.path().join("trajectory.bin");
    assert!(traj.exists());
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed"));
    let rep = slender(&["analyze", "--trajectory", traj.to_str().unwrap(), "--report", "end-to-end"]);
    assert!(rep.status.success(), "{}", String::from_utf8_lossy(&rep.stderr));
    let csv = std::fs::read_to_string(dir.path().join("end_to_end.csv")).unwrap();
    assert!(csv.starts_with("# samples = "));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 21);
}

#[test]
fn same_seed_gives_identical_trajectory_files() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (d, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        assert!(run_preset("equilibrium", "10", seed, d.path()).status.success());
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("trajectory.bin")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn sedimentation_and_bundling_reports() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_preset("sedimentation", "40", "1", dir.path()).status.success());
    let traj = dir.path().join("trajectory.bin");
    assert!(slender(&["analyze", "--trajectory", traj.to_str().unwrap(), "--report", "sedimentation"]).status.success());
    let sed = std::fs::read_to_string(dir.path().join("sedimentation.csv")).unwrap();
    assert_eq!(sed.lines().next(), Some("time,h1,h2,d,dh"));
    assert_eq!(sed.lines().count(), 1 + 3);

    let dir = tempfile::tempdir().unwrap();
    assert!(run_preset("bundling", "10", "1", dir.path()).status.success());
    let traj = dir.path().join("trajectory.bin");
    for report in ["bundles", "csv"] {
        let out = slender(&["analyze", "--trajectory", traj.to_str().unwrap(), "--report", report]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(dir.path().join("bundles.csv").exists());
    assert!(dir.path().join("positions.csv").exists());
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "preset = equilibrium\nn_tangent = zero\n").unwrap();
    let out = slender(&["run", "--config", cfg.to_str().unwrap(), "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_tangent"));

    std::fs::write(&cfg, "preset = equilibrium\nno_such_key = 1\n").unwrap();
    assert_eq!(slender(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));

    assert_eq!(slender(&["run"]).status.code(), Some(2));
    let missing = dir.path().join("missing.bin");
    assert_eq!(slender(&["analyze", "--trajectory", missing.to_str().unwrap(), "--report", "csv"]).status.code(), Some(1));
}
