use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shellforge_core::dataset::{manifest_mismatch, Manifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_shellforge"));
    c.env_remove("SHELLFORGE_THREADS");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn shellforge")
}

fn phantoms() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/phantoms")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["generate", "--no-such-flag"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = run(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn bad_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["extract", "--input", "missing_volume"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    let o = run(&["generate", "--config", "bad.json", "--out", "ds"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn project_reproduces_golden_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = phantoms().join("sphere/project.json");
    let o = run(&["project", "--config", cfg.to_str().unwrap(), "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let golden = fs::read_to_string(phantoms().join("sphere/radiograph.sha256")).unwrap();
    assert!(stdout(&o).starts_with(golden.trim()), "{} vs {golden}", stdout(&o));
    assert!(dir.path().join("out/radiograph.pgm").exists());
}

#[test]
fn project_saves_volume_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = phantoms().join("sphere/project.json");
    let args = ["project", "--config", cfg.to_str().unwrap(), "--out", "o", "--resolution", "32", "--save-volume"];
    assert!(run(&args, dir.path()).status.success());
    let v = shellforge_core::DensityVolume::read(&dir.path().join("o/volume")).unwrap();
    assert_eq!(v.grid.resolution, 32);
}

#[test]
fn extract_on_double_shell_emits_four_fits() {
    let dir = tempfile::tempdir().unwrap();
    let vol = phantoms().join("double_shell/volume");
    let o = run(&["extract", "--input", vol.to_str().unwrap(), "--out", "f"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fits: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(dir.path().join("f/fits.json")).unwrap()).unwrap();
    assert_eq!(fits.len(), 4);
    for f in &fits {
        assert_eq!(f["degree"], 10);
        assert_eq!(f["coefficients"].as_array().unwrap().len(), 121);
        assert!(f["residual_rms"].as_f64().unwrap() < 0.01);
    }
    let labels = fs::read_to_string(dir.path().join("f/labels.txt")).unwrap();
    let obj = fs::read_to_string(dir.path().join("f/mesh.obj")).unwrap();
    assert_eq!(labels.lines().count(), obj.lines().filter(|l| l.starts_with("v ")).count());
}

#[test]
fn generate_is_reproducible_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = run(&["--threads", "2", "generate", "--count", "1", "--seed", "5", "--out", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let manifest = Manifest::read(&a).unwrap();
    assert_eq!(manifest.samples.len(), 1);
    assert_eq!(manifest_mismatch(&a, &manifest).unwrap(), (vec![], vec![]));
    for f in &manifest.files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(manifest.samples.iter().all(|s| manifest.spec.admits(&s.model)));
}

#[test]
fn degrade_and_flatfield_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = phantoms().join("sphere/project.json");
    assert!(run(&["project", "--config", cfg.to_str().unwrap(), "--out", "p"], dir.path()).status.success());
    fs::write(dir.path().join("deg.json"), r#"{"blur_sigma": 1.0, "photon_scale": 1000.0, "gaussian_sigma": 0.01}"#).unwrap();
    let deg = |seed: &str, out: &str| {
        run(&["degrade", "--config", "deg.json", "--input", "p/radiograph", "--seed", seed, "--out", out], dir.path())
    };
    assert!(deg("1", "d1").status.success());
    assert!(deg("1", "d2").status.success());
    assert!(deg("2", "d3").status.success());
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("d1/degraded.f32"), read("d2/degraded.f32"));
    assert_ne!(read("d1/degraded.f32"), read("d3/degraded.f32"));
    let o = run(&["flatfield", "--input", "d1/degraded", "--out", "ff"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ff = shellforge_core::Radiograph::read(&dir.path().join("ff/flatfield")).unwrap();
    let (lo, hi) = ff.pixels.min_max();
    assert!(lo >= 0.0 && hi <= 1.0 + 1e-12);
}

#[test]
fn report_rejects_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = phantoms().join("sphere/project.json");
    let args = ["--run", "r", "project", "--config", cfg.to_str().unwrap(), "--out", "p"];
    assert!(run(&args, dir.path()).status.success());
    let o = run(&["--run", "r", "report", "--out", "r"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r/report.json")).unwrap()).unwrap();
    assert_eq!(report["stages"][0]["stage"], "project");
    assert_eq!(report["report_hash"].as_str().unwrap().len(), 64);
    fs::remove_file(dir.path().join("p/radiograph.pgm")).unwrap();
    assert_eq!(run(&["--run", "r", "report", "--out", "r"], dir.path()).status.code(), Some(2));
}

#[test]
fn report_without_run_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["report"], dir.path()).status.code(), Some(2));
}
