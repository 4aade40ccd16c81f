use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn flamespeed(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_flamespeed"));
    cmd.args(args).env_remove("FLAMESPEED_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const ZERO: &str = "m = 0.6\nn = 0.8\n[field]\nmodel = \"zero\"\n";

fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn effective_on_zero_field_matches_the_constant_hamiltonian() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "zero.toml", ZERO);
    let out = dir.path().join("out");
    let run = flamespeed(&["--config", &cfg, "--out", out.to_str().unwrap(), "effective", "--c", "0,0.7", "--p-steps", "11"], &[]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let table = rows(&out.join("effective.csv"));
    assert_eq!(table.len(), 22);
    for row in table {
        let (p, h): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        assert!((h - 0.6f64.hypot(p)).abs() < 1e-8, "p = {p}: {h}");
    }
}

#[test]
fn simulate_on_zero_field_moves_at_unit_speed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "zero.toml", ZERO);
    let out = dir.path().join("out");
    let run = flamespeed(
        &["--config", &cfg, "--out", out.to_str().unwrap(), "simulate", "--grid", "16", "--T", "0.5", "--c", "0.4"],
        &[],
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let series = rows(&out.join("speed.csv"));
    assert!(series.len() > 2);
    for row in series.iter().skip(1) {
        let s: f64 = row[3].parse().unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }
    let header: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("final_g_0.json")).unwrap()).unwrap();
    assert_eq!(header["nx"], 16);
    assert_eq!(std::fs::metadata(out.join("final_g_0.bin")).unwrap().len(), 16 * 16 * 8);
}

#[test]
fn strain_curve_on_quick_config_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("quick.toml");
    let run = flamespeed(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "strain-curve"], &[]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let hs: Vec<f64> = rows(&dir.path().join("strain_curve.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(hs.len(), 8);
    assert!(hs.windows(2).all(|w| w[1] <= w[0] + 1e-3));
    let verdicts: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("strain_verdicts.json")).unwrap()).unwrap();
    let checks = verdicts["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["verdict"] != "FAIL"), "{checks:?}");
}

#[test]
fn validate_quick_config_passes_and_names_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("quick.toml");
    let run = flamespeed(
        &["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "validate"],
        &[("FLAMESPEED_THREADS", "1")],
    );
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["passed"], true);
    let names: Vec<&str> = manifest["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    for prefix in ["field.", "hamiltonian.", "effective.", "discount.", "frontsim.", "strain."] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "no {prefix} checks");
    }
    assert!(dir.path().join("timings.json").exists());
}

#[test]
fn discount_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("quick.toml");
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}"));
        let run = flamespeed(
            &["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "discount", "--delta", "0.2,0.1", "--c", "0,0.3"],
            &[],
        );
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        outputs.push(std::fs::read(out.join("discount.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn dump_field_writes_samples_and_surface() {
    let dir = tempfile::tempdir().unwrap();
    let run = flamespeed(&["--out", dir.path().to_str().unwrap(), "dump-field", "--samples", "21", "--c", "0.5"], &[]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let field = std::fs::read_to_string(dir.path().join("field.csv")).unwrap();
    assert!(field.starts_with("x,v,v_prime"));
    assert_eq!(field.lines().count(), 22);
    assert!(dir.path().join("hamiltonian_surface.csv").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "m = 0.6\nn = 0.8\nwindoe = 3\n[field]\nmodel = \"zero\"\n");
    let run = flamespeed(&["--config", &bad, "effective"], &[]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("windoe"));

    let cfl = flamespeed(&["--out", dir.path().to_str().unwrap(), "simulate", "--cfl", "0.9"], &[]);
    assert_eq!(cfl.status.code(), Some(2));
    let threads = flamespeed(&["--out", dir.path().to_str().unwrap(), "effective"], &[("FLAMESPEED_THREADS", "many")]);
    assert_eq!(threads.status.code(), Some(2));
    assert_eq!(flamespeed(&["launch"], &[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "random.toml",
        "m = 0.6\nn = 0.8\n[field]\nmodel = \"random-phase\"\namplitudes = [0.3, 0.2]\nfrequencies = [1.0, 1.4142135623730951]\n",
    );
    let run = flamespeed(&["--config", &cfg, "--out", dir.path().to_str().unwrap(), "simulate", "--grid", "16"], &[]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("periodic"));
}
