use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn nlsnf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlsnf"))
        .args(args)
        .env_remove("BNLS_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn run_in(dir: &Path, config: &str, cmd: &str) -> Output {
    let out = nlsnf(&["--config", config, "--output-dir", dir.to_str().unwrap(), cmd]);
    assert!(
        out.status.success(),
        "{cmd} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn sorted_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "config.toml")
        .collect();
    v.sort();
    v
}

const FULL: &str = r#"
seed = 11
[sample_potential]
d = 1
k_max = 8
[smalldiv_scan]
d = 1
k_max = 8
[normal_form]
d = 1
k_max = 3
r = 2
[simulate]
d = 1
k_max = 8
dt = 0.01
t_final = 0.5
record_every = 10
potential_seeds = 2
snapshot_every = 25
nns_s = 1.0
nns_n = 2
[simulate.initial]
size = 0.05
"#;

#[test]
fn outputs_are_byte_identical_across_runs() {
    let cfg_dir = TempDir::new().unwrap();
    let config = write_config(cfg_dir.path(), FULL);
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [a.path(), b.path()] {
        for cmd in ["sample-potential", "smalldiv-scan", "normal-form", "simulate"] {
            run_in(dir, &config, cmd);
        }
    }
    let files = sorted_files(a.path());
    assert_eq!(files, sorted_files(b.path()));
    assert!(files.contains(&"trajectory_seed12.csv".to_string()));
    assert!(files.contains(&"snapshot_seed11_step0000000050.bin".to_string()));
    for f in &files {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn every_output_carries_the_config_hash() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), FULL);
    for cmd in ["sample-potential", "smalldiv-scan", "normal-form"] {
        run_in(dir.path(), &config, cmd);
    }
    let pot = read_json(&dir.path().join("potential.json"));
    let hash = pot["provenance"]["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(pot["provenance"]["artifact"], "nlsnf");
    for f in sorted_files(dir.path()) {
        let text = fs::read_to_string(dir.path().join(&f)).unwrap();
        assert!(text.contains(&hash), "{f} lacks the config hash");
    }
}

#[test]
fn missing_output_dir_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "[sample_potential]\nn_max = 2\n");
    let missing = dir.path().join("nope");
    let out = nlsnf(&["--config", &config, "--output-dir", missing.to_str().unwrap(), "sample-potential"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    let out = nlsnf(&["--config", &config, "sample-potential"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    for body in [
        "seed = 1\nsede = 2\n",
        "[sample_potential]\nn_max = 2\nnmax = 3\n",
        "[simulate]\nd = 1\nk_max = 4\ndt = 0.1\nt_final = 1.0\n[simulate.initial]\nsize = 0.1\nshape = 2\n",
    ] {
        let config = write_config(dir.path(), body);
        let out = nlsnf(&["--config", &config, "--output-dir", dir.path().to_str().unwrap(), "sample-potential"]);
        assert_eq!(out.status.code(), Some(1), "accepted: {body}");
    }
}

#[test]
fn invalid_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_nlsnf"))
        .args(["verify"])
        .env("BNLS_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_block_potential() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "seed = 5\n[sample_potential]\nn_max = 0\n");
    run_in(dir.path(), &config, "sample-potential");
    let pot = read_json(&dir.path().join("potential.json"));
    assert_eq!(pot["potential"]["block_values"].as_array().unwrap().len(), 1);
}

#[test]
fn verify_passes_pristine_and_fails_with_flipped_bracket() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "seed = 2\n[verify]\ncases = 4\n");
    let out = nlsnf(&["--config", &config, "--output-dir", dir.path().to_str().unwrap(), "verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report = read_json(&dir.path().join("verify_report.json"));
    assert!(report["suites"].as_array().unwrap().len() >= 10);

    let out = nlsnf(&["--config", &config, "verify", "--inject-bracket-sign-flip"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL] bracket_oracle"));
}

fn trajectory_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|s| s.to_string())
        .collect()
}

#[test]
fn resume_reproduces_trajectory_bitwise() {
    let base = r#"
seed = 4
[simulate]
d = 1
k_max = 12
dt = 0.01
t_final = 2.0
record_every = 10
snapshot_every = 100
hs = [0.0, 1.0]
[simulate.initial]
size = 0.2
"#;
    let full = TempDir::new().unwrap();
    let config = write_config(full.path(), base);
    run_in(full.path(), &config, "simulate");
    let snap = full.path().join("snapshot_seed4_step0000000100.bin");
    assert!(snap.exists());

    let resumed = TempDir::new().unwrap();
    let config = write_config(
        resumed.path(),
        &base.replace("[simulate.initial]", &format!("resume = {:?}\n[simulate.initial]", snap)),
    );
    run_in(resumed.path(), &config, "simulate");

    let a = trajectory_rows(&full.path().join("trajectory_seed4.csv"));
    let b = trajectory_rows(&resumed.path().join("trajectory_seed4.csv"));
    assert_eq!(a.len(), 21);
    assert!(b[0].starts_with("100,"));
    for row in &b {
        assert!(a.contains(row), "resumed row {row} not in the uninterrupted run");
    }
    assert_eq!(&a[a.len() - b.len()..], &b[..]);
}

#[test]
fn resume_rejects_several_seeds() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "[simulate]\nd = 1\nk_max = 4\ndt = 0.1\nt_final = 1.0\npotential_seeds = 2\nresume = \"x.bin\"\n[simulate.initial]\nsize = 0.1\n",
    );
    let out = nlsnf(&["--config", &config, "--output-dir", dir.path().to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(1));
}

fn gamma_emp(seed: u64, k_max: i32) -> f64 {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        &format!("seed = {seed}\n[smalldiv_scan]\nd = 1\nk_max = {k_max}\nwrite_pairs = false\n"),
    );
    run_in(dir.path(), &config, "smalldiv-scan");
    let v = read_json(&dir.path().join("smalldiv_summary.json"));
    match &v["gamma_emp"] {
        Value::String(s) if s == "inf" => f64::INFINITY,
        x => x.as_f64().unwrap(),
    }
}

#[test]
fn gamma_is_infinite_without_removal_pairs() {
    assert_eq!(gamma_emp(0, 1), f64::INFINITY);
}

#[test]
fn doubling_the_box_does_not_increase_gamma() {
    for seed in 0..4 {
        let g8 = gamma_emp(seed, 8);
        let g16 = gamma_emp(seed, 16);
        assert!(g16 <= g8, "seed {seed}: {g16} > {g8}");
    }
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(nlsnf(&["--help"]).status.code(), Some(0));
    assert_eq!(nlsnf(&["--version"]).status.code(), Some(0));
    assert_eq!(nlsnf(&["frobnicate"]).status.code(), Some(1));
}
