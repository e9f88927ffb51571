use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nsbvp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsbvp")).args(args).output().expect("binary runs")
}

fn report(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn index_of_dirac_strip() {
    let r = report(&nsbvp(&["--example", "dirac", "--modes", "8", "--cut", "0.5", "--cut2", "2.5", "index"]));
    assert_eq!(r["index"], 4);
    assert_eq!(r["report"]["oracle"], r["report"]["global"]);
    let r = report(&nsbvp(&["--example", "dirac", "--modes", "8", "--cut", "2.5", "--cut2", "0.5", "index"]));
    assert_eq!(r["index"], -4);
}

#[test]
fn tilted_dirac_golden_tables() {
    let dir = scratch("golden");
    let out = dir.to_str().unwrap();
    let r = report(&nsbvp(&["--alpha", "1", "--modes", "16", "--out", out, "example", "tilted-dirac"]));
    assert!(r["closed_form_error"].as_f64().unwrap() < 1e-10);
    let tilted = std::fs::read_to_string(dir.join("tilted-dirac_spectrum.csv")).unwrap();
    let lines: Vec<&str> = tilted.lines().collect();
    assert!(lines[0].starts_with("# {"));
    assert_eq!(lines[1], "k1,k2,re,im");
    assert_eq!(lines.len(), 2 + 2 * 33);
    // every eigenvalue lies on Im = +-alpha Re
    for l in &lines[2..] {
        let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!((f[3].abs() - f[2].abs()).abs() < 1e-10);
    }
    assert!(dir.join("dirac_spectrum.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let a = scratch("rerun_a");
    let b = scratch("rerun_b");
    for d in [&a, &b] {
        report(&nsbvp(&["--example", "nondiag", "--modes", "6", "--cut", "-0.5", "--out", d.to_str().unwrap(), "projector"]));
    }
    for f in ["projector.csv", "projector.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let header = std::fs::read_to_string(a.join("projector.csv")).unwrap();
    let h: Value = serde_json::from_str(header.lines().next().unwrap().trim_start_matches("# ")).unwrap();
    for key in ["version", "config_hash", "seed", "modes", "cut"] {
        assert!(h.get(key).is_some(), "{key}");
    }
}

#[test]
fn config_hash_tracks_inputs() {
    let hash = |seed: &str| report(&nsbvp(&["--seed", seed, "--modes", "4", "spectrum"]))["header"]["config_hash"].clone();
    assert_eq!(hash("1"), hash("1"));
    assert_ne!(hash("1"), hash("2"));
}

#[test]
fn bc_check_and_solve_from_files() {
    let dir = scratch("files");
    let bc = dir.join("bc.json");
    std::fs::write(&bc, r#"{"kind":"graph","epsilon":0.3,"order":-1,"seed":5}"#).unwrap();
    let r = report(&nsbvp(&["--modes", "6", "--cut", "0.25", "bc-check", "--bc", bc.to_str().unwrap()]));
    assert_eq!(r["decomposition"]["index"], 0);
    assert!(r["residuals"]["reconstruction"].as_f64().unwrap() < 1e-9);
    assert!(r["adjoint"]["round_trip_distance"].as_f64().unwrap() < 1e-9);

    let prob = dir.join("problem.json");
    std::fs::write(&prob, r#"{"rho":0.5,"grid":64,"source":[{"mode":2,"freq":3.0,"vector":[[0,1],[1,0]]}]}"#).unwrap();
    let out = dir.join("solve");
    let r = report(&nsbvp(&[
        "--example", "nondiag", "--modes", "4", "--cut", "-0.5", "--out", out.to_str().unwrap(),
        "solve", "--problem", prob.to_str().unwrap(),
    ]));
    assert_eq!(r["summary"]["kernel_dim"], 0);
    assert_eq!(r["summary"]["cokernel_dim"], 0);
    let csv = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("t,mode,component,re,im"));
    assert_eq!(csv.lines().count(), 2 + 65 * 9 * 2);
}

#[test]
fn exit_codes_and_json_errors() {
    let out = nsbvp(&["--modes", "0", "spectrum"]);
    assert_eq!(out.status.code(), Some(2));
    let e: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(e["error"].is_string());

    assert_eq!(nsbvp(&["--no-such-flag", "spectrum"]).status.code(), Some(2));
    assert_eq!(nsbvp(&["--example", "dirac", "--cut", "1", "projector"]).status.code(), Some(2));
    assert_eq!(nsbvp(&["solve", "--problem", "/definitely/missing.json"]).status.code(), Some(4));
    assert_eq!(nsbvp(&["example", "unknown"]).status.code(), Some(2));
}

#[test]
fn checkspace_counts_strip() {
    let r = report(&nsbvp(&[
        "--example", "tilted-dirac", "--alpha", "0.5", "--modes", "8", "--cut", "1.1", "--cut2", "0.1",
        "checkspace", "--samples", "50",
    ]));
    assert_eq!(r["cross_rank"], r["strip_count"]);
    assert_eq!(r["within_prediction"], true);
}
