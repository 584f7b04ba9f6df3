use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BASE: &str = r#""params": {"n": 3, "m": 0.2, "rho1": 1, "beta": 5}"#;

struct Run {
    dir: TempDir,
    out: PathBuf,
    output: Output,
}

impl Run {
    fn code(&self) -> i32 {
        self.output.status.code().expect("terminated by signal")
    }

    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.output.stderr).into_owned()
    }

    fn json(&self, name: &str) -> Value {
        let text = std::fs::read_to_string(self.out.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        serde_json::from_str(&text).unwrap()
    }
}

fn fastdiff(config: &str, args: &[&str]) -> Run {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.path().join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_fastdiff"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("FASTDIFF_WORKERS", "2")
        .output()
        .unwrap();
    Run { dir, out, output }
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn constants_report_the_cubic_case() {
    let r = fastdiff(&format!("{{{BASE}}}"), &["constants"]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let c = r.json("constants.json");
    assert!((c["constants"]["alpha"].as_f64().unwrap() - 13.75).abs() < 1e-12);
    assert!((c["constants"]["Cstar"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    let manifest = r.json("manifest.json");
    assert_eq!(manifest["subcommand"], "constants");
    assert_eq!(manifest["outputs"][0], "constants.json");
}

#[test]
fn missing_parameter_is_a_usage_error() {
    let r = fastdiff(r#"{"params": {"n": 3, "rho1": 1, "beta": 5}}"#, &["constants"]);
    assert_eq!(r.code(), 1);
    assert!(r.stderr().contains("`m`"), "{}", r.stderr());
}

#[test]
fn beta_below_range_is_rejected() {
    let r = fastdiff(r#"{"params": {"n": 3, "m": 0.2, "rho1": 1, "beta": 0.01}}"#, &["constants"]);
    assert_eq!(r.code(), 1, "{}", r.stderr());
}

#[test]
fn missing_config_flag_is_a_usage_error() {
    let output = Command::new(env!("CARGO_BIN_EXE_fastdiff")).arg("constants").output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn cylinder_profile_has_small_residual() {
    let r = fastdiff(&format!(r#"{{{BASE}, "profile": {{"kind": "cylinder"}}}}"#), &["profile"]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let res = csv_column(&r.out.join("profile.csv"), "residual");
    assert!(res.iter().all(|x| x.abs() <= 1e-10), "{:e}", res.iter().fold(0.0f64, |a, b| a.max(b.abs())));
}

#[test]
fn singular_profile_reports_blowup_limit() {
    let r = fastdiff(&format!(r#"{{{BASE}, "profile": {{"kind": "singular"}}}}"#), &["profile"]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let text = std::fs::read_to_string(r.out.join("checks.json")).unwrap();
    let limit = text
        .lines()
        .find(|l| l.contains("blowup_limit"))
        .and_then(|l| l.split(':').nth(1))
        .map(|v| v.trim().trim_end_matches(',').parse::<f64>().unwrap())
        .expect("blowup_limit missing");
    assert!((limit - 1.0).abs() < 1e-6, "{limit}");
}

#[test]
fn inversion_needs_the_critical_exponent() {
    let r = fastdiff(r#"{"params": {"n": 4, "m": 0.2, "rho1": 1, "beta": 5}}"#, &["profile", "--invert"]);
    assert_eq!(r.code(), 1, "{}", r.stderr());
    let ok = fastdiff(&format!("{{{BASE}}}"), &["profile", "--invert"]);
    assert_eq!(ok.code(), 0, "{}", ok.stderr());
    assert!(ok.out.join("inverted.csv").exists());
}

#[test]
fn synthetic_tail_recovers_b() {
    let cfg = r#"{"params": {"n": 3, "m": 0.2, "rho1": 1, "beta": 8},
                  "asympt": {"synthetic": {"b": 0.5}, "s_min": 0, "s_max": 20}}"#;
    let r = fastdiff(cfg, &["asympt"]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let fit = r.json("fit.json");
    let b = fit["fits"][0]["fit"]["B_hat"].as_f64().unwrap();
    assert!((b - 0.5).abs() < 1e-6, "{fit}");
}

#[test]
fn second_order_requirement_is_enforced() {
    let r = fastdiff(&format!("{{{BASE}}}"), &["asympt", "--require-second-order"]);
    assert_eq!(r.code(), 1, "{}", r.stderr());
}

#[test]
fn two_lambdas_report_b_scaling() {
    let cfg = r#"{"params": {"n": 3, "m": 0.2, "rho1": 1, "beta": 8},
                  "asympt": {"kind": "singular", "lambdas": [1, 2]}}"#;
    let r = fastdiff(cfg, &["asympt"]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let dev = r.json("fit.json")["b_scaling"]["deviation"].as_f64().unwrap();
    assert!(dev < 1e-2, "{dev}");
    assert!(r.out.join("tail_2.csv").exists());
}

#[test]
fn exact_psi_run_is_stationary() {
    let cfg = format!(r#"{{{BASE}, "simulate": {{"scenario": "exact_psi", "cells": 200, "s_end": 1.0}}}}"#);
    let r = fastdiff(&cfg, &["simulate"]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let summary = r.json("summary.json");
    assert_eq!(summary["stationary"], true);
    let t_hat = summary["run"]["t_hat"].as_f64().unwrap();
    assert!((t_hat - 1.0).abs() < 0.02, "{t_hat}");
    assert!(r.out.join("exact/history.csv").exists());
    assert!(r.out.join("exact/snapshots/snapshot_0000.csv").exists());
}

#[test]
fn perturbed_psi_decays_at_predicted_rate() {
    let cfg = format!(r#"{{{BASE}, "simulate": {{"scenario": "perturbed_psi"}}}}"#);
    let r = fastdiff(&cfg, &["simulate", "--seed", "7"]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let c = &r.json("summary.json")["contraction"];
    assert_eq!(c["physical_l1_nonincreasing"], true);
    assert!(c["rate_relative_error"].as_f64().unwrap() < 0.15, "{c}");
    let l1 = csv_column(&r.out.join("perturbed/history.csv"), "physical_l1_to_exact");
    assert!(l1.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
}

#[test]
fn oversized_step_is_a_numerical_failure() {
    let cfg = format!(
        r#"{{{BASE}, "simulate": {{"ds": 3.0, "s_end": 6, "newton": {{"tol": 1e-12, "max_iter": 3}}}}}}"#
    );
    let r = fastdiff(&cfg, &["simulate"]);
    assert_eq!(r.code(), 2, "{}", r.stderr());
    // the manifest survives the failure
    assert_eq!(r.json("manifest.json")["subcommand"], "simulate");
}

#[test]
fn violated_sandwich_is_an_invariant_failure() {
    let cfg = format!(
        r#"{{{BASE}, "simulate": {{"scenario": "perturbed_psi", "cells": 100,
            "perturbation": {{"amplitude": 0.5, "support": [1, 2], "lambda_lo": 1, "lambda_hi": 1.01}}}}}}"#
    );
    let r = fastdiff(&cfg, &["simulate"]);
    assert_eq!(r.code(), 3, "{}", r.stderr());
}

#[test]
fn same_seed_gives_identical_outputs() {
    let cfg = format!(r#"{{{BASE}, "simulate": {{"scenario": "perturbed_psi", "cells": 100, "s_end": 0.5}}}}"#);
    let a = fastdiff(&cfg, &["simulate", "--seed", "11"]);
    let b = fastdiff(&cfg, &["simulate", "--seed", "11"]);
    assert_eq!(a.code(), 0, "{}", a.stderr());
    let files = a.json("manifest.json")["outputs"].as_array().unwrap().clone();
    assert!(!files.is_empty());
    for f in files.iter().map(|f| f.as_str().unwrap()).chain(["manifest.json"]) {
        let x = std::fs::read(a.out.join(f)).unwrap();
        let y = std::fs::read(b.out.join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    assert_eq!(a.output.stdout, b.output.stdout);
    drop((a.dir, b.dir));
}
