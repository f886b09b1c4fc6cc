//! Command-line contract: exit codes, outputs, manifest and determinism.

use std::path::Path;
use std::process::Command;

const SMALL: &str = r#"{
  "problem": {"preset": "reference", "drift_amp": 0.5, "slow_n": 16, "fast_n": 32},
  "experiment": {"epsilons": [0.25, 0.125], "t_end": 0.05, "points_per_period": 16,
                 "nodes": [0, 3], "p_list": [[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]},
  "seed": 3
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_levy-homog"));
    c.env_remove("LEVY_HOMOG_OUT");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn every_subcommand_succeeds_on_the_small_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    let expected: &[(&str, &[&str])] = &[
        ("check-kernel", &["kernel_report.json"]),
        ("solve-stationary", &["psi.csv", "stationary.json"]),
        ("solve-cell", &["cells.json", "cell_x3_p2.json", "cell_x3_p2_corrector.csv"]),
        ("tabulate-heff", &["heff.csv"]),
        ("solve-eps", &["u_eps.json", "u_eps_t2.csv"]),
        ("solve-eff", &["u_eff.json", "u_eff_t2.csv"]),
        ("converge", &["study.json", "errors.csv"]),
        ("properties", &["properties.json"]),
    ];
    for (cmd, files) in expected {
        let out = tmp.path().join(cmd);
        let status = bin().args([cmd, "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "1"]).status().unwrap();
        assert_eq!(status.code(), Some(0), "{cmd}");
        let m = manifest(&out);
        assert_eq!(m["command"], *cmd);
        let listed: Vec<String> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
        for f in *files {
            assert!(out.join(f).exists(), "{cmd}: missing {f}");
            assert!(listed.iter().any(|l| l == f), "{cmd}: {f} not in manifest");
        }
        // no orphan files
        for entry in std::fs::read_dir(&out).unwrap() {
            let name = entry.unwrap().file_name().into_string().unwrap();
            assert!(name == "manifest.json" || listed.contains(&name), "{cmd}: orphan {name}");
        }
    }
    let heff = std::fs::read_to_string(tmp.path().join("tabulate-heff/heff.csv")).unwrap();
    assert!(heff.starts_with("x_index,p_0,lambda,cell_iters,lip_measured\n"));
    assert_eq!(heff.lines().count(), 1 + 16 * 3);
    let study: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("converge/study.json")).unwrap()).unwrap();
    assert!(study.get("verdict").is_some());
    let props: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("properties/properties.json")).unwrap()).unwrap();
    assert_eq!(props["pass"], true);
    assert_eq!(props["effective"]["reports"].as_array().unwrap().len(), 6);
}

#[test]
fn converge_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let status = bin().args(["converge", "--config", &cfg, "--out", out.to_str().unwrap()]).status().unwrap();
        assert_eq!(status.code(), Some(0));
        csvs.push(std::fs::read(out.join("errors.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert!(String::from_utf8(csvs[0].clone()).unwrap().starts_with("epsilon,time,sup_error\n"));
}

#[test]
fn malformed_json_exits_1_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", "{\n  \"problem\": {\n    \"preset\": \"reference\",,\n  }\n}");
    let out = bin().args(["converge", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("column"), "{err}");
}

#[test]
fn usage_errors_exit_1() {
    let out = bin().args(["frobnicate", "--config", "x.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("usage"));
    let out = bin().args(["converge", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["converge"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validation_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_eps = write_config(
        tmp.path(),
        "eps.json",
        r#"{"problem": {"preset": "reference", "slow_n": 16, "fast_n": 32}, "experiment": {"epsilons": [0.3]}}"#,
    );
    let code = bin().args(["converge", "--config", &bad_eps, "--out", tmp.path().join("o1").to_str().unwrap()]).status().unwrap();
    assert_eq!(code.code(), Some(1));
    let low_gamma = write_config(
        tmp.path(),
        "gamma.json",
        r#"{"problem": {"slow_n": 16, "fast_n": 16,
            "controls": [{"drift": [{"constant": 0.1}], "cost": {"constant": 1.0}}],
            "kernel": {"family": "separable", "controls": 1, "params": {"factors": [{"constant": 1.0}]},
                       "symmetric": true, "C_K": 4.0, "gamma": 0.5}}}"#,
    );
    let o = tmp.path().join("o2");
    assert_eq!(bin().args(["solve-cell", "--config", &low_gamma, "--out", o.to_str().unwrap()]).status().unwrap().code(), Some(1));
    assert_eq!(manifest(&o)["exit_code"], 1);
    // γ is irrelevant for the stationary solve
    assert_eq!(bin().args(["solve-stationary", "--config", &low_gamma, "--out", o.to_str().unwrap()]).status().unwrap().code(), Some(0));
}

#[test]
fn solver_failure_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    // a single-step pseudo-time budget cannot converge
    let cfg = write_config(
        tmp.path(),
        "budget.json",
        r#"{"problem": {"preset": "reference", "slow_n": 16, "fast_n": 32},
            "solver": {"stationary": "pseudo_time", "max_iters": 1}}"#,
    );
    let o = tmp.path().join("o");
    assert_eq!(bin().args(["solve-cell", "--config", &cfg, "--out", o.to_str().unwrap()]).status().unwrap().code(), Some(2));
}

#[test]
fn property_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    // declared bound far below the measured Lévy mass
    let cfg = write_config(
        tmp.path(),
        "k1.json",
        r#"{"problem": {"slow_n": 16, "fast_n": 16,
            "controls": [{"drift": [{"constant": 0.0}], "cost": {"constant": 0.0}}],
            "kernel": {"family": "separable", "controls": 1, "params": {"factors": [{"constant": 1.0}]},
                       "symmetric": true, "C_K": 0.1, "gamma": 1.0}}}"#,
    );
    let o = tmp.path().join("o");
    assert_eq!(bin().args(["check-kernel", "--config", &cfg, "--out", o.to_str().unwrap()]).status().unwrap().code(), Some(3));
    assert!(o.join("kernel_report.json").exists());
}

#[test]
fn environment_overrides_out() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.json", SMALL);
    let env_dir = tmp.path().join("from_env");
    let flag_dir = tmp.path().join("from_flag");
    let status = bin()
        .env("LEVY_HOMOG_OUT", &env_dir)
        .args(["solve-stationary", "--config", &cfg, "--out", flag_dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(env_dir.join("psi.csv").exists());
    assert!(!flag_dir.exists());
}
