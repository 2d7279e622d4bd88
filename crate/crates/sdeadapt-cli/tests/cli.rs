//! End-to-end tests of the command-line driver: reproducibility of the
//! emitted tables, exit codes, config-file precedence, and output shapes.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sdeadapt"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sdeadapt-cli-{tag}-{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    binary()
        .args(args)
        .env_remove("SDEADAPT_SEED")
        .output()
        .expect("failed to launch the driver")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// CSV content with every timing column blanked, so reruns compare equal.
fn csv_without_timings(path: &Path) -> String {
    let raw = std::fs::read_to_string(path).unwrap();
    let mut lines = raw.lines();
    let header = lines.next().unwrap();
    let timing_cols: Vec<usize> = header
        .split(',')
        .enumerate()
        .filter(|(_, name)| *name == "wall_seconds")
        .map(|(i, _)| i)
        .collect();
    let mut out = vec![header.to_string()];
    for line in lines {
        let mut fields: Vec<&str> = line.split(',').collect();
        for &col in &timing_cols {
            fields[col] = "-";
        }
        out.push(fields.join(","));
    }
    out.join("\n")
}

#[test]
fn identical_invocations_reproduce_the_table_byte_for_byte() {
    let dir_a = temp_dir("repro-a");
    let dir_b = temp_dir("repro-b");
    for dir in [&dir_a, &dir_b] {
        let output = run(&[
            "converge",
            "--problem",
            "sgle-mult",
            "--hmax",
            "0.25",
            "--levels",
            "3",
            "--paths",
            "20",
            "--seed",
            "5",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "{}", stderr_of(&output));
    }
    let a = csv_without_timings(&dir_a.join("converge.csv"));
    let b = csv_without_timings(&dir_b.join("converge.csv"));
    assert_eq!(a, b, "reruns with identical arguments and seed must agree");
    std::fs::remove_dir_all(dir_a).unwrap();
    std::fs::remove_dir_all(dir_b).unwrap();
}

#[test]
fn worker_count_does_not_change_the_results() {
    let dir_a = temp_dir("workers-1");
    let dir_b = temp_dir("workers-4");
    for (dir, workers) in [(&dir_a, "1"), (&dir_b, "4")] {
        let output = run(&[
            "steps",
            "--problem",
            "vdp",
            "--strategy",
            "at,ald",
            "--hmax",
            "1.0",
            "--T",
            "20",
            "--paths",
            "16",
            "--seed",
            "8",
            "--workers",
            workers,
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(output.status.success(), "{}", stderr_of(&output));
    }
    assert_eq!(
        csv_without_timings(&dir_a.join("steps.csv")),
        csv_without_timings(&dir_b.join("steps.csv")),
        "results must not depend on the worker count"
    );
    std::fs::remove_dir_all(dir_a).unwrap();
    std::fs::remove_dir_all(dir_b).unwrap();
}

#[test]
fn seed_falls_back_to_the_environment_variable() {
    let dir_a = temp_dir("envseed-a");
    let dir_b = temp_dir("envseed-b");
    let base = [
        "steps",
        "--problem",
        "sgle-mult",
        "--strategy",
        "at",
        "--paths",
        "10",
    ];
    let output = binary()
        .args(base)
        .args(["--out", dir_a.to_str().unwrap()])
        .env("SDEADAPT_SEED", "123")
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr_of(&output));
    let output = run(&[
        &base[..],
        &["--seed", "123", "--out", dir_b.to_str().unwrap()],
    ]
    .concat());
    assert!(output.status.success(), "{}", stderr_of(&output));
    assert_eq!(
        csv_without_timings(&dir_a.join("steps.csv")),
        csv_without_timings(&dir_b.join("steps.csv"))
    );
    std::fs::remove_dir_all(dir_a).unwrap();
    std::fs::remove_dir_all(dir_b).unwrap();
}

#[test]
fn unknown_problem_names_the_valid_set_and_exits_with_2() {
    let output = run(&["simulate", "--problem", "lorenz"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = stderr_of(&output);
    assert!(stderr.contains("lorenz"), "stderr was: {stderr}");
    assert!(stderr.contains("sgle-mult") && stderr.contains("vdp"));
}

#[test]
fn unknown_strategy_names_the_valid_set_and_exits_with_2() {
    let output = run(&["simulate", "--problem", "vdp", "--strategy", "rk4"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = stderr_of(&output);
    assert!(stderr.contains("rk4"), "stderr was: {stderr}");
    assert!(stderr.contains("FIXED_TAMED") && stderr.contains("ADM_III"));
}

#[test]
fn unknown_flag_exits_with_2() {
    let output = run(&["simulate", "--problem", "vdp", "--step-size", "0.1"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn invalid_bound_ratio_exits_with_2() {
    let output = run(&["simulate", "--problem", "vdp", "--rho", "0.5"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("rho"));
}

#[test]
fn fully_divergent_run_exits_with_3() {
    let dir = temp_dir("diverge3");
    let output = run(&[
        "simulate",
        "--problem",
        "sgle-mult",
        "--strategy",
        "fixed_em",
        "--hmax",
        "0.5",
        "--param",
        "x0=5",
        "--T",
        "10",
        "--seed",
        "1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3), "{}", stderr_of(&output));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn config_file_fills_gaps_and_flags_win() {
    let dir = temp_dir("config");
    let config = dir.join("run.conf");
    std::fs::write(&config, "hmax = 0.125\nseed = 9\nrho = 50\n").unwrap();
    let output = run(&[
        "steps",
        "--problem",
        "sgle-mult",
        "--strategy",
        "at",
        "--paths",
        "5",
        "--hmax",
        "0.25",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 9, "config seed should fill the gap");
    assert_eq!(
        manifest["parameters"]["hmax"], "0.25",
        "explicit flag must beat the config value"
    );
    assert_eq!(manifest["parameters"]["rho"], "50");
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = temp_dir("badconfig");
    let config = dir.join("run.conf");
    std::fs::write(&config, "hmax = 0.125\nstepsize = 0.1\n").unwrap();
    let output = run(&[
        "steps",
        "--problem",
        "sgle-mult",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("stepsize"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn json_output_embeds_the_manifest_and_rows() {
    let dir = temp_dir("json");
    let output = run(&[
        "converge",
        "--problem",
        "sgle-add",
        "--hmax",
        "0.25",
        "--levels",
        "2",
        "--paths",
        "10",
        "--seed",
        "3",
        "--format",
        "json",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("converge.json")).unwrap())
            .unwrap();
    assert_eq!(doc["manifest"]["seed"], 3);
    assert_eq!(doc["manifest"]["command"], "converge");
    assert!(doc["manifest"]["generator"].is_string());
    assert!(doc["manifest"]["revision"].is_string());
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2, "one row per sweep point");
    for row in rows {
        assert!(row["rms_error"].as_f64().unwrap().is_finite());
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn list_problems_prints_the_whole_registry() {
    let output = run(&["list-problems"]);
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    let names: BTreeSet<&str> = stdout
        .lines()
        .map(|line| line.split_whitespace().next().unwrap_or(""))
        .filter(|s| !s.is_empty())
        .collect();
    for expected in [
        "sgle-mult",
        "sgle-add",
        "vdp",
        "langevin",
        "sir",
        "lv",
        "pk",
        "poly2d",
        "cir",
    ] {
        assert!(names.contains(expected), "missing {expected} in: {stdout}");
    }
}

#[test]
fn csv_runs_write_a_manifest_sidecar() {
    let dir = temp_dir("sidecar");
    let output = run(&[
        "diverge",
        "--problem",
        "sgle-mult",
        "--hmax",
        "0.5",
        "--param",
        "x0=5",
        "--T",
        "10",
        "--paths",
        "50",
        "--seed",
        "2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr_of(&output));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap())
            .unwrap();
    let outputs: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(outputs.iter().any(|p| p.ends_with("diverge.csv")));
    assert!(dir.join("diverge.csv").exists());
    std::fs::remove_dir_all(dir).unwrap();
}
