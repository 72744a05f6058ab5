//! End-to-end smoke tests for the `amod` binary: every subcommand, the
//! resume path, the mutant-detection failure path and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn amod() -> Command {
    Command::new(env!("CARGO_BIN_EXE_amod"))
}

fn run(args: &[&str]) -> Output {
    amod().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (code {:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("amod-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_scenario(dir: &Path, kind: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(format!("{kind}.json"));
    let mut args = vec![
        "generate-scenario".to_string(),
        "--kind".into(),
        kind.into(),
        "--out".into(),
        path.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let out = amod().args(&args).output().unwrap();
    assert_ok(&out, "generate-scenario");
    path
}

#[test]
fn generate_scenario_all_kinds() {
    let dir = tmp_dir("gen");
    for kind in ["grid", "hotspot", "ring", "irregular"] {
        let path = write_scenario(&dir, kind, &["--seed", "3"]);
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["name"].as_str().unwrap().contains(kind));
        assert!(v["fleet_size"].as_i64().unwrap() > 0);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_evaluate_and_resume() {
    let dir = tmp_dir("train");
    let scenario = write_scenario(&dir, "hotspot", &["--rows", "2", "--cols", "2", "--fleet", "8"]);
    let run_dir = dir.join("run");
    let train = |episodes: &str, resume: bool| {
        let mut args = vec![
            "train",
            "--scenario",
            scenario.to_str().unwrap(),
            "--episodes",
            episodes,
            "--eval-episodes",
            "2",
            "--out",
            run_dir.to_str().unwrap(),
        ];
        if resume {
            args.push("--resume");
        }
        run(&args)
    };
    assert_ok(&train("6", false), "train");
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "episode,reward,served_demand,rebalancing_cost,steps,wall_ms"
    );
    assert_eq!(lines.count(), 6);
    assert!(run_dir.join("last.ckpt").exists());
    assert!(run_dir.join("best.ckpt").exists());
    assert!(run_dir.join("summary.json").exists());

    // resume appends exactly the remaining episodes
    assert_ok(&train("10", true), "train --resume");
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 11);

    // evaluate the checkpoint against the ED reference
    let ed_summary = dir.join("ed.json");
    assert_ok(
        &run(&[
            "evaluate",
            "--scenario",
            scenario.to_str().unwrap(),
            "--policy",
            "ed",
            "--eval-episodes",
            "2",
            "--out",
            ed_summary.to_str().unwrap(),
        ]),
        "evaluate ed",
    );
    let out = run(&[
        "evaluate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--policy",
        "gnn",
        "--checkpoint",
        run_dir.join("best.ckpt").to_str().unwrap(),
        "--eval-episodes",
        "2",
        "--reference",
        ed_summary.to_str().unwrap(),
    ]);
    assert_ok(&out, "evaluate gnn");
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["mean_reward"].as_f64().unwrap().is_finite());
    assert!(v["pct_dev_reward"].as_f64().is_some());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn transfer_runs_gnn_checkpoint_on_larger_network() {
    let dir = tmp_dir("transfer");
    let small = write_scenario(&dir, "hotspot", &["--rows", "2", "--cols", "2", "--fleet", "8"]);
    let large_path = dir.join("large.json");
    let out = run(&[
        "generate-scenario",
        "--kind",
        "hotspot",
        "--rows",
        "3",
        "--cols",
        "3",
        "--fleet",
        "18",
        "--out",
        large_path.to_str().unwrap(),
    ]);
    assert_ok(&out, "generate large");
    let run_dir = dir.join("run");
    assert_ok(
        &run(&[
            "train",
            "--scenario",
            small.to_str().unwrap(),
            "--episodes",
            "4",
            "--eval-episodes",
            "2",
            "--out",
            run_dir.to_str().unwrap(),
        ]),
        "train",
    );
    let out = run(&[
        "transfer",
        "--scenario",
        large_path.to_str().unwrap(),
        "--checkpoint",
        run_dir.join("last.ckpt").to_str().unwrap(),
        "--eval-episodes",
        "2",
    ]);
    assert_ok(&out, "transfer");
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["mean_reward"].as_f64().unwrap().is_finite());

    // the mlp head is size-locked: transferring it must be a usage error
    assert_ok(
        &run(&[
            "train",
            "--scenario",
            small.to_str().unwrap(),
            "--policy",
            "mlp",
            "--episodes",
            "4",
            "--eval-episodes",
            "2",
            "--out",
            dir.join("mlp").to_str().unwrap(),
        ]),
        "train mlp",
    );
    let out = run(&[
        "transfer",
        "--scenario",
        large_path.to_str().unwrap(),
        "--policy",
        "mlp",
        "--checkpoint",
        dir.join("mlp").join("last.ckpt").to_str().unwrap(),
        "--eval-episodes",
        "2",
    ]);
    assert!(!out.status.success(), "mlp transfer across sizes must fail");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bench_solvers_passes_and_detects_mutant() {
    let out = run(&["bench-solvers", "--trials", "50", "--seed", "9"]);
    assert_ok(&out, "bench-solvers");

    let out = run(&["bench-solvers", "--trials", "50", "--seed", "9", "--inject-mutant"]);
    assert_eq!(out.status.code(), Some(1), "mutant must exit with code 1");
    let stderr = String::from_utf8_lossy(&out.stderr);
    // the failing instance is dumped as JSON for reproduction
    assert!(stderr.contains("{"), "expected failing instance on stderr: {stderr}");
}

#[test]
fn timing_reports_each_size() {
    let out = run(&["timing", "--sizes", "4,9", "--decisions", "5"]);
    assert_ok(&out, "timing");
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "n_stations,median_ms,decisions");
    assert_eq!(lines.count(), 2);
}

#[test]
fn usage_and_io_exit_codes() {
    // unknown flag -> clap usage error (2)
    let out = run(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    // missing scenario file -> I/O error (3)
    let out = run(&[
        "evaluate",
        "--scenario",
        "/nonexistent/scenario.json",
        "--policy",
        "ed",
    ]);
    assert_eq!(out.status.code(), Some(3));
}
