use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marl-bench"))
        .args(args)
        .env("MARL_BENCH_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn exit_codes_separate_validation_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let bad_scenario = write(dir.path(), "bad.json", r#"{"scenario": "arena"}"#);
    let o = bench(&["train", "--config", &bad_scenario, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("predator_prey") && stderr.contains("cooperative_navigation"), "{stderr}");

    let bad_gamma = write(dir.path(), "gamma.json", r#"{"gamma": 1.5}"#);
    let o = bench(&["train", "--config", &bad_gamma, "--out", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));

    let o = bench(&["train", "--config", "/nonexistent/config.json", "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let o = bench(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_report_and_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", r#"{"episodes": 8, "batch_size": 32, "hidden_units": [8, 8], "seed": 4}"#);
    let out = dir.path().join("run");
    let o = bench(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "rewards.csv", "checkpoint.bin"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let csv = dir.path().join("tidy.csv");
    let report = out.join("report.json");
    let o = bench(&["report", report.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("Mini-batch sampling") && stdout.contains("published 59.08%"), "{stdout}");
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 1);

    let growth = write(
        dir.path(),
        "growth.json",
        r#"{"algorithm": "maddpg", "scenario": "predator_prey",
            "rows": [{"n_from": 3, "n_to": 6, "ratios": {"mini_batch_sampling": 3.6, "action_selection": 2.0}}]}"#,
    );
    let o = bench(&["compare", "--growth", &growth]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("DirectionMatch") && stdout.contains("DirectionMismatch"), "{stdout}");

    let o = bench(&["report", cfg.as_str()]);
    assert_eq!(o.status.code(), Some(1), "a config is not a report");
}
