//! Black-box checks of the command line: flag handling, file naming, exit
//! codes, env-driven logging, and byte-level determinism of outputs.

use std::path::Path;
use std::process::{Command, Output};

fn planmerge(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_planmerge"));
    // The suite asserts on stdout, so a logging variable inherited from the
    // caller's shell must not leak in.
    cmd.env_remove("PLANMERGE_LOG");
    cmd.args(args);
    cmd
}

fn run_ok(args: &[&str]) -> Output {
    let out = planmerge(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "planmerge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn single_method_run_writes_the_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["run", "--preset", "exp1", "--method", "1", "--seeds", "2", "--out", out]);
    let text = read(&dir.path().join("raw_exp1_1.csv"));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "seed,method,iteration,operator_id,node_id,raw_error,normalized_error,improvement,perceived_result,next_time"
    );
    // 2 seeds x 1 node x 2 iterations, all method 1.
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1) == Some("1")));
}

#[test]
fn runs_are_byte_identical_until_the_seed_moves() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "run".to_string(),
            "--preset".into(),
            "exp1".into(),
            "--method".into(),
            "2".into(),
            "--seeds".into(),
            "3".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    for dir in [&a, &b] {
        let argv = args(dir.path());
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        run_ok(&argv);
    }
    let mut argv = args(c.path());
    argv.insert(1, "--master-seed".into());
    argv.insert(2, "999".into());
    let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
    run_ok(&argv);

    let file = |d: &tempfile::TempDir| read(&d.path().join("raw_exp1_2.csv"));
    assert_eq!(file(&a), file(&b), "same configuration must reproduce bytes");
    assert_ne!(file(&a), file(&c), "a different master seed must move the data");
}

#[test]
fn default_method_all_covers_every_method_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&["run", "--preset", "exp1", "--seeds", "2", "--out", out]);
    let raw = read(&dir.path().join("raw_exp1_all.csv"));
    let methods: std::collections::BTreeSet<&str> = raw
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(methods.into_iter().collect::<Vec<_>>(), ["0", "1", "2", "3"]);

    let agg_path = dir.path().join("agg.csv");
    run_ok(&["aggregate", "--in", out, "--out", agg_path.to_str().unwrap()]);
    let agg = read(&agg_path);
    let lines: Vec<&str> = agg.lines().collect();
    assert_eq!(lines[0], "seed_count,method,iteration,mean_improvement,stddev");
    // 4 methods x 2 iterations, each over both seeds.
    assert_eq!(lines.len(), 1 + 8);
    assert!(lines[1..].iter().all(|l| l.starts_with("2,")));
}

#[test]
fn no_noise_makes_perception_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&[
        "run", "--preset", "exp1", "--method", "0", "--seeds", "1", "--no-noise", "--out", out,
    ]);
    let text = read(&dir.path().join("raw_exp1_0.csv"));
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[6], fields[8], "perceived must equal the normalized error: {line}");
    }
}

#[test]
fn config_overlay_is_applied_on_top_of_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let overlay = dir.path().join("overlay.cfg");
    std::fs::write(&overlay, "num_seeds = 1 # single run\nnum_iterations = 3\n").unwrap();
    let out = dir.path().to_str().unwrap();
    run_ok(&[
        "run", "--preset", "exp1", "--method", "0",
        "--config", overlay.to_str().unwrap(), "--out", out,
    ]);
    let text = read(&dir.path().join("raw_exp1_0.csv"));
    // 1 seed x 1 node x 3 iterations.
    assert_eq!(text.lines().count(), 1 + 3);
}

#[test]
fn protocol_log_env_var_narrates_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let output = planmerge(&[
        "run", "--preset", "exp1", "--method", "0", "--seeds", "1", "--out", out,
    ])
    .env("PLANMERGE_LOG", "protocol")
    .output()
    .expect("spawn");
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains(" CallForProposal "), "missing protocol lines:\n{stdout}");
    assert!(stdout.contains(" RequestExecution "));
    assert!(stdout.lines().any(|l| l.starts_with("t=")));
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    let bad_preset = planmerge(&["run", "--preset", "nope", "--out", "/tmp/x"])
        .output()
        .expect("spawn");
    assert_eq!(bad_preset.status.code(), Some(2));

    let empty = tempfile::tempdir().unwrap();
    let agg = planmerge(&[
        "aggregate", "--in", empty.path().to_str().unwrap(), "--out", "/tmp/never.csv",
    ])
    .output()
    .expect("spawn");
    assert_eq!(agg.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&agg.stderr);
    assert!(stderr.starts_with("error: "), "stderr was: {stderr}");
    assert!(stderr.contains("no raw_*.csv"));

    let overlay = empty.path().join("bad.cfg");
    std::fs::write(&overlay, "no_such_key = 5\n").unwrap();
    let bad_cfg = planmerge(&[
        "run", "--preset", "exp1",
        "--config", overlay.to_str().unwrap(),
        "--out", empty.path().to_str().unwrap(),
    ])
    .output()
    .expect("spawn");
    assert_eq!(bad_cfg.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_cfg.stderr).starts_with("error: "));
}
