//! End-to-end CLI behavior: exit codes, diagnostics, state resumption,
//! and file-format details.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use adathink_core::calibration::{calibrate_batch, CalibrationConfig, CalibrationState};
use adathink_cli::ingest::parse_rollouts;

fn adathink(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adathink"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

const TWO_GROUPS: &str = concat!(
    r#"{"question_id":"q1","ground_truth":"B","rollouts":[{"answer":"B","format_ok":true,"length":2,"steps":[{"probs":[0.9,0.1]},{"logits":[0.0,0.0]}]},{"answer":"A","format_ok":true,"length":4,"entropies":[0.3,0.5,0.2,0.9]}]}"#,
    "\n",
    r#"{"question_id":"q2","ground_truth":"C","rollouts":[{"answer":"C","format_ok":true,"length":1,"steps":[{"probs":[1.0,0.0]}]},{"answer":"D","format_ok":false,"length":6,"entropies":[1.2,1.0,0.8,1.1,0.9,1.3]}]}"#,
    "\n",
);

#[test]
fn score_emits_one_record_per_rollout() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("rollouts.jsonl"), TWO_GROUPS).unwrap();
    let out = adathink(&["score", "rollouts.jsonl", "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let rewards = fs::read_to_string(dir.path().join("run/rewards.jsonl")).unwrap();
    let lines: Vec<&str> = rewards.lines().collect();
    // Header plus 2 groups x G=2 records.
    assert_eq!(lines.len(), 5);
    assert!(lines[0].contains("\"header\""));
    for line in &lines[1..] {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(record["branch"].is_string());
        assert!(record["theta"].is_number());
        assert!(record["difficulty"].is_number());
    }
    assert!(dir.path().join("run/state.json").exists());
}

#[test]
fn score_cites_offending_line_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = String::new();
    bad.push_str(r#"{"question_id":"q1","ground_truth":"B","rollouts":[{"answer":"B","format_ok":true,"length":1,"steps":[{"probs":[1.0,0.0]}]}]}"#);
    bad.push('\n');
    bad.push_str(r#"{"question_id":"q2","ground_truth":"B","rollouts":[{"answer":"B","format_ok":true,"length":1,"steps":[{"probs":[1.0,0.0]}]}]}"#);
    bad.push('\n');
    bad.push_str(r#"{"question_id":"q3","ground_truth":"B","rollouts":[{"answer":"B","format_ok":true,"length":1,"steps":[{"probs":[0.5,0.6]}]}]}"#);
    bad.push('\n');
    fs::write(dir.path().join("bad.jsonl"), bad).unwrap();
    let out = adathink(&["score", "bad.jsonl", "--out", "run"], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
    assert!(stderr.contains("simplex"), "stderr: {stderr}");
}

#[test]
fn unknown_fields_warn_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let record = concat!(
        r#"{"question_id":"q1","ground_truth":"B","surprise":1,"rollouts":[{"answer":"B","format_ok":true,"length":1,"entropies":[0.1]}]}"#,
        "\n",
    );
    fs::write(dir.path().join("r.jsonl"), record).unwrap();
    let out = adathink(&["score", "r.jsonl", "--out", "run"], dir.path());
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown field `surprise`"), "stderr: {stderr}");
}

/// Splitting a stream across two `score` invocations with `--resume-state`
/// must equal one uninterrupted two-batch calibration.
#[test]
fn resume_state_continues_the_ema() {
    let dir = tempfile::tempdir().unwrap();
    let batch1 = TWO_GROUPS;
    let batch2 = concat!(
        r#"{"question_id":"q3","ground_truth":"A","rollouts":[{"answer":"A","format_ok":true,"length":3,"entropies":[0.2,0.1,0.4]},{"answer":"A","format_ok":true,"length":2,"entropies":[0.6,0.7]}]}"#,
        "\n",
        r#"{"question_id":"q4","ground_truth":"B","rollouts":[{"answer":"X","format_ok":true,"length":8,"entropies":[1.0,1.1,0.9,1.2,1.0,0.8,1.3,1.1]},{"answer":"B","format_ok":true,"length":5,"entropies":[0.5,0.4,0.6,0.5,0.4]}]}"#,
        "\n",
    );
    fs::write(dir.path().join("b1.jsonl"), batch1).unwrap();
    fs::write(dir.path().join("b2.jsonl"), batch2).unwrap();

    let out = adathink(&["score", "b1.jsonl", "--out", "run1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = adathink(
        &[
            "score",
            "b2.jsonl",
            "--out",
            "run2",
            "--resume-state",
            "run1/state.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Oracle: the same two batches pushed through the library in sequence.
    let config = CalibrationConfig::default();
    let state = CalibrationState::new(config.alpha_m).unwrap();
    let parsed1 = parse_rollouts(std::io::Cursor::new(batch1.as_bytes())).unwrap();
    let parsed2 = parse_rollouts(std::io::Cursor::new(batch2.as_bytes())).unwrap();
    let chained1 = calibrate_batch(&parsed1.batch, &config, &state).unwrap();
    let chained2 = calibrate_batch(&parsed2.batch, &config, &chained1.state).unwrap();

    let state_doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run2/state.json")).unwrap())
            .unwrap();
    assert_eq!(
        state_doc["state"]["theta"].as_f64().unwrap(),
        chained2.state.theta().unwrap()
    );
    assert_eq!(
        state_doc["state"]["mean_len_simple"].as_f64(),
        chained2.state.mean_len_simple()
    );
    assert_eq!(
        state_doc["state"]["mean_len_hard"].as_f64(),
        chained2.state.mean_len_hard()
    );

    // Rewards of the resumed run match the chained oracle.
    let rewards = fs::read_to_string(dir.path().join("run2/rewards.jsonl")).unwrap();
    for (line, expected) in rewards.lines().skip(1).zip(&chained2.rewards) {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(record["total"].as_f64().unwrap(), expected.reward.total);
    }
}

#[test]
fn difficulty_reports_all_wrong_group_as_hardest() {
    let dir = tempfile::tempdir().unwrap();
    let record = concat!(
        r#"{"question_id":"q1","ground_truth":"A","rollouts":[{"answer":"B","format_ok":true,"length":1,"entropies":[0.2]},{"answer":"C","format_ok":true,"length":2,"entropies":[0.4,0.1]}]}"#,
        "\n",
    );
    fs::write(dir.path().join("r.jsonl"), record).unwrap();
    let out = adathink(&["difficulty", "r.jsonl", "--out", "d"], dir.path());
    assert!(out.status.success());
    let body = fs::read_to_string(dir.path().join("d/difficulty.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(body.lines().nth(1).unwrap()).unwrap();
    assert_eq!(record["d_acc"].as_f64().unwrap(), 1.0);
    assert_eq!(record["d_q"].as_f64().unwrap(), 1.0);
}

#[test]
fn select_full_ratio_returns_all_ids() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("lengths.csv"),
        "id,output_length\na,10\nb,20\nc,900\nd,1000\n",
    )
    .unwrap();
    let out = adathink(
        &["select", "lengths.csv", "--ratio", "1.0", "--out", "s"],
        dir.path(),
    );
    assert!(out.status.success());
    let body = fs::read_to_string(dir.path().join("s/selected_ids.txt")).unwrap();
    let ids: Vec<&str> = body.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(ids, vec!["a", "b", "c", "d"]);
}

#[test]
fn aes_missing_baseline_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("t.csv"), "model,acc,len\nm1,50.0,100\n").unwrap();
    let out = adathink(
        &["aes", "t.csv", "--baseline", "nope", "--out", "a"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("baseline"));
}

#[test]
fn simulate_stage1_only_marks_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = adathink(
        &[
            "simulate",
            "--stage1-steps",
            "3",
            "--stage2-steps",
            "0",
            "--batch-size",
            "5",
            "--group-size",
            "2",
            "--eval-rollouts-per-bucket",
            "8",
            "--out",
            "sim",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sim/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["stage1_only"], serde_json::Value::Bool(true));
    assert!(summary.get("stage2").is_none());
    assert!(dir.path().join("sim/histogram_stage1_end.csv").exists());
    assert!(!dir.path().join("sim/histogram_stage2_end.csv").exists());
}

#[test]
fn config_file_applies_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), "tau = 0.9\nseed = 5\n").unwrap();
    fs::write(dir.path().join("r.jsonl"), TWO_GROUPS).unwrap();
    let out = adathink(
        &[
            "score",
            "r.jsonl",
            "--config",
            "cfg.toml",
            "--tau",
            "0.3",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rewards = fs::read_to_string(dir.path().join("run/rewards.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(rewards.lines().next().unwrap()).unwrap();
    assert_eq!(header["header"]["config"]["tau"].as_f64().unwrap(), 0.3);
    assert_eq!(header["header"]["config"]["seed"].as_u64().unwrap(), 5);
    let overrides = header["header"]["overrides"].as_array().unwrap();
    assert!(overrides.iter().any(|o| o.as_str().unwrap().contains("tau=0.9 (config file)")));
    assert!(overrides.iter().any(|o| o.as_str().unwrap().contains("tau=0.3 (flag)")));
}

#[test]
fn outputs_are_written_atomically_without_temp_leftovers() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("r.jsonl"), TWO_GROUPS).unwrap();
    let out = adathink(&["score", "r.jsonl", "--out", "run"], dir.path());
    assert!(out.status.success());
    let leftovers: Vec<_> = fs::read_dir(dir.path().join("run"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty());
}
