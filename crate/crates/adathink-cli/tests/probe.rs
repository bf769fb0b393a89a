// scratch probe: replicate the resume test exactly
use std::fs;
use std::process::Command;
use adathink_core::calibration::{calibrate_batch, CalibrationConfig, CalibrationState};
use adathink_cli::ingest::parse_rollouts;

const TWO_GROUPS: &str = concat!(
    r#"{"question_id":"q1","ground_truth":"B","rollouts":[{"answer":"B","format_ok":true,"length":2,"steps":[{"probs":[0.9,0.1]},{"logits":[0.0,0.0]}]},{"answer":"A","format_ok":true,"length":4,"entropies":[0.3,0.5,0.2,0.9]}]}"#,
    "\n",
    r#"{"question_id":"q2","ground_truth":"C","rollouts":[{"answer":"C","format_ok":true,"length":1,"steps":[{"probs":[1.0,0.0]}]},{"answer":"D","format_ok":false,"length":6,"entropies":[1.2,1.0,0.8,1.1,0.9,1.3]}]}"#,
    "\n",
);

#[test]
fn probe() {
    let batch2 = concat!(
        r#"{"question_id":"q3","ground_truth":"A","rollouts":[{"answer":"A","format_ok":true,"length":3,"entropies":[0.2,0.1,0.4]},{"answer":"A","format_ok":true,"length":2,"entropies":[0.6,0.7]}]}"#,
        "\n",
        r#"{"question_id":"q4","ground_truth":"B","rollouts":[{"answer":"X","format_ok":true,"length":8,"entropies":[1.0,1.1,0.9,1.2,1.0,0.8,1.3,1.1]},{"answer":"B","format_ok":true,"length":5,"entropies":[0.5,0.4,0.6,0.5,0.4]}]}"#,
        "\n",
    );
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("b1.jsonl"), TWO_GROUPS).unwrap();
    fs::write(dir.path().join("b2.jsonl"), batch2).unwrap();
    let st = Command::new(env!("CARGO_BIN_EXE_adathink")).args(["score","b1.jsonl","--out","run1"]).current_dir(dir.path()).output().unwrap();
    assert!(st.status.success());
    let st = Command::new(env!("CARGO_BIN_EXE_adathink")).args(["score","b2.jsonl","--out","run2","--resume-state","run1/state.json"]).current_dir(dir.path()).output().unwrap();
    assert!(st.status.success());

    let s1: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run1/state.json")).unwrap()).unwrap();
    println!("CLI state1: theta={:?} ls={:?} lh={:?}", s1["state"]["theta"].as_f64(), s1["state"]["mean_len_simple"].as_f64(), s1["state"]["mean_len_hard"].as_f64());

    let config = CalibrationConfig::default();
    let state = CalibrationState::new(config.alpha_m).unwrap();
    let p1 = parse_rollouts(std::io::Cursor::new(TWO_GROUPS.as_bytes())).unwrap();
    let p2 = parse_rollouts(std::io::Cursor::new(batch2.as_bytes())).unwrap();
    let c1 = calibrate_batch(&p1.batch, &config, &state).unwrap();
    println!("LIB state1: theta={:?} ls={:?} lh={:?}", c1.state.theta(), c1.state.mean_len_simple(), c1.state.mean_len_hard());
    let c2 = calibrate_batch(&p2.batch, &config, &c1.state).unwrap();
    let s2: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run2/state.json")).unwrap()).unwrap();
    println!("CLI state2: ls={:?}", s2["state"]["mean_len_simple"].as_f64());
    println!("LIB state2: ls={:?}", c2.state.mean_len_simple());
    let rewards = fs::read_to_string(dir.path().join("run2/rewards.jsonl")).unwrap();
    for (line, expected) in rewards.lines().skip(1).zip(&c2.rewards) {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        println!("cli={:?} lib={:?}", record["total"].as_f64().unwrap(), expected.reward.total);
    }
}
