//! `score`: calibrated composite rewards for a rollout record file.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use adathink_core::calibration::{calibrate_batch, CalibrationState};
use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::commands::{apply_calibration_args, resolve, CalibrationArgs, CommonArgs};
use crate::ingest::parse_rollouts;
use crate::report::{atomic_write, ensure_out_dir, Header};

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Rollout record file (one question group per line).
    pub input: PathBuf,

    #[command(flatten)]
    pub common: CommonArgs,

    #[command(flatten)]
    pub calibration: CalibrationArgs,

    /// Resume EMA statistics from a state file written by a previous run.
    #[arg(long, value_name = "PATH")]
    pub resume_state: Option<PathBuf>,
}

/// One line of `rewards.jsonl`.
#[derive(Serialize)]
struct RewardRecord<'a> {
    question_id: &'a str,
    rollout_index: usize,
    acc: f64,
    format: f64,
    len: f64,
    repetition: f64,
    total: f64,
    difficulty: f64,
    normalized_uncertainty: f64,
    raw_uncertainty: f64,
    rho: f64,
    branch: &'a str,
    theta: f64,
}

#[derive(Serialize)]
struct StateFile<'a> {
    header: &'a Header<'a>,
    state: &'a CalibrationState,
}

#[derive(Deserialize)]
struct StateFileIn {
    state: CalibrationState,
}

pub fn run(args: &ScoreArgs) -> Result<()> {
    let (mut config, mut overrides) = resolve(&args.common)?;
    apply_calibration_args(&mut config, &mut overrides, &args.calibration);
    let calibration = config.calibration();
    calibration.validate()?;

    let file = File::open(&args.input)
        .with_context(|| format!("cannot open rollout file {}", args.input.display()))?;
    let parsed = parse_rollouts(BufReader::new(file))
        .with_context(|| format!("invalid rollout file {}", args.input.display()))?;
    for warning in &parsed.warnings {
        eprintln!("warning: {warning}");
    }

    let state = match &args.resume_state {
        Some(path) => {
            let state = read_state(path)?;
            if state.momentum() != calibration.alpha_m {
                eprintln!(
                    "warning: resumed state momentum {} overrides configured alpha_m {}",
                    state.momentum(),
                    calibration.alpha_m
                );
            }
            state
        }
        None => CalibrationState::new(calibration.alpha_m)?,
    };

    let outcome = calibrate_batch(&parsed.batch, &calibration, &state)?;

    ensure_out_dir(&args.common.out)?;
    let header = Header {
        command: "score",
        config: &config,
        overrides: &overrides,
    };

    let group_size = parsed.batch.group_size();
    let mut rewards_body = header.jsonl_line();
    rewards_body.push('\n');
    for (group_index, group) in parsed.batch.groups().iter().enumerate() {
        for rollout_index in 0..group_size {
            let entry = &outcome.rewards[group_index * group_size + rollout_index];
            let record = RewardRecord {
                question_id: group.question_id(),
                rollout_index,
                acc: entry.reward.acc,
                format: entry.reward.format,
                len: entry.reward.len,
                repetition: entry.reward.repetition_penalty,
                total: entry.reward.total,
                difficulty: entry.difficulty,
                normalized_uncertainty: entry.normalized_uncertainty,
                raw_uncertainty: entry.raw_uncertainty,
                rho: entry.rho,
                branch: entry.branch.as_str(),
                theta: outcome.threshold,
            };
            rewards_body.push_str(&serde_json::to_string(&record)?);
            rewards_body.push('\n');
        }
    }
    let rewards_path = args.common.out.join("rewards.jsonl");
    atomic_write(&rewards_path, &rewards_body)?;

    let state_doc = StateFile {
        header: &header,
        state: &outcome.state,
    };
    let state_path = args.common.out.join("state.json");
    let mut state_body = serde_json::to_string_pretty(&state_doc)?;
    state_body.push('\n');
    atomic_write(&state_path, &state_body)?;

    println!(
        "scored {} groups x G={} rollouts; theta={:.6}; wrote {} and {}",
        parsed.batch.groups().len(),
        group_size,
        outcome.threshold,
        rewards_path.display(),
        state_path.display()
    );
    Ok(())
}

fn read_state(path: &std::path::Path) -> Result<CalibrationState> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read state file {}", path.display()))?;
    let doc: StateFileIn = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse state file {}", path.display()))?;
    let momentum = doc.state.momentum();
    if !momentum.is_finite() || momentum <= 0.0 || momentum > 1.0 {
        bail!(
            "state file {} carries invalid momentum {momentum}",
            path.display()
        );
    }
    Ok(doc.state)
}
