//! `difficulty`: per-question difficulty estimates for a rollout file.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use adathink_core::difficulty::{difficulty_acc, difficulty_uncertainty};
use adathink_core::uncertainty::batch_uncertainties;
use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use crate::commands::{apply_calibration_args, resolve, CalibrationArgs, CommonArgs};
use crate::ingest::parse_rollouts;
use crate::report::{atomic_write, ensure_out_dir, Header};

#[derive(Debug, Args)]
pub struct DifficultyArgs {
    /// Rollout record file (one question group per line).
    pub input: PathBuf,

    #[command(flatten)]
    pub common: CommonArgs,

    #[command(flatten)]
    pub calibration: CalibrationArgs,
}

/// One line of `difficulty.jsonl`.
#[derive(Serialize)]
struct DifficultyRecord<'a> {
    question_id: &'a str,
    group_accuracy: f64,
    d_acc: f64,
    d_q: f64,
    alpha: f64,
    normalized_uncertainties: Vec<f64>,
    per_rollout_terms: &'a [f64],
}

pub fn run(args: &DifficultyArgs) -> Result<()> {
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

    let uncertainties = batch_uncertainties(&parsed.batch, calibration.k_fraction)?;
    let group_size = parsed.batch.group_size();

    ensure_out_dir(&args.common.out)?;
    let header = Header {
        command: "difficulty",
        config: &config,
        overrides: &overrides,
    };
    let mut body = header.jsonl_line();
    body.push('\n');
    for (group_index, group) in parsed.batch.groups().iter().enumerate() {
        let normalized: Vec<f64> = uncertainties
            [group_index * group_size..(group_index + 1) * group_size]
            .iter()
            .map(|u| u.normalized)
            .collect();
        let score = difficulty_uncertainty(group, &normalized, calibration.alpha)?;
        let record = DifficultyRecord {
            question_id: group.question_id(),
            group_accuracy: adathink_core::rollout::group_accuracy(group),
            d_acc: difficulty_acc(group),
            d_q: score.value,
            alpha: score.alpha,
            normalized_uncertainties: normalized,
            per_rollout_terms: &score.per_rollout_terms,
        };
        body.push_str(&serde_json::to_string(&record)?);
        body.push('\n');
    }

    let path = args.common.out.join("difficulty.jsonl");
    atomic_write(&path, &body)?;
    println!(
        "estimated difficulty for {} groups; wrote {}",
        parsed.batch.groups().len(),
        path.display()
    );
    Ok(())
}
