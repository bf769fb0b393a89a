//! `simulate`: the two-stage training loop on the synthetic environment,
//! with metrics, length histograms, and a run summary.

use adathink_core::sim::{length_distribution, train, Checkpoint, CheckpointEval, TrainingReport};
use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use crate::commands::{apply_calibration_args, resolve, CalibrationArgs, CommonArgs};
use crate::config::Overrides;
use crate::report::{atomic_write, ensure_out_dir, Header};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    #[command(flatten)]
    pub calibration: CalibrationArgs,

    /// Reward regime for stage 2: adathink, greedy_uniform, or
    /// accuracy_only.
    #[arg(long, value_name = "MODE")]
    pub reward_mode: Option<String>,

    /// Stage-1 training steps (accuracy + format reward).
    #[arg(long)]
    pub stage1_steps: Option<usize>,

    /// Stage-2 training steps (selected reward mode).
    #[arg(long)]
    pub stage2_steps: Option<usize>,

    /// Questions per batch.
    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Rollouts per question (G).
    #[arg(long)]
    pub group_size: Option<usize>,

    #[arg(long)]
    pub learning_rate: Option<f64>,

    /// Clipping radius of the surrogate objective.
    #[arg(long)]
    pub clip_epsilon: Option<f64>,

    /// KL penalty coefficient toward the stage-1 reference policy.
    #[arg(long)]
    pub kl_beta: Option<f64>,

    /// Rollouts per bucket in each checkpoint evaluation.
    #[arg(long)]
    pub eval_rollouts_per_bucket: Option<usize>,
}

#[derive(Serialize)]
struct StageSummary<'a> {
    accuracy: f64,
    mean_length: f64,
    bucket_accuracy: &'a [f64],
    bucket_mean_length: &'a [f64],
    bimodal: bool,
}

#[derive(Serialize)]
struct CollapseSummary {
    stage1_peak_accuracy: f64,
    stage2_end_accuracy: f64,
    accuracy_drop_from_peak: f64,
    stage2_mean_length: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    header: &'a Header<'a>,
    reward_mode: &'a str,
    stage1_only: bool,
    bucket_keys: &'a [usize],
    stage1_peak_accuracy: f64,
    stage1: StageSummary<'a>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage2: Option<StageSummary<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    collapse: Option<CollapseSummary>,
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let (mut config, mut log) = resolve(&args.common)?;
    apply_calibration_args(&mut config, &mut log, &args.calibration);
    {
        let mut overrides = Overrides {
            config: &mut config,
            log: &mut log,
        };
        overrides.set_string("reward_mode", |c| &mut c.reward_mode, args.reward_mode.clone());
        overrides.set_usize("stage1_steps", |c| &mut c.stage1_steps, args.stage1_steps);
        overrides.set_usize("stage2_steps", |c| &mut c.stage2_steps, args.stage2_steps);
        overrides.set_usize("batch_size", |c| &mut c.batch_size, args.batch_size);
        overrides.set_usize("group_size", |c| &mut c.group_size, args.group_size);
        overrides.set_f64("learning_rate", |c| &mut c.learning_rate, args.learning_rate);
        overrides.set_f64("clip_epsilon", |c| &mut c.clip_epsilon, args.clip_epsilon);
        overrides.set_f64("kl_beta", |c| &mut c.kl_beta, args.kl_beta);
        overrides.set_usize(
            "eval_rollouts_per_bucket",
            |c| &mut c.eval_rollouts_per_bucket,
            args.eval_rollouts_per_bucket,
        );
    }
    let mode = config.reward_mode()?;
    let schedule = config.schedule();
    let env = config.env();
    let calibration = config.calibration();

    let report = train(&schedule, mode, &calibration, &env)
        .context("training aborted")?;

    ensure_out_dir(&args.common.out)?;
    let header = Header {
        command: "simulate",
        config: &config,
        overrides: &log,
    };

    // Per-step metrics.
    let mut metrics_body = header.jsonl_line();
    metrics_body.push('\n');
    for step in &report.steps {
        metrics_body.push_str(&serde_json::to_string(step)?);
        metrics_body.push('\n');
    }
    let metrics_path = args.common.out.join("metrics.jsonl");
    atomic_write(&metrics_path, &metrics_body)?;

    // Checkpoint histograms.
    let stage1_hist = length_distribution(&report, Checkpoint::Stage1End)?;
    write_histogram(
        &args.common.out.join("histogram_stage1_end.csv"),
        &header,
        &stage1_hist,
    )?;
    let stage2_hist = match report.stage2_eval.is_some() {
        true => {
            let hist = length_distribution(&report, Checkpoint::Stage2End)?;
            write_histogram(
                &args.common.out.join("histogram_stage2_end.csv"),
                &header,
                &hist,
            )?;
            Some(hist)
        }
        false => None,
    };

    // Run summary.
    let collapse = report.stage2_eval.as_ref().map(|eval| CollapseSummary {
        stage1_peak_accuracy: report.stage1_peak_accuracy,
        stage2_end_accuracy: eval.accuracy,
        accuracy_drop_from_peak: report.stage1_peak_accuracy - eval.accuracy,
        stage2_mean_length: eval.mean_length,
    });
    let summary = Summary {
        header: &header,
        reward_mode: mode.as_str(),
        stage1_only: report.stage2_eval.is_none(),
        bucket_keys: &report.bucket_keys,
        stage1_peak_accuracy: report.stage1_peak_accuracy,
        stage1: stage_summary(&report.stage1_eval, stage1_hist.bimodal),
        stage2: report
            .stage2_eval
            .as_ref()
            .zip(stage2_hist.as_ref())
            .map(|(eval, hist)| stage_summary(eval, hist.bimodal)),
        collapse,
    };
    let summary_path = args.common.out.join("summary.json");
    let mut summary_body = serde_json::to_string_pretty(&summary)?;
    summary_body.push('\n');
    atomic_write(&summary_path, &summary_body)?;

    print_console_summary(&report);
    println!("outputs in {}", args.common.out.display());
    Ok(())
}

fn stage_summary(eval: &CheckpointEval, bimodal: bool) -> StageSummary<'_> {
    StageSummary {
        accuracy: eval.accuracy,
        mean_length: eval.mean_length,
        bucket_accuracy: &eval.bucket_accuracy,
        bucket_mean_length: &eval.bucket_mean_length,
        bimodal,
    }
}

fn write_histogram(
    path: &std::path::Path,
    header: &Header<'_>,
    histogram: &adathink_core::sim::LengthHistogram,
) -> Result<()> {
    let mut body = header.comment_block();
    body.push_str(&format!("# bimodal: {}\n", histogram.bimodal));
    body.push_str("length,count\n");
    for bin in &histogram.bins {
        body.push_str(&format!("{},{}\n", bin.length, bin.count));
    }
    atomic_write(path, &body)
}

fn print_console_summary(report: &TrainingReport) {
    let eval1 = &report.stage1_eval;
    println!(
        "stage 1 ({} steps): accuracy {:.4}, mean length {:.2}, peak batch accuracy {:.4}",
        report.schedule.stage1_steps,
        eval1.accuracy,
        eval1.mean_length,
        report.stage1_peak_accuracy
    );
    match &report.stage2_eval {
        Some(eval2) => {
            println!(
                "stage 2 ({} steps, {}): accuracy {:.4}, mean length {:.2}",
                report.schedule.stage2_steps,
                report.reward_mode.as_str(),
                eval2.accuracy,
                eval2.mean_length
            );
        }
        None => println!("stage1-only run (stage2_steps = 0)"),
    }
}
