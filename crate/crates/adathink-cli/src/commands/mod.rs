//! Subcommand implementations.

pub mod aes;
pub mod difficulty;
pub mod score;
pub mod select;
pub mod simulate;

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use crate::config::{Overrides, ResolvedConfig};

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file (TOML, flat key namespace mirroring module config keys).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Run seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

/// Calibration overrides shared by `score`, `difficulty`, and `simulate`.
#[derive(Debug, Args)]
pub struct CalibrationArgs {
    /// Difficulty threshold quantile τ.
    #[arg(long)]
    pub tau: Option<f64>,

    /// Uncertainty weight α in the difficulty estimate.
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Fraction of most-uncertain tokens averaged into the sequence
    /// uncertainty.
    #[arg(long)]
    pub k_fraction: Option<f64>,

    /// EMA momentum α_m for the batch statistics.
    #[arg(long)]
    pub alpha_m: Option<f64>,

    /// Enable the n-gram repetition penalty.
    #[arg(long)]
    pub repetition: bool,

    /// N-gram size for the repetition penalty.
    #[arg(long)]
    pub repetition_n: Option<usize>,

    /// Weight of the repetition penalty.
    #[arg(long)]
    pub repetition_weight: Option<f64>,
}

/// Resolves defaults → config file → common flags.
pub fn resolve(common: &CommonArgs) -> Result<(ResolvedConfig, Vec<String>)> {
    let (mut config, mut log) = ResolvedConfig::from_file(common.config.as_deref())?;
    let mut overrides = Overrides {
        config: &mut config,
        log: &mut log,
    };
    overrides.set_u64("seed", |c| &mut c.seed, common.seed);
    Ok((config, log))
}

/// Applies calibration flag overrides on top of the resolved config.
pub fn apply_calibration_args(
    config: &mut ResolvedConfig,
    log: &mut Vec<String>,
    args: &CalibrationArgs,
) {
    let mut overrides = Overrides { config, log };
    overrides.set_f64("tau", |c| &mut c.tau, args.tau);
    overrides.set_f64("alpha", |c| &mut c.alpha, args.alpha);
    overrides.set_f64("k_fraction", |c| &mut c.k_fraction, args.k_fraction);
    overrides.set_f64("alpha_m", |c| &mut c.alpha_m, args.alpha_m);
    overrides.set_bool(
        "repetition.enabled",
        |c| &mut c.repetition_enabled,
        args.repetition.then_some(true),
    );
    overrides.set_usize("repetition.n", |c| &mut c.repetition_n, args.repetition_n);
    overrides.set_f64(
        "repetition.weight",
        |c| &mut c.repetition_weight,
        args.repetition_weight,
    );
}

/// Reads a two-column comma-separated file, skipping blank lines and `#`
/// comments. A single leading header line is tolerated when its second
/// column is not numeric.
pub(crate) fn read_two_column_file<T, F>(path: &std::path::Path, parse_value: F) -> Result<Vec<(String, T)>>
where
    F: Fn(&str) -> Option<T>,
{
    use anyhow::{bail, Context};
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows = Vec::new();
    let mut saw_data = false;
    for (index, line) in text.lines().enumerate() {
        let line_number = index + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((id, value)) = trimmed.split_once(',') else {
            bail!("line {line_number}: expected two comma-separated columns");
        };
        match parse_value(value.trim()) {
            Some(parsed) => {
                rows.push((id.trim().to_string(), parsed));
                saw_data = true;
            }
            None if !saw_data => continue, // header line
            None => bail!("line {line_number}: cannot parse value `{}`", value.trim()),
        }
    }
    Ok(rows)
}
