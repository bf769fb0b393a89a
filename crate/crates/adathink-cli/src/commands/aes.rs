//! `aes`: accuracy-efficiency scores for a results table against a named
//! baseline row.

use std::path::PathBuf;

use adathink_core::metrics::aes;
use anyhow::{bail, Context, Result};
use clap::Args;

use crate::commands::{resolve, CommonArgs};
use crate::config::Overrides;
use crate::report::{atomic_write, ensure_out_dir, Header};

#[derive(Debug, Args)]
pub struct AesArgs {
    /// Results table: `model,acc,len` per line.
    pub input: PathBuf,

    #[command(flatten)]
    pub common: CommonArgs,

    /// Model name of the baseline row.
    #[arg(long, value_name = "MODEL")]
    pub baseline: String,

    /// Weight of the relative length reduction.
    #[arg(long)]
    pub alpha_len: Option<f64>,

    /// Weight of relative accuracy gains.
    #[arg(long)]
    pub beta_acc: Option<f64>,

    /// Weight of relative accuracy drops.
    #[arg(long)]
    pub gamma_acc: Option<f64>,
}

pub fn run(args: &AesArgs) -> Result<()> {
    let (mut config, mut log) = resolve(&args.common)?;
    {
        let mut overrides = Overrides {
            config: &mut config,
            log: &mut log,
        };
        overrides.set_f64("alpha_len", |c| &mut c.alpha_len, args.alpha_len);
        overrides.set_f64("beta_acc", |c| &mut c.beta_acc, args.beta_acc);
        overrides.set_f64("gamma_acc", |c| &mut c.gamma_acc, args.gamma_acc);
    }

    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("cannot read table {}", args.input.display()))?;
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    let mut saw_data = false;
    for (index, line) in text.lines().enumerate() {
        let line_number = index + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            bail!("line {line_number}: expected `model,acc,len`");
        }
        match (fields[1].parse::<f64>(), fields[2].parse::<f64>()) {
            (Ok(acc), Ok(len)) => {
                rows.push((fields[0].to_string(), acc, len));
                saw_data = true;
            }
            _ if !saw_data => continue, // header line
            _ => bail!("line {line_number}: cannot parse acc/len columns"),
        }
    }

    let Some(&(_, base_acc, base_len)) = rows
        .iter()
        .find(|(model, _, _)| model == &args.baseline)
        .map(|r| &*r)
    else {
        bail!("baseline row `{}` not found in {}", args.baseline, args.input.display());
    };

    let aes_config = config.aes();
    ensure_out_dir(&args.common.out)?;
    let header = Header {
        command: "aes",
        config: &config,
        overrides: &log,
    };
    let mut body = header.comment_block();
    body.push_str("model,acc,len,aes\n");
    let mut scored = 0usize;
    for (model, acc_value, len_value) in &rows {
        if model == &args.baseline {
            body.push_str(&format!("{model},{acc_value},{len_value},--\n"));
        } else {
            let score = aes(*acc_value, *len_value, base_acc, base_len, &aes_config)
                .with_context(|| format!("row `{model}`"))?;
            body.push_str(&format!("{model},{acc_value},{len_value},{score:.4}\n"));
            scored += 1;
        }
    }

    let path = args.common.out.join("aes.csv");
    atomic_write(&path, &body)?;
    println!(
        "scored {scored} rows against baseline `{}`; wrote {}",
        args.baseline,
        path.display()
    );
    Ok(())
}
