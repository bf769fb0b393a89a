//! `select`: median-split stratified dataset selection from a lengths
//! file.

use std::path::PathBuf;

use adathink_core::metrics::{median_split_select, LengthRecord, SelectionConfig};
use anyhow::Result;
use clap::Args;

use crate::commands::{read_two_column_file, resolve, CommonArgs};
use crate::config::Overrides;
use crate::report::{atomic_write, ensure_out_dir, Header};

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Lengths file: `id,output_length` per line.
    pub input: PathBuf,

    #[command(flatten)]
    pub common: CommonArgs,

    /// Selection ratio δ in (0, 1].
    #[arg(long)]
    pub ratio: Option<f64>,
}

pub fn run(args: &SelectArgs) -> Result<()> {
    let (mut config, mut log) = resolve(&args.common)?;
    {
        let mut overrides = Overrides {
            config: &mut config,
            log: &mut log,
        };
        overrides.set_f64("ratio", |c| &mut c.ratio, args.ratio);
    }

    let rows = read_two_column_file(&args.input, |v| v.parse::<u64>().ok())?;
    let records: Vec<LengthRecord> = rows
        .into_iter()
        .map(|(id, output_length)| LengthRecord { id, output_length })
        .collect();

    let selection = SelectionConfig {
        ratio: config.ratio,
        seed: config.seed,
    };
    let selected = median_split_select(&records, &selection)?;

    ensure_out_dir(&args.common.out)?;
    let header = Header {
        command: "select",
        config: &config,
        overrides: &log,
    };
    let mut body = header.comment_block();
    for id in &selected {
        body.push_str(id);
        body.push('\n');
    }
    let path = args.common.out.join("selected_ids.txt");
    atomic_write(&path, &body)?;
    println!(
        "selected {} of {} records (ratio {}); wrote {}",
        selected.len(),
        records.len(),
        selection.ratio,
        path.display()
    );
    Ok(())
}
