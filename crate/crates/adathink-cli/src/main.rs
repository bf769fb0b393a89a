use adathink_cli::commands::{aes, difficulty, score, select, simulate};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adathink",
    version,
    about = "Difficulty-aware length-calibrated rewards, a toy two-stage GRPO trainer, \
             and length-based dataset selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a rollout record file with calibrated composite rewards.
    Score(score::ScoreArgs),
    /// Report per-question difficulty estimates for a rollout file.
    Difficulty(difficulty::DifficultyArgs),
    /// Select a stratified subset of records by median output length.
    Select(select::SelectArgs),
    /// Compute accuracy-efficiency scores for a results table.
    Aes(aes::AesArgs),
    /// Run the two-stage training loop on the synthetic environment.
    Simulate(simulate::SimulateArgs),
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Score(args) => score::run(args),
        Command::Difficulty(args) => difficulty::run(args),
        Command::Select(args) => select::run(args),
        Command::Aes(args) => aes::run(args),
        Command::Simulate(args) => simulate::run(args),
    }
}
