use clap::{Parser, Subcommand};

use seqlab_cli::{decode, score, selfcheck, synth, train};

/// Sequence labeling with a segmental CRF and a frame classifier over a
/// shared recurrent encoder.
#[derive(Parser)]
#[command(name = "seqlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write per-epoch checkpoints plus a convergence CSV
    Train(train::TrainArgs),
    /// Decode a feature file with either head of a trained model
    Decode(decode::DecodeArgs),
    /// Score a hypothesis file against references
    Score(score::ScoreArgs),
    /// Generate a synthetic dataset
    Synth(synth::SynthArgs),
    /// Run the built-in verification suite
    Selfcheck(selfcheck::SelfcheckArgs),
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train(args) => train::run(&args),
        Command::Decode(args) => decode::run(&args),
        Command::Score(args) => score::run(&args),
        Command::Synth(args) => synth::run(&args),
        Command::Selfcheck(args) => selfcheck::run(&args),
    }
}
