//! `seqlab decode`: run one decoder over a feature file and write
//! `<id> <symbol> ...` hypothesis lines.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use seqlab_core::checkpoint::load_checkpoint;
use seqlab_core::data::{load_features, write_symbol_sequences};
use seqlab_core::joint::{decode_utterance, DecodeMode};
use seqlab_core::parallel;
use seqlab_core::Error;

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Checkpoint to decode with
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Feature file to decode
    #[arg(long)]
    pub features: PathBuf,

    /// Decoder: segmental Viterbi ("scrf") or frame best path ("ctc")
    #[arg(long)]
    pub mode: String,

    /// Hypothesis file to write
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(args: &DecodeArgs) -> Result<()> {
    let mode: DecodeMode = args.mode.parse()?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let features = load_features(&args.features)?;
    let input_dim = ck.model_config.encoder.input_dim;
    for (id, frames) in &features {
        if frames.ncols() != input_dim {
            return Err(Error::DimensionMismatch(format!(
                "utterance '{id}' has {} feature dims, the model expects {input_dim}",
                frames.ncols()
            ))
            .into());
        }
    }
    let decoded = parallel::map_collect(&features, |(_, frames)| {
        decode_utterance(frames, &ck.state.params, &ck.model_config, mode)
    });
    let mut rows = Vec::with_capacity(features.len());
    for ((id, _), labels) in features.iter().zip(decoded) {
        rows.push((id.clone(), ck.vocab.to_symbols(&labels?)));
    }
    write_symbol_sequences(&rows, &args.output)?;
    Ok(())
}
