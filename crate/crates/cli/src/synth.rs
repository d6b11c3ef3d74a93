//! `seqlab synth`: write a seeded synthetic dataset (train and validation
//! splits plus vocabulary) ready for `seqlab train`.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use seqlab_core::data::{synth_generate, synth_vocabulary, write_dataset, SynthConfig};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory for the generated files
    #[arg(long)]
    pub out_dir: PathBuf,

    #[arg(long, default_value_t = 500)]
    pub train_utterances: usize,

    #[arg(long, default_value_t = 100)]
    pub valid_utterances: usize,

    #[arg(long, default_value_t = 5)]
    pub vocab_size: usize,

    #[arg(long, default_value_t = 8)]
    pub feature_dim: usize,

    /// Labels per utterance, inclusive bounds
    #[arg(long, default_value_t = 3)]
    pub min_labels: usize,

    #[arg(long, default_value_t = 8)]
    pub max_labels: usize,

    /// Frames per segment before subsampling, inclusive bounds
    #[arg(long, default_value_t = 8)]
    pub min_seg: usize,

    #[arg(long, default_value_t = 16)]
    pub max_seg: usize,

    #[arg(long, default_value_t = 0.3)]
    pub noise_sigma: f64,

    #[arg(long, default_value_t = 1.0)]
    pub prototype_scale: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    // One generation stream split into train and validation, so both
    // splits share the same emission prototypes and sequence statistics.
    let config = SynthConfig {
        num_utterances: args.train_utterances + args.valid_utterances,
        vocab_size: args.vocab_size,
        feature_dim: args.feature_dim,
        labels_per_utt: (args.min_labels, args.max_labels),
        seg_len: (args.min_seg, args.max_seg),
        noise_sigma: args.noise_sigma,
        prototype_scale: args.prototype_scale,
        seed: args.seed,
    };
    let mut train_set = synth_generate(&config)?;
    let valid_set = train_set.split_off(args.train_utterances);
    let vocab = synth_vocabulary(args.vocab_size);

    std::fs::create_dir_all(&args.out_dir)?;
    vocab.save(&args.out_dir.join("vocab.txt"))?;
    write_dataset(
        &train_set,
        &vocab,
        &args.out_dir.join("train.feats"),
        &args.out_dir.join("train.labels"),
    )?;
    write_dataset(
        &valid_set,
        &vocab,
        &args.out_dir.join("valid.feats"),
        &args.out_dir.join("valid.labels"),
    )?;
    println!(
        "wrote {} train / {} valid utterances over {} symbols to {}",
        train_set.len(),
        valid_set.len(),
        vocab.len(),
        args.out_dir.display()
    );
    Ok(())
}
