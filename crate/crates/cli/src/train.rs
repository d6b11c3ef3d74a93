//! `seqlab train`: read config and datasets, run the training loop,
//! write a checkpoint per epoch and the convergence CSV.

use std::cell::RefCell;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use seqlab_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use seqlab_core::config::ExperimentConfig;
use seqlab_core::data::{load_dataset, Vocabulary};
use seqlab_core::eval::{emit_convergence_csv, parse_convergence_csv, EpochRecord};
use seqlab_core::joint::{init_train_state, train, ModelConfig, TrainConfig, TrainState};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment configuration file
    #[arg(long)]
    pub config: PathBuf,

    /// Directory for checkpoints and the convergence CSV
    #[arg(long)]
    pub out_dir: PathBuf,

    /// Continue from a checkpoint; model and training settings come from
    /// the checkpoint, only the [data] section of the config is consulted
    #[arg(long)]
    pub resume: Option<PathBuf>,

    /// Override a config value (repeatable), e.g. --set train.lambda=1.0
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,

    /// Suppress per-epoch progress lines
    #[arg(long)]
    pub quiet: bool,
}

pub fn epoch_checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("epoch_{epoch:03}.ckpt"))
}

pub fn final_checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("final.ckpt")
}

pub fn csv_path(out_dir: &Path) -> PathBuf {
    out_dir.join("convergence.csv")
}

fn progress_line(r: &EpochRecord, total_epochs: usize) -> String {
    format!(
        "epoch {}/{} [{}] lr {:.6} loss {:.4} (ctc {:.4}, scrf {:.4}) valid PER {:.2}",
        r.epoch,
        total_epochs,
        r.phase.as_str(),
        r.lr,
        r.loss_total,
        r.loss_ctc,
        r.loss_scrf,
        r.valid_per
    )
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let config = ExperimentConfig::load(&args.config, &args.set)?;
    let vocab = Vocabulary::load(config.data.require("vocab")?)?;
    let train_set = load_dataset(
        config.data.require("train_features")?,
        config.data.require("train_labels")?,
        &vocab,
    )?;
    let valid_set = load_dataset(
        config.data.require("valid_features")?,
        config.data.require("valid_labels")?,
        &vocab,
    )?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating output directory {}", args.out_dir.display()))?;

    let (model_config, train_config, mut state, prior_records) = match &args.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.vocab != vocab {
                bail!(
                    "vocabulary mismatch: checkpoint {} has {} symbols, {} has {}",
                    path.display(),
                    ck.vocab.len(),
                    config.data.require("vocab")?.display(),
                    vocab.len()
                );
            }
            let prior = read_prior_records(&csv_path(&args.out_dir), ck.state.completed_epochs)?;
            (ck.model_config, ck.train_config, ck.state, prior)
        }
        None => {
            let model_config = config.model_config(vocab.len())?;
            let train_config = config.train.clone();
            let state = init_train_state(&model_config, &train_config)?;
            (model_config, train_config, state, Vec::new())
        }
    };

    if state.completed_epochs == 0 {
        save_snapshot(&args.out_dir, &vocab, &model_config, &train_config, &state)?;
    }

    let records = RefCell::new(prior_records);
    emit_convergence_csv(&records.borrow(), &csv_path(&args.out_dir))?;

    let total_epochs = train_config.epochs;
    train(
        &train_set,
        &valid_set,
        &model_config,
        &train_config,
        &mut state,
        |st, rec| {
            save_snapshot(&args.out_dir, &vocab, &model_config, &train_config, st)?;
            let mut records = records.borrow_mut();
            records.push(rec.clone());
            emit_convergence_csv(&records, &csv_path(&args.out_dir))?;
            if !args.quiet {
                println!("{}", progress_line(rec, total_epochs));
            }
            Ok(())
        },
    )?;

    save_checkpoint(
        &Checkpoint {
            vocab,
            model_config,
            train_config,
            state,
        },
        &final_checkpoint_path(&args.out_dir),
    )?;
    if !args.quiet {
        println!(
            "done: {} epochs, artifacts in {}",
            records.borrow().len(),
            args.out_dir.display()
        );
    }
    Ok(())
}

fn save_snapshot(
    out_dir: &Path,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    state: &TrainState,
) -> seqlab_core::Result<()> {
    save_checkpoint(
        &Checkpoint {
            vocab: vocab.clone(),
            model_config: model_config.clone(),
            train_config: train_config.clone(),
            state: state.clone(),
        },
        &epoch_checkpoint_path(out_dir, state.completed_epochs),
    )
}

fn read_prior_records(path: &Path, up_to_epoch: usize) -> Result<Vec<EpochRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut records = parse_convergence_csv(&text, &path.display().to_string())?;
    records.retain(|r| r.epoch <= up_to_epoch);
    Ok(records)
}
