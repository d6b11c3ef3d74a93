//! Interpolated multitask objective over a shared encoder, plain SGD with
//! plateau-driven learning-rate decay, and the frame-classifier
//! pretraining schedule.
//!
//! The loss is `lambda * L_frame + (1 - lambda) * L_segmental`, both heads
//! reading the same encoder states from a single forward pass. At the
//! endpoints the inactive head is skipped entirely, so its failure modes
//! cannot leak into a single-task run. Batch gradients are accumulated in
//! utterance order after a parallel map, which keeps every run bit-exact
//! regardless of thread count.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use std::str::FromStr;

use crate::ctc::{
    ctc_best_path_decode, ctc_head_loss, ctc_min_frames, ctc_posteriors, CtcParams,
};
use crate::data::Utterance;
use crate::encoder::{encode, encode_backward, encode_training, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{edit_distance, EpochRecord, ErrorCounts, Phase};
use crate::numerics::{mix_seed, seeded_rng};
use crate::parallel;
use crate::scrf::{reachable, scrf_loss, scrf_viterbi_decode, ScrfConfig, ScrfParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub scrf: ScrfConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.scrf.validate()
    }

    pub fn num_labels(&self) -> usize {
        self.scrf.num_labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub scrf: ScrfParams,
    pub ctc: CtcParams,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let hidden = config.encoder.output_dim();
        Ok(Self {
            encoder: EncoderParams::init(&config.encoder, mix_seed(&[seed, 100]))?,
            scrf: ScrfParams::init(&config.scrf, hidden, mix_seed(&[seed, 200]))?,
            ctc: CtcParams::init(config.scrf.num_labels, hidden, mix_seed(&[seed, 300]))?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            scrf: self.scrf.zeros_like(),
            ctc: self.ctc.zeros_like(),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        self.encoder.add_scaled(&other.encoder, s);
        self.scrf.add_scaled(&other.scrf, s);
        self.ctc.add_scaled(&other.ctc, s);
    }

    pub fn scale(&mut self, s: f64) {
        self.encoder.scale(s);
        self.scrf.scale(s);
        self.ctc.scale(s);
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.encoder.l2_norm_sq() + self.scrf.l2_norm_sq() + self.ctc.l2_norm_sq()
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        self.encoder.visit(f);
        self.scrf.visit(f);
        self.ctc.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.encoder.visit_mut(f);
        self.scrf.visit_mut(f);
        self.ctc.visit_mut(f);
    }

    /// All parameters concatenated in visit order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.visit(&mut |_, s| v.extend_from_slice(s));
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.to_flat().len();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected} parameters, got {}",
                flat.len()
            )));
        }
        let mut off = 0;
        self.visit_mut(&mut |_, s| {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Scrf,
    Ctc,
}

impl DecodeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecodeMode::Scrf => "scrf",
            DecodeMode::Ctc => "ctc",
        }
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scrf" => Ok(DecodeMode::Scrf),
            "ctc" => Ok(DecodeMode::Ctc),
            other => Err(Error::Config(format!("unknown decode mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Interpolation weight on the frame-classification loss.
    pub lambda: f64,
    pub lr_init: f64,
    pub lr_decay: f64,
    /// Total epochs, the pretraining phase included.
    pub epochs: usize,
    /// Leading epochs trained with the frame loss alone.
    pub pretrain_epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Global gradient norm cap per batch.
    pub clip_norm: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if !self.lr_init.is_finite() || self.lr_init <= 0.0 {
            return Err(Error::Config(format!(
                "initial learning rate must be positive, got {}",
                self.lr_init
            )));
        }
        if !(0.0 < self.lr_decay && self.lr_decay < 1.0) {
            return Err(Error::Config(format!(
                "learning-rate decay must be in (0, 1), got {}",
                self.lr_decay
            )));
        }
        if self.pretrain_epochs > self.epochs {
            return Err(Error::Config(format!(
                "pretrain epochs ({}) exceed total epochs ({})",
                self.pretrain_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !self.clip_norm.is_finite() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "gradient clip norm must be positive, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }
}

/// Interpolation weight in force during a 0-based epoch index.
pub fn effective_lambda(config: &TrainConfig, epoch_index: usize) -> f64 {
    if epoch_index < config.pretrain_epochs {
        1.0
    } else {
        config.lambda
    }
}

pub fn phase_of(config: &TrainConfig, epoch_index: usize) -> Phase {
    if epoch_index < config.pretrain_epochs {
        Phase::Pretrain
    } else {
        Phase::Joint
    }
}

/// Decoder the plateau schedule listens to: best-path when only the frame
/// head is being trained, segmental otherwise.
pub fn validation_mode(lambda: f64) -> DecodeMode {
    if lambda == 1.0 {
        DecodeMode::Ctc
    } else {
        DecodeMode::Scrf
    }
}

#[derive(Debug, Clone)]
pub struct JointLossOutput {
    pub loss: f64,
    /// Per-head losses; `None` when the endpoint weight skipped a head.
    pub loss_ctc: Option<f64>,
    pub loss_scrf: Option<f64>,
    pub grads: ModelParams,
}

/// One encoder forward pass, both heads on the shared states, one encoder
/// backward pass on the interpolated state gradient. At `lambda` 0 or 1
/// the inactive head is never evaluated.
pub fn joint_loss_grads(
    x: &Array2<f64>,
    y: &[usize],
    params: &ModelParams,
    config: &ModelConfig,
    lambda: f64,
    dropout_seed: u64,
) -> Result<JointLossOutput> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "lambda must be in [0, 1], got {lambda}"
        )));
    }
    let (h, tape) = encode_training(&params.encoder, &config.encoder, x, dropout_seed)?;
    let mut d_h = Array2::zeros(h.raw_dim());
    let mut loss = 0.0;
    let mut loss_scrf = None;
    let mut loss_ctc = None;
    let mut scrf_grads = params.scrf.zeros_like();
    let mut ctc_grads = params.ctc.zeros_like();
    if lambda < 1.0 {
        let out = scrf_loss(&h, y, &params.scrf, &config.scrf)?;
        loss += (1.0 - lambda) * out.loss;
        d_h.scaled_add(1.0 - lambda, &out.d_h);
        scrf_grads = out.grads;
        scrf_grads.scale(1.0 - lambda);
        loss_scrf = Some(out.loss);
    }
    if lambda > 0.0 {
        let out = ctc_head_loss(&h, &params.ctc, y)?;
        loss += lambda * out.loss;
        d_h.scaled_add(lambda, &out.d_h);
        ctc_grads = out.grads;
        ctc_grads.scale(lambda);
        loss_ctc = Some(out.loss);
    }
    let encoder_grads = encode_backward(&params.encoder, &config.encoder, &tape, &d_h);
    Ok(JointLossOutput {
        loss,
        loss_ctc,
        loss_scrf,
        grads: ModelParams {
            encoder: encoder_grads,
            scrf: scrf_grads,
            ctc: ctc_grads,
        },
    })
}

pub fn decode_utterance(
    x: &Array2<f64>,
    params: &ModelParams,
    config: &ModelConfig,
    mode: DecodeMode,
) -> Result<Vec<usize>> {
    let h = encode(&params.encoder, &config.encoder, x)?;
    match mode {
        DecodeMode::Scrf => Ok(scrf_viterbi_decode(&h, &params.scrf, &config.scrf)?.0),
        DecodeMode::Ctc => Ok(ctc_best_path_decode(&ctc_posteriors(&h, &params.ctc)?)),
    }
}

/// Pooled label error rate of the decoder against the reference labels.
pub fn validation_per(
    dataset: &[Utterance],
    params: &ModelParams,
    config: &ModelConfig,
    mode: DecodeMode,
) -> Result<f64> {
    let hyps = parallel::map_collect(dataset, |u| {
        decode_utterance(&u.features, params, config, mode)
    });
    let mut counts = ErrorCounts::default();
    for (u, hyp) in dataset.iter().zip(hyps) {
        counts.add(&edit_distance(&u.labels, &hyp?));
    }
    Ok(counts.per())
}

/// Fails fast if any utterance cannot be covered by the active heads after
/// subsampling, naming the utterance.
pub fn validate_dataset(
    dataset: &[Utterance],
    config: &ModelConfig,
    needs_scrf: bool,
    needs_ctc: bool,
) -> Result<()> {
    for u in dataset {
        let t_out = config.encoder.output_len(u.features.nrows());
        for &id in &u.labels {
            if id >= config.scrf.num_labels {
                return Err(Error::LabelOutOfVocab {
                    id,
                    vocab: config.scrf.num_labels,
                });
            }
        }
        if needs_scrf && !reachable(u.labels.len(), t_out, config.scrf.max_seg_len) {
            return Err(Error::LabelSequenceUnreachable(format!(
                "utterance '{}': {} labels cannot tile {} subsampled frames with segments of at most {} frames",
                u.id,
                u.labels.len(),
                t_out,
                config.scrf.max_seg_len
            )));
        }
        if needs_ctc && t_out < ctc_min_frames(&u.labels) {
            return Err(Error::LabelSequenceUnalignable(format!(
                "utterance '{}': {} labels need {} subsampled frames, got {t_out}",
                u.id,
                u.labels.len(),
                ctc_min_frames(&u.labels)
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    /// NaN when the frame head was inactive all epoch.
    pub mean_ctc: f64,
    /// NaN when the segmental head was inactive all epoch.
    pub mean_scrf: f64,
    pub clipped_batches: usize,
}

/// One pass over the dataset in the given order: per-batch summed
/// gradients, global-norm clipping, and a plain SGD step.
#[allow(clippy::too_many_arguments)]
pub fn sgd_epoch(
    dataset: &[Utterance],
    order: &[usize],
    params: &mut ModelParams,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    lambda: f64,
    lr: f64,
    epoch: usize,
) -> Result<EpochStats> {
    let mut loss_sum = 0.0;
    let mut ctc_sum = 0.0;
    let mut ctc_n = 0usize;
    let mut scrf_sum = 0.0;
    let mut scrf_n = 0usize;
    let mut clipped_batches = 0;
    for chunk in order.chunks(train_config.batch_size) {
        let outs = parallel::map_collect(chunk, |&idx| {
            let u = &dataset[idx];
            let dropout_seed = mix_seed(&[train_config.seed, epoch as u64, idx as u64]);
            joint_loss_grads(&u.features, &u.labels, params, model_config, lambda, dropout_seed)
        });
        let mut batch_grads = params.zeros_like();
        for (&idx, out) in chunk.iter().zip(outs) {
            let out = out?;
            if !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    id: dataset[idx].id.clone(),
                    value: out.loss,
                    epoch,
                });
            }
            loss_sum += out.loss;
            if let Some(l) = out.loss_ctc {
                ctc_sum += l;
                ctc_n += 1;
            }
            if let Some(l) = out.loss_scrf {
                scrf_sum += l;
                scrf_n += 1;
            }
            batch_grads.add_scaled(&out.grads, 1.0);
        }
        let norm = batch_grads.l2_norm_sq().sqrt();
        if norm > train_config.clip_norm {
            batch_grads.scale(train_config.clip_norm / norm);
            clipped_batches += 1;
        }
        params.add_scaled(&batch_grads, -lr);
    }
    let n = order.len() as f64;
    Ok(EpochStats {
        mean_loss: loss_sum / n,
        mean_ctc: if ctc_n > 0 { ctc_sum / ctc_n as f64 } else { f64::NAN },
        mean_scrf: if scrf_n > 0 { scrf_sum / scrf_n as f64 } else { f64::NAN },
        clipped_batches,
    })
}

/// Plateau rule: decay when the latest validation error failed to improve
/// strictly on the epoch before it.
pub fn lr_schedule(errors: &[f64], lr: f64, decay: f64) -> f64 {
    if errors.len() >= 2 && errors[errors.len() - 1] >= errors[errors.len() - 2] {
        lr * decay
    } else {
        lr
    }
}

/// Everything training needs to continue from an epoch boundary.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub completed_epochs: usize,
    pub lr: f64,
    /// Validation error of the previous epoch within the current phase.
    pub prev_valid_per: Option<f64>,
    pub shuffle_rng: ChaCha8Rng,
}

pub fn init_train_state(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainState> {
    train_config.validate()?;
    Ok(TrainState {
        params: ModelParams::init(model_config, train_config.seed)?,
        completed_epochs: 0,
        lr: train_config.lr_init,
        prev_valid_per: None,
        shuffle_rng: seeded_rng(mix_seed(&[train_config.seed, 3])),
    })
}

/// Runs epochs `state.completed_epochs .. config.epochs`. After each epoch
/// the callback sees the updated state and the epoch record, in that
/// order, so it can persist both. Pretraining runs the leading epochs at
/// weight 1, then the joint phase restarts the learning rate and the
/// plateau history.
pub fn train<F>(
    train_set: &[Utterance],
    valid_set: &[Utterance],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: F,
) -> Result<Vec<EpochRecord>>
where
    F: FnMut(&TrainState, &EpochRecord) -> Result<()>,
{
    train_config.validate()?;
    model_config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let needs_ctc = train_config.pretrain_epochs > 0 || train_config.lambda > 0.0;
    let needs_scrf = train_config.epochs > train_config.pretrain_epochs
        && train_config.lambda < 1.0;
    validate_dataset(train_set, model_config, needs_scrf, needs_ctc)?;
    validate_dataset(valid_set, model_config, needs_scrf, needs_ctc)?;

    let mut log = Vec::new();
    for e in state.completed_epochs..train_config.epochs {
        if e == train_config.pretrain_epochs && train_config.pretrain_epochs > 0 {
            // joint phase starts fresh: initial rate, empty plateau history
            state.lr = train_config.lr_init;
            state.prev_valid_per = None;
        }
        let lambda = effective_lambda(train_config, e);
        let lr = state.lr;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut state.shuffle_rng);
        let stats = sgd_epoch(
            train_set,
            &order,
            &mut state.params,
            model_config,
            train_config,
            lambda,
            lr,
            e + 1,
        )?;
        let valid_per = if valid_set.is_empty() {
            f64::NAN
        } else {
            validation_per(
                valid_set,
                &state.params,
                model_config,
                validation_mode(lambda),
            )?
        };
        let record = EpochRecord {
            epoch: e + 1,
            lr,
            loss_total: stats.mean_loss,
            loss_ctc: stats.mean_ctc,
            loss_scrf: stats.mean_scrf,
            valid_per,
            phase: phase_of(train_config, e),
        };
        if !valid_per.is_nan() {
            if let Some(prev) = state.prev_valid_per {
                state.lr = lr_schedule(&[prev, valid_per], state.lr, train_config.lr_decay);
            }
            state.prev_valid_per = Some(valid_per);
        }
        state.completed_epochs = e + 1;
        on_epoch(state, &record)?;
        log.push(record);
    }
    Ok(log)
}
