//! Versioned little-endian binary checkpoints. A checkpoint carries the
//! vocabulary, both configs, and the full training state (parameters,
//! progress counters, RNG position), so a resumed run is bit-for-bit the
//! run that never stopped. The byte layout is documented in the repo docs
//! and kept free of platform-dependent encodings.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Vocabulary;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::joint::{ModelConfig, ModelParams, TrainConfig, TrainState};
use crate::scrf::{Activation, ScrfConfig};

pub const MAGIC: &[u8; 8] = b"SEQLABCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub vocab: Vocabulary,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub state: TrainState,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn usize32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v)
            .map_err(|_| Error::Checkpoint(format!("value {v} exceeds the u32 field width")))?;
        self.u32(v);
        Ok(())
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.usize32(s.len())?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        };
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }

    fn u128(&mut self, what: &str) -> Result<u128> {
        Ok(u128::from_le_bytes(self.bytes(16, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }

    fn len32(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.len32(what)?;
        let bytes = self.bytes(n, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the parameter block",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);

    w.usize32(ck.vocab.len())?;
    for s in ck.vocab.symbols() {
        w.str(s)?;
    }

    let e = &ck.model_config.encoder;
    w.usize32(e.input_dim)?;
    w.usize32(e.hidden_dim)?;
    w.usize32(e.num_layers)?;
    w.usize32(e.subsample.len())?;
    for &f in &e.subsample {
        w.usize32(f)?;
    }
    w.f64(e.dropout);

    let s = &ck.model_config.scrf;
    w.usize32(s.num_labels)?;
    w.usize32(s.embed_dim)?;
    w.usize32(s.feature_dim)?;
    w.usize32(s.max_seg_len)?;
    w.u8(match s.activation {
        Activation::Tanh => 0,
        Activation::Sigmoid => 1,
    });
    w.usize32(s.extra_layers)?;

    let t = &ck.train_config;
    w.f64(t.lambda);
    w.f64(t.lr_init);
    w.f64(t.lr_decay);
    w.u64(t.epochs as u64);
    w.u64(t.pretrain_epochs as u64);
    w.u64(t.seed);
    w.u64(t.batch_size as u64);
    w.f64(t.clip_norm);

    let st = &ck.state;
    w.u64(st.completed_epochs as u64);
    w.f64(st.lr);
    match st.prev_valid_per {
        Some(p) => {
            w.u8(1);
            w.f64(p);
        }
        None => {
            w.u8(0);
            w.f64(0.0);
        }
    }
    w.buf.extend_from_slice(&st.shuffle_rng.get_seed());
    w.u128(st.shuffle_rng.get_word_pos());

    let flat = st.params.to_flat();
    w.u64(flat.len() as u64);
    for v in flat {
        w.f64(v);
    }
    Ok(w.buf)
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(buf);
    if r.bytes(8, "magic header")? != MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let version = r.u32("format version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }

    let vocab_len = r.len32("vocabulary size")?;
    let mut symbols = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        symbols.push(r.str("vocabulary symbol")?);
    }
    let vocab = Vocabulary::new(symbols)?;

    let input_dim = r.len32("encoder input_dim")?;
    let hidden_dim = r.len32("encoder hidden_dim")?;
    let num_layers = r.len32("encoder num_layers")?;
    let n_sub = r.len32("subsample count")?;
    let mut subsample = Vec::with_capacity(n_sub);
    for _ in 0..n_sub {
        subsample.push(r.len32("subsample factor")?);
    }
    let dropout = r.f64("encoder dropout")?;

    let num_labels = r.len32("label count")?;
    let embed_dim = r.len32("embed_dim")?;
    let feature_dim = r.len32("feature_dim")?;
    let max_seg_len = r.len32("max_seg_len")?;
    let activation = match r.u8("activation tag")? {
        0 => Activation::Tanh,
        1 => Activation::Sigmoid,
        other => {
            return Err(Error::Checkpoint(format!("unknown activation tag {other}")));
        }
    };
    let extra_layers = r.len32("extra_layers")?;

    let model_config = ModelConfig {
        encoder: EncoderConfig {
            input_dim,
            hidden_dim,
            num_layers,
            subsample,
            dropout,
        },
        scrf: ScrfConfig {
            num_labels,
            embed_dim,
            feature_dim,
            max_seg_len,
            activation,
            extra_layers,
        },
    };
    model_config.validate()?;
    if num_labels != vocab.len() {
        return Err(Error::Checkpoint(format!(
            "label count {num_labels} disagrees with vocabulary size {}",
            vocab.len()
        )));
    }

    let train_config = TrainConfig {
        lambda: r.f64("lambda")?,
        lr_init: r.f64("lr_init")?,
        lr_decay: r.f64("lr_decay")?,
        epochs: r.u64("epochs")? as usize,
        pretrain_epochs: r.u64("pretrain_epochs")? as usize,
        seed: r.u64("seed")?,
        batch_size: r.u64("batch_size")? as usize,
        clip_norm: r.f64("clip_norm")?,
    };

    let completed_epochs = r.u64("completed epochs")? as usize;
    let lr = r.f64("learning rate")?;
    let prev_valid_per = match r.u8("previous-error flag")? {
        0 => {
            r.f64("previous error")?;
            None
        }
        1 => Some(r.f64("previous error")?),
        other => {
            return Err(Error::Checkpoint(format!(
                "previous-error flag must be 0 or 1, got {other}"
            )));
        }
    };
    let rng_seed: [u8; 32] = r.bytes(32, "RNG seed")?.try_into().unwrap();
    let word_pos = r.u128("RNG position")?;
    let mut shuffle_rng = ChaCha8Rng::from_seed(rng_seed);
    shuffle_rng.set_word_pos(word_pos);

    let n_params = r.u64("parameter count")? as usize;
    let mut params = ModelParams::init(&model_config, 0)?;
    let expected = params.to_flat().len();
    if n_params != expected {
        return Err(Error::Checkpoint(format!(
            "parameter count {n_params} disagrees with the configured shapes ({expected})"
        )));
    }
    let mut flat = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        flat.push(r.f64("parameter value")?);
    }
    params.load_flat(&flat)?;
    r.done()?;

    Ok(Checkpoint {
        vocab,
        model_config,
        train_config,
        state: TrainState {
            params,
            completed_epochs,
            lr,
            prev_valid_per,
            shuffle_rng,
        },
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, checkpoint_to_bytes(ck)?)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}
