//! Plain-text experiment configuration: `[section]` headers over
//! `key = value` lines, `#` comments, no environment lookups. Unknown
//! sections or keys are errors, as are missing required keys, so a typo
//! cannot silently fall back to a default. Override strings of the form
//! `section.key=value` take precedence over the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::joint::{ModelConfig, TrainConfig};
use crate::scrf::{Activation, ScrfConfig};

/// Parsed but untyped `section -> key -> value` view of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            let lineno = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if name.is_empty() {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: lineno,
                        msg: "empty section name".into(),
                    });
                }
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: format!("expected 'key = value', got '{line}'"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: "empty key".into(),
                });
            }
            let Some(section) = &current else {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: format!("key '{key}' appears before any [section] header"),
                });
            };
            let entries = sections.get_mut(section).unwrap();
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno,
                    msg: format!("duplicate key '{section}.{key}'"),
                });
            }
        }
        Ok(Self { sections })
    }

    /// Applies a `section.key=value` override, replacing any file value.
    pub fn set_override(&mut self, spec: &str) -> Result<()> {
        let Some((target, value)) = spec.split_once('=') else {
            return Err(Error::Config(format!(
                "override '{spec}' is not of the form section.key=value"
            )));
        };
        let Some((section, key)) = target.trim().split_once('.') else {
            return Err(Error::Config(format!(
                "override target '{}' is not of the form section.key",
                target.trim()
            )));
        };
        self.sections
            .entry(section.trim().to_string())
            .or_default()
            .insert(key.trim().to_string(), value.trim().to_string());
        Ok(())
    }

    fn take_section(&mut self, name: &str) -> BTreeMap<String, String> {
        self.sections.remove(name).unwrap_or_default()
    }

    fn finish(self) -> Result<()> {
        if let Some(name) = self.sections.keys().next() {
            return Err(Error::Config(format!("unknown config section '[{name}]'")));
        }
        Ok(())
    }
}

fn take(section: &mut BTreeMap<String, String>, key: &str) -> Option<String> {
    section.remove(key)
}

fn reject_unknown(section: BTreeMap<String, String>, name: &str) -> Result<()> {
    if let Some(key) = section.keys().next() {
        return Err(Error::Config(format!("unknown config key '{name}.{key}'")));
    }
    Ok(())
}

fn missing(name: &str) -> Error {
    Error::Config(format!("missing required config key '{name}'"))
}

fn parse_with<T, F>(section: &mut BTreeMap<String, String>, name: &str, key: &str, f: F) -> Result<Option<T>>
where
    F: FnOnce(&str) -> Result<T>,
{
    match take(section, key) {
        Some(v) => f(&v).map(Some).map_err(|e| {
            Error::Config(format!("config key '{name}.{key}': {e}"))
        }),
        None => Ok(None),
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Config(format!("'{s}' is not a non-negative integer")))
}

fn parse_u64(s: &str) -> Result<u64> {
    s.parse()
        .map_err(|_| Error::Config(format!("'{s}' is not a non-negative integer")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Config(format!("'{s}' is not a number")))
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|part| parse_usize(part.trim())).collect()
}

/// `[data]` section: dataset and vocabulary locations. All optional at
/// parse time; each command demands the keys it needs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataConfig {
    pub train_features: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub valid_features: Option<PathBuf>,
    pub valid_labels: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
}

impl DataConfig {
    pub fn require(&self, field: &str) -> Result<&Path> {
        let (value, name) = match field {
            "train_features" => (&self.train_features, "data.train_features"),
            "train_labels" => (&self.train_labels, "data.train_labels"),
            "valid_features" => (&self.valid_features, "data.valid_features"),
            "valid_labels" => (&self.valid_labels, "data.valid_labels"),
            "vocab" => (&self.vocab, "data.vocab"),
            other => return Err(Error::Config(format!("unknown data field '{other}'"))),
        };
        value.as_deref().ok_or_else(|| missing(name))
    }
}

/// Fully typed experiment configuration with defaults filled in.
/// `scrf.num_labels` is not a file key; it comes from the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub subsample: Vec<usize>,
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub max_seg_len: usize,
    pub activation: Activation,
    pub extra_layers: usize,
    pub train: TrainConfig,
    pub dropout: f64,
}

impl ExperimentConfig {
    pub fn from_raw(mut raw: RawConfig) -> Result<Self> {
        let mut data = raw.take_section("data");
        let mut enc = raw.take_section("encoder");
        let mut scrf = raw.take_section("scrf");
        let ctc = raw.take_section("ctc");
        let mut train = raw.take_section("train");
        raw.finish()?;

        let data_config = DataConfig {
            train_features: take(&mut data, "train_features").map(PathBuf::from),
            train_labels: take(&mut data, "train_labels").map(PathBuf::from),
            valid_features: take(&mut data, "valid_features").map(PathBuf::from),
            valid_labels: take(&mut data, "valid_labels").map(PathBuf::from),
            vocab: take(&mut data, "vocab").map(PathBuf::from),
        };
        reject_unknown(data, "data")?;

        let input_dim = parse_with(&mut enc, "encoder", "input_dim", parse_usize)?
            .ok_or_else(|| missing("encoder.input_dim"))?;
        let hidden_dim =
            parse_with(&mut enc, "encoder", "hidden_dim", parse_usize)?.unwrap_or(128);
        let num_layers = parse_with(&mut enc, "encoder", "num_layers", parse_usize)?.unwrap_or(3);
        let subsample = parse_with(&mut enc, "encoder", "subsample", parse_usize_list)?
            .unwrap_or_else(|| vec![2; num_layers.saturating_sub(1).min(2)]);
        reject_unknown(enc, "encoder")?;

        let embed_dim = parse_with(&mut scrf, "scrf", "embed_dim", parse_usize)?.unwrap_or(64);
        let feature_dim = parse_with(&mut scrf, "scrf", "feature_dim", parse_usize)?.unwrap_or(64);
        let max_seg_len = parse_with(&mut scrf, "scrf", "max_seg_len", parse_usize)?.unwrap_or(8);
        let activation = parse_with(&mut scrf, "scrf", "activation", |s| s.parse())?
            .unwrap_or(Activation::Tanh);
        let extra_layers = parse_with(&mut scrf, "scrf", "extra_layers", parse_usize)?.unwrap_or(0);
        reject_unknown(scrf, "scrf")?;

        reject_unknown(ctc, "ctc")?;

        let train_config = TrainConfig {
            lambda: parse_with(&mut train, "train", "lambda", parse_f64)?.unwrap_or(0.5),
            lr_init: parse_with(&mut train, "train", "lr_init", parse_f64)?.unwrap_or(0.1),
            lr_decay: parse_with(&mut train, "train", "lr_decay", parse_f64)?.unwrap_or(0.75),
            epochs: parse_with(&mut train, "train", "epochs", parse_usize)?
                .ok_or_else(|| missing("train.epochs"))?,
            pretrain_epochs: parse_with(&mut train, "train", "pretrain_epochs", parse_usize)?
                .unwrap_or(0),
            seed: parse_with(&mut train, "train", "seed", parse_u64)?.unwrap_or(0),
            batch_size: parse_with(&mut train, "train", "batch_size", parse_usize)?.unwrap_or(1),
            clip_norm: parse_with(&mut train, "train", "clip_norm", parse_f64)?.unwrap_or(5.0),
        };
        let dropout = parse_with(&mut train, "train", "dropout", parse_f64)?.unwrap_or(0.2);
        reject_unknown(train, "train")?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!(
                "config key 'train.dropout': must be in [0, 1), got {dropout}"
            )));
        }
        train_config.validate()?;

        Ok(Self {
            data: data_config,
            input_dim,
            hidden_dim,
            num_layers,
            subsample,
            embed_dim,
            feature_dim,
            max_seg_len,
            activation,
            extra_layers,
            train: train_config,
            dropout,
        })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut raw = RawConfig::parse(&text, &path.display().to_string())?;
        for o in overrides {
            raw.set_override(o)?;
        }
        Self::from_raw(raw)
    }

    /// Assembles the model configuration once the vocabulary size is known.
    pub fn model_config(&self, num_labels: usize) -> Result<ModelConfig> {
        let config = ModelConfig {
            encoder: EncoderConfig {
                input_dim: self.input_dim,
                hidden_dim: self.hidden_dim,
                num_layers: self.num_layers,
                subsample: self.subsample.clone(),
                dropout: self.dropout,
            },
            scrf: ScrfConfig {
                num_labels,
                embed_dim: self.embed_dim,
                feature_dim: self.feature_dim,
                max_seg_len: self.max_seg_len,
                activation: self.activation,
                extra_layers: self.extra_layers,
            },
        };
        config.validate()?;
        Ok(config)
    }
}
