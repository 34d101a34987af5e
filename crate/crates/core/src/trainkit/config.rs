//! Training configuration with a flat dotted-key view.
//!
//! Every setting has one dotted key (`model.d_model`, `vib.beta`,
//! `train.learning_rate`, ...). Config files are TOML whose tables spell the
//! same keys; command-line flags reuse them verbatim.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Which training sets feed the optimiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSelection {
    Both,
    D1,
    D2,
}

impl DatasetSelection {
    pub fn uses_d1(self) -> bool {
        self != Self::D2
    }

    pub fn uses_d2(self) -> bool {
        self != Self::D1
    }
}

impl FromStr for DatasetSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Self::Both),
            "d1" => Ok(Self::D1),
            "d2" => Ok(Self::D2),
            other => Err(Error::Config(format!(
                "train.datasets must be both, d1 or d2, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for DatasetSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Both => "both",
            Self::D1 => "d1",
            Self::D2 => "d2",
        })
    }
}

/// The four system variants compared in ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Shared-specific prompts plus the bottleneck.
    Full,
    /// Shared-specific prompts only.
    NoVib,
    /// One extractor trained on both datasets.
    Multiple,
    /// One extractor trained on the second dataset alone.
    Single,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub datasets: DatasetSelection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 20,
            seed: 13,
            clip_norm: 1.0,
            datasets: DatasetSelection::Both,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueKind {
    Bool,
    Int,
    Float,
    Choice(&'static [&'static str]),
}

#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: ValueKind,
    pub help: &'static str,
}

const fn spec(key: &'static str, kind: ValueKind, help: &'static str) -> KeySpec {
    KeySpec { key, kind, help }
}

/// Every configuration key, in documentation order.
pub const CONFIG_KEYS: &[KeySpec] = &[
    spec(
        "model.d_model",
        ValueKind::Int,
        "hidden width of every backbone",
    ),
    spec(
        "model.n_layers",
        ValueKind::Int,
        "encoder and decoder layers",
    ),
    spec("model.n_heads", ValueKind::Int, "attention heads"),
    spec("model.d_ff", ValueKind::Int, "feed-forward width"),
    spec(
        "model.max_encoder_len",
        ValueKind::Int,
        "longest encoder input in tokens, markers included",
    ),
    spec(
        "model.max_decoder_len",
        ValueKind::Int,
        "longest prompt in tokens",
    ),
    spec(
        "model.dropout",
        ValueKind::Float,
        "dropout probability during training",
    ),
    spec(
        "model.max_span_len",
        ValueKind::Int,
        "longest decoded argument span in tokens",
    ),
    spec(
        "ssp.enabled",
        ValueKind::Bool,
        "format-specific extractors with gated fusion",
    ),
    spec(
        "ssp.tie_embeddings",
        ValueKind::Bool,
        "share one token embedding across backbones",
    ),
    spec(
        "vib.enabled",
        ValueKind::Bool,
        "bottleneck on the shared representation",
    ),
    spec("vib.beta", ValueKind::Float, "weight of the KL term"),
    spec("vib.d_z", ValueKind::Int, "latent width, 0 for d_model"),
    spec(
        "vib.eval_use_mean",
        ValueKind::Bool,
        "use the posterior mean at evaluation",
    ),
    spec(
        "vib.project",
        ValueKind::Bool,
        "project z back to d_model when d_z differs",
    ),
    spec("train.learning_rate", ValueKind::Float, "Adam step size"),
    spec(
        "train.batch_size",
        ValueKind::Int,
        "instances per dataset per step",
    ),
    spec("train.epochs", ValueKind::Int, "training epochs"),
    spec(
        "train.seed",
        ValueKind::Int,
        "seed for initialisation, shuffling, dropout and noise",
    ),
    spec(
        "train.clip_norm",
        ValueKind::Float,
        "global gradient-norm ceiling, 0 disables",
    ),
    spec(
        "train.datasets",
        ValueKind::Choice(&["both", "d1", "d2"]),
        "training sets used",
    ),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        let mut c = Self::default();
        c.apply_variant(variant);
        c
    }

    pub fn apply_variant(&mut self, variant: Variant) {
        let (ssp, vib, datasets) = match variant {
            Variant::Full => (true, true, DatasetSelection::Both),
            Variant::NoVib => (true, false, DatasetSelection::Both),
            Variant::Multiple => (false, false, DatasetSelection::Both),
            Variant::Single => (false, false, DatasetSelection::D2),
        };
        self.model.ssp_enabled = ssp;
        self.model.vib.enabled = vib;
        self.datasets = datasets;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be > 0".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return Err(Error::Config("train.clip_norm must be >= 0".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let b = &mut self.model.backbone;
        match key {
            "model.d_model" => b.d_model = parse(key, value)?,
            "model.n_layers" => b.n_layers = parse(key, value)?,
            "model.n_heads" => b.n_heads = parse(key, value)?,
            "model.d_ff" => b.d_ff = parse(key, value)?,
            "model.max_encoder_len" => b.max_encoder_len = parse(key, value)?,
            "model.max_decoder_len" => b.max_decoder_len = parse(key, value)?,
            "model.dropout" => b.dropout = parse(key, value)?,
            "model.max_span_len" => self.model.max_span_len = parse(key, value)?,
            "ssp.enabled" => self.model.ssp_enabled = parse(key, value)?,
            "ssp.tie_embeddings" => self.model.tie_embeddings = parse(key, value)?,
            "vib.enabled" => self.model.vib.enabled = parse(key, value)?,
            "vib.beta" => self.model.vib.beta = parse(key, value)?,
            "vib.d_z" => self.model.vib.d_z = parse(key, value)?,
            "vib.eval_use_mean" => self.model.vib.eval_use_mean = parse(key, value)?,
            "vib.project" => self.model.vib.project = parse(key, value)?,
            "train.learning_rate" => self.learning_rate = parse(key, value)?,
            "train.batch_size" => self.batch_size = parse(key, value)?,
            "train.epochs" => self.epochs = parse(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            "train.clip_norm" => self.clip_norm = parse(key, value)?,
            "train.datasets" => self.datasets = value.trim().parse()?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let b = &self.model.backbone;
        let v = &self.model.vib;
        Ok(match key {
            "model.d_model" => b.d_model.to_string(),
            "model.n_layers" => b.n_layers.to_string(),
            "model.n_heads" => b.n_heads.to_string(),
            "model.d_ff" => b.d_ff.to_string(),
            "model.max_encoder_len" => b.max_encoder_len.to_string(),
            "model.max_decoder_len" => b.max_decoder_len.to_string(),
            "model.dropout" => b.dropout.to_string(),
            "model.max_span_len" => self.model.max_span_len.to_string(),
            "ssp.enabled" => self.model.ssp_enabled.to_string(),
            "ssp.tie_embeddings" => self.model.tie_embeddings.to_string(),
            "vib.enabled" => v.enabled.to_string(),
            "vib.beta" => v.beta.to_string(),
            "vib.d_z" => v.d_z.to_string(),
            "vib.eval_use_mean" => v.eval_use_mean.to_string(),
            "vib.project" => v.project.to_string(),
            "train.learning_rate" => self.learning_rate.to_string(),
            "train.batch_size" => self.batch_size.to_string(),
            "train.epochs" => self.epochs.to_string(),
            "train.seed" => self.seed.to_string(),
            "train.clip_norm" => self.clip_norm.to_string(),
            "train.datasets" => self.datasets.to_string(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        })
    }

    pub fn to_flat(&self) -> BTreeMap<String, String> {
        CONFIG_KEYS
            .iter()
            .map(|k| (k.key.to_string(), self.get(k.key).expect("listed key")))
            .collect()
    }

    /// Applies every key of a TOML document on top of `self`.
    pub fn merge_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        let mut flat = Vec::new();
        flatten("", &toml::Value::Table(table), &mut flat)?;
        for (key, value) in flat {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.merge_toml(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        let mut sections: BTreeMap<&str, toml::Table> = BTreeMap::new();
        for k in CONFIG_KEYS {
            let (section, name) = k.key.split_once('.').expect("dotted key");
            let raw = self.get(k.key).expect("listed key");
            let value = match k.kind {
                ValueKind::Bool => toml::Value::Boolean(raw == "true"),
                ValueKind::Int => toml::Value::Integer(raw.parse().expect("integer value")),
                ValueKind::Float => toml::Value::Float(raw.parse().expect("float value")),
                ValueKind::Choice(_) => toml::Value::String(raw),
            };
            sections
                .entry(section)
                .or_default()
                .insert(name.to_string(), value);
        }
        let root: toml::Table = sections
            .into_iter()
            .map(|(s, t)| (s.to_string(), toml::Value::Table(t)))
            .collect();
        toml::to_string(&root).expect("config serialises")
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) -> Result<()> {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out)?;
            }
        }
        toml::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        toml::Value::Integer(i) => out.push((prefix.to_string(), i.to_string())),
        toml::Value::Float(f) => out.push((prefix.to_string(), f.to_string())),
        toml::Value::Boolean(b) => out.push((prefix.to_string(), b.to_string())),
        other => {
            return Err(Error::Config(format!(
                "{prefix}: unsupported value {other}"
            )))
        }
    }
    Ok(())
}
