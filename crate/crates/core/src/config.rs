//! Run configuration: one TOML document with `model`, `loss`, `train` and
//! `data` tables, plus dotted `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::network::SfcnConfig;
use crate::training::TrainConfig;

/// Where the reflection mean comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanSource {
    /// `"dataset"`: per-channel mean of the training images.
    Named(String),
    Rgb([f64; 3]),
}

impl Default for MeanSource {
    fn default() -> Self {
        MeanSource::Named("dataset".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_split: String,
    /// Held-out split evaluated every `train.eval_every` steps; skipped when absent.
    pub val_split: String,
    pub mean: MeanSource,
    /// Reflection scale `k`.
    pub k: f64,
    pub augment: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_split: "train".into(),
            val_split: "val".into(),
            mean: MeanSource::default(),
            k: 1.0,
            augment: true,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::Config(format!("data.k must be positive, got {}", self.k)));
        }
        match &self.mean {
            MeanSource::Named(s) if s != "dataset" => Err(Error::Config(format!(
                "data.mean must be \"dataset\" or [r, g, b], got \"{s}\""
            ))),
            MeanSource::Rgb(v) if v.iter().any(|x| !x.is_finite()) => Err(Error::Config("data.mean must be finite".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: SfcnConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub data: DataConfig,
}

/// Every accepted key with its default value, one `key = value` per line.
pub fn documented_keys() -> String {
    let value = toml::Value::try_from(Config::default()).expect("config serializes");
    let mut out = Vec::new();
    flatten("", &value, &mut out);
    out.join("\n")
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.data.validate()
    }

    /// Applies `key=value` with a dotted key such as `train.base_lr=0.005`.
    /// The key must exist and the value must have the same TOML type as the
    /// current one (integers are accepted where floats are expected).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let mut root = toml::Value::try_from(&*self).expect("config serializes");
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        }
        let parsed = parse_value(raw);
        *slot = coerce(slot, parsed).ok_or_else(|| {
            Error::Config(format!("`{key}` expects a {}, got `{raw}`", slot.type_str()))
        })?;
        let updated: Config = root.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn coerce(current: &toml::Value, new: toml::Value) -> Option<toml::Value> {
    use toml::Value::*;
    match (current, new) {
        (Float(_), Integer(i)) => Some(Float(i as f64)),
        (Array(_), Array(items)) => Some(Array(items)),
        // `data.mean` switches between a string and an array.
        (String(_), v @ Array(_)) | (Array(_), v @ String(_)) => Some(v),
        (c, n) if c.same_type(&n) => Some(n),
        _ => None,
    }
}
