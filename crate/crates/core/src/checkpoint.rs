//! Binary checkpoint format.
//!
//! ```text
//! "RSODCKPT" | u32 version | u64 header length | JSON header | f64 LE data
//! ```
//!
//! The header holds the configuration, optimizer and scheduler state and
//! an index of `(name, shape, offset)` into the data section. Momentum
//! buffers are stored as `momentum.<tensor>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::network::{Role, SfcnParams};
use crate::reflection::MeanImage;

pub const MAGIC: &[u8; 8] = b"RSODCKPT";
pub const VERSION: u32 = 1;
const MOMENTUM_PREFIX: &str = "momentum.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    /// Losses seen since the last decay (at most two windows).
    pub recent: Vec<f64>,
}

pub type TensorMap = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_toml: String,
    pub seed: u64,
    pub step: u64,
    pub lr: f64,
    pub mean: MeanImage,
    pub scheduler: SchedulerState,
    /// Network tensors by canonical name.
    pub tensors: TensorMap,
    /// Momentum buffers by the name of the tensor they belong to.
    pub momentum: TensorMap,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: String,
    seed: u64,
    step: u64,
    lr: f64,
    mean: MeanImage,
    scheduler: SchedulerState,
    tensors: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

impl Checkpoint {
    /// Snapshot of a run; `velocity` is the flat momentum vector in
    /// trainable-visit order.
    pub fn capture(
        config: &Config,
        params: &SfcnParams,
        velocity: &[f64],
        mean: &MeanImage,
        step: u64,
        lr: f64,
        scheduler: SchedulerState,
    ) -> Self {
        let mut momentum = TensorMap::new();
        let mut offset = 0;
        params.visit(&mut |name, role, shape, data| {
            if role == Role::Trainable {
                momentum.insert(name.to_owned(), (shape.to_vec(), velocity[offset..offset + data.len()].to_vec()));
                offset += data.len();
            }
        });
        Self {
            config_toml: config.to_toml_string(),
            seed: config.train.seed,
            step,
            lr,
            mean: mean.clone(),
            scheduler,
            tensors: params.to_tensor_map(),
            momentum,
        }
    }

    /// Flat momentum vector laid out like `params.trainable_vector()`.
    pub fn momentum_vector(&self, params: &SfcnParams) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(params.num_trainable());
        for (name, role, shape) in params.layout() {
            if role != Role::Trainable {
                continue;
            }
            let (found, data) = self
                .momentum
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing momentum for `{name}`")))?;
            if *found != shape {
                return Err(Error::IncompatibleLayer {
                    name: format!("{MOMENTUM_PREFIX}{name}"),
                    expected: shape,
                    found: found.clone(),
                });
            }
            out.extend_from_slice(data);
        }
        Ok(out)
    }

    pub fn config(&self) -> Result<Config> {
        Config::from_toml_str(&self.config_toml)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut index = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut offset = 0;
        let all = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), v))
            .chain(self.momentum.iter().map(|(k, v)| (format!("{MOMENTUM_PREFIX}{k}"), v)));
        for (name, (shape, data)) in all {
            if shape.iter().product::<usize>() != data.len() {
                return Err(Error::Checkpoint(format!("tensor `{name}` has inconsistent shape")));
            }
            index.push(IndexEntry {
                name,
                shape: shape.clone(),
                offset,
            });
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            offset += data.len();
        }
        let header = serde_json::to_vec(&Header {
            config: self.config_toml.clone(),
            seed: self.seed,
            step: self.step,
            lr: self.lr,
            mean: self.mean.clone(),
            scheduler: self.scheduler.clone(),
            tensors: index,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
        let header_bytes = body.get(..header_len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(header_bytes)?;
        let data = &body[header_len..];
        if data.len() % 8 != 0 {
            return Err(bad("data section is not a whole number of f64 values"));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut tensors = TensorMap::new();
        let mut momentum = TensorMap::new();
        for entry in header.tensors {
            let len: usize = entry.shape.iter().product();
            let slice = values
                .get(entry.offset..entry.offset + len)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` runs past the data section", entry.name)))?;
            let value = (entry.shape, slice.to_vec());
            match entry.name.strip_prefix(MOMENTUM_PREFIX) {
                Some(base) => momentum.insert(base.to_owned(), value),
                None => tensors.insert(entry.name, value),
            };
        }
        Ok(Self {
            config_toml: header.config,
            seed: header.seed,
            step: header.step,
            lr: header.lr,
            mean: header.mean,
            scheduler: header.scheduler,
            tensors,
            momentum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Network parameters for `config`'s model, filled from this checkpoint.
    pub fn params_for(&self, model: &crate::network::SfcnConfig) -> Result<SfcnParams> {
        let mut params = SfcnParams::init(model, 0)?;
        params.load_tensor_map(&self.tensors)?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::SfcnConfig;

    fn sample() -> Checkpoint {
        let config = Config {
            model: SfcnConfig::tiny(),
            ..Config::default()
        };
        let params = SfcnParams::init(&config.model, 3).unwrap();
        let velocity: Vec<f64> = (0..params.num_trainable()).map(|i| (i as f64).sin() / 7.0).collect();
        Checkpoint::capture(
            &config,
            &params,
            &velocity,
            &MeanImage::ScalarPerChannel([0.1, 0.2, 1.0 / 3.0]),
            17,
            0.01 * 0.9,
            SchedulerState {
                recent: vec![0.3, 0.1 + 0.2],
            },
        )
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.lr.to_bits(), c.lr.to_bits());
    }

    #[test]
    fn momentum_vector_restores_layout() {
        let c = sample();
        let params = c.params_for(&SfcnConfig::tiny()).unwrap();
        let v = c.momentum_vector(&params).unwrap();
        assert_eq!(v.len(), params.num_trainable());
        assert_eq!(v[5], (5f64).sin() / 7.0);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(Checkpoint::from_bytes(b"garbage").is_err());
        let mut bytes = sample().to_bytes().unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let c = sample();
        let err = c.params_for(&SfcnConfig::desk()).unwrap_err();
        assert!(matches!(err, Error::IncompatibleLayer { .. }), "{err}");
        assert!(err.to_string().contains("branch.conv.0.weight"), "{err}");
    }
}
