//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset 0   4 bytes   magic "PMAE"
//! offset 4   u32       format version (1)
//! offset 8   u64       manifest length M in bytes
//! offset 16  M bytes   UTF-8 JSON manifest
//! 16 + M     ...       payload: f32 LE tensor data, concatenated
//! ```
//!
//! The manifest holds `config`, `step`, `train_seed`, an optional
//! `optimizer` record and `tensors`: `[{name, shape, offset, nbytes}]`
//! with offsets relative to the payload start. Model tensors come first in
//! canonical order; with optimizer state present they are followed by
//! `optim.m.<name>` and then `optim.v.<name>` for every model tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::training::{AdamWConfig, OptState};

pub const MAGIC: &[u8; 4] = b"PMAE";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub step: u64,
    pub train_seed: u64,
    pub optimizer: Option<OptState>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerRecord {
    step: u64,
    #[serde(flatten)]
    hyper: AdamWConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: ModelConfig,
    step: u64,
    train_seed: u64,
    optimizer: Option<OptimizerRecord>,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

/// `(name, shape)` of every tensor a checkpoint for `config` must hold.
fn expected_layout(config: &ModelConfig, with_optimizer: bool) -> Vec<(String, Vec<usize>)> {
    let base: Vec<(String, Vec<usize>)> = ModelParams::<f32>::zeros(config)
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape.clone()))
        .collect();
    let mut all = base.clone();
    if with_optimizer {
        for prefix in ["optim.m.", "optim.v."] {
            all.extend(base.iter().map(|(n, s)| (format!("{prefix}{n}"), s.clone())));
        }
    }
    all
}

impl Checkpoint {
    fn sources(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = self
            .params
            .tensors()
            .into_iter()
            .map(|(_, t)| &t.data[..])
            .collect();
        if let Some(opt) = &self.optimizer {
            out.extend(opt.m.tensors().into_iter().map(|(_, t)| &t.data[..]));
            out.extend(opt.v.tensors().into_iter().map(|(_, t)| &t.data[..]));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layout = expected_layout(&self.config, self.optimizer.is_some());
        let sources = self.sources();
        let mut tensors = Vec::with_capacity(layout.len());
        let mut offset = 0u64;
        for ((name, shape), data) in layout.into_iter().zip(&sources) {
            let nbytes = 4 * data.len() as u64;
            tensors.push(TensorEntry {
                name,
                shape,
                offset,
                nbytes,
            });
            offset += nbytes;
        }
        let manifest = Manifest {
            config: self.config,
            step: self.step,
            train_seed: self.train_seed,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerRecord {
                step: o.step,
                hyper: o.hyper,
            }),
            tensors,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for data in sources {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(corrupt("truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let body = &bytes[HEADER_LEN..];
        if mlen > body.len() as u64 {
            return Err(corrupt("manifest length exceeds file"));
        }
        let (json, payload) = body.split_at(mlen as usize);
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| corrupt(format!("manifest: {e}")))?;
        manifest
            .config
            .validate()
            .map_err(|e| corrupt(format!("config: {e}")))?;
        let layout = expected_layout(&manifest.config, manifest.optimizer.is_some());
        if layout.len() != manifest.tensors.len() {
            return Err(corrupt(format!(
                "expected {} tensors, manifest lists {}",
                layout.len(),
                manifest.tensors.len()
            )));
        }
        let mut offset = 0u64;
        for ((name, shape), entry) in layout.iter().zip(&manifest.tensors) {
            let numel: usize = shape.iter().product();
            if entry.name != *name || entry.shape != *shape {
                return Err(corrupt(format!(
                    "tensor {} {:?} disagrees with config ({} {:?})",
                    entry.name, entry.shape, name, shape
                )));
            }
            if entry.offset != offset || entry.nbytes != 4 * numel as u64 {
                return Err(corrupt(format!("bad offset or size for {name}")));
            }
            offset += entry.nbytes;
        }
        if payload.len() as u64 != offset {
            return Err(corrupt(format!(
                "payload has {} bytes, manifest needs {offset}",
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut fill = |params: &mut ModelParams<f32>| {
            for (_, t) in params.tensors_mut() {
                for v in &mut t.data {
                    *v = values.next().expect("payload length checked");
                }
            }
        };
        let mut params = ModelParams::zeros(&manifest.config);
        fill(&mut params);
        let optimizer = manifest.optimizer.map(|rec| {
            let mut m = ModelParams::zeros(&manifest.config);
            let mut v = ModelParams::zeros(&manifest.config);
            fill(&mut m);
            fill(&mut v);
            OptState {
                m,
                v,
                step: rec.step,
                hyper: rec.hyper,
            }
        });
        Ok(Checkpoint {
            config: manifest.config,
            params,
            step: manifest.step,
            train_seed: manifest.train_seed,
            optimizer,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            patch_size: 4,
            channels: 1,
            enc_dim: 8,
            enc_depth: 1,
            enc_heads: 2,
            dec_dim: 4,
            dec_depth: 1,
            dec_heads: 1,
            mlp_ratio: 2.0,
            seed: 9,
        }
    }

    fn sample(with_opt: bool) -> Checkpoint {
        let c = config();
        let params = ModelParams::init(&c).unwrap();
        let optimizer = with_opt.then(|| {
            let mut o = OptState::new(&params, AdamWConfig::default());
            o.step = 3;
            o.m.mask_token.data[0] = 0.5;
            o.v.head.bias.data[1] = 0.25;
            o
        });
        Checkpoint {
            config: c,
            params,
            step: 3,
            train_seed: 77,
            optimizer,
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        for with_opt in [false, true] {
            let ck = sample(with_opt);
            let bytes = ck.to_bytes().unwrap();
            assert_eq!(&bytes[..4], b"PMAE");
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pmae");
        let ck = sample(true);
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let bytes = sample(false).to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 1];
        assert!(matches!(
            Checkpoint::from_bytes(cut),
            Err(Error::CorruptCheckpoint(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&extra),
            Err(Error::CorruptCheckpoint(_))
        ));
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn edited_shape_is_corrupt() {
        let bytes = sample(false).to_bytes().unwrap();
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[16..16 + mlen]).unwrap();
        // head.bias has shape [16]; claim [15] instead, keeping length.
        let edited = json.replacen(
            "\"name\":\"head.bias\",\"shape\":[16]",
            "\"name\":\"head.bias\",\"shape\":[15]",
            1,
        );
        assert_ne!(edited, json);
        let mut out = bytes[..16].to_vec();
        out.extend_from_slice(edited.as_bytes());
        out.extend_from_slice(&bytes[16 + mlen..]);
        assert!(matches!(
            Checkpoint::from_bytes(&out),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample(false).to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let mut bytes = sample(false).to_bytes().unwrap();
        bytes[4] = 2;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
