//! JSON checkpoint format shared by every trained model:
//!
//! ```json
//! {"format_version": 1, "config": {...}, "tensors": {"name": {"shape": [..], "data": [..]}}}
//! ```
//!
//! Tensor values are written with 17 significant digits so that loading a
//! checkpoint reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawCheckpoint {
    format_version: u32,
    config: serde_json::Value,
    tensors: BTreeMap<String, RawTensor>,
}

impl Checkpoint {
    pub fn new(config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            config: serde_json::to_value(config)?,
            tensors: BTreeMap::new(),
        })
    }

    pub fn from_store(config: &impl Serialize, store: &ParamStore) -> Result<Self> {
        let mut ckpt = Self::new(config)?;
        for (_, name, tensor) in store.iter() {
            ckpt.insert(name, tensor.clone());
        }
        Ok(ckpt)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    /// Copies every tensor the store expects out of the checkpoint.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
        for name in names {
            store.assign(&name, self.tensor(&name)?.clone())?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut out = String::new();
        write!(
            out,
            "{{\"format_version\":{FORMAT_VERSION},\"config\":{},\"tensors\":{{",
            serde_json::to_string(&self.config)?
        )
        .expect("writing to a String");
        for (i, (name, tensor)) in self.tensors.iter().enumerate() {
            if !tensor.is_finite() {
                return Err(Error::Checkpoint(format!("tensor `{name}` is not finite")));
            }
            if i > 0 {
                out.push(',');
            }
            write!(
                out,
                "{}:{{\"shape\":{},\"data\":[",
                serde_json::to_string(name)?,
                serde_json::to_string(tensor.shape())?
            )
            .expect("writing to a String");
            for (k, v) in tensor.data().iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write!(out, "{v:.16e}").expect("writing to a String");
            }
            out.push_str("]}");
        }
        out.push_str("}}");
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawCheckpoint = serde_json::from_str(text)?;
        if raw.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                raw.format_version
            )));
        }
        let tensors = raw
            .tensors
            .into_iter()
            .map(|(name, t)| Ok((name, Tensor::new(t.shape, t.data)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: raw.config,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
