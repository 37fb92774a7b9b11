use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Learnable weights keyed by layer name.
///
/// Serialized as `{name: {shape: [...], data: [...]}}`. Floats are written in
/// shortest round-trip form, so decoding reproduces every bit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams {
    layers: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        ModelParams::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        self.layers.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.layers.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.layers.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.layers
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.layers.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.layers.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.layers.values().map(Tensor::numel).sum()
    }

    /// Order-sensitive FNV-1a digest over names, shapes and bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        };
        for (name, t) in &self.layers {
            eat(name.as_bytes());
            for s in &t.shape {
                eat(&(*s as u64).to_le_bytes());
            }
            for x in &t.data {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let params: ModelParams = serde_json::from_str(text)?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params = ModelParams::from_json(&text).map_err(|e| Error::json(path, e))?;
        for (name, t) in &params.layers {
            let n: usize = t.shape.iter().product();
            if n != t.data.len() {
                return Err(Error::Data(format!(
                    "{}: layer '{name}' has shape {:?} but {} values",
                    path.display(),
                    t.shape,
                    t.data.len()
                )));
            }
        }
        Ok(params)
    }
}
