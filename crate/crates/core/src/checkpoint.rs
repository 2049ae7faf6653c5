//! JSON tensor maps for learner and policy checkpoints.
//!
//! Layout (stable, version 1):
//!
//! ```json
//! {
//!   "format": "intervene-tensors",
//!   "version": 1,
//!   "kind": "learner",
//!   "tensors": { "X2.mlp.w1": { "shape": [64, 1], "data": [...] }, ... },
//!   "meta": { ... }
//! }
//! ```
//!
//! `data` is row-major. Floats are written in shortest round-trip form, so a
//! save/load cycle is bit-exact for finite values. Non-finite values are not
//! representable in tensors; callers put sentinels in `meta` instead.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "intervene-tensors";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorMap {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub tensors: BTreeMap<String, Tensor>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl TensorMap {
    pub fn new(kind: &str) -> Self {
        TensorMap {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.into(),
            tensors: BTreeMap::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: String, t: Tensor) {
        self.tensors.insert(name, t);
    }

    /// Data of tensor `name`, checked against `shape`.
    pub fn data(&self, name: &str, shape: &[usize]) -> Result<&[f64], String> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| format!("missing tensor '{name}'"))?;
        if t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
            return Err(format!(
                "tensor '{name}' has shape {:?}, expected {:?}",
                t.shape, shape
            ));
        }
        Ok(&t.data)
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string(self)
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let map: TensorMap = serde_json::from_str(s).map_err(|e| e.to_string())?;
        if map.format != FORMAT {
            return Err(format!("unknown format '{}'", map.format));
        }
        if map.version != VERSION {
            return Err(format!("unsupported version {}", map.version));
        }
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> crate::Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| crate::Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        TensorMap::from_json(&s).map_err(|m| crate::Error::Checkpoint(m))
    }
}
