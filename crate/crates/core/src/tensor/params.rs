//! Named parameter collections and their checkpoint format.
//!
//! A checkpoint is a flat little-endian `f64` blob plus a JSON manifest
//! listing each tensor's name, shape and offset into the blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, Tensor, TensorError, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    total: usize,
    tensors: Vec<ManifestEntry>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a trainable leaf; index `i` of the
    /// returned vector corresponds to `ParamId(i)`.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Gradients for previously bound parameters.
    pub fn grads(&self, g: &Graph<T>, vars: &[Var]) -> Vec<Tensor<T>> {
        vars.iter().map(|v| g.grad(*v)).collect()
    }

    pub fn to_blob(&self) -> (Vec<u8>, String) {
        let mut blob = Vec::with_capacity(self.count() * 8);
        let mut entries = Vec::with_capacity(self.len());
        let mut offset = 0;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            for v in t.data() {
                blob.extend_from_slice(&v.as_f64().to_le_bytes());
            }
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let manifest = Manifest {
            dtype: "f64-le".into(),
            total: offset,
            tensors: entries,
        };
        (blob, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
    }

    pub fn from_blob(blob: &[u8], manifest: &str) -> Result<Self, TensorError> {
        let m: Manifest = serde_json::from_str(manifest).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        if m.dtype != "f64-le" || blob.len() != m.total * 8 {
            return Err(TensorError::Checkpoint(format!(
                "blob of {} bytes does not match manifest ({} values, {})",
                blob.len(),
                m.total,
                m.dtype
            )));
        }
        let mut set = Self::new();
        for e in m.tensors {
            let n: usize = e.shape.iter().product();
            let end = e.offset + n;
            if end > m.total {
                return Err(TensorError::Checkpoint(format!("tensor {} overruns blob", e.name)));
            }
            let data = blob[e.offset * 8..end * 8]
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            set.add(e.name, Tensor::new(e.shape, data)?);
        }
        Ok(set)
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, stem: &Path) -> std::io::Result<()> {
        let (blob, manifest) = self.to_blob();
        fs::write(stem.with_extension("bin"), blob)?;
        fs::write(stem.with_extension("json"), manifest)
    }

    pub fn load(stem: &Path) -> Result<Self, TensorError> {
        let blob = fs::read(stem.with_extension("bin")).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        let manifest =
            fs::read_to_string(stem.with_extension("json")).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        Self::from_blob(&blob, &manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn blob_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), split in 1usize..39) {
            let split = split.min(values.len());
            let mut set = ParamSet::<f64>::new();
            set.add("a", Tensor::new(vec![split], values[..split].to_vec()).unwrap());
            if split < values.len() {
                set.add("b", Tensor::new(vec![values.len() - split], values[split..].to_vec()).unwrap());
            }
            let (blob, manifest) = set.to_blob();
            let back = ParamSet::<f64>::from_blob(&blob, &manifest).unwrap();
            prop_assert_eq!(back, set);
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let mut set = ParamSet::<f64>::new();
        set.add("w", Tensor::zeros(&[2, 2]));
        let (blob, manifest) = set.to_blob();
        assert!(ParamSet::<f64>::from_blob(&blob[..8], &manifest).is_err());
    }
}
