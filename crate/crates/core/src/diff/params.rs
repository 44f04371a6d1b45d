use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::FieldTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: FieldTensor,
    grad: Option<Vec<f64>>,
}

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    seed: u64,
    rng: ChaCha8Rng,
    entries: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestTensor {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    tensors: Vec<ManifestTensor>,
    #[serde(default)]
    meta: serde_json::Map<String, serde_json::Value>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            entries: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: impl Into<String>, value: FieldTensor) -> ParamId {
        self.entries.push(Entry {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Adds a tensor drawn from `N(0, std²)` using the store's own stream.
    pub fn add_normal(&mut self, name: impl Into<String>, shape: Vec<usize>, std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                z * std
            })
            .collect();
        self.add(name, FieldTensor::new(shape, values).expect("sized above"))
    }

    pub fn add_constant(&mut self, name: impl Into<String>, shape: Vec<usize>, v: f64) -> ParamId {
        let n: usize = shape.iter().product();
        self.add(name, FieldTensor::new(shape, vec![v; n]).expect("sized above"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &FieldTensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut FieldTensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.entries[id.0].grad.as_deref()
    }

    pub fn set_grad(&mut self, id: ParamId, grad: Vec<f64>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if grad.len() != e.value.numel() {
            return Err(Error::Shape(format!("gradient for `{}` has wrong length", e.name)));
        }
        e.grad = Some(grad);
        Ok(())
    }

    pub fn num_trainable(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    pub(crate) fn ensure_grads(&mut self) {
        for e in &mut self.entries {
            if e.grad.is_none() {
                e.grad = Some(vec![0.0; e.value.numel()]);
            }
        }
    }

    pub(crate) fn add_grad(&mut self, id: ParamId, g: &[f64]) {
        let e = &mut self.entries[id.0];
        let acc = e.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (a, &v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }

    /// Flattened copy of all parameter values in store order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.value.values.iter().copied()).collect()
    }

    /// Flattened gradients; missing gradients read as zero.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| match &e.grad {
                Some(g) => g.clone(),
                None => vec![0.0; e.value.numel()],
            })
            .collect()
    }

    /// Writes `params.bin` (little-endian f64, store order) and
    /// `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path, meta: serde_json::Map<String, serde_json::Value>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bytes = Vec::with_capacity(self.num_trainable() * 8);
        let mut tensors = Vec::with_capacity(self.entries.len());
        let mut offset = 0;
        for e in &self.entries {
            tensors.push(ManifestTensor {
                name: e.name.clone(),
                shape: e.value.shape.clone(),
                offset,
            });
            for v in &e.value.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            offset += e.value.numel();
        }
        let manifest = Manifest {
            seed: self.seed,
            tensors,
            meta,
        };
        let bin = dir.join(PARAMS_FILE);
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let man = dir.join(MANIFEST_FILE);
        fs::write(&man, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&man, e))?;
        Ok(())
    }

    /// Reads a checkpoint written by [`ParamStore::save`], returning the
    /// store and the manifest's metadata.
    pub fn load(dir: &Path) -> Result<(Self, serde_json::Map<String, serde_json::Value>)> {
        let man = dir.join(MANIFEST_FILE);
        let text = fs::read(&man).map_err(|e| Error::io(&man, e))?;
        let manifest: Manifest = serde_json::from_slice(&text)?;
        let bin = dir.join(PARAMS_FILE);
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint("parameter file length is not a multiple of 8".into()));
        }
        let floats: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mut store = ParamStore::new(manifest.seed);
        for t in manifest.tensors {
            let n: usize = t.shape.iter().product();
            let slice = floats.get(t.offset..t.offset + n).ok_or_else(|| {
                Error::Checkpoint(format!("tensor `{}` runs past the end of the data", t.name))
            })?;
            store.add(t.name, FieldTensor::new(t.shape, slice.to_vec())?);
        }
        Ok((store, manifest.meta))
    }

    /// Overwrites values from another store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Checkpoint("parameter stores have different layouts".into()));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.value.shape != b.value.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` does not match `{}`",
                    a.name, b.name
                )));
            }
            a.value.values.clone_from(&b.value.values);
        }
        Ok(())
    }
}
