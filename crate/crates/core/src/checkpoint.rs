//! Versioned weight container: a directory holding `manifest.json` and
//! `tensors.bin`.
//!
//! `tensors.bin` is the concatenation of every tensor's values as
//! little-endian `f64`, in manifest order. The manifest records each
//! tensor's name, shape and element offset, plus free-form metadata.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const FORMAT: &str = "memefuse-weights";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: BTreeMap<String, Matrix>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        Checkpoint {
            meta: BTreeMap::new(),
            tensors: store
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    /// Copy every tensor of the checkpoint into the same-named parameter.
    /// All store parameters must be present with matching shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
        for (id, name) in ids {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` missing")))?;
            let slot = store.value_mut(id);
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut blob = Vec::new();
        let mut offset = 0;
        for (name, m) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
                offset,
            });
            offset += m.len();
            for v in m.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = CheckpointManifest {
            format: FORMAT.into(),
            version: VERSION,
            meta: self.meta.clone(),
            tensors: entries,
        };
        let mpath = dir.join("manifest.json");
        fs::write(&mpath, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&mpath, e))?;
        let bpath = dir.join("tensors.bin");
        fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        if !mpath.exists() {
            return Err(Error::Checkpoint(format!("no checkpoint at {}", dir.display())));
        }
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container {} v{}",
                manifest.format, manifest.version
            )));
        }
        let bpath = dir.join("tensors.bin");
        let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut tensors = BTreeMap::new();
        for e in manifest.tensors {
            let end = e.offset + e.rows * e.cols;
            if end > values.len() {
                return Err(Error::Checkpoint(format!("tensor `{}` runs past end of blob", e.name)));
            }
            tensors.insert(e.name, Matrix::from_vec(e.rows, e.cols, values[e.offset..end].to_vec()));
        }
        Ok(Checkpoint {
            meta: manifest.meta,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::ParamGroup;

    #[test]
    fn save_load_restore() {
        let mut store = ParamStore::new();
        store.add("a.weight", ParamGroup::Fusion, Matrix::from_fn(2, 3, |r, c| r as f64 - c as f64 * 0.1), true);
        store.add("a.bias", ParamGroup::Fusion, Matrix::row_vector(vec![0.5, -1e-300, f64::MAX]), false);
        let dir = tempfile::TempDir::new().unwrap();
        let mut ck = Checkpoint::from_store(&store);
        ck.meta.insert("arch".into(), serde_json::json!("double_tower"));
        ck.save(dir.path()).unwrap();

        let loaded = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(loaded, ck);

        let mut other = store.clone();
        for (id, _) in store.iter() {
            other.value_mut(id).data_mut().fill(0.0);
        }
        loaded.restore_into(&mut other).unwrap();
        assert_eq!(other, store);

        let mut wrong = ParamStore::new();
        wrong.add("a.weight", ParamGroup::Fusion, Matrix::zeros(3, 3), true);
        assert!(loaded.restore_into(&mut wrong).is_err());
        assert!(Checkpoint::load(&dir.path().join("nope")).is_err());
    }
}
