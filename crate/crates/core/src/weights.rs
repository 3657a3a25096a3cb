//! Parameter stores on disk: one FDT file per tensor plus `manifest.json`.

use std::fs;
use std::path::Path;

use crate::error::{invalid, Result};
use crate::io;
use crate::params::ParamStore;
use crate::scalar::{DType, Scalar};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub shape: [usize; 4],
    pub dtype: DType,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// Parameter names use dots; file names keep them and add an index so they stay unique.
fn file_name(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:04}_{clean}.fdt")
}

pub fn save<T: Scalar>(store: &ParamStore<T>, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(store.len());
    for (k, (_, p)) in store.iter().enumerate() {
        let file = file_name(k, &p.name);
        io::write(dir.join(&file), &p.value)?;
        entries.push(ManifestEntry {
            name: p.name.clone(),
            file,
            shape: p.value.shape().0,
            dtype: T::DTYPE,
            trainable: p.trainable,
        });
    }
    let manifest = Manifest { entries };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.as_ref().join(MANIFEST))?)?)
}

/// Builds a fresh store from a saved directory.
pub fn load<T: Scalar>(dir: impl AsRef<Path>) -> Result<ParamStore<T>> {
    let dir = dir.as_ref();
    let mut store = ParamStore::new();
    for e in read_manifest(dir)?.entries {
        let t = io::read::<T>(dir.join(&e.file))?;
        if t.shape().0 != e.shape {
            return Err(invalid(format!("{}: manifest shape {:?}, file shape {:?}", e.name, e.shape, t.shape().0)));
        }
        store.add(e.name, t, e.trainable)?;
    }
    Ok(store)
}

/// Overwrites the values of an existing store; every name and shape must match.
pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, dir: impl AsRef<Path>) -> Result<()> {
    let saved = load::<T>(dir)?;
    if saved.len() != store.len() {
        return Err(invalid(format!("saved store has {} tensors, model has {}", saved.len(), store.len())));
    }
    for (_, p) in saved.iter() {
        let id = store
            .id(&p.name)
            .ok_or_else(|| invalid(format!("model has no parameter `{}`", p.name)))?;
        store.set_value(id, p.value.clone())?;
    }
    Ok(())
}
