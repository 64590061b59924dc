//! Trainable parameters shared by both backends.
//!
//! Parameters are keyed by `(word, shape)`; a box and its dagger share the
//! same entry. With synonym tying enabled, all verbs in an oracle synonym
//! class share the parameters of their class representative.

use crate::ir::WireType;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use thiserror::Error;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct ParamKey {
    pub word: String,
    pub shape: Vec<WireType>,
}

impl ParamKey {
    pub fn new(word: impl Into<String>, shape: Vec<WireType>) -> Self {
        ParamKey { word: word.into(), shape }
    }
}

/// Synonym classes tied to one representative each. Movement verbs collapse
/// to `moved`, grab verbs to `grabbed`; particle verbs keep their identity.
pub fn synonym_representative(word: &str) -> &str {
    const MOVEMENT: [&str; 4] = ["moved", "went", "travelled", "journeyed"];
    const GRAB: [&str; 6] = ["discarded", "dropped", "left", "grabbed", "took", "got"];
    if MOVEMENT.contains(&word) {
        "moved"
    } else if GRAB.contains(&word) {
        "grabbed"
    } else {
        word
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ParamError {
    #[error("missing parameters for {0:?}")]
    MissingParameters(ParamKey),
    #[error("wrong parameter length for {key:?}: expected {expected}, got {got}")]
    WrongParamLength { key: ParamKey, expected: usize, got: usize },
}

/// Mapping from box identity to its real parameter vector, with a
/// deterministic key order for flattening into one optimization vector.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct ParameterStore {
    entries: BTreeMap<ParamKey, Vec<f64>>,
    /// When set, lookups map words through [`synonym_representative`].
    pub tie_synonyms: bool,
}

impl ParameterStore {
    pub fn new(tie_synonyms: bool) -> Self {
        ParameterStore { entries: BTreeMap::new(), tie_synonyms }
    }

    pub fn canonical_key(&self, key: &ParamKey) -> ParamKey {
        if self.tie_synonyms {
            ParamKey::new(synonym_representative(&key.word), key.shape.clone())
        } else {
            key.clone()
        }
    }

    pub fn insert(&mut self, key: ParamKey, values: Vec<f64>) {
        let key = self.canonical_key(&key);
        self.entries.insert(key, values);
    }

    pub fn contains(&self, key: &ParamKey) -> bool {
        self.entries.contains_key(&self.canonical_key(key))
    }

    pub fn get(&self, key: &ParamKey) -> Result<&[f64], ParamError> {
        let canon = self.canonical_key(key);
        self.entries
            .get(&canon)
            .map(Vec::as_slice)
            .ok_or(ParamError::MissingParameters(canon))
    }

    pub fn len_params(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ParamKey> {
        self.entries.keys()
    }

    /// Deterministic `(key, flat range)` layout in key order.
    pub fn layout(&self) -> Vec<(ParamKey, Range<usize>)> {
        let mut out = Vec::with_capacity(self.entries.len());
        let mut offset = 0;
        for (key, values) in &self.entries {
            out.push((key.clone(), offset..offset + values.len()));
            offset += values.len();
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.len_params());
        for values in self.entries.values() {
            flat.extend_from_slice(values);
        }
        flat
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) {
        debug_assert_eq!(flat.len(), self.len_params());
        let mut offset = 0;
        for values in self.entries.values_mut() {
            let len = values.len();
            values.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }

    /// Offset of a key's slice inside the flattened vector.
    pub fn offset_of(&self, key: &ParamKey) -> Option<Range<usize>> {
        let canon = self.canonical_key(key);
        let mut offset = 0;
        for (k, values) in &self.entries {
            if *k == canon {
                return Some(offset..offset + values.len());
            }
            offset += values.len();
        }
        None
    }
}

/// Checkpoint manifest: everything needed to reload and reproduce an
/// evaluation, next to a flat little-endian f64 parameter file whose order
/// is the recorded key order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub backend: serde_json::Value,
    pub seed: u64,
    pub epoch: usize,
    pub tie_synonyms: bool,
    pub keys: Vec<(ParamKey, usize)>,
    #[serde(default)]
    pub metrics: serde_json::Value,
}

#[derive(Error, Debug)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("parameter file length {got} does not match manifest total {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

pub fn save_checkpoint(
    dir: &Path,
    name: &str,
    manifest: &CheckpointManifest,
    store: &ParameterStore,
) -> Result<(), CheckpointError> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = manifest.clone();
    manifest.tie_synonyms = store.tie_synonyms;
    manifest.keys =
        store.layout().into_iter().map(|(k, r)| (k, r.end - r.start)).collect();
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join(format!("{name}.json")), json)?;
    let flat = store.flatten();
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(dir.join(format!("{name}.bin")))?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(
    dir: &Path,
    name: &str,
) -> Result<(CheckpointManifest, ParameterStore), CheckpointError> {
    let json = std::fs::read_to_string(dir.join(format!("{name}.json")))?;
    let manifest: CheckpointManifest = serde_json::from_str(&json)?;
    let mut f = std::fs::File::open(dir.join(format!("{name}.bin")))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    let expected: usize = manifest.keys.iter().map(|(_, n)| n).sum();
    if bytes.len() != expected * 8 {
        return Err(CheckpointError::LengthMismatch { expected: expected * 8, got: bytes.len() });
    }
    let mut store = ParameterStore::new(manifest.tie_synonyms);
    let mut offset = 0;
    for (key, n) in &manifest.keys {
        let mut values = Vec::with_capacity(*n);
        for i in 0..*n {
            let start = (offset + i) * 8;
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&bytes[start..start + 8]);
            values.push(f64::from_le_bytes(buf));
        }
        offset += n;
        store.insert(key.clone(), values);
    }
    Ok((manifest, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tied_store_unifies_synonyms() {
        let mut store = ParameterStore::new(true);
        store.insert(ParamKey::new("went", vec![WireType::P]), vec![1.0, 2.0, 3.0]);
        assert_eq!(store.get(&ParamKey::new("moved", vec![WireType::P])).unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(
            store.get(&ParamKey::new("journeyed", vec![WireType::P])).unwrap(),
            &[1.0, 2.0, 3.0]
        );
        assert!(store.get(&ParamKey::new("picked", vec![WireType::P])).is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let mut store = ParameterStore::new(false);
        store.insert(ParamKey::new("b", vec![WireType::P]), vec![4.0, 5.0]);
        store.insert(ParamKey::new("a", vec![WireType::P]), vec![1.0]);
        let flat = store.flatten();
        // BTreeMap order: "a" before "b".
        assert_eq!(flat, vec![1.0, 4.0, 5.0]);
        let mut store2 = store.clone();
        store2.set_from_flat(&[9.0, 8.0, 7.0]);
        assert_eq!(store2.get(&ParamKey::new("a", vec![WireType::P])).unwrap(), &[9.0]);
        assert_eq!(store2.get(&ParamKey::new("b", vec![WireType::P])).unwrap(), &[8.0, 7.0]);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParameterStore::new(false);
        store.insert(ParamKey::new("x", vec![WireType::P]), vec![0.1, -2.5e-17, 3e300]);
        let manifest = CheckpointManifest {
            backend: serde_json::json!({"kind": "test"}),
            seed: 7,
            epoch: 3,
            tie_synonyms: false,
            keys: vec![],
            metrics: serde_json::Value::Null,
        };
        save_checkpoint(dir.path(), "epoch_003", &manifest, &store).unwrap();
        let (m2, s2) = load_checkpoint(dir.path(), "epoch_003").unwrap();
        assert_eq!(m2.epoch, 3);
        assert_eq!(s2, store);
    }
}
