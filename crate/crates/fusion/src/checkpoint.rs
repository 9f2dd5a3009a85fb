//! Flat tensor archives: parameter names map to a shape and a little-endian
//! payload, indexed by a JSON manifest.
//!
//! Layout: the 8-byte magic `FUSNCKPT`, the manifest length as a
//! little-endian u64, the manifest, then the payload. Offsets in the manifest
//! count elements from the start of the payload. The same archive carries
//! trainer state (optimizer moments, counters) next to the weights, and a
//! weights-only archive is the import format for externally trained models.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use fusion_core::{ParamKind, ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: [u8; 8] = *b"FUSNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn of<S: Real>() -> Self {
        if std::mem::size_of::<S>() == 4 {
            Dtype::F32
        } else {
            Dtype::F64
        }
    }
}

/// Role of an archived tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Param,
    Buffer,
    /// Anything that is not part of the model (optimizer moments and the like).
    State,
}

impl From<ParamKind> for EntryKind {
    fn from(k: ParamKind) -> Self {
        match k {
            ParamKind::Trainable => EntryKind::Param,
            ParamKind::Buffer => EntryKind::Buffer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: EntryKind,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: Dtype,
    pub tensors: Vec<ManifestEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveTensor {
    pub shape: Vec<usize>,
    pub kind: EntryKind,
    /// Values widened to f64; f32 archives round-trip exactly.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub dtype: Dtype,
    pub tensors: BTreeMap<String, ArchiveTensor>,
    pub metadata: serde_json::Value,
}

/// Differences between an archive and the model it is loaded into.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManifestDiff {
    pub missing: Vec<String>,
    pub unexpected: Vec<String>,
    pub shape_mismatch: Vec<(String, Vec<usize>, Vec<usize>)>,
}

impl ManifestDiff {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty() && self.shape_mismatch.is_empty()
    }
}

impl fmt::Display for ManifestDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "checkpoint does not match the model")?;
        for (name, archived, model) in &self.shape_mismatch {
            writeln!(f, "  shape mismatch: {name}: archive {archived:?}, model {model:?}")?;
        }
        for name in &self.missing {
            writeln!(f, "  missing from archive: {name}")?;
        }
        for name in &self.unexpected {
            writeln!(f, "  not in model: {name}")?;
        }
        Ok(())
    }
}

impl Archive {
    pub fn new(dtype: Dtype) -> Self {
        Archive { dtype, tensors: BTreeMap::new(), metadata: serde_json::Value::Null }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], kind: EntryKind, data: Vec<f64>) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::data(format!("archive tensor {name}: shape {shape:?} vs {} values", data.len())));
        }
        if self.tensors.insert(name.to_string(), ArchiveTensor { shape: shape.to_vec(), kind, data }).is_some() {
            return Err(Error::data(format!("archive tensor {name} added twice")));
        }
        Ok(())
    }

    pub fn push_vec<S: Real>(&mut self, name: &str, kind: EntryKind, data: &[S]) -> Result<()> {
        self.push(name, &[data.len()], kind, data.iter().map(|v| v.as_f64()).collect())
    }

    /// Every tensor of a store, under `prefix`.
    pub fn add_store<S: Real>(&mut self, store: &ParamStore<S>, prefix: &str) -> Result<()> {
        for (_, e) in store.entries() {
            let data = e.tensor.data().iter().map(|v| v.as_f64()).collect();
            self.push(&format!("{prefix}{}", e.name), e.tensor.shape(), e.kind.into(), data)?;
        }
        Ok(())
    }

    pub fn from_store<S: Real>(store: &ParamStore<S>) -> Result<Self> {
        let mut a = Archive::new(Dtype::of::<S>());
        a.add_store(store, "")?;
        Ok(a)
    }

    pub fn get(&self, name: &str) -> Result<&ArchiveTensor> {
        self.tensors.get(name).ok_or_else(|| Error::data(format!("checkpoint lacks `{name}`")))
    }

    pub fn vec<S: Real>(&self, name: &str) -> Result<Vec<S>> {
        Ok(self.get(name)?.data.iter().map(|&v| S::of(v)).collect())
    }

    /// Model-tensor differences against `store`, looking under `prefix`.
    pub fn diff<S: Real>(&self, store: &ParamStore<S>, prefix: &str) -> ManifestDiff {
        let mut diff = ManifestDiff::default();
        let mut names = BTreeSet::new();
        for (_, e) in store.entries() {
            let key = format!("{prefix}{}", e.name);
            names.insert(key.clone());
            match self.tensors.get(&key) {
                None => diff.missing.push(key),
                Some(t) if t.shape != e.tensor.shape() => {
                    diff.shape_mismatch.push((key, t.shape.clone(), e.tensor.shape().to_vec()))
                }
                Some(_) => {}
            }
        }
        for (name, t) in &self.tensors {
            if t.kind != EntryKind::State && name.starts_with(prefix) && !names.contains(name) {
                diff.unexpected.push(name.clone());
            }
        }
        diff
    }

    /// Overwrite every tensor of `store` from the archive; any difference
    /// in names or shapes is an error listing all of them.
    pub fn load_into<S: Real>(&self, store: &mut ParamStore<S>, prefix: &str) -> Result<()> {
        let diff = self.diff(store, prefix);
        if !diff.is_empty() {
            return Err(Error::Data(diff.to_string().trim_end().to_string()));
        }
        self.copy_matching(store, prefix);
        Ok(())
    }

    /// Weight import: copy the tensors whose names and shapes match and
    /// return what was skipped.
    pub fn import_into<S: Real>(&self, store: &mut ParamStore<S>) -> ManifestDiff {
        let diff = self.diff(store, "");
        self.copy_matching(store, "");
        diff
    }

    fn copy_matching<S: Real>(&self, store: &mut ParamStore<S>, prefix: &str) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let key = format!("{prefix}{}", store.entry(id).name);
            if let Some(t) = self.tensors.get(&key) {
                let dst = store.get_mut(id);
                if t.shape == dst.shape() {
                    for (d, &s) in dst.data_mut().iter_mut().zip(&t.data) {
                        *d = S::of(s);
                    }
                }
            }
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            tensors.push(ManifestEntry { name: name.clone(), shape: t.shape.clone(), kind: t.kind, offset, len: t.data.len() });
            offset += t.data.len();
        }
        let manifest = Manifest { format_version: FORMAT_VERSION, dtype: self.dtype, tensors, metadata: self.metadata.clone() };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset * self.dtype.width());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            match self.dtype {
                Dtype::F32 => t.data.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
                Dtype::F64 => t.data.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: String| Error::data(format!("{}: corrupt checkpoint: {m}", origin.display()));
        if bytes.len() < 16 || bytes[..8] != MAGIC {
            return Err(bad("missing FUSNCKPT header".into()));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if mlen > body.len() {
            return Err(bad(format!("manifest length {mlen} exceeds file size")));
        }
        let manifest: Manifest =
            serde_json::from_slice(&body[..mlen]).map_err(|e| bad(format!("manifest does not parse: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(bad(format!("format version {} (expected {FORMAT_VERSION})", manifest.format_version)));
        }
        let payload = &body[mlen..];
        let width = manifest.dtype.width();
        if payload.len() % width != 0 {
            return Err(bad(format!("payload of {} bytes is not a whole number of values", payload.len())));
        }
        let count = payload.len() / width;
        let declared: usize = manifest.tensors.iter().map(|t| t.len).sum();
        if declared != count {
            return Err(bad(format!("manifest declares {declared} values, payload holds {count}")));
        }
        let value = |i: usize| -> f64 {
            let b = &payload[i * width..(i + 1) * width];
            match manifest.dtype {
                Dtype::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
                Dtype::F64 => f64::from_le_bytes(b.try_into().unwrap()),
            }
        };
        let mut archive = Archive::new(manifest.dtype);
        archive.metadata = manifest.metadata;
        for e in manifest.tensors {
            if e.offset.checked_add(e.len).is_none_or(|end| end > count) {
                return Err(bad(format!("tensor {} points outside the payload", e.name)));
            }
            let data = (e.offset..e.offset + e.len).map(value).collect();
            archive.push(&e.name, &e.shape, e.kind, data).map_err(|err| bad(err.to_string()))?;
        }
        Ok(archive)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // Write-then-rename so an interrupted save never leaves a torn archive.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).at(&tmp)?;
        std::fs::rename(&tmp, path).at(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }
}

/// Tensor view of an archived entry.
pub fn to_tensor<S: Real>(t: &ArchiveTensor) -> Result<Tensor<S>> {
    Ok(Tensor::from_vec(&t.shape, t.data.iter().map(|&v| S::of(v)).collect())?)
}
