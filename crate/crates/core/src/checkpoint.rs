//! Binary checkpoint archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic  b"MIDFRAME"
//! u32    format version
//! u64    metadata length, then that many bytes of UTF-8 TOML
//! u64    tensor count
//! per tensor:
//!   u32 name length, name bytes
//!   u32 rank, u64 per dimension
//!   f64 per element
//! ```
//!
//! The metadata always carries the architecture under `[arch]`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::layers::{Discriminator, ModelParameters, Parameterized};
use crate::pyramid::Generator;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MIDFRAME";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl StoredTensor {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self { shape: t.shape().to_vec(), data: t.to_vec() }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub meta: String,
    pub tensors: BTreeMap<String, StoredTensor>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("unexpected end of checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, limit: usize) -> Result<usize> {
        let n = self.u64()?;
        if n > limit as u64 {
            return Err(Error::Checkpoint(format!("length {n} exceeds remaining data")));
        }
        Ok(n as usize)
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

impl Archive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u64).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let n = r.len(buf.len())?;
        let meta = r.string(n)?;
        let count = r.len(buf.len())?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = r.string(n)?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len(buf.len())).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let bytes = r.take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            if tensors.insert(name.clone(), StoredTensor { shape, data }).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn insert_params(&mut self, prefix: &str, params: &ModelParameters) {
        for (k, t) in params {
            self.tensors.insert(format!("{prefix}.{k}"), StoredTensor::from_tensor(t));
        }
    }

    /// Tensors under `prefix.`, with the prefix stripped.
    pub fn params(&self, prefix: &str) -> Result<ModelParameters> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(&p).map(|n| (n, t)))
            .map(|(n, t)| Ok((n.to_string(), Tensor::new(&t.shape, t.data.clone())?)))
            .collect()
    }

    pub fn vectors(&self, prefix: &str) -> BTreeMap<String, Vec<f64>> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(&p).map(|n| (n.to_string(), t.data.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    arch: ArchitectureSpec,
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Field-by-field differences between two architecture descriptions.
pub fn spec_diff(expected: &ArchitectureSpec, found: &ArchitectureSpec) -> Vec<String> {
    let flat = |s: &ArchitectureSpec| {
        let mut m = BTreeMap::new();
        if let Ok(v) = toml::Value::try_from(s) {
            flatten("", &v, &mut m);
        }
        m
    };
    let (a, b) = (flat(expected), flat(found));
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let none = "(unset)".to_string();
    keys.into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| format!("{k}: expected {}, found {}", a.get(k).unwrap_or(&none), b.get(k).unwrap_or(&none)))
        .collect()
}

/// Writes generator weights (and discriminator weights and statistics when given).
pub fn save_model(path: impl AsRef<Path>, generator: &Generator, discriminator: Option<&Discriminator>) -> Result<()> {
    let mut arch = generator.arch().clone();
    arch.discriminator = discriminator.map(|d| d.spec);
    let mut archive = Archive { meta: toml::to_string(&ModelMeta { arch })?, tensors: BTreeMap::new() };
    archive.insert_params("generator", &generator.parameters());
    if let Some(d) = discriminator {
        archive.insert_params("discriminator", &d.parameters());
        for (k, v) in d.buffers() {
            archive.tensors.insert(format!("discriminator_stats.{k}"), StoredTensor::vector(v));
        }
    }
    archive.save(path)
}

/// Architecture stored in a checkpoint's metadata.
pub fn read_arch(archive: &Archive) -> Result<ArchitectureSpec> {
    let meta: ModelMeta = toml::from_str(&archive.meta)
        .map_err(|e| Error::Checkpoint(format!("invalid checkpoint metadata: {e}")))?;
    meta.arch.validate()?;
    Ok(meta.arch)
}

/// Rebuilds a generator from an archive, checking every tensor against the
/// stored architecture.
pub fn generator_from_archive(archive: &Archive) -> Result<Generator> {
    let arch = read_arch(archive)?;
    let mut g = Generator::new(arch, 0)?;
    g.load_parameters(&archive.params("generator")?)
        .map_err(|e| Error::Checkpoint(format!("weights do not match the stored architecture: {e}")))?;
    Ok(g)
}

pub fn discriminator_from_archive(archive: &Archive) -> Result<Option<Discriminator>> {
    let Some(spec) = read_arch(archive)?.discriminator else {
        return Ok(None);
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut d = Discriminator::new(spec, &mut rng);
    d.load_parameters(&archive.params("discriminator")?)?;
    d.load_buffers(&archive.vectors("discriminator_stats"))?;
    Ok(Some(d))
}

/// Loads a generator; when `expected` is given, any architecture difference
/// is reported as a field-by-field diff.
pub fn load_generator(path: impl AsRef<Path>, expected: Option<&ArchitectureSpec>) -> Result<Generator> {
    let archive = Archive::load(path)?;
    if let Some(exp) = expected {
        let mut found = read_arch(&archive)?;
        found.discriminator = exp.discriminator;
        let diff = spec_diff(exp, &found);
        if !diff.is_empty() {
            return Err(Error::Checkpoint(format!("architecture mismatch:\n  {}", diff.join("\n  "))));
        }
    }
    generator_from_archive(&archive)
}
