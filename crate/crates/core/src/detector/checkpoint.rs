//! Versioned binary checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MSDACKPT"
//! version  u32
//! config   u64 length + UTF-8 JSON snapshot of the run configuration
//! groups   u32 count, then per group:
//!            u32 length + group name
//!            u32 parameter count, then per parameter:
//!              u32 length + full parameter name
//!              u32 rank, rank x u64 dims
//!              f64 values
//! ```
//!
//! Groups and parameters are written in name order, so equal contents give
//! byte-identical files. Training checkpoints carry `backbone`, `neck`,
//! `head` and (for adapted runs) `dan`; inference exports omit `dan`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MSDACKPT";
pub const VERSION: u32 = 1;
pub const DETECTOR_GROUPS: [&str; 3] = ["backbone", "neck", "head"];
pub const DAN_GROUP: &str = "dan";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// JSON snapshot of the configuration that produced the parameters.
    pub config: String,
    pub params: ParamStore,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated archive: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::Checkpoint(format!("invalid UTF-8: {e}")))
    }
}

fn put_str32(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new(config: String, params: ParamStore) -> Self {
        Self { config, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        let groups = self.params.groups();
        out.extend_from_slice(&(groups.len() as u32).to_le_bytes());
        for group in &groups {
            put_str32(&mut out, group);
            let members = self.params.group(group);
            out.extend_from_slice(&(members.len() as u32).to_le_bytes());
            for (name, t) in members.iter() {
                put_str32(&mut out, name);
                out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint archive".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported archive version {version} (expected {VERSION})"
            )));
        }
        let config_len = r.u64()? as usize;
        let config = r.string(config_len)?;
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let glen = r.u32()? as usize;
            let group = r.string(glen)?;
            for _ in 0..r.u32()? {
                let nlen = r.u32()? as usize;
                let name = r.string(nlen)?;
                if crate::params::group_of(&name) != group {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{name}` stored under group `{group}`"
                    )));
                }
                let rank = r.u32()? as usize;
                let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let len: usize = shape.iter().product();
                let raw = r.take(len * 8)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                params.insert(name, Tensor::from_vec(&shape, data)?);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after archive",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn has_group(&self, group: &str) -> bool {
        self.params.iter().any(|(k, _)| crate::params::group_of(k) == group)
    }

    /// Fails with the first absent group.
    pub fn require_groups(&self, groups: &[&str]) -> Result<()> {
        match groups.iter().find(|g| !self.has_group(g)) {
            Some(g) => Err(Error::MissingGroup(g.to_string())),
            None => Ok(()),
        }
    }

    /// Backbone, neck, and head parameters only.
    pub fn detector_params(&self) -> Result<ParamStore> {
        self.require_groups(&DETECTOR_GROUPS)?;
        Ok(self.params.filter(|g| DETECTOR_GROUPS.contains(&g)))
    }

    /// A DAN-free archive for inference.
    pub fn export_inference(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            config: self.config.clone(),
            params: self.detector_params()?,
        })
    }
}
