//! Binary parameter container.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header
//! (seed, config echo, tensor names and shapes, blob sizes), then every
//! tensor payload as little-endian `f64` in header order, then the blobs in
//! header order. Values round-trip bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HMTCKPT1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
    /// Free-form text payloads (vocabularies, language models).
    pub blobs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    config: BTreeMap<String, String>,
    tensors: Vec<TensorHeader>,
    blobs: Vec<(String, usize)>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>, seed: u64) -> Self {
        let tensors = store
            .iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.values().iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        Checkpoint {
            seed,
            tensors,
            ..Default::default()
        }
    }

    pub fn to_store<T: Scalar>(&self) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for t in &self.tensors {
            let values = t.values.iter().map(|&v| T::of(v)).collect();
            store.insert(&t.name, Tensor::new(t.shape.clone(), values)?)?;
        }
        Ok(store)
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            seed: self.seed,
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorHeader {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
            blobs: self
                .blobs
                .iter()
                .map(|(k, v)| (k.clone(), v.len()))
                .collect(),
        };
        let head = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + head.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(head.len() as u64).to_le_bytes());
        out.extend_from_slice(&head);
        for t in &self.tensors {
            if t.values.len() != t.shape.iter().product::<usize>() {
                return Err(Error::shape("checkpoint", &t.shape, &[t.values.len()]));
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for v in self.blobs.values() {
            out.extend_from_slice(v.as_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
        let head = body.get(..hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(head)?;
        let mut pos = hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for th in header.tensors {
            let n: usize = th.shape.iter().product();
            let raw = body
                .get(pos..pos + 8 * n)
                .ok_or_else(|| bad("truncated tensor payload"))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos += 8 * n;
            tensors.push(NamedTensor {
                name: th.name,
                shape: th.shape,
                values,
            });
        }
        let mut blobs = BTreeMap::new();
        for (name, len) in header.blobs {
            let raw = body
                .get(pos..pos + len)
                .ok_or_else(|| bad("truncated blob"))?;
            let text = String::from_utf8(raw.to_vec()).map_err(|_| bad("blob is not UTF-8"))?;
            blobs.insert(name, text);
            pos += len;
        }
        if pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint {
            seed: header.seed,
            config: header.config,
            tensors,
            blobs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
