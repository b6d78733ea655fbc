//! Named parameter collections.
//!
//! All trainable state lives in a [`Params`] map keyed by dotted paths
//! ("energy.unary", "infnet.encoder.fwd.w_ih", ...). Each forward pass binds
//! the current tensors onto a fresh tape; gradients come back keyed by the
//! same names. The map is ordered so iteration (and therefore optimizer state
//! and checkpoints) is deterministic.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Value};
use crate::tensor::Tensor;

const CHECKPOINT_MAGIC: &[u8; 8] = b"SPENCKP1";

#[derive(Clone, Debug, Default)]
pub struct Params {
    map: BTreeMap<String, Tensor>,
}

/// Tape leaves for one forward pass, keyed by parameter name.
pub struct BoundParams {
    values: BTreeMap<String, Value>,
}

impl Params {
    pub fn new() -> Self {
        Params { map: BTreeMap::new() }
    }

    /// Insert a trainable tensor.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t.with_grad());
    }

    /// Insert a tensor that is held fixed (no gradient).
    pub fn insert_fixed(&mut self, name: impl Into<String>, t: Tensor) {
        let mut t = t;
        t.set_requires_grad(false);
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters under an optional name prefix.
    pub fn count_scalars(&self, prefix: &str) -> usize {
        self.map
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Squared L2 norm of every tensor under a prefix.
    pub fn l2_norm_sq(&self, prefix: &str) -> f64 {
        self.map
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .flat_map(|(_, t)| t.data().iter())
            .map(|v| v * v)
            .sum()
    }

    /// Register every tensor as a tape leaf.
    pub fn bind(&self, tape: &Rc<Tape>) -> BoundParams {
        let values = self
            .map
            .iter()
            .map(|(k, t)| (k.clone(), tape.leaf(t)))
            .collect();
        BoundParams { values }
    }

    /// Register every tensor as a constant: no gradients flow to any
    /// parameter. Used when only some non-parameter input is optimized.
    pub fn bind_frozen(&self, tape: &Rc<Tape>) -> BoundParams {
        let values = self
            .map
            .iter()
            .map(|(k, t)| (k.clone(), tape.constant(t)))
            .collect();
        BoundParams { values }
    }

    /// Toggle gradient participation for every tensor under a prefix.
    pub fn set_grad_prefix(&mut self, prefix: &str, on: bool) {
        for (k, t) in self.map.iter_mut() {
            if k.starts_with(prefix) {
                t.set_requires_grad(on);
            }
        }
    }

    /// Clone with gradients enabled only under the given prefixes; per-
    /// instance fine-tuning uses this to keep the energy frozen.
    pub fn freeze_except(&self, prefixes: &[String]) -> Params {
        let map = self
            .map
            .iter()
            .map(|(k, t)| {
                let mut t = t.clone();
                let keep = t.requires_grad() && prefixes.iter().any(|p| k.starts_with(p.as_str()));
                t.set_requires_grad(keep);
                (k.clone(), t)
            })
            .collect();
        Params { map }
    }

    /// Write a checkpoint: a binary tensor dump plus a JSON manifest listing
    /// name -> shape. Values round-trip bit-exactly (little-endian f64 bits).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(self.map.len() as u64).to_le_bytes());
        for (name, t) in &self.map {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            buf.push(t.requires_grad() as u8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        std::fs::write(path, &buf)?;

        let manifest: BTreeMap<&str, &[usize]> = self
            .map
            .iter()
            .map(|(k, t)| (k.as_str(), t.shape()))
            .collect();
        let mpath = manifest_path(path);
        let mut f = std::fs::File::create(mpath)?;
        f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Params> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut cur = &buf[..];
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Format(format!("truncated checkpoint {path:?}")));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("{path:?} is not a checkpoint")));
        }
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let mut map = BTreeMap::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec())
                .map_err(|_| Error::Format("non-utf8 parameter name".into()))?;
            let ndim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
            }
            let grad = take(1)?[0] != 0;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_bits(u64::from_le_bytes(take(8)?.try_into().unwrap())));
            }
            let mut t = Tensor::new(shape, data);
            t.set_requires_grad(grad);
            map.insert(name, t);
        }
        Ok(Params { map })
    }
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".manifest.json");
    std::path::PathBuf::from(s)
}

impl BoundParams {
    pub fn get(&self, name: &str) -> &Value {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not bound"))
    }

    /// Per-parameter gradients; unused parameters receive zeros.
    pub fn grads(&self, g: &Gradients) -> BTreeMap<String, Tensor> {
        self.values
            .iter()
            .map(|(k, v)| (k.clone(), g.get(v)))
            .collect()
    }
}
