//! Named parameter collections and their on-disk container.
//!
//! Byte layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "RDPGPSET"
//! version    u32      = 1
//! n_meta     u32
//!   key      u32 length + UTF-8 bytes
//!   value    u32 length + UTF-8 bytes
//! n_params   u32
//!   name     u32 length + UTF-8 bytes
//!   ndim     u32
//!   dims     u64 * ndim
//!   payload  f64 * product(dims)
//! ```
//!
//! Metadata is written in key order and parameters in insertion order, so a
//! round trip reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use indexmap::IndexMap;

use super::array::Array;
use crate::codec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RDPGPSET";
const VERSION: u32 = 1;
const MAX_DIMS: u32 = 8;
const MAX_ELEMS: u64 = 1 << 32;

/// Position of a parameter inside the [`ParamSet`] it was registered in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat, ordered map from parameter name to array, plus free-form metadata.
///
/// Gradient maps use the same type: one array per parameter, same names and
/// shapes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: IndexMap<String, Array>,
    meta: BTreeMap<String, String>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> Result<ParamId> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name:?}")));
        }
        let (idx, _) = self.params.insert_full(name, value);
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array> {
        self.params.get(name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.values().map(Array::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn arrays(&self) -> impl Iterator<Item = &Array> {
        self.params.values()
    }

    pub fn arrays_mut(&mut self) -> impl Iterator<Item = &mut Array> {
        self.params.values_mut()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    /// Same names and shapes, all zeros, no metadata.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Array::zeros(v.shape())))
                .collect(),
            meta: BTreeMap::new(),
        }
    }

    /// Errors unless `other` has exactly the same names, order and shapes.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::config(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for ((na, a), (nb, b)) in self.params.iter().zip(&other.params) {
            if na != nb {
                return Err(Error::config(format!("parameter name mismatch: {na:?} vs {nb:?}")));
            }
            if a.shape() != b.shape() {
                return Err(Error::config(format!(
                    "shape mismatch for {na:?}: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Array::is_finite)
    }

    pub fn l2_norm(&self) -> f64 {
        self.params.values().map(Array::sum_squares).sum::<f64>().sqrt()
    }

    /// `self += k * other`; shapes must already be compatible.
    pub fn add_scaled(&mut self, other: &ParamSet, k: f64) {
        for (a, b) in self.params.values_mut().zip(other.params.values()) {
            a.add_scaled(b, k);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.params.values_mut().for_each(|a| a.scale(k));
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.l2_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// First parameter holding a non-finite value, for diagnostics.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(k, _)| k.as_str())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_magic(w, MAGIC, VERSION)?;
        codec::write_u32(w, self.meta.len() as u32)?;
        for (k, v) in &self.meta {
            codec::write_str(w, k)?;
            codec::write_str(w, v)?;
        }
        codec::write_u32(w, self.params.len() as u32)?;
        for (name, arr) in &self.params {
            codec::write_str(w, name)?;
            codec::write_u32(w, arr.shape().len() as u32)?;
            for &d in arr.shape() {
                codec::write_u64(w, d as u64)?;
            }
            codec::write_f64s(w, arr.data())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        const WHAT: &str = "parameter set";
        codec::read_magic(r, MAGIC, WHAT, VERSION)?;
        let mut set = ParamSet::new();
        let n_meta = codec::read_u32(r)?;
        for _ in 0..n_meta {
            let k = codec::read_str(r, WHAT)?;
            let v = codec::read_str(r, WHAT)?;
            set.meta.insert(k, v);
        }
        let n = codec::read_u32(r)?;
        for _ in 0..n {
            let name = codec::read_str(r, WHAT)?;
            let ndim = codec::read_u32(r)?;
            if ndim == 0 || ndim > MAX_DIMS {
                return Err(Error::format(WHAT, format!("{name}: bad rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim as usize);
            let mut elems: u64 = 1;
            for _ in 0..ndim {
                let d = codec::read_u64(r)?;
                elems = elems.saturating_mul(d);
                shape.push(d as usize);
            }
            if elems == 0 || elems > MAX_ELEMS {
                return Err(Error::format(WHAT, format!("{name}: bad shape {shape:?}")));
            }
            let data = codec::read_f64s(r, elems as usize)?;
            let arr = Array::from_vec(&shape, data)
                .map_err(|e| Error::format(WHAT, e.to_string()))?;
            set.insert(name, arr)
                .map_err(|e| Error::format(WHAT, e.to_string()))?;
        }
        Ok(set)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }
}
