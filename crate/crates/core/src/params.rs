//! Named parameter collections and their binding onto a graph.

use std::collections::BTreeMap;
use std::path::Path;

use crate::archive::{Archive, Payload};
use crate::autodiff::{Grads, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters keyed by name, iterated in sorted order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn bind(&self, g: &Graph) -> Result<BoundParams> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| Ok((k.clone(), g.leaf(t.clone())?)))
            .collect::<Result<_>>()?;
        Ok(BoundParams { vars })
    }

    /// Double-precision archive; `meta` entries are stored as raw bytes.
    pub fn to_archive(&self, meta: &[(&str, &str)]) -> Result<Archive> {
        let mut a = Archive::new();
        for (k, v) in meta {
            a.push_bytes(format!("meta.{k}"), v.as_bytes().to_vec())?;
        }
        for (name, t) in &self.tensors {
            a.push(name.clone(), t.shape().to_vec(), Payload::F64(t.data().to_vec()))?;
        }
        Ok(a)
    }

    /// Single-precision archive of the same tensors.
    pub fn to_f32_archive(&self) -> Result<Archive> {
        let mut a = Archive::new();
        for (name, t) in &self.tensors {
            let vals = t.data().iter().map(|&v| v as f32).collect();
            a.push(name.clone(), t.shape().to_vec(), Payload::F32(vals))?;
        }
        Ok(a)
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let mut store = Self::new();
        for e in &a.entries {
            let data = match &e.payload {
                Payload::F64(v) => v.clone(),
                Payload::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
                Payload::Bytes(_) => continue,
                Payload::I8 { .. } => {
                    return Err(Error::Format(format!("{} is quantized; load it through the quant module", e.name)))
                }
            };
            store.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &[(&str, &str)]) -> Result<()> {
        self.to_archive(meta)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

/// Graph handles for every parameter of a [`ParamStore`].
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
    }

    /// Gradients for every bound parameter (zeros where nothing flowed).
    pub fn gradients(&self, g: &Graph, grads: &Grads) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .map(|(k, &v)| (k.clone(), grads.get_or_zeros(v, g.value(v).len())))
            .collect()
    }
}
