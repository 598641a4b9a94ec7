use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::randn;

/// Named trainable tensors, ordered by name.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        ParamStore {
            dtype,
            vars: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        let var = Var::from_tensor(&value.to_dtype(self.dtype)?)?;
        if self.vars.insert(name.clone(), var).is_some() {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        Ok(())
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape, self.dtype, &Device::Cpu)?)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::ones(shape, self.dtype, &Device::Cpu)?)
    }

    pub fn normal<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) -> Result<()> {
        let t = (randn(rng, shape, self.dtype)? * std)?;
        self.insert(name, t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.vars
            .get(name)
            .map(|v| v.as_tensor())
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Replaces the value of an existing parameter, keeping its shape.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
        if var.dims() != value.dims() {
            return Err(Error::invalid(format!(
                "parameter {name} has shape {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Independent copy (fresh variables with the same values).
    pub fn deep_clone(&self) -> Result<Self> {
        let mut out = ParamStore::new(self.dtype);
        for (k, v) in &self.vars {
            out.insert(k.clone(), v.as_tensor().copy()?)?;
        }
        Ok(out)
    }

    /// Copy with every parameter cast to `dtype`.
    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let mut out = ParamStore::new(dtype);
        for (k, v) in &self.vars {
            out.insert(k.clone(), v.as_tensor().to_dtype(dtype)?)?;
        }
        Ok(out)
    }
}
