use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use sha2::{Digest, Sha256};

use crate::{ModelError, Result};
use occdiff_core::{seeded_rng, SeededRng};

/// Named trainable tensors, ordered by name.
///
/// Initial values come from a seeded ChaCha stream rather than the backend
/// generator so that a seed fully determines a model.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType, device: Device) -> Self {
        ParamStore { vars: BTreeMap::new(), dtype, device }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Variables whose name starts with `prefix`, in name order.
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.vars.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, v)| v.clone()).collect()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    fn insert(&mut self, name: String, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(ModelError::InvalidArgument(format!("parameter {name} declared twice")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(out)
    }

    /// Flattened values of one parameter as `f32`.
    pub fn values_f32(&self, name: &str) -> Result<Vec<f32>> {
        let v = self.vars.get(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        Ok(v.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1()?)
    }

    /// Overwrites a parameter in place; shapes must agree.
    pub fn assign(&self, name: &str, values: &[f32], shape: &[usize]) -> Result<()> {
        let v = self.vars.get(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        if v.dims() != shape {
            return Err(ModelError::Shape(format!("{name}: stored {:?}, given {:?}", v.dims(), shape)));
        }
        let t = Tensor::from_slice(values, shape, &self.device)?.to_dtype(self.dtype)?;
        v.set(&t)?;
        Ok(())
    }

    /// Flattened values of one parameter as `f64`.
    pub fn values_f64(&self, name: &str) -> Result<Vec<f64>> {
        let v = self.vars.get(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        Ok(v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?)
    }

    /// Overwrites a parameter in place from `f64` values.
    pub fn assign_f64(&self, name: &str, values: &[f64]) -> Result<()> {
        let v = self.vars.get(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        let t = Tensor::from_slice(values, v.dims(), &self.device)?.to_dtype(self.dtype)?;
        v.set(&t)?;
        Ok(())
    }

    /// SHA-256 over names, shapes and little-endian `f32` values of every
    /// parameter under `prefix`.
    pub fn hash_prefix(&self, prefix: &str) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in self.vars.iter().filter(|(k, _)| k.starts_with(prefix)) {
            h.update(name.as_bytes());
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in self.values_f32(name)? {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// Hands out freshly initialized parameters under a name prefix.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: SeededRng,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Init { store, rng: seeded_rng(seed) }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> Device {
        self.store.device.clone()
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = if bound > 0.0 {
            let d = Uniform::new_inclusive(-bound, bound).map_err(|e| ModelError::InvalidArgument(e.to_string()))?;
            (0..n).map(|_| d.sample(&mut self.rng)).collect()
        } else {
            vec![0.0; n]
        };
        self.store.insert(name.to_string(), values, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.store.insert(name.to_string(), vec![value; n], shape)
    }

    /// Normal with standard deviation `std`.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| std * self.rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        self.store.insert(name.to_string(), values, shape)
    }
}
