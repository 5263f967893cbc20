use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const LOGIT_SCALE: &str = "logit_scale";
pub const PROMPT_PREFIX: &str = "prompt.";

/// Named, shaped parameter arrays for both towers, prompt banks and the
/// logit scale. Names are unique and shapes never change after insertion.
#[derive(Debug)]
pub struct ParameterStore {
    entries: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParameterStore {
    pub fn new(dtype: DType, device: Device) -> Self {
        Self {
            entries: BTreeMap::new(),
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let value = value.to_dtype(self.dtype)?;
        self.entries.insert(name, Var::from_tensor(&value)?);
        Ok(())
    }

    pub fn insert_values(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> Result<()> {
        let t = Tensor::from_vec(values, shape, &self.device)?;
        self.insert(name, t)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn var(&self, name: &str) -> Result<&Var> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        Ok(self.var(name)?.as_tensor().clone())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_prompts(&self) -> bool {
        self.names().any(|n| n.starts_with(PROMPT_PREFIX))
    }

    /// Total number of scalar entries across the named arrays.
    pub fn numel<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<usize> {
        names
            .into_iter()
            .map(|n| Ok(self.var(n)?.elem_count()))
            .sum()
    }

    /// Replace a parameter's value, keeping its shape.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self.var(name)?;
        if var.dims() != value.dims() {
            return Err(Error::shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Flattened f64 copy of a parameter.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self
            .var(name)?
            .as_tensor()
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?)
    }

    /// Deep copy with fresh storage; training the copy leaves `self` untouched.
    pub fn deep_clone(&self) -> Result<Self> {
        self.to_dtype(self.dtype)
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        let mut out = ParameterStore::new(dtype, self.device.clone());
        for (name, var) in &self.entries {
            let t = var.as_tensor().to_dtype(dtype)?.copy()?;
            out.entries.insert(name.clone(), Var::from_tensor(&t)?);
        }
        Ok(out)
    }

    /// Flattened f32 payload of every entry, used for bitwise comparisons.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        self.entries
            .iter()
            .map(|(n, v)| {
                let vals = v.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
                Ok((n.clone(), vals))
            })
            .collect()
    }
}

/// Normal(0, std) truncated at two standard deviations.
pub(crate) fn trunc_normal(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("std is finite and positive");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 2.0 * std {
            out.push(x);
        }
    }
    out
}

pub(crate) fn normal(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, std).expect("std is finite and non-negative");
    (0..n).map(|_| normal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParameterStore::new(DType::F32, Device::Cpu);
        store.insert_values("a", &[2], vec![1.0, 2.0]).unwrap();
        let err = store.insert_values("a", &[2], vec![1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::DuplicateParameter(n) if n == "a"));
    }

    #[test]
    fn set_keeps_shape() {
        let mut store = ParameterStore::new(DType::F32, Device::Cpu);
        store.insert_values("a", &[2], vec![1.0, 2.0]).unwrap();
        let bad = Tensor::zeros(3, DType::F32, &Device::Cpu).unwrap();
        assert!(store.set("a", &bad).is_err());
    }

    #[test]
    fn deep_clone_is_independent() {
        let mut store = ParameterStore::new(DType::F32, Device::Cpu);
        store.insert_values("a", &[2], vec![1.0, 2.0]).unwrap();
        let copy = store.deep_clone().unwrap();
        let z = Tensor::zeros(2, DType::F32, &Device::Cpu).unwrap();
        copy.set("a", &z).unwrap();
        assert_eq!(store.values("a").unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn trunc_normal_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = trunc_normal(&mut rng, 5000, 0.02);
        assert!(xs.iter().all(|x| x.abs() <= 0.04));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 2e-3);
    }
}
