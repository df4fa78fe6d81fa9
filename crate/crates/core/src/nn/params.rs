use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::Rng as _;

use crate::io::container::{DType, NamedTensor};
use crate::rng::Rng;
use crate::{Error, Result};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(i: usize) -> Self {
        Self(i)
    }
}

/// Named, ordered collection of learnable matrices.
///
/// Every store carries a process-unique id so a [`super::Graph`] can bind
/// parameters from several stores and freeze some of them.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    lookup: HashMap<String, usize>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.clone(),
            lookup: self.lookup.clone(),
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.lookup.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn to_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| NamedTensor::from_array2(format!("{prefix}{n}"), v))
            .collect()
    }

    /// Overwrites every parameter from `tensors` (looked up as `prefix + name`).
    pub fn load_tensors(&mut self, prefix: &str, tensors: &[NamedTensor]) -> Result<()> {
        let by_name: HashMap<&str, &NamedTensor> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let key = format!("{prefix}{name}");
            let t = by_name
                .get(key.as_str())
                .ok_or_else(|| Error::Format(format!("missing tensor {key}")))?;
            if t.dtype != DType::F64 && t.dtype != DType::F32 {
                return Err(Error::Format(format!("tensor {key} is not floating point")));
            }
            let arr = t.to_array2()?;
            if arr.dim() != value.dim() {
                return Err(Error::shape(format!(
                    "tensor {key}: stored {:?}, expected {:?}",
                    arr.dim(),
                    value.dim()
                )));
            }
            *value = arr;
        }
        Ok(())
    }
}

/// Glorot-uniform initialisation.
pub fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit))
}

pub fn uniform(rng: &mut Rng, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}
