use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Tensor;
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Normal with the given standard deviation.
    Normal(f64),
    /// He-uniform for a layer with the given fan-in.
    HeUniform { fan_in: usize },
    /// Glorot-uniform for the given fan-in/fan-out.
    GlorotUniform { fan_in: usize, fan_out: usize },
}

impl Init {
    fn sample<R: Rng>(self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Init::Zeros => vec![0.0; n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::HeUniform { fan_in } => {
                let limit = (6.0 / fan_in.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::GlorotUniform { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        }
    }
}

/// Owns every parameter of a model. Names are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value });
        Ok(id)
    }

    /// Adds a parameter initialized from `init`.
    pub fn add_init<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = shape.iter().product();
        let value = Tensor::new(shape, init.sample(n, rng))?;
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrites every weight with `value`.
    pub fn fill_all(&mut self, value: f64) {
        for p in &mut self.params {
            p.value.fill(value);
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`]. Backward passes add into it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStore {
    grads: Vec<Vec<f64>>,
}

impl GradStore {
    pub fn for_store(store: &ParamStore) -> Self {
        Self {
            grads: store.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[f64]) {
        for (a, g) in self.grads[id.0].iter_mut().zip(grad) {
            *a += g;
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Multiplies every gradient by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::new();
        store.add("a.w", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(
            store.add("a.w", Tensor::scalar(2.0)),
            Err(Error::Config(_))
        ));
        assert_eq!(store.id("a.w"), Some(ParamId(0)));
    }

    #[test]
    fn init_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let id = store
            .add_init("w", vec![8, 4], Init::HeUniform { fan_in: 4 }, &mut rng)
            .unwrap();
        let limit = (6.0f64 / 4.0).sqrt();
        assert!(store.value(id).data().iter().all(|v| v.abs() <= limit));
        assert_eq!(store.num_scalars(), 32);
    }
}
