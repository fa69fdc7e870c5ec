use std::collections::HashMap;

use rand::Rng;

use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable arrays with fixed shapes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "parameter `{name}` has non-finite values"
            )));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Adds a `rows x cols` array drawn from uniform(-a, a) with
    /// `a = sqrt(6 / (rows + cols))`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces an array's values, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = &self.values[id.0];
        if cur.shape() != value.shape() {
            return Err(Error::Config(format!(
                "shape mismatch for `{}`: {:?} vs {:?}",
                self.names[id.0],
                cur.shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }

    /// `name=norm` pairs, used in diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.iter()
            .map(|(_, n, v)| (n.to_string(), v.norm()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique() {
        let mut s = ParameterStore::new();
        s.add("w", Tensor::zeros(2, 2)).unwrap();
        assert!(s.add("w", Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn uniform_init_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParameterStore::new();
        let id = s.add_uniform("w", 10, 6, &mut rng).unwrap();
        let a = (6.0f64 / 16.0).sqrt();
        assert!(s.get(id).data().iter().all(|v| v.abs() < a));
    }

    #[test]
    fn set_checks_shape() {
        let mut s = ParameterStore::new();
        let id = s.add("b", Tensor::zeros(1, 3)).unwrap();
        assert!(s.set(id, Tensor::zeros(3, 1)).is_err());
        s.set(id, Tensor::row(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(s.by_name("b").unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn rejects_non_finite() {
        let mut s = ParameterStore::new();
        assert!(s.add("x", Tensor::scalar(f64::NAN)).is_err());
    }
}
