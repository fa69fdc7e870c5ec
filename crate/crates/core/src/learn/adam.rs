use super::{ParameterStore, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParameterStore) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Adam {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn adam_step(&mut self, store: &mut ParameterStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(Error::Config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powf(self.step as f64);
        let c2 = 1.0 - b2.powf(self.step as f64);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = &grads[i];
            if g.shape() != store.get(id).shape() {
                return Err(Error::Config(format!(
                    "gradient shape {:?} for `{}`",
                    g.shape(),
                    store.name(id)
                )));
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add("x", Tensor::scalar(x)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_no_op() {
        let mut s = scalar_store(1.5);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.adam_step(&mut s, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(s.by_name("x").unwrap().item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(0.0);
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg, &s);
        adam.adam_step(&mut s, &[Tensor::scalar(1.0)]).unwrap();
        let moved = -s.by_name("x").unwrap().item();
        assert!((moved - cfg.learning_rate / (1.0 + cfg.epsilon)).abs() < 1e-15);
    }

    #[test]
    fn minimises_square() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                ..AdamConfig::default()
            },
            &s,
        );
        for _ in 0..100 {
            let x = s.by_name("x").unwrap().item();
            adam.adam_step(&mut s, &[Tensor::scalar(2.0 * x)]).unwrap();
        }
        assert!(s.by_name("x").unwrap().item().abs() < 0.1);
    }
}
