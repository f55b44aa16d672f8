use std::io::{Read, Write};

use crate::autograd::{read_tensors, write_tensors, CheckpointError, DType, NamedTensor, ParamStore, Tensor};

pub const RHO: f64 = 0.95;
pub const EPSILON: f64 = 1e-6;

/// Adadelta with running averages of squared gradients and squared updates.
/// The learning rate scales the applied step only; the update accumulator
/// tracks the unscaled step.
#[derive(Clone, Debug, PartialEq)]
pub struct Adadelta {
    pub rho: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub sq_grad: Vec<Tensor>,
    pub sq_update: Vec<Tensor>,
}

#[derive(Debug, thiserror::Error)]
pub enum OptimizerError {
    #[error("optimizer tracks {expected} parameters but store has {found}")]
    Count { expected: usize, found: usize },
    #[error("parameter `{name}` shape {found} does not match accumulator {expected}")]
    Shape { name: String, expected: String, found: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl Adadelta {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Adadelta {
            rho: RHO,
            epsilon: EPSILON,
            learning_rate,
            sq_grad: zeros.clone(),
            sq_update: zeros,
        }
    }

    fn check(&self, store: &ParamStore) -> Result<(), OptimizerError> {
        if self.sq_grad.len() != store.len() {
            return Err(OptimizerError::Count {
                expected: self.sq_grad.len(),
                found: store.len(),
            });
        }
        for ((_, p), acc) in store.iter().zip(&self.sq_grad) {
            if p.value.shape() != acc.shape() || p.grad.shape() != acc.shape() {
                return Err(OptimizerError::Shape {
                    name: p.name.clone(),
                    expected: acc.shape().to_string(),
                    found: p.value.shape().to_string(),
                });
            }
        }
        Ok(())
    }

    /// Applies one update from the gradients held in `store`. Frozen
    /// parameters are skipped entirely.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), OptimizerError> {
        self.check(store)?;
        let (rho, eps, lr) = (self.rho, self.epsilon, self.learning_rate);
        for ((p, eg), ex) in store.iter_mut().zip(&mut self.sq_grad).zip(&mut self.sq_update) {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for (((w, &g), a), u) in value.iter_mut().zip(grad).zip(eg.data_mut()).zip(ex.data_mut()) {
                *a = rho * *a + (1.0 - rho) * g * g;
                let delta = (*u + eps).sqrt() / (*a + eps).sqrt() * g;
                *u = rho * *u + (1.0 - rho) * delta * delta;
                *w -= lr * delta;
            }
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, w: W, store: &ParamStore) -> Result<(), OptimizerError> {
        self.check(store)?;
        let mut named = Vec::with_capacity(2 * store.len());
        for ((_, p), (g, u)) in store.iter().zip(self.sq_grad.iter().zip(&self.sq_update)) {
            for (suffix, t) in [("sq_grad", g), ("sq_update", u)] {
                named.push(NamedTensor {
                    name: format!("{}.{suffix}", p.name),
                    tensor: t.clone(),
                    trainable: false,
                    decay: false,
                });
            }
        }
        write_tensors(w, &named, DType::F64)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R, store: &ParamStore, learning_rate: f64) -> Result<Self, OptimizerError> {
        let mut by_name: std::collections::HashMap<String, Tensor> =
            read_tensors(r)?.into_iter().map(|t| (t.name, t.tensor)).collect();
        let mut opt = Adadelta::new(store, learning_rate);
        for (i, (_, p)) in store.iter().enumerate() {
            for (suffix, slot) in [("sq_grad", &mut opt.sq_grad[i]), ("sq_update", &mut opt.sq_update[i])] {
                let name = format!("{}.{suffix}", p.name);
                let t = by_name.remove(&name).ok_or(CheckpointError::Missing(name))?;
                if t.shape() != slot.shape() {
                    return Err(OptimizerError::Shape {
                        name: p.name.clone(),
                        expected: slot.shape().to_string(),
                        found: t.shape().to_string(),
                    });
                }
                *slot = t;
            }
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64], trainable: bool) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::row_vector(values.to_vec()), trainable, true).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store_with(&[0.5, -1.0], true);
        let mut opt = Adadelta::new(&s, 0.5);
        opt.step(&mut s).unwrap();
        assert_eq!(s.value(s.id("w").unwrap()).data(), &[0.5, -1.0]);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let mut s = store_with(&[1.0, 1.0], true);
        let id = s.id("w").unwrap();
        s.get_mut(id).grad = Tensor::row_vector(vec![0.2, -3.0]);
        let mut opt = Adadelta::new(&s, 0.5);
        opt.step(&mut s).unwrap();
        for (i, g) in [0.2f64, -3.0].into_iter().enumerate() {
            let expect = 1.0 - 0.5 * 1e-6f64.sqrt() / (0.05 * g * g + 1e-6).sqrt() * g;
            assert!((s.value(id).data()[i] - expect).abs() < 1e-15);
            let delta = 1e-6f64.sqrt() / (0.05 * g * g + 1e-6).sqrt() * g;
            assert!((opt.sq_update[0].data()[i] - 0.05 * delta * delta).abs() < 1e-18);
        }
    }

    #[test]
    fn frozen_parameters_untouched() {
        let mut s = store_with(&[0.3], false);
        let id = s.id("w").unwrap();
        s.get_mut(id).grad = Tensor::row_vector(vec![10.0]);
        let mut opt = Adadelta::new(&s, 1.0);
        opt.step(&mut s).unwrap();
        assert_eq!(s.value(id).data(), &[0.3]);
        assert_eq!(opt.sq_grad[0].data(), &[0.0]);
    }

    #[test]
    fn state_round_trip_and_shape_errors() {
        let mut s = store_with(&[1.0, 2.0], true);
        let id = s.id("w").unwrap();
        s.get_mut(id).grad = Tensor::row_vector(vec![0.1, 0.4]);
        let mut opt = Adadelta::new(&s, 0.2);
        opt.step(&mut s).unwrap();
        let mut buf = Vec::new();
        opt.save(&mut buf, &s).unwrap();
        assert_eq!(Adadelta::load(buf.as_slice(), &s, 0.2).unwrap(), opt);
        let other = store_with(&[1.0], true);
        assert!(Adadelta::load(buf.as_slice(), &other, 0.2).is_err());
        assert!(opt.clone().step(&mut store_with(&[1.0, 2.0, 3.0], true)).is_err());
    }
}
