use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{AutogradError, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Frozen parameters never receive gradients or updates.
    pub trainable: bool,
    /// Whether the L2 penalty applies (weight matrices yes, biases no).
    pub decay: bool,
}

/// Named, ordered parameter collection owned by a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        trainable: bool,
        decay: bool,
    ) -> Result<ParamId, AutogradError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutogradError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable,
            decay,
        });
        Ok(id)
    }

    /// Trainable weight matrix with Gaussian init.
    pub fn add_weight<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId, AutogradError> {
        let normal = Normal::new(0.0, std).map_err(|_| AutogradError::InvalidArgument("init std"))?;
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data)?, true, true)
    }

    /// Trainable zero-initialized bias row.
    pub fn add_bias(&mut self, name: impl Into<String>, cols: usize) -> Result<ParamId, AutogradError> {
        self.add(name, Tensor::zeros(1, cols), true, false)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Sum of squared entries over decayed trainable parameters.
    pub fn l2_norm_sq(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable && p.decay)
            .map(|p| p.value.data().iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().len()).sum()
    }
}
