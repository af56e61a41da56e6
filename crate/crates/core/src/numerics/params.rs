//! Named parameters with gradient accumulators.

use std::collections::HashMap;

use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Which training stage owns a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// The grounding-free denoiser: projections, time embedding, self- and
    /// cross-attention, normalization, resampling.
    Backbone,
    /// Grounded-feature encoder, its temporal attention, null embeddings and
    /// the grounding attention of every block.
    Grounding,
    /// Frame temporal attention.
    Temporal,
    /// Dynamic gate network.
    Gate,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
    pub grad: Tensor,
    pub group: ParamGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

/// How a fresh parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// `N(0, std^2)`
    Normal(f64),
    /// `N(0, 1 / fan_in)` using the first dimension as fan-in.
    FanIn,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        group: ParamGroup,
        rng: &mut RngStream,
    ) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let tensor = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, 1.0),
            Init::Constant(c) => Tensor::full(shape, c),
            Init::Normal(std) => Tensor::from_fn(shape, |_| std * rng.normal()),
            Init::FanIn => {
                let std = 1.0 / (shape[0].max(1) as f64).sqrt();
                Tensor::from_fn(shape, |_| std * rng.normal())
            }
        };
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id.0);
        self.params.push(Parameter {
            name,
            grad: Tensor::zeros(shape),
            tensor,
            trainable: true,
            group,
        });
        id
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        self.params[id.0].grad.add_assign(grad);
    }

    pub fn accumulate_slice(&mut self, id: ParamId, grad: &[f64]) {
        let g = self.params[id.0].grad.data_mut();
        assert_eq!(g.len(), grad.len());
        for (a, b) in g.iter_mut().zip(grad) {
            *a += b;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_size(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Parameter names in lexicographic order.
    pub fn sorted_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        names
    }

    /// Overwrites a parameter value, checking the shape.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::GvckFormat(format!("unknown parameter `{name}`")))?;
        let p = &mut self.params[i];
        if p.tensor.shape() != tensor.shape() {
            return Err(Error::GvckFormat(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                p.tensor.shape(),
                tensor.shape()
            )));
        }
        p.tensor = tensor;
        Ok(())
    }

    /// Plain SGD over trainable parameters: `theta -= lr * grad`.
    pub fn sgd_step(&mut self, lr: f64) {
        for p in &mut self.params {
            if p.trainable {
                p.tensor.axpy(-lr, &p.grad);
            }
        }
    }
}
