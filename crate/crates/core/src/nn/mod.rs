//! Layer vocabulary: activations, convolutions, normalization,
//! squeeze-and-excitation and temporal self-attention.

mod activation;
mod attention;
mod conv;
mod norm;
mod se;

use rand::Rng;

pub use activation::{Activation, SELU_ALPHA, SELU_LAMBDA};
pub use attention::{AttentionConfig, TemporalAttention};
pub use conv::{Conv2d, ConvTranspose2d, Linear};
pub use norm::{BatchNorm2d, BnUpdate, GroupNorm, NormConfig, NormKind};
pub use se::{SeConfig, SqueezeExcite};

use crate::autodiff::{Graph, Var};
use crate::tensor::Tensor;

/// Whether normalization layers use batch statistics (and report running
/// statistic updates) or stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let id = ParamId(self.tensors.len());
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Records every parameter as a leaf of `g`. With `track` unset the leaves
    /// are constants, which is cheaper for pure inference.
    pub fn bind<'g>(&self, g: &'g Graph, track: bool) -> Bound<'g> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if track {
                    g.leaf(t)
                } else {
                    g.constant(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor")
                }
            })
            .collect();
        Bound { vars }
    }

    /// Adds the gradients of the bound leaves into the parameter tensors.
    pub fn accumulate_grads(&mut self, grads: &crate::autodiff::Gradients, bound: &Bound<'_>) -> crate::Result<()> {
        for (t, v) in self.tensors.iter_mut().zip(&bound.vars) {
            grads.accumulate_into(*v, t)?;
        }
        Ok(())
    }
}

/// Parameters of a [`ParamStore`] recorded in one graph.
pub struct Bound<'g> {
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    /// Wraps caller-built leaves, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var<'g>>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'g> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }
}

/// Kaiming-uniform weights with bound `sqrt(6 / fan_in)`.
pub fn kaiming_uniform<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
