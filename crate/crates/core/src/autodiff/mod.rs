//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only arena of nodes. Every op evaluates eagerly,
//! stores its result, and records the inputs it needs for the reverse sweep.
//! [`Var`] is a cheap copyable handle into one graph. Node ids increase in
//! creation order, so reverse id order is a valid reverse topological order.

mod kernels;
mod ops;

use std::cell::RefCell;

pub use kernels::{ConvGeom, NormLayout};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Unary {
    Neg,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Erf,
    Gelu,
    Elu(f64),
    Selu,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    /// x + constant (scalar or elementwise); gradient passes through.
    Shift(NodeId),
    MulConst(NodeId, Vec<f64>),
    Powf(NodeId, f64),
    Clamp(NodeId, f64, f64),
    Unary(NodeId, Unary),
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
    Permute(NodeId, Vec<usize>),
    Bmm(NodeId, NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Softmax(NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(NodeId),
    ChannelGate {
        x: NodeId,
        gate: NodeId,
    },
    ChannelAffine {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
    },
    Normalize {
        x: NodeId,
        layout: NormLayout,
        inv_std: Vec<f64>,
    },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Append-only computation graph. Not `Sync`: build and differentiate a
/// graph on one thread; use one graph per thread for parallel work.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. The leaf requires gradients when `tensor` does.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        let mut value = Tensor::new(tensor.shape().to_vec(), tensor.data().to_vec())
            .expect("tensor invariants already hold");
        let rg = tensor.requires_grad();
        value.set_requires_grad(false);
        self.push(value, rg, Op::Leaf)
    }

    /// Records a constant (never differentiated).
    pub fn constant(&self, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Var<'_>> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, false, Op::Leaf))
    }

    /// Records a differentiable leaf from raw data.
    pub fn variable(&self, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Var<'_>> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, true, Op::Leaf))
    }

    pub(crate) fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        // Constant subgraphs keep their value but drop saved state.
        let op = if requires_grad || matches!(op, Op::Leaf) {
            op
        } else {
            Op::Leaf
        };
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var { graph: self, id }
    }

    /// Reverse sweep from a scalar root. Returns the gradient of the root
    /// with respect to every leaf that requires gradients. Gradients of
    /// intermediate nodes are released during the sweep.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(self, root.graph), "root belongs to another graph");
        let nodes = self.nodes.borrow();
        let rnode = &nodes[root.id];
        if rnode.value.numel() != 1 {
            return Err(Error::NonScalarRoot(rnode.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        if rnode.requires_grad {
            grads[root.id] = Some(vec![1.0]);
        }
        for id in (0..=root.id).rev() {
            let Some(dy) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                grads[id] = Some(dy);
                continue;
            }
            ops::backward_node(&nodes, node, &dy, &mut grads);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; `None` when `v` does not
    /// require gradients or is unreachable from the root.
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `tensor`'s gradient buffer. Unreached
    /// parameters receive zeros so every trainable tensor ends up with a
    /// populated gradient.
    pub fn accumulate_into(&self, v: Var<'_>, tensor: &mut Tensor) -> Result<()> {
        match self.get(v) {
            Some(g) => tensor.accumulate_grad(g),
            None => tensor.accumulate_grad(&vec![0.0; tensor.numel()]),
        }
    }
}

/// Adds `g` into the gradient slot of `id`, allocating on first use.
pub(crate) fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    match grads[id].as_mut() {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => grads[id] = Some(g),
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.graph.nodes.borrow()[self.id].value.data().to_vec()
    }

    pub fn to_tensor(&self) -> Tensor {
        let nodes = self.graph.nodes.borrow();
        let v = &nodes[self.id].value;
        Tensor::new(v.shape().to_vec(), v.data().to_vec()).expect("node values are valid")
    }

    /// Value of a single-element node.
    pub fn item(&self) -> f64 {
        self.graph.nodes.borrow()[self.id].value.data()[0]
    }
}
