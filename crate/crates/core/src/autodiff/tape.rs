use alloc::rc::Rc;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Denominator guard for cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    ConcatCols(usize, usize),
    Sigmoid(usize),
    Relu(usize),
    Abs(usize),
    SquaredError(usize, usize),
    Sum(usize),
    Mean(usize),
    SegmentSum(usize, Rc<[usize]>),
    SegmentMean(usize, Rc<[usize]>),
    GatherRows(usize, Rc<[usize]>),
    Aggregate(usize, Rc<[(usize, usize)]>),
    L2NormRows(usize),
    CosineRows(usize, usize),
    BceWithLogits {
        logits: usize,
        targets: Rc<Tensor>,
        mask: Rc<Tensor>,
        count: f64,
    },
    StraightThrough(usize),
}

impl Op {
    fn inputs(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MatMul(a, b)
            | ConcatCols(a, b) | SquaredError(a, b) | CosineRows(a, b) => [Some(a), Some(b)],
            Scale(a, _) | AddScalar(a) | Sigmoid(a) | Relu(a) | Abs(a) | Sum(a) | Mean(a)
            | SegmentSum(a, _) | SegmentMean(a, _) | GatherRows(a, _) | Aggregate(a, _)
            | L2NormRows(a) | StraightThrough(a) => [Some(a), None],
            BceWithLogits { logits, .. } => [Some(logits), None],
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Rc<Tensor>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Ordered record of a forward computation.
///
/// Node ids are assigned in creation order, so every operation's inputs
/// precede it and the reverse id order is a valid topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value().shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Records `value` produced by `op`. Operations whose inputs carry no
    /// gradient are stored as plain leaves.
    pub(crate) fn record(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = op.inputs().iter().flatten().any(|&i| self.requires_grad(i));
        let op = if requires_grad { op } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn backward_from(&self, root: usize) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root];
        if !root_node.value.is_scalar() {
            return Err(contract("backward requires a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(root + 1, || None);
        if root_node.requires_grad {
            grads[root] = Some(Tensor::full(root_node.value.shape(), 1.0));
        }
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            super::ops::propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of one scalar with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub fn shape(&self) -> alloc::vec::Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a one-element variable.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// Reverse pass from this scalar.
    pub fn backward(&self) -> Result<Gradients> {
        self.tape.backward_from(self.id)
    }
}
