//! Wengert-style tape: every op appends a node holding its output value and
//! enough saved state to run its local backward rule. `backward` replays the
//! nodes in reverse order and leaves gradients on the leaves.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::{conv, elementwise, linalg, norm, shape};
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul(linalg::MatMulSaved),
    Binary { kind: elementwise::BinaryKind, a: Var, b: Var },
    Scale { a: Var, factor: T },
    Relu(Var),
    Gelu(Var),
    Sum(Var),
    Mean(Var),
    Mse { a: Var, b: Var },
    Softmax { a: Var, axis: usize },
    LayerNorm(norm::LayerNormSaved<T>),
    BatchNorm(norm::BatchNormSaved<T>),
    Conv2d(conv::Conv2dSaved),
    ConvTranspose2d(conv::ConvTransposeSaved),
    Reshape(Var),
    Permute { a: Var, axes: Vec<usize> },
    Gather { a: Var, index: Vec<usize> },
}

pub(crate) struct Node<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Gradient accumulator handed to backward rules.
pub(crate) struct GradSink<'a, T> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<'a, T: Element> GradSink<'a, T> {
    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Zero-initialized on first touch.
    pub fn slot(&mut self, v: Var) -> &mut [T] {
        let len = self.nodes[v.0].value.len();
        self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }
}

#[derive(Default)]
pub struct Tape<T: Element = f64> {
    pub(crate) nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), leaf_grads: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded value and gradient.
    pub fn clear(&mut self) {
        self.nodes = Vec::new();
        self.leaf_grads = Vec::new();
        self.consumed = false;
    }

    /// Records a tensor as a leaf; gradient tracking follows the tensor's flag.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push_raw(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push_raw(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push_raw(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn input(&mut self, shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(TensorError::shape("input", shape, &[data.len()]));
        }
        Ok(self.push_raw(shape.to_vec(), data, Op::Leaf, requires_grad))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies a recorded value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are well-formed")
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        let n = &self.nodes[v.0];
        if n.value.len() != 1 {
            return Err(TensorError::Contract(format!("expected a scalar, got shape {:?}", n.shape)));
        }
        Ok(n.value[0])
    }

    /// Gradient of the last `backward` call with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Stores the gradient of leaf `v` into `t.grad`, zero-filled when the leaf
    /// did not influence the loss.
    pub fn write_grad(&self, v: Var, t: &mut Tensor<T>) -> Result<()> {
        match self.grad(v) {
            Some(g) => t.set_grad(g.to_vec()),
            None => t.set_grad(vec![T::zero(); t.numel()]),
        }
    }

    pub(crate) fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(shape, value, op, requires_grad)
    }

    fn push_raw(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss. Leaf gradients are retrievable with
    /// [`Tape::grad`]; intermediate gradients are freed as the sweep passes.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::Contract(
                "backward already ran on this tape; re-run the forward pass first".into(),
            ));
        }
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| TensorError::Contract(format!("unknown variable {}", loss.0)))?;
        if root.value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        if root.requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        let nodes = &self.nodes;
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let mut sink = GradSink { nodes, grads: &mut grads[..i] };
            backward_node(nodes, node, &g, &mut sink);
        }
        self.leaf_grads = grads;
        Ok(())
    }
}

fn backward_node<T: Element>(nodes: &[Node<T>], node: &Node<T>, g: &[T], sink: &mut GradSink<'_, T>) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(saved) => linalg::matmul_backward(nodes, saved, g, sink),
        Op::Binary { kind, a, b } => elementwise::binary_backward(nodes, node, *kind, *a, *b, g, sink),
        Op::Scale { a, factor } => elementwise::scale_backward(*a, *factor, g, sink),
        Op::Relu(a) => elementwise::relu_backward(nodes, *a, g, sink),
        Op::Gelu(a) => elementwise::gelu_backward(nodes, *a, g, sink),
        Op::Sum(a) => elementwise::sum_backward(*a, T::one(), g, sink),
        Op::Mean(a) => {
            let n = T::cast(nodes[a.0].value.len() as f64);
            elementwise::sum_backward(*a, T::one() / n, g, sink)
        }
        Op::Mse { a, b } => elementwise::mse_backward(nodes, *a, *b, g, sink),
        Op::Softmax { a, axis } => norm::softmax_backward(node, *a, *axis, g, sink),
        Op::LayerNorm(saved) => norm::layer_norm_backward(nodes, saved, g, sink),
        Op::BatchNorm(saved) => norm::batch_norm_backward(nodes, saved, g, sink),
        Op::Conv2d(saved) => conv::conv2d_backward(nodes, saved, g, sink),
        Op::ConvTranspose2d(saved) => conv::conv_transpose2d_backward(nodes, saved, g, sink),
        Op::Reshape(a) => shape::reshape_backward(*a, g, sink),
        Op::Permute { a, axes } => shape::permute_backward(nodes, *a, axes, g, sink),
        Op::Gather { a, index } => shape::gather_backward(*a, index, g, sink),
    }
}
