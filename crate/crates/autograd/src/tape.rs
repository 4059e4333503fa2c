//! Wengert-list tape for reverse-mode differentiation.
//!
//! Every op appends one node holding its output value, the handles of its
//! inputs and a vector-Jacobian rule. Nodes can only reference earlier nodes,
//! so the recording order is already a topological order and `backward` is a
//! single reverse sweep.

use crate::error::{AutogradError, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward rule sees: the forward inputs and output, the upstream
/// gradient, and which inputs actually need a gradient.
pub struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub needs_grad: Vec<bool>,
    pub output: &'a Tensor,
    pub grad_out: &'a [f64],
}

/// Returns one optional gradient per input, each with the input's length.
pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its gradient is tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        tensor.clear_grad();
        self.push(Node {
            value: tensor,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
        })
    }

    /// Records a copy of a parameter as a gradient-tracking leaf.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let mut value = tensor.clone();
        value.set_requires_grad(true);
        self.leaf(value)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Accumulated gradient of a leaf, populated by [`Tape::backward`].
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.nodes[var.0].value.grad()
    }

    pub(crate) fn record(&mut self, value: Tensor, inputs: Vec<Var>, backward: BackwardFn) -> Var {
        debug_assert!(value.is_finite(), "non-finite value recorded on tape");
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Node {
            value,
            inputs,
            backward: requires_grad.then_some(backward),
            requires_grad,
        })
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Propagates d(loss)/d(node) back to every gradient-tracking leaf.
    ///
    /// Leaf gradients accumulate, so calling this twice without clearing
    /// doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(AutogradError::NotScalar(loss_node.value.shape().to_vec()));
        }
        if !loss_node.requires_grad {
            return Ok(());
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(grad_out) = adjoints[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let Some(rule) = node.backward.as_ref() else {
                if node.requires_grad {
                    leaf_grads.push((i, grad_out));
                }
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                needs_grad: node
                    .inputs
                    .iter()
                    .map(|v| self.nodes[v.0].requires_grad)
                    .collect(),
                output: &node.value,
                grad_out: &grad_out,
            };
            let grads = rule(&ctx);
            debug_assert_eq!(grads.len(), node.inputs.len());
            for (input, grad) in node.inputs.iter().zip(grads) {
                let Some(grad) = grad else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(grad.len(), self.nodes[input.0].value.numel());
                match adjoints[input.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                    None => adjoints[input.0] = Some(grad),
                }
            }
        }

        for (i, grad) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&grad)?;
        }
        Ok(())
    }
}
