//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node holding its output value. Node indices are a
//! topological order, so `backward` walks the tape from the loss down to
//! index zero and visits each node once.

mod conv;
mod elementwise;
mod loss;
mod norm;
mod pool;
pub(crate) mod resize;

use crate::tensor::{Scalar, Tensor, TensorError};

pub use conv::Conv2dParams;
pub use elementwise::ElementwiseKind;
pub use norm::{NormMode, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use pool::PoolKind;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        params: Conv2dParams,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    GlobalAvgPool {
        input: Var,
    },
    Resize {
        input: Var,
    },
    Relu {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    SoftmaxChannel {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Sum {
        input: Var,
    },
    CrossEntropy {
        probs: Var,
        targets: Vec<u8>,
        eps: T,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::BatchNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::MaxPool { input, .. }
            | Op::GlobalAvgPool { input }
            | Op::Resize { input }
            | Op::Relu { input }
            | Op::SoftmaxChannel { input }
            | Op::Sum { input } => vec![*input],
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Concat { inputs } => inputs.clone(),
            Op::CrossEntropy { probs, .. } => vec![*probs],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Records a forward computation so gradients can be propagated back to
/// its leaves.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input or parameter. Only leaves with `requires_grad`
    /// accumulate gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Accumulated gradient of a leaf; `None` until a backward pass reaches it.
    pub fn grad(&self, var: Var) -> Option<&Tensor<T>> {
        self.nodes[var.0].grad.as_ref()
    }

    /// Gradient of a tracked leaf, zeros if no backward pass reached it.
    pub fn grad_or_zeros(&self, var: Var) -> Tensor<T> {
        self.grad(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(var).to_vec()))
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub(crate) fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Sum of all elements, as a 1-element tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var, TensorError> {
        let total = self.value(input).sum();
        self.push("sum", Tensor::new([1], vec![total])?, Op::Sum { input })
    }

    /// Propagates d(loss)/d(node) to every tracked leaf. Leaf gradients
    /// accumulate across calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(TensorError::NotScalar(loss_value.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(g) => g.add_assign(&upstream),
                    None => node.grad = Some(upstream),
                }
                continue;
            }
            for (var, g) in self.backward_node(idx, &upstream)? {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, upstream: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>, TensorError> {
        let node = &self.nodes[idx];
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, params } => {
                let wants = |v: Var| self.nodes[v.0].requires_grad;
                let grads = conv::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    upstream,
                    *params,
                    wants(*input),
                    wants(*weight),
                    bias.is_some_and(wants),
                )?;
                let mut res = Vec::with_capacity(3);
                if let Some(g) = grads.input {
                    res.push((*input, g));
                }
                if let Some(g) = grads.weight {
                    res.push((*weight, g));
                }
                if let (Some(b), Some(g)) = (bias, grads.bias) {
                    res.push((*b, g));
                }
                res
            }
            Op::BatchNorm { input, gamma, beta, mean, inv_std, batch_stats } => {
                let (gx, gg, gb) = norm::batch_norm_backward(
                    self.value(*input),
                    self.value(*gamma),
                    upstream,
                    mean,
                    inv_std,
                    *batch_stats,
                );
                vec![(*input, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::MaxPool { input, argmax } => {
                vec![(*input, pool::max_pool_backward(self.value(*input).shape(), argmax, upstream))]
            }
            Op::GlobalAvgPool { input } => {
                vec![(*input, pool::global_avg_pool_backward(self.value(*input).shape(), upstream))]
            }
            Op::Resize { input } => {
                vec![(*input, resize::resize_backward(self.value(*input).shape(), upstream))]
            }
            Op::Relu { input } => vec![(*input, elementwise::relu_backward(out, upstream))],
            Op::Add { a, b } => {
                let (ga, gb) = elementwise::add_backward(self.value(*a).shape(), self.value(*b).shape(), upstream);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Mul { a, b } => {
                let (ga, gb) = elementwise::mul_backward(self.value(*a), self.value(*b), upstream);
                vec![(*a, ga), (*b, gb)]
            }
            Op::SoftmaxChannel { input } => vec![(*input, elementwise::softmax_channel_backward(out, upstream)?)],
            Op::Concat { inputs } => {
                let shapes: Vec<&[usize]> = inputs.iter().map(|v| self.value(*v).shape()).collect();
                inputs.iter().copied().zip(elementwise::concat_backward(&shapes, upstream)).collect()
            }
            Op::Sum { input } => {
                let g = upstream.data()[0];
                vec![(*input, Tensor::full(self.value(*input).shape().to_vec(), g))]
            }
            Op::CrossEntropy { probs, targets, eps } => {
                vec![(*probs, loss::cross_entropy_backward(self.value(*probs), targets, *eps, upstream.data()[0]))]
            }
        })
    }
}

pub mod gradcheck;
#[cfg(test)]
pub(crate) mod oracles;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_weighted_sum_is_the_constant() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
        let w = tape.leaf(Tensor::new([3], vec![0.3, 0.1, 4.0]).unwrap(), true);
        let prod = tape.mul(w, x).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn unused_parameter_gets_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::full([2], 1.0), true);
        let unused = tape.leaf(Tensor::full([4], 1.0), true);
        let loss = tape.sum(w).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(unused).is_none());
        assert!(tape.grad_or_zeros(unused).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::full([2], 3.0), true);
        let loss = tape.sum(w).unwrap();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 2.0]);
        tape.zero_grads();
        assert!(tape.grad(w).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::full([2], 1.0), true);
        assert_eq!(tape.backward(w), Err(TensorError::NotScalar(vec![2])));
    }

    #[test]
    fn shared_subexpression_gets_both_contributions() {
        // loss = sum(w * w) → grad 2w
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::new([2], vec![1.5, -3.0]).unwrap(), true);
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[3.0, -6.0]);
    }
}
