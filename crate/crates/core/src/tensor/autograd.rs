//! Reverse-mode differentiation over recorded tensor kernels.
//!
//! A [`Var`] owns a forward value and, when any input requires a gradient,
//! the operation that produced it. Graphs are reference counted, so a
//! forward pass over constants keeps no intermediates alive.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::conv::{self, ConvSpec};
use super::ops::{self, Activation, NormStats, PoolSpec};
use super::{Element, Tensor};
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

enum Op<T: Element> {
    Conv2d {
        x: Var<T>,
        w: Var<T>,
        b: Option<Var<T>>,
        spec: ConvSpec,
    },
    Unfold {
        x: Var<T>,
        spec: ConvSpec,
    },
    Softmax {
        x: Var<T>,
        axis: usize,
    },
    Activation {
        x: Var<T>,
        kind: Activation,
    },
    BatchNorm {
        x: Var<T>,
        scale: Var<T>,
        shift: Var<T>,
        mean: Var<T>,
        var: Var<T>,
        eps: f64,
    },
    MaxPool {
        x: Var<T>,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var<T>,
    },
    Add {
        a: Var<T>,
        b: Var<T>,
    },
    Mul {
        a: Var<T>,
        b: Var<T>,
    },
    Scale {
        x: Var<T>,
        factor: T,
    },
    Concat {
        inputs: Vec<Var<T>>,
        axis: usize,
    },
    Reshape {
        x: Var<T>,
    },
    SumAxis {
        x: Var<T>,
        axis: usize,
    },
    Upsample {
        x: Var<T>,
        factor: usize,
    },
}

impl<T: Element> Op<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        match self {
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![x, w];
                v.extend(b.as_ref());
                v
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                mean,
                var,
                ..
            } => vec![x, scale, shift, mean, var],
            Op::Add { a, b } | Op::Mul { a, b } => vec![a, b],
            Op::Concat { inputs, .. } => inputs.iter().collect(),
            Op::Unfold { x, .. }
            | Op::Softmax { x, .. }
            | Op::Activation { x, .. }
            | Op::MaxPool { x, .. }
            | Op::GlobalAvgPool { x }
            | Op::Scale { x, .. }
            | Op::Reshape { x }
            | Op::SumAxis { x, .. }
            | Op::Upsample { x, .. } => vec![x],
        }
    }

    /// Gradients for each entry of [`Op::parents`], in the same order.
    fn backward(&self, out: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(match self {
            Op::Conv2d { x, w, b, spec } => {
                let (dx, dw, db) =
                    conv::conv2d_backward(x.value(), w.value(), b.is_some(), spec, grad)?;
                let mut v = vec![dx, dw];
                v.extend(db);
                v
            }
            Op::Unfold { x, spec } => vec![conv::unfold_backward(x.value().shape(), spec, grad)?],
            Op::Softmax { axis, .. } => vec![ops::softmax_backward(out, *axis, grad)],
            Op::Activation { x, kind } => {
                vec![ops::activation_backward(x.value(), out, *kind, grad)]
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                mean,
                var,
                eps,
            } => {
                let stats = NormStats {
                    scale: scale.value(),
                    shift: shift.value(),
                    mean: mean.value(),
                    var: var.value(),
                    eps: *eps,
                };
                ops::batchnorm_backward(x.value(), &stats, grad).into()
            }
            Op::MaxPool { x, argmax } => {
                vec![ops::max_pool_backward(x.value().shape(), argmax, grad)]
            }
            Op::GlobalAvgPool { x } => {
                vec![ops::global_avg_pool_backward(x.value().shape(), grad)]
            }
            Op::Add { a, b } => vec![
                ops::reduce_to_shape(grad, a.value().shape()),
                ops::reduce_to_shape(grad, b.value().shape()),
            ],
            Op::Mul { a, b } => vec![
                ops::mul_backward(grad, b.value(), a.value().shape()),
                ops::mul_backward(grad, a.value(), b.value().shape()),
            ],
            Op::Scale { factor, .. } => vec![grad.map(|g| g * *factor)],
            Op::Concat { inputs, axis } => {
                let shapes: Vec<Vec<usize>> =
                    inputs.iter().map(|v| v.value().shape().to_vec()).collect();
                ops::concat_backward(&shapes, *axis, grad)
            }
            Op::Reshape { x } => vec![grad.reshape(x.value().shape())?],
            Op::SumAxis { x, axis } => {
                vec![ops::sum_axis_backward(x.value().shape(), *axis, grad)]
            }
            Op::Upsample { x, factor } => {
                vec![ops::upsample_nearest_backward(
                    x.value().shape(),
                    *factor,
                    grad,
                )]
            }
        })
    }
}

struct Node<T: Element> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    op: Option<Op<T>>,
}

/// A tensor participating in a differentiable computation.
pub struct Var<T: Element = f32>(Rc<Node<T>>);

impl<T: Element> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Element> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Element> Var<T> {
    fn make(value: Tensor<T>, requires_grad: bool, op: Option<Op<T>>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            op,
        }))
    }

    /// A leaf that gradients flow into.
    pub fn leaf(value: Tensor<T>) -> Self {
        Self::make(value, true, None)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, false, None)
    }

    fn derived(value: Tensor<T>, op: Op<T>) -> Self {
        if op.parents().iter().any(|p| p.requires_grad()) {
            Self::make(value, true, Some(op))
        } else {
            Self::make(value, false, None)
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    /// Takes the forward value, cloning only if the node is still shared.
    pub fn into_value(self) -> Tensor<T> {
        match Rc::try_unwrap(self.0) {
            Ok(node) => node.value,
            Err(shared) => shared.value.clone(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, spec: ConvSpec) -> Result<Self> {
        let y = conv::conv2d(self.value(), weight.value(), bias.map(Var::value), &spec)?;
        Ok(Self::derived(
            y,
            Op::Conv2d {
                x: self.clone(),
                w: weight.clone(),
                b: bias.cloned(),
                spec,
            },
        ))
    }

    pub fn unfold(&self, spec: ConvSpec) -> Result<Self> {
        let y = conv::unfold(self.value(), &spec)?;
        Ok(Self::derived(
            y,
            Op::Unfold {
                x: self.clone(),
                spec,
            },
        ))
    }

    pub fn softmax(&self, axis: usize) -> Result<Self> {
        let y = ops::softmax(self.value(), axis)?;
        Ok(Self::derived(
            y,
            Op::Softmax {
                x: self.clone(),
                axis,
            },
        ))
    }

    pub fn activation(&self, kind: Activation) -> Result<Self> {
        let y = ops::activation(self.value(), kind)?;
        Ok(Self::derived(
            y,
            Op::Activation {
                x: self.clone(),
                kind,
            },
        ))
    }

    pub fn relu(&self) -> Result<Self> {
        self.activation(Activation::Relu)
    }

    pub fn sigmoid(&self) -> Result<Self> {
        self.activation(Activation::Sigmoid)
    }

    pub fn exp(&self) -> Result<Self> {
        self.activation(Activation::Exp)
    }

    pub fn batchnorm_infer(
        &self,
        scale: &Var<T>,
        shift: &Var<T>,
        mean: &Var<T>,
        var: &Var<T>,
        eps: f64,
    ) -> Result<Self> {
        let stats = NormStats {
            scale: scale.value(),
            shift: shift.value(),
            mean: mean.value(),
            var: var.value(),
            eps,
        };
        let y = ops::batchnorm_infer(self.value(), &stats)?;
        Ok(Self::derived(
            y,
            Op::BatchNorm {
                x: self.clone(),
                scale: scale.clone(),
                shift: shift.clone(),
                mean: mean.clone(),
                var: var.clone(),
                eps,
            },
        ))
    }

    pub fn max_pool(&self, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let (y, argmax) = ops::max_pool_with_indices(
            self.value(),
            PoolSpec {
                kernel,
                stride,
                padding,
            },
        )?;
        Ok(Self::derived(
            y,
            Op::MaxPool {
                x: self.clone(),
                argmax,
            },
        ))
    }

    pub fn global_avg_pool(&self) -> Result<Self> {
        let y = ops::global_avg_pool(self.value())?;
        Ok(Self::derived(y, Op::GlobalAvgPool { x: self.clone() }))
    }

    pub fn add(&self, other: &Var<T>) -> Result<Self> {
        let y = ops::add(self.value(), other.value())?;
        Ok(Self::derived(
            y,
            Op::Add {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Self> {
        let y = ops::mul(self.value(), other.value())?;
        Ok(Self::derived(
            y,
            Op::Mul {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        let factor = T::from_f64_lossy(factor);
        let y = ops::scale(self.value(), factor)?;
        Ok(Self::derived(
            y,
            Op::Scale {
                x: self.clone(),
                factor,
            },
        ))
    }

    pub fn concat(inputs: &[Var<T>], axis: usize) -> Result<Self> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(Var::value).collect();
        let y = ops::concat(&values, axis)?;
        Ok(Self::derived(
            y,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let y = self.value().reshape(shape)?;
        Ok(Self::derived(y, Op::Reshape { x: self.clone() }))
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        let y = ops::sum_axis(self.value(), axis)?;
        Ok(Self::derived(
            y,
            Op::SumAxis {
                x: self.clone(),
                axis,
            },
        ))
    }

    pub fn upsample_nearest(&self, factor: usize) -> Result<Self> {
        let y = ops::upsample_nearest(self.value(), factor)?;
        Ok(Self::derived(
            y,
            Op::Upsample {
                x: self.clone(),
                factor,
            },
        ))
    }

    /// Propagates `output_grad` (the gradient of some scalar with respect to
    /// this variable) back through the recorded graph.
    pub fn backward(&self, output_grad: &Tensor<T>) -> Result<Gradients<T>> {
        if output_grad.shape() != self.shape() {
            return Err(Error::shape(
                "backward",
                format!(
                    "output gradient {:?} does not match output {:?}",
                    output_grad.shape(),
                    self.shape()
                ),
            ));
        }
        if !self.requires_grad() {
            return Err(Error::UnrecordedNode);
        }

        // Ids are allocated at creation, so every node's id exceeds its
        // parents'; descending id order is a topological order.
        let mut nodes: HashMap<u64, Var<T>> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if nodes.contains_key(&v.0.id) {
                continue;
            }
            if let Some(op) = &v.0.op {
                stack.extend(
                    op.parents()
                        .into_iter()
                        .filter(|p| p.requires_grad())
                        .cloned(),
                );
            }
            nodes.insert(v.0.id, v);
        }
        let mut order: Vec<u64> = nodes.keys().copied().collect();
        order.sort_unstable_by(|a, b| b.cmp(a));

        let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
        grads.insert(self.0.id, output_grad.clone());
        for id in order {
            let node = &nodes[&id];
            let Some(op) = &node.0.op else { continue };
            let Some(grad) = grads.get(&id) else { continue };
            let parent_grads = op.backward(&node.0.value, grad)?;
            for (parent, g) in op.parents().into_iter().zip(parent_grads) {
                if !parent.requires_grad() {
                    continue;
                }
                match grads.get_mut(&parent.0.id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        grads.insert(parent.0.id, g);
                    }
                }
            }
        }
        grads.retain(|id, _| nodes[id].0.op.is_none());
        Ok(Gradients { grads })
    }
}

/// Gradients of leaf variables produced by [`Var::backward`].
pub struct Gradients<T: Element> {
    grads: HashMap<u64, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: &Var<T>) -> Result<&Tensor<T>> {
        self.grads.get(&var.0.id).ok_or(Error::UnrecordedNode)
    }
}
