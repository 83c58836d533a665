//! Detector building blocks: receptive-field attention convolution, the
//! multi-dilation receptive-field enhancement block and its C3 wrapper,
//! multi-scale exponential channel attention, SPPF, and a toy-scale network
//! composing them.
//!
//! Every block owns named [`Param`]s and implements [`Module`]. Forward passes
//! run through a [`Binder`], so the same code serves plain inference
//! ([`Module::forward`]) and gradient checking ([`check_gradients`]).

mod c3;
mod layers;
mod multiseam;
pub mod persist;
mod rfaconv;
mod rfe;
mod sppf;
mod toynet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{grad_check, Binder, Element, GradReport, Tensor, Var};

pub use c3::{Bottleneck, BottleneckKind, C3Config, Inner, C3};
pub use layers::{Conv, ConvBnAct, Norm, NORM_EPS};
pub use multiseam::{MultiSeam, SeamConfig, SeamHead};
pub use rfaconv::{RfaConfig, RfaConv};
pub use rfe::{RfeBlock, RFE_DILATIONS, RFE_MIN_EXTENT};
pub use sppf::{Sppf, SppfConfig};
pub use toynet::{ToyNet, ToyNetConfig, HEAD_STRIDES};

/// What a parameter tensor is for; drives initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    NormMean,
    NormVar,
    Logits,
}

/// A named, learnable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Element> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

impl<T: Element> Param<T> {
    pub fn bind(&self, b: &Binder<T>) -> Var<T> {
        b.bind(&self.name, &self.value)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Deterministic parameter initializer.
///
/// Weights are uniform in `±1/sqrt(fan_in)`; biases and logits start at
/// zero; normalization starts as the identity.
pub struct ParamInit {
    rng: ChaCha8Rng,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn weight<T: Element>(&mut self, name: String, shape: [usize; 4]) -> Param<T> {
        let fan_in = (shape[1] * shape[2] * shape[3]).max(1) as f64;
        let bound = fan_in.sqrt().recip();
        let rng = &mut self.rng;
        Param {
            name,
            kind: ParamKind::Weight,
            value: Tensor::from_fn(shape, |_| {
                T::from_f64_lossy(rng.random_range(-bound..bound))
            }),
        }
    }

    pub fn constant<T: Element>(
        &mut self,
        name: String,
        kind: ParamKind,
        len: usize,
        value: f64,
    ) -> Param<T> {
        Param {
            name,
            kind,
            value: Tensor::full([len], T::from_f64_lossy(value)),
        }
    }
}

/// A block with named parameters and a differentiable forward pass.
pub trait Module<T: Element> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>));

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn forward_bound(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>>;

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = Binder::frozen();
        let x = Var::constant(x.clone());
        Ok(self.forward_bound(&b, &x)?.into_value())
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push(p));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }
}

/// Overwrites every parameter with seeded random values: weights, biases,
/// normalization shifts/means and logits uniform in `±scale`; normalization
/// scales in `[0.5, 1.5]`; variances in `[0.5, 1.5]`.
pub fn randomize_params<T: Element>(m: &mut dyn Module<T>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    m.visit_params_mut(&mut |p| {
        let (lo, hi) = match p.kind {
            ParamKind::NormScale | ParamKind::NormVar => (0.5, 1.5),
            _ => (-scale, scale),
        };
        for v in p.value.data_mut() {
            *v = T::from_f64_lossy(rng.random_range(lo..hi));
        }
    });
}

/// Gradient check of a block with respect to its input and every parameter.
pub fn check_gradients<M: Module<f64> + ?Sized>(
    m: &M,
    x: &Tensor<f64>,
    tolerance: f64,
) -> Result<GradReport> {
    grad_check(
        |b| {
            let xv = b.bind("input", x);
            m.forward_bound(b, &xv)
        },
        tolerance,
    )
}
