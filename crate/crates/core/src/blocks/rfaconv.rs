use super::{join, Conv, Module, Norm, Param, ParamInit};
use crate::error::{Error, Result};
use crate::tensor::{Binder, ConvSpec, Element, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfaConfig {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Adds a 1x1 projection to this many channels after the attention sum.
    pub out_channels: Option<usize>,
}

impl RfaConfig {
    pub fn new(channels: usize, kernel: usize) -> Self {
        Self {
            channels,
            kernel,
            stride: 1,
            out_channels: None,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_out_channels(mut self, out_channels: usize) -> Self {
        self.out_channels = Some(out_channels);
        self
    }
}

/// Receptive-field attention convolution.
///
/// A grouped `k x k` convolution expands every channel into its `k²`
/// receptive-field features `F = relu(norm(W_k * x + b_k))`. An average pool
/// followed by a grouped 1x1 convolution gives `k²` logits per channel and
/// location; their softmax `A` weights the features, and the output at each
/// location is `sum_j A_j F_j`.
#[derive(Debug, Clone)]
pub struct RfaConv<T: Element> {
    pub config: RfaConfig,
    pub transform: Conv<T>,
    pub norm: Norm<T>,
    pub attention: Conv<T>,
    pub projection: Option<Conv<T>>,
}

impl<T: Element> RfaConv<T> {
    pub fn new(config: RfaConfig, init: &mut ParamInit, prefix: &str) -> Result<Self> {
        let RfaConfig {
            channels: c,
            kernel: k,
            stride,
            out_channels,
        } = config;
        if k % 2 == 0 || c == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "rfaconv needs an odd kernel and positive channels/stride, got {config:?}"
            )));
        }
        let kk = k * k;
        let spec = ConvSpec::same(k).with_stride(stride).with_groups(c);
        let transform = Conv::new(init, &join(prefix, "transform"), c, c * kk, spec, true)?;
        let norm = Norm::new(init, &join(prefix, "norm"), c * kk);
        let attention = Conv::new(
            init,
            &join(prefix, "attention"),
            c,
            c * kk,
            ConvSpec::same(1).with_groups(c),
            true,
        )?;
        let projection = out_channels
            .map(|co| Conv::new(init, &join(prefix, "proj"), c, co, ConvSpec::same(1), true))
            .transpose()?;
        Ok(Self {
            config,
            transform,
            norm,
            attention,
            projection,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels.unwrap_or(self.config.channels)
    }

    fn pool_spec(&self) -> ConvSpec {
        ConvSpec::same(self.config.kernel)
            .with_stride(self.config.stride)
            .with_groups(self.config.channels)
    }

    /// Depthwise `k x k` mean with zero padding, as a fixed convolution.
    fn pool(&self, x: &Var<T>) -> Result<Var<T>> {
        let k = self.config.kernel;
        let w = Tensor::full(
            [self.config.channels, 1, k, k],
            T::from_f64_lossy(1.0 / (k * k) as f64),
        );
        x.conv2d(&Var::constant(w), None, self.pool_spec())
    }

    /// Returns the attended output (before any projection) and the
    /// attention coefficients, shaped `(N, C, k², H', W')`.
    pub fn forward_with_attention(&self, b: &Binder<T>, x: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let (n, c, _, _) = x.value().dims4()?;
        if c != self.config.channels {
            return Err(Error::shape(
                "rfaconv",
                format!("expected {} channels, got {c}", self.config.channels),
            ));
        }
        let kk = self.config.kernel * self.config.kernel;
        let features = self
            .norm
            .forward(b, &self.transform.forward(b, x)?)?
            .relu()?;
        let (_, _, ho, wo) = features.value().dims4()?;
        let logits = self.attention.forward(b, &self.pool(x)?)?;
        let attn = logits.reshape([n, c, kk, ho, wo])?.softmax(2)?;
        let features = features.reshape([n, c, kk, ho, wo])?;
        let y = features.mul(&attn)?.sum_axis(2)?;
        Ok((y, attn))
    }
}

impl<T: Element> Module<T> for RfaConv<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.transform.visit(f);
        self.norm.visit(f);
        self.attention.visit(f);
        if let Some(p) = &self.projection {
            p.visit(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.transform.visit_mut(f);
        self.norm.visit_mut(f);
        self.attention.visit_mut(f);
        if let Some(p) = &mut self.projection {
            p.visit_mut(f);
        }
    }

    fn forward_bound(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>> {
        let (y, _) = self.forward_with_attention(b, x)?;
        match &self.projection {
            Some(p) => p.forward(b, &y),
            None => Ok(y),
        }
    }
}
