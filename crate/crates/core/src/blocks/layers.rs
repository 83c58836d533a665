use super::{join, Module, Param, ParamInit, ParamKind};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Binder, ConvSpec, Element, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Inference-mode batch normalization with identity default statistics.
#[derive(Debug, Clone)]
pub struct Norm<T: Element> {
    pub scale: Param<T>,
    pub shift: Param<T>,
    pub mean: Param<T>,
    pub var: Param<T>,
    pub eps: f64,
}

impl<T: Element> Norm<T> {
    pub fn new(init: &mut ParamInit, prefix: &str, channels: usize) -> Self {
        Self {
            scale: init.constant(join(prefix, "scale"), ParamKind::NormScale, channels, 1.0),
            shift: init.constant(join(prefix, "shift"), ParamKind::NormShift, channels, 0.0),
            mean: init.constant(join(prefix, "mean"), ParamKind::NormMean, channels, 0.0),
            var: init.constant(join(prefix, "var"), ParamKind::NormVar, channels, 1.0),
            eps: NORM_EPS,
        }
    }

    pub fn forward(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>> {
        x.batchnorm_infer(
            &self.scale.bind(b),
            &self.shift.bind(b),
            &self.mean.bind(b),
            &self.var.bind(b),
            self.eps,
        )
    }

    pub(crate) fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.scale);
        f(&self.shift);
        f(&self.mean);
        f(&self.var);
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.scale);
        f(&mut self.shift);
        f(&mut self.mean);
        f(&mut self.var);
    }
}

/// Plain convolution with optional bias.
#[derive(Debug, Clone)]
pub struct Conv<T: Element> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub spec: ConvSpec,
}

impl<T: Element> Conv<T> {
    pub fn new(
        init: &mut ParamInit,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Result<Self> {
        if !c_in.is_multiple_of(spec.groups) || !c_out.is_multiple_of(spec.groups) {
            return Err(Error::Config(format!(
                "{prefix}: groups {} must divide {c_in} -> {c_out} channels",
                spec.groups
            )));
        }
        Ok(Self {
            weight: init.weight(
                join(prefix, "weight"),
                [c_out, c_in / spec.groups, spec.kernel, spec.kernel],
            ),
            bias: bias.then(|| init.constant(join(prefix, "bias"), ParamKind::Bias, c_out, 0.0)),
            spec,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>> {
        let bias = self.bias.as_ref().map(|p| p.bind(b));
        x.conv2d(&self.weight.bind(b), bias.as_ref(), self.spec)
    }

    pub(crate) fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
        if let Some(bias) = &self.bias {
            f(bias);
        }
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(bias) = &mut self.bias {
            f(bias);
        }
    }
}

/// Convolution (no bias), normalization, then an optional activation.
#[derive(Debug, Clone)]
pub struct ConvBnAct<T: Element> {
    pub conv: Conv<T>,
    pub norm: Norm<T>,
    pub act: Option<Activation>,
}

impl<T: Element> ConvBnAct<T> {
    pub fn new(
        init: &mut ParamInit,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        spec: ConvSpec,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(init, &join(prefix, "conv"), c_in, c_out, spec, false)?,
            norm: Norm::new(init, &join(prefix, "bn"), c_out),
            act: Some(Activation::Relu),
        })
    }
}

impl<T: Element> Module<T> for ConvBnAct<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.conv.visit(f);
        self.norm.visit(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_mut(f);
        self.norm.visit_mut(f);
    }

    fn forward_bound(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.norm.forward(b, &self.conv.forward(b, x)?)?;
        match self.act {
            Some(kind) => y.activation(kind),
            None => Ok(y),
        }
    }
}
