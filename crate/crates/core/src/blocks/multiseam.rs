use super::{join, Conv, Module, Param, ParamInit};
use crate::error::{Error, Result};
use crate::tensor::{Binder, ConvSpec, Element, Var};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeamConfig {
    pub channels: usize,
    /// Depthwise kernel size.
    pub kernel: usize,
    pub reduction: usize,
    pub patch_scales: Vec<usize>,
}

impl SeamConfig {
    pub const DEFAULT_KERNEL: usize = 3;
    pub const DEFAULT_REDUCTION: usize = 16;
    pub const DEFAULT_PATCH_SCALES: [usize; 3] = [1, 2, 4];
    pub const MIN_HIDDEN: usize = 4;

    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            kernel: Self::DEFAULT_KERNEL,
            reduction: Self::DEFAULT_REDUCTION,
            patch_scales: Self::DEFAULT_PATCH_SCALES.to_vec(),
        }
    }

    pub fn with_patch_scales(mut self, scales: Vec<usize>) -> Self {
        self.patch_scales = scales;
        self
    }

    pub fn with_reduction(mut self, reduction: usize) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn hidden(&self) -> usize {
        (self.channels / self.reduction.max(1)).max(Self::MIN_HIDDEN)
    }
}

/// One patch scale: stride-`p` depthwise embedding, depthwise + pointwise
/// mixing with a residual, then a squeeze bottleneck.
#[derive(Debug, Clone)]
pub struct SeamHead<T: Element> {
    pub patch: usize,
    pub embed: Conv<T>,
    pub depthwise: Conv<T>,
    pub pointwise: Conv<T>,
    pub fc1: Conv<T>,
    pub fc2: Conv<T>,
}

impl<T: Element> SeamHead<T> {
    fn new(cfg: &SeamConfig, patch: usize, init: &mut ParamInit, prefix: &str) -> Result<Self> {
        let c = cfg.channels;
        let hidden = cfg.hidden();
        let pw = ConvSpec::same(1);
        Ok(Self {
            patch,
            embed: Conv::new(
                init,
                &join(prefix, "embed"),
                c,
                c,
                ConvSpec::same(patch)
                    .with_stride(patch)
                    .with_padding(0)
                    .with_groups(c),
                true,
            )?,
            depthwise: Conv::new(
                init,
                &join(prefix, "dw"),
                c,
                c,
                ConvSpec::same(cfg.kernel).with_groups(c),
                false,
            )?,
            pointwise: Conv::new(init, &join(prefix, "pw"), c, c, pw, false)?,
            fc1: Conv::new(init, &join(prefix, "fc1"), c, hidden, pw, true)?,
            fc2: Conv::new(init, &join(prefix, "fc2"), hidden, c, pw, true)?,
        })
    }

    /// Channel weights `exp(sigmoid(...))`, shaped `(N, C, 1, 1)`.
    pub fn attention(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>> {
        let e = self.embed.forward(b, x)?;
        let mixed = self.pointwise.forward(b, &self.depthwise.forward(b, &e)?)?;
        let f1 = mixed.add(&e)?;
        let s = self.fc1.forward(b, &f1.global_avg_pool()?)?.relu()?;
        self.fc2.forward(b, &s)?.sigmoid()?.exp()
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for c in [
            &self.embed,
            &self.depthwise,
            &self.pointwise,
            &self.fc1,
            &self.fc2,
        ] {
            c.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for c in [
            &mut self.embed,
            &mut self.depthwise,
            &mut self.pointwise,
            &mut self.fc1,
            &mut self.fc2,
        ] {
            c.visit_mut(f);
        }
    }
}

/// Multi-scale exponential channel attention. The per-scale weights are
/// averaged into `A` (each in `(1, e)`) and the output is `A * x`, scaling
/// the original input per channel.
#[derive(Debug, Clone)]
pub struct MultiSeam<T: Element> {
    pub config: SeamConfig,
    pub heads: Vec<SeamHead<T>>,
}

impl<T: Element> MultiSeam<T> {
    pub fn new(config: SeamConfig, init: &mut ParamInit, prefix: &str) -> Result<Self> {
        if config.channels == 0 || config.kernel.is_multiple_of(2) || config.reduction == 0 {
            return Err(Error::Config(format!(
                "multiseam needs channels > 0, an odd kernel and r > 0, got {config:?}"
            )));
        }
        if config.patch_scales.is_empty() || config.patch_scales.contains(&0) {
            return Err(Error::Config(format!(
                "multiseam patch scales must be non-empty and positive, got {:?}",
                config.patch_scales
            )));
        }
        let heads = config
            .patch_scales
            .iter()
            .map(|&p| SeamHead::new(&config, p, init, &join(prefix, &format!("p{p}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, heads })
    }

    /// Returns `(A * x, A)` with `A` shaped `(N, C, 1, 1)`.
    pub fn forward_with_attention(&self, b: &Binder<T>, x: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let (_, c, h, w) = x.value().dims4()?;
        if c != self.config.channels {
            return Err(Error::shape(
                "multiseam",
                format!("expected {} channels, got {c}", self.config.channels),
            ));
        }
        if let Some(p) = self
            .config
            .patch_scales
            .iter()
            .find(|&&p| h % p != 0 || w % p != 0)
        {
            return Err(Error::shape(
                "multiseam",
                format!("patch scale {p} does not divide {h}x{w}"),
            ));
        }
        let mut sum: Option<Var<T>> = None;
        for head in &self.heads {
            let a = head.attention(b, x)?;
            sum = Some(match sum {
                Some(s) => s.add(&a)?,
                None => a,
            });
        }
        let attn = sum
            .expect("at least one head")
            .scale(1.0 / self.heads.len() as f64)?;
        Ok((x.mul(&attn)?, attn))
    }
}

impl<T: Element> Module<T> for MultiSeam<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for h in &self.heads {
            h.visit(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for h in &mut self.heads {
            h.visit_mut(f);
        }
    }

    fn forward_bound(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>> {
        Ok(self.forward_with_attention(b, x)?.0)
    }
}
