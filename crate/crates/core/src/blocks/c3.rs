use super::{join, ConvBnAct, Module, Param, ParamInit, RfeBlock};
use crate::error::{Error, Result};
use crate::tensor::{Binder, ConvSpec, Element, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BottleneckKind {
    /// 3x3 conv-norm-relu.
    Plain,
    /// Receptive-field enhancement block in place of the 3x3 conv.
    Rfe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct C3Config {
    pub c_in: usize,
    pub c_out: usize,
    pub depth: usize,
    pub shortcut: bool,
    pub kind: BottleneckKind,
}

impl C3Config {
    pub fn new(c_in: usize, c_out: usize, kind: BottleneckKind) -> Self {
        Self {
            c_in,
            c_out,
            depth: 1,
            shortcut: true,
            kind,
        }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_shortcut(mut self, shortcut: bool) -> Self {
        self.shortcut = shortcut;
        self
    }

    pub fn hidden(&self) -> usize {
        (self.c_out / 2).max(1)
    }
}

#[derive(Debug, Clone)]
pub enum Inner<T: Element> {
    Plain(ConvBnAct<T>),
    Rfe(RfeBlock<T>),
}

#[derive(Debug, Clone)]
pub struct Bottleneck<T: Element> {
    pub reduce: ConvBnAct<T>,
    pub inner: Inner<T>,
    pub shortcut: bool,
}

impl<T: Element> Bottleneck<T> {
    pub fn new(
        channels: usize,
        kind: BottleneckKind,
        shortcut: bool,
        init: &mut ParamInit,
        prefix: &str,
    ) -> Result<Self> {
        let reduce = ConvBnAct::new(
            init,
            &join(prefix, "cv1"),
            channels,
            channels,
            ConvSpec::same(1),
        )?;
        let inner = match kind {
            BottleneckKind::Plain => Inner::Plain(ConvBnAct::new(
                init,
                &join(prefix, "cv2"),
                channels,
                channels,
                ConvSpec::same(3),
            )?),
            BottleneckKind::Rfe => Inner::Rfe(RfeBlock::new(channels, init, &join(prefix, "rfe"))?),
        };
        Ok(Self {
            reduce,
            inner,
            shortcut,
        })
    }
}

impl<T: Element> Module<T> for Bottleneck<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.reduce.visit_params(f);
        match &self.inner {
            Inner::Plain(m) => m.visit_params(f),
            Inner::Rfe(m) => m.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.reduce.visit_params_mut(f);
        match &mut self.inner {
            Inner::Plain(m) => m.visit_params_mut(f),
            Inner::Rfe(m) => m.visit_params_mut(f),
        }
    }

    fn forward_bound(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.reduce.forward_bound(b, x)?;
        let y = match &self.inner {
            Inner::Plain(m) => m.forward_bound(b, &y)?,
            Inner::Rfe(m) => m.forward_bound(b, &y)?,
        };
        if self.shortcut {
            x.add(&y)
        } else {
            Ok(y)
        }
    }
}

/// CSP block with three convolutions: two 1x1 splits, a bottleneck stack on
/// the first, concatenation, and a 1x1 fuse. With [`BottleneckKind::Rfe`]
/// this is C3RFEM.
#[derive(Debug, Clone)]
pub struct C3<T: Element> {
    pub config: C3Config,
    pub cv1: ConvBnAct<T>,
    pub cv2: ConvBnAct<T>,
    pub cv3: ConvBnAct<T>,
    pub blocks: Vec<Bottleneck<T>>,
}

impl<T: Element> C3<T> {
    pub fn new(config: C3Config, init: &mut ParamInit, prefix: &str) -> Result<Self> {
        if config.c_in == 0 || config.c_out == 0 {
            return Err(Error::Config(format!(
                "c3 needs positive channels, got {config:?}"
            )));
        }
        let h = config.hidden();
        let pw = ConvSpec::same(1);
        let cv1 = ConvBnAct::new(init, &join(prefix, "cv1"), config.c_in, h, pw)?;
        let cv2 = ConvBnAct::new(init, &join(prefix, "cv2"), config.c_in, h, pw)?;
        let blocks = (0..config.depth)
            .map(|i| {
                Bottleneck::new(
                    h,
                    config.kind,
                    config.shortcut,
                    init,
                    &join(prefix, &format!("m{i}")),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let cv3 = ConvBnAct::new(init, &join(prefix, "cv3"), 2 * h, config.c_out, pw)?;
        Ok(Self {
            config,
            cv1,
            cv2,
            cv3,
            blocks,
        })
    }
}

impl<T: Element> Module<T> for C3<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.cv1.visit_params(f);
        self.cv2.visit_params(f);
        for m in &self.blocks {
            m.visit_params(f);
        }
        self.cv3.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.cv1.visit_params_mut(f);
        self.cv2.visit_params_mut(f);
        for m in &mut self.blocks {
            m.visit_params_mut(f);
        }
        self.cv3.visit_params_mut(f);
    }

    fn forward_bound(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>> {
        let (_, c, _, _) = x.value().dims4()?;
        if c != self.config.c_in {
            return Err(Error::shape(
                "c3",
                format!("expected {} channels, got {c}", self.config.c_in),
            ));
        }
        let mut a = self.cv1.forward_bound(b, x)?;
        for m in &self.blocks {
            a = m.forward_bound(b, &a)?;
        }
        let skip = self.cv2.forward_bound(b, x)?;
        self.cv3.forward_bound(b, &Var::concat(&[a, skip], 1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{check_gradients, randomize_params};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn input(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn c3rfem_shape() {
        let cfg = C3Config::new(64, 64, BottleneckKind::Rfe);
        let m = C3::<f32>::new(cfg, &mut ParamInit::new(0), "c3").unwrap();
        let y = m.forward(&Tensor::ones([1, 64, 40, 40])).unwrap();
        assert_eq!(y.shape(), &[1, 64, 40, 40]);
    }

    #[test]
    fn no_bottlenecks_is_split_concat_fuse() {
        let cfg = C3Config::new(3, 4, BottleneckKind::Rfe).with_depth(0);
        let mut m = C3::<f64>::new(cfg, &mut ParamInit::new(1), "c3").unwrap();
        randomize_params(&mut m, 1, 0.5);
        let x = input([1, 3, 5, 5], 2);
        let y = m.forward(&x).unwrap();
        let a = m.cv1.forward(&x).unwrap();
        let s = m.cv2.forward(&x).unwrap();
        let cat = crate::tensor::ops::concat(&[&a, &s], 1).unwrap();
        let expect = m.cv3.forward(&cat).unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn zero_bottleneck_is_identity() {
        let mut m =
            Bottleneck::<f64>::new(2, BottleneckKind::Rfe, true, &mut ParamInit::new(2), "b")
                .unwrap();
        m.visit_params_mut(&mut |p| {
            if p.kind == super::super::ParamKind::Weight {
                p.value.data_mut().fill(0.0);
            }
        });
        let x = input([1, 2, 7, 8], 3);
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let cfg = C3Config::new(4, 4, BottleneckKind::Plain);
        let m = C3::<f32>::new(cfg, &mut ParamInit::new(0), "c3").unwrap();
        assert!(m.forward(&Tensor::ones([1, 3, 8, 8])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = C3Config::new(2, 4, BottleneckKind::Rfe);
        let mut m = C3::<f64>::new(cfg, &mut ParamInit::new(4), "c3").unwrap();
        randomize_params(&mut m, 4, 0.5);
        let report = check_gradients(&m, &input([1, 2, 7, 7], 5), 1e-4).unwrap();
        assert!(report.pass, "{report}");
    }
}
