use super::{join, ConvBnAct, Module, Param, ParamInit};
use crate::error::{Error, Result};
use crate::tensor::{Binder, ConvSpec, Element, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SppfConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub pool: usize,
}

impl SppfConfig {
    pub fn new(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            pool: 5,
        }
    }

    pub fn hidden(&self) -> usize {
        (self.c_in / 2).max(1)
    }
}

/// Fast spatial pyramid pooling: reduce, three chained same-size max pools,
/// concatenate all four maps, fuse.
#[derive(Debug, Clone)]
pub struct Sppf<T: Element> {
    pub config: SppfConfig,
    pub cv1: ConvBnAct<T>,
    pub cv2: ConvBnAct<T>,
}

impl<T: Element> Sppf<T> {
    pub fn new(config: SppfConfig, init: &mut ParamInit, prefix: &str) -> Result<Self> {
        if config.c_in == 0 || config.c_out == 0 || config.pool.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "sppf needs positive channels and an odd pool size, got {config:?}"
            )));
        }
        let h = config.hidden();
        let pw = ConvSpec::same(1);
        Ok(Self {
            config,
            cv1: ConvBnAct::new(init, &join(prefix, "cv1"), config.c_in, h, pw)?,
            cv2: ConvBnAct::new(init, &join(prefix, "cv2"), 4 * h, config.c_out, pw)?,
        })
    }
}

impl<T: Element> Module<T> for Sppf<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.cv1.visit_params(f);
        self.cv2.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.cv1.visit_params_mut(f);
        self.cv2.visit_params_mut(f);
    }

    fn forward_bound(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>> {
        let (_, c, _, _) = x.value().dims4()?;
        if c != self.config.c_in {
            return Err(Error::shape(
                "sppf",
                format!("expected {} channels, got {c}", self.config.c_in),
            ));
        }
        let k = self.config.pool;
        let mut maps = vec![self.cv1.forward_bound(b, x)?];
        for _ in 0..3 {
            let next = maps.last().expect("non-empty").max_pool(k, 1, k / 2)?;
            maps.push(next);
        }
        self.cv2.forward_bound(b, &Var::concat(&maps, 1)?)
    }
}
