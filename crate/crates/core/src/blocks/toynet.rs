//! A small detector trunk: RFAConv downsampling, C3 / C3RFEM stages, SPPF,
//! a PAN-style neck and three MultiSEAM-guarded heads.
//!
//! Layout (widths `w0..w4`):
//!
//! ```text
//! stem   RFAConv s2 -> w0                       /2
//! stage1 RFAConv s2 -> w1, C3                   /4
//! stage2 RFAConv s2 -> w2, C3RFEM       = P3    /8
//! stage3 RFAConv s2 -> w3, C3           = P4    /16
//! stage4 RFAConv s2 -> w4, C3RFEM, SPPF = P5    /32
//! neck   up(P5)+P4 -> C3 w3 = N4; up(N4)+P3 -> C3 w2 = O3
//!        down(O3)+N4 -> C3 w3 = O4; down(O4)+P5 -> C3 w4 = O5
//! heads  MultiSEAM, RFAConv 3x3 -> head_channels, on O3 / O4 / O5
//! ```

use super::{
    join, BottleneckKind, C3Config, ConvBnAct, Module, MultiSeam, Param, ParamInit, RfaConfig,
    RfaConv, SeamConfig, Sppf, SppfConfig, C3, RFE_MIN_EXTENT,
};
use crate::error::{Error, Result};
use crate::tensor::{Binder, ConvSpec, Element, Tensor, Var};

pub const HEAD_STRIDES: [usize; 3] = [8, 16, 32];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyNetConfig {
    pub input_extent: usize,
    pub in_channels: usize,
    pub widths: [usize; 5],
    pub head_channels: usize,
    pub depth: usize,
    /// Downsample with RFAConv instead of strided conv-norm-relu.
    pub rfa_downsample: bool,
    /// C3RFEM at P3 and P5 instead of plain C3.
    pub c3rfem: bool,
    /// MultiSEAM in front of each head.
    pub multiseam: bool,
}

impl ToyNetConfig {
    pub fn new(input_extent: usize) -> Self {
        Self {
            input_extent,
            in_channels: 3,
            widths: [8, 16, 32, 64, 128],
            head_channels: 5,
            depth: 1,
            rfa_downsample: true,
            c3rfem: true,
            multiseam: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_extent == 0 || !self.input_extent.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "input extent {} is not a positive multiple of 32",
                self.input_extent
            )));
        }
        if self.in_channels == 0 || self.head_channels == 0 || self.widths.contains(&0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        Ok(())
    }

    pub fn head_extents(&self) -> [usize; 3] {
        HEAD_STRIDES.map(|s| self.input_extent / s)
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum Down<T: Element> {
    Rfa(RfaConv<T>),
    Conv(ConvBnAct<T>),
}

impl<T: Element> Down<T> {
    fn new(
        rfa: bool,
        c_in: usize,
        c_out: usize,
        init: &mut ParamInit,
        prefix: &str,
    ) -> Result<Self> {
        Ok(if rfa {
            let cfg = RfaConfig::new(c_in, 3)
                .with_stride(2)
                .with_out_channels(c_out);
            Down::Rfa(RfaConv::new(cfg, init, prefix)?)
        } else {
            Down::Conv(ConvBnAct::new(
                init,
                prefix,
                c_in,
                c_out,
                ConvSpec::same(3).with_stride(2),
            )?)
        })
    }

    fn module(&self) -> &dyn Module<T> {
        match self {
            Down::Rfa(m) => m,
            Down::Conv(m) => m,
        }
    }
}

#[derive(Debug, Clone)]
struct Head<T: Element> {
    seam: Option<MultiSeam<T>>,
    out: RfaConv<T>,
}

#[derive(Debug, Clone)]
pub struct ToyNet<T: Element> {
    pub config: ToyNetConfig,
    downs: Vec<Down<T>>,
    stages: Vec<C3<T>>,
    sppf: Sppf<T>,
    neck: Vec<C3<T>>,
    neck_downs: Vec<ConvBnAct<T>>,
    heads: Vec<Head<T>>,
}

impl<T: Element> ToyNet<T> {
    pub fn new(config: ToyNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let init = &mut ParamInit::new(seed);
        let [w0, w1, w2, w3, w4] = config.widths;
        let rfa = config.rfa_downsample;
        let downs = vec![
            Down::new(rfa, config.in_channels, w0, init, "stem")?,
            Down::new(rfa, w0, w1, init, "stage1.down")?,
            Down::new(rfa, w1, w2, init, "stage2.down")?,
            Down::new(rfa, w2, w3, init, "stage3.down")?,
            Down::new(rfa, w3, w4, init, "stage4.down")?,
        ];
        let [e3, _, e5] = config.head_extents();
        let kind_at = |extent: usize| {
            if config.c3rfem && extent >= RFE_MIN_EXTENT {
                BottleneckKind::Rfe
            } else {
                BottleneckKind::Plain
            }
        };
        let stage = |c: usize, kind, init: &mut ParamInit, prefix: &str| {
            C3::new(
                C3Config::new(c, c, kind).with_depth(config.depth),
                init,
                prefix,
            )
        };
        let stages = vec![
            stage(w1, BottleneckKind::Plain, init, "stage1.c3")?,
            stage(w2, kind_at(e3), init, "stage2.c3")?,
            stage(w3, BottleneckKind::Plain, init, "stage3.c3")?,
            stage(w4, kind_at(e5), init, "stage4.c3")?,
        ];
        let sppf = Sppf::new(SppfConfig::new(w4, w4), init, "stage4.sppf")?;
        let fuse = |c_in: usize, c_out: usize, init: &mut ParamInit, prefix: &str| {
            let cfg = C3Config::new(c_in, c_out, BottleneckKind::Plain)
                .with_depth(config.depth)
                .with_shortcut(false);
            C3::new(cfg, init, prefix)
        };
        let neck = vec![
            fuse(w4 + w3, w3, init, "neck.up4")?,
            fuse(w3 + w2, w2, init, "neck.up3")?,
            fuse(w2 + w3, w3, init, "neck.down4")?,
            fuse(w3 + w4, w4, init, "neck.down5")?,
        ];
        let s2 = ConvSpec::same(3).with_stride(2);
        let neck_downs = vec![
            ConvBnAct::new(init, "neck.down4.conv", w2, w2, s2)?,
            ConvBnAct::new(init, "neck.down5.conv", w3, w3, s2)?,
        ];
        let heads = [w2, w3, w4]
            .into_iter()
            .zip(config.head_extents())
            .enumerate()
            .map(|(i, (c, extent))| {
                let prefix = format!("head{i}");
                let seam = if config.multiseam {
                    let scales: Vec<usize> = SeamConfig::DEFAULT_PATCH_SCALES
                        .into_iter()
                        .filter(|p| extent % p == 0)
                        .collect();
                    let cfg = SeamConfig::new(c).with_patch_scales(scales);
                    Some(MultiSeam::new(cfg, init, &join(&prefix, "seam"))?)
                } else {
                    None
                };
                let out_cfg = RfaConfig::new(c, 3).with_out_channels(config.head_channels);
                let out = RfaConv::new(out_cfg, init, &join(&prefix, "out"))?;
                Ok(Head { seam, out })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            downs,
            stages,
            sppf,
            neck,
            neck_downs,
            heads,
        })
    }

    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for d in &self.downs {
            d.module().visit_params(f);
        }
        for m in &self.stages {
            m.visit_params(f);
        }
        self.sppf.visit_params(f);
        for m in &self.neck {
            m.visit_params(f);
        }
        for m in &self.neck_downs {
            m.visit_params(f);
        }
        for h in &self.heads {
            if let Some(s) = &h.seam {
                s.visit_params(f);
            }
            h.out.visit_params(f);
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Head maps at strides 8, 16 and 32.
    pub fn forward_bound(&self, b: &Binder<T>, x: &Var<T>) -> Result<[Var<T>; 3]> {
        let (_, c, h, w) = x.value().dims4()?;
        let e = self.config.input_extent;
        if c != self.config.in_channels || h != e || w != e {
            return Err(Error::shape(
                "toynet",
                format!(
                    "expected (N, {}, {e}, {e}), got {:?}",
                    self.config.in_channels,
                    x.shape()
                ),
            ));
        }
        let down = |i: usize, v: &Var<T>| self.downs[i].module().forward_bound(b, v);
        let x = down(0, x)?;
        let x = self.stages[0].forward_bound(b, &down(1, &x)?)?;
        let p3 = self.stages[1].forward_bound(b, &down(2, &x)?)?;
        let p4 = self.stages[2].forward_bound(b, &down(3, &p3)?)?;
        let p5 = self.stages[3].forward_bound(b, &down(4, &p4)?)?;
        let p5 = self.sppf.forward_bound(b, &p5)?;

        let n4 = Var::concat(&[p5.upsample_nearest(2)?, p4], 1)?;
        let n4 = self.neck[0].forward_bound(b, &n4)?;
        let o3 = Var::concat(&[n4.upsample_nearest(2)?, p3], 1)?;
        let o3 = self.neck[1].forward_bound(b, &o3)?;
        let o4 = Var::concat(&[self.neck_downs[0].forward_bound(b, &o3)?, n4], 1)?;
        let o4 = self.neck[2].forward_bound(b, &o4)?;
        let o5 = Var::concat(&[self.neck_downs[1].forward_bound(b, &o4)?, p5], 1)?;
        let o5 = self.neck[3].forward_bound(b, &o5)?;

        let mut outs = Vec::with_capacity(3);
        for (head, feat) in self.heads.iter().zip([o3, o4, o5]) {
            let feat = match &head.seam {
                Some(s) => s.forward_bound(b, &feat)?,
                None => feat,
            };
            outs.push(head.out.forward_bound(b, &feat)?);
        }
        outs.try_into()
            .map_err(|_| Error::EmptyOutput { op: "toynet" })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<[Tensor<T>; 3]> {
        let outs = self.forward_bound(&Binder::frozen(), &Var::constant(x.clone()))?;
        Ok(outs.map(Var::into_value))
    }
}
