use super::{join, Conv, Module, Param, ParamInit, ParamKind};
use crate::error::{Error, Result};
use crate::tensor::{Binder, ConvSpec, Element, Var};

pub const RFE_DILATIONS: [usize; 3] = [1, 2, 3];
/// Smallest spatial extent the widest dilated branch is defined on.
pub const RFE_MIN_EXTENT: usize = 7;

/// Receptive-field enhancement: one 3x3 kernel shared by three dilated
/// branches plus a pointwise branch, mixed by softmax-normalized branch
/// weights, projected, and added back to the input.
#[derive(Debug, Clone)]
pub struct RfeBlock<T: Element> {
    pub channels: usize,
    pub kernel: Param<T>,
    pub kernel_bias: Param<T>,
    pub pointwise: Conv<T>,
    pub branch_logits: Param<T>,
    pub projection: Conv<T>,
}

impl<T: Element> RfeBlock<T> {
    pub fn new(channels: usize, init: &mut ParamInit, prefix: &str) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("rfe needs at least one channel".into()));
        }
        let c = channels;
        let pw = ConvSpec::same(1);
        Ok(Self {
            channels,
            kernel: init.weight(join(prefix, "shared.weight"), [c, c, 3, 3]),
            kernel_bias: init.constant(join(prefix, "shared.bias"), ParamKind::Bias, c, 0.0),
            pointwise: Conv::new(init, &join(prefix, "pointwise"), c, c, pw, true)?,
            branch_logits: init.constant(
                join(prefix, "branch_logits"),
                ParamKind::Logits,
                RFE_DILATIONS.len() + 1,
                0.0,
            ),
            projection: Conv::new(init, &join(prefix, "proj"), c, c, pw, true)?,
        })
    }

    /// The four branch outputs, dilated branches first.
    pub fn branches(&self, b: &Binder<T>, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let (_, c, h, w) = x.value().dims4()?;
        if c != self.channels {
            return Err(Error::shape(
                "rfe",
                format!("expected {} channels, got {c}", self.channels),
            ));
        }
        if h < RFE_MIN_EXTENT || w < RFE_MIN_EXTENT {
            return Err(Error::shape(
                "rfe",
                format!("spatial extent {h}x{w} is below {RFE_MIN_EXTENT}"),
            ));
        }
        let kernel = self.kernel.bind(b);
        let bias = self.kernel_bias.bind(b);
        let mut out = Vec::with_capacity(RFE_DILATIONS.len() + 1);
        for d in RFE_DILATIONS {
            out.push(x.conv2d(&kernel, Some(&bias), ConvSpec::same(3).with_dilation(d))?);
        }
        out.push(self.pointwise.forward(b, x)?);
        Ok(out)
    }
}

impl<T: Element> Module<T> for RfeBlock<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.kernel);
        f(&self.kernel_bias);
        self.pointwise.visit(f);
        f(&self.branch_logits);
        self.projection.visit(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.kernel);
        f(&mut self.kernel_bias);
        self.pointwise.visit_mut(f);
        f(&mut self.branch_logits);
        self.projection.visit_mut(f);
    }

    fn forward_bound(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>> {
        let (n, c, h, w) = x.value().dims4()?;
        let branches = self
            .branches(b, x)?
            .into_iter()
            .map(|v| v.reshape([n, 1, c, h, w]))
            .collect::<Result<Vec<_>>>()?;
        let nb = branches.len();
        let stacked = Var::concat(&branches, 1)?;
        let weights = self
            .branch_logits
            .bind(b)
            .softmax(0)?
            .reshape([1, nb, 1, 1, 1])?;
        let mixed = stacked.mul(&weights)?.sum_axis(1)?;
        x.add(&self.projection.forward(b, &mixed)?)
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
    fn zero_weights_are_identity() {
        let mut m = RfeBlock::<f64>::new(3, &mut ParamInit::new(1), "rfe").unwrap();
        m.visit_params_mut(&mut |p| p.value.data_mut().fill(0.0));
        let x = input([2, 3, 7, 9], 2);
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn one_hot_branch_is_plain_conv() {
        let mut m = RfeBlock::<f64>::new(2, &mut ParamInit::new(3), "rfe").unwrap();
        randomize_params(&mut m, 3, 0.5);
        m.branch_logits
            .value
            .data_mut()
            .copy_from_slice(&[50.0, -50.0, -50.0, -50.0]);
        let x = input([1, 2, 8, 8], 4);
        let y = m.forward(&x).unwrap();

        let conv = crate::tensor::conv::conv2d(
            &x,
            &m.kernel.value,
            Some(&m.kernel_bias.value),
            &ConvSpec::same(3),
        )
        .unwrap();
        let proj = crate::tensor::conv::conv2d(
            &conv,
            &m.projection.weight.value,
            m.projection.bias.as_ref().map(|p| &p.value),
            &ConvSpec::same(1),
        )
        .unwrap();
        let expect = crate::tensor::ops::add(&x, &proj).unwrap();
        assert!(y.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn preserves_shape_and_rejects_small_maps() {
        let m = RfeBlock::<f32>::new(4, &mut ParamInit::new(0), "rfe").unwrap();
        let y = m.forward(&Tensor::ones([2, 4, 7, 11])).unwrap();
        assert_eq!(y.shape(), &[2, 4, 7, 11]);
        assert!(m.forward(&Tensor::ones([1, 4, 6, 8])).is_err());
        assert!(m.forward(&Tensor::ones([1, 3, 8, 8])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = RfeBlock::<f64>::new(2, &mut ParamInit::new(5), "rfe").unwrap();
        randomize_params(&mut m, 5, 0.5);
        let report = check_gradients(&m, &input([1, 2, 7, 7], 6), 1e-4).unwrap();
        assert!(report.pass, "{report}");
    }
}
