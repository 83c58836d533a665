//! Convolution and receptive-field unfolding via im2col.

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Stride 1, "same" padding `(k - 1) / 2`, no dilation, one group.
    pub fn same(kernel: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            padding: (kernel.saturating_sub(1)) / 2,
            dilation: 1,
            groups: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    /// Sets the dilation and the matching "same" padding `d * (k - 1) / 2`.
    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self.padding = dilation * (self.kernel.saturating_sub(1)) / 2;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 || self.groups == 0 {
            return Err(Error::Config(format!(
                "{op}: kernel, stride, dilation and groups must be positive ({self:?})"
            )));
        }
        Ok(())
    }

    /// Output extent along one spatial axis of length `len`.
    pub fn output_extent(&self, len: usize) -> Option<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    pub(crate) fn output_hw(&self, op: &'static str, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate(op)?;
        match (self.output_extent(h), self.output_extent(w)) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok((ho, wo)),
            _ => Err(Error::EmptyOutput { op }),
        }
    }
}

/// Gathers the receptive fields of channels `c0..c0 + cg` of image `n` into
/// a `(cg * k * k) x (ho * wo)` row-major matrix. Row order is `(c, ky, kx)`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Element>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    n: usize,
    c0: usize,
    cg: usize,
    spec: &ConvSpec,
    (ho, wo): (usize, usize),
    cols: &mut Vec<T>,
) {
    let k = spec.kernel;
    cols.clear();
    cols.resize(cg * k * k * ho * wo, T::zero());
    let pad = spec.padding as isize;
    for ci in 0..cg {
        let plane = &x[(n * c + c0 + ci) * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let out = &mut cols[row * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    for ox in 0..wo {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            out[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix laid out as in [`im2col`] back onto the
/// input planes.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Element>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    n: usize,
    c0: usize,
    cg: usize,
    spec: &ConvSpec,
    (ho, wo): (usize, usize),
    dx: &mut [T],
) {
    let k = spec.kernel;
    let pad = spec.padding as isize;
    for ci in 0..cg {
        let plane = &mut dx[(n * c + c0 + ci) * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * ho * wo..][..ho * wo];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            let dst = &mut plane[iy as usize * w + ix as usize];
                            *dst = *dst + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

struct ConvGeometry {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    ho: usize,
    wo: usize,
    cg_in: usize,
    cg_out: usize,
}

fn conv_geometry<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<ConvGeometry> {
    const OP: &str = "conv2d";
    let (n, c_in, h, w) = input.dims4()?;
    let (c_out, wc, kh, kw) = weight.dims4()?;
    spec.validate(OP)?;
    if kh != spec.kernel || kw != spec.kernel {
        return Err(Error::shape(
            OP,
            format!(
                "weight kernel {kh}x{kw} does not match spec kernel {}",
                spec.kernel
            ),
        ));
    }
    if c_in % spec.groups != 0 || c_out % spec.groups != 0 {
        return Err(Error::shape(
            OP,
            format!(
                "groups {} must divide input channels {c_in} and output channels {c_out}",
                spec.groups
            ),
        ));
    }
    let cg_in = c_in / spec.groups;
    if wc != cg_in {
        return Err(Error::shape(
            OP,
            format!("weight expects {wc} input channels per group, input provides {cg_in}"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape(
                OP,
                format!("bias shape {:?}, expected [{c_out}]", b.shape()),
            ));
        }
    }
    let (ho, wo) = spec.output_hw(OP, h, w)?;
    Ok(ConvGeometry {
        n,
        c_in,
        h,
        w,
        c_out,
        ho,
        wo,
        cg_in,
        cg_out: c_out / spec.groups,
    })
}

/// 2-D cross-correlation with zero padding, stride, dilation and groups.
///
/// `weight` is `(C_out, C_in / groups, k, k)`; the result is
/// `(N, C_out, H', W')`.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, bias, spec)?;
    let kk = g.cg_in * spec.kernel * spec.kernel;
    let hw_out = g.ho * g.wo;
    let mut out = vec![T::zero(); g.n * g.c_out * hw_out];
    let mut cols = Vec::new();
    let x = input.data();
    let wt = weight.data();
    for n in 0..g.n {
        for grp in 0..spec.groups {
            im2col(
                x,
                (g.c_in, g.h, g.w),
                n,
                grp * g.cg_in,
                g.cg_in,
                spec,
                (g.ho, g.wo),
                &mut cols,
            );
            for o in 0..g.cg_out {
                let oc = grp * g.cg_out + o;
                let dst = &mut out[(n * g.c_out + oc) * hw_out..][..hw_out];
                let wrow = &wt[oc * kk..][..kk];
                for (r, &wv) in wrow.iter().enumerate() {
                    let src = &cols[r * hw_out..][..hw_out];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + wv * s;
                    }
                }
                if let Some(b) = bias {
                    let bv = b.data()[oc];
                    for d in dst.iter_mut() {
                        *d = *d + bv;
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![g.n, g.c_out, g.ho, g.wo], out).ensure_finite("conv2d")
}

/// Input, weight and optional bias gradients.
pub type ConvGrads<T> = (Tensor<T>, Tensor<T>, Option<Tensor<T>>);

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(input, weight, None, spec)?;
    if grad_out.shape() != [g.n, g.c_out, g.ho, g.wo] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("output gradient shape {:?}", grad_out.shape()),
        ));
    }
    let kk = g.cg_in * spec.kernel * spec.kernel;
    let hw_out = g.ho * g.wo;
    let mut dx = vec![T::zero(); input.len()];
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); g.c_out];
    let mut cols = Vec::new();
    let mut dcols = vec![T::zero(); kk * hw_out];
    let wt = weight.data();
    let go = grad_out.data();
    for n in 0..g.n {
        for grp in 0..spec.groups {
            im2col(
                input.data(),
                (g.c_in, g.h, g.w),
                n,
                grp * g.cg_in,
                g.cg_in,
                spec,
                (g.ho, g.wo),
                &mut cols,
            );
            dcols.iter_mut().for_each(|v| *v = T::zero());
            for o in 0..g.cg_out {
                let oc = grp * g.cg_out + o;
                let gout = &go[(n * g.c_out + oc) * hw_out..][..hw_out];
                db[oc] = db[oc] + gout.iter().fold(T::zero(), |a, &v| a + v);
                for r in 0..kk {
                    let col = &cols[r * hw_out..][..hw_out];
                    let acc = gout
                        .iter()
                        .zip(col)
                        .fold(T::zero(), |a, (&gv, &cv)| a + gv * cv);
                    dw[oc * kk + r] = dw[oc * kk + r] + acc;
                    let wv = wt[oc * kk + r];
                    let dcol = &mut dcols[r * hw_out..][..hw_out];
                    for (d, &gv) in dcol.iter_mut().zip(gout) {
                        *d = *d + wv * gv;
                    }
                }
            }
            col2im(
                &dcols,
                (g.c_in, g.h, g.w),
                n,
                grp * g.cg_in,
                g.cg_in,
                spec,
                (g.ho, g.wo),
                &mut dx,
            );
        }
    }
    Ok((
        Tensor::from_parts(input.shape().to_vec(), dx),
        Tensor::from_parts(weight.shape().to_vec(), dw),
        has_bias.then(|| Tensor::from_parts(vec![g.c_out], db)),
    ))
}

/// Materializes every `k x k` receptive field as `k²` feature planes.
///
/// Output is `(N, C * k², H', W')`; plane `c * k² + j` holds the `j`-th
/// (row-major) element of channel `c`'s receptive field. `spec.groups` is
/// ignored.
pub fn unfold<T: Element>(input: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let (ho, wo) = spec.output_hw("unfold", h, w)?;
    let per_image = c * spec.kernel * spec.kernel * ho * wo;
    let mut out = Vec::with_capacity(n * per_image);
    let mut cols = Vec::new();
    for img in 0..n {
        im2col(
            input.data(),
            (c, h, w),
            img,
            0,
            c,
            spec,
            (ho, wo),
            &mut cols,
        );
        out.extend_from_slice(&cols);
    }
    Ok(Tensor::from_parts(
        vec![n, c * spec.kernel * spec.kernel, ho, wo],
        out,
    ))
}

pub fn unfold_backward<T: Element>(
    input_shape: &[usize],
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = *input_shape else {
        return Err(Error::shape("unfold_backward", "input must be rank 4"));
    };
    let (ho, wo) = spec.output_hw("unfold", h, w)?;
    let per_image = c * spec.kernel * spec.kernel * ho * wo;
    if grad_out.len() != n * per_image {
        return Err(Error::shape(
            "unfold_backward",
            format!("output gradient shape {:?}", grad_out.shape()),
        ));
    }
    let mut dx = vec![T::zero(); n * c * h * w];
    for img in 0..n {
        col2im(
            &grad_out.data()[img * per_image..][..per_image],
            (c, h, w),
            img,
            0,
            c,
            spec,
            (ho, wo),
            &mut dx,
        );
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), dx))
}
