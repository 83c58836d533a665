//! Non-convolutional kernels and their gradients.

use std::hash::Hasher;

use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Exp,
}

/// `(outer, axis_len, inner)` for iterating a single axis of a row-major shape.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(
            op,
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    Ok(())
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Element>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("softmax", input.shape(), axis)?;
    if !input.is_finite() {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let (outer, len, inner) = axis_split(input.shape(), axis);
    let x = input.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| x[idx(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..len {
                let e = (x[idx(j)] - max).exp();
                out[idx(j)] = e;
                total = total + e;
            }
            for j in 0..len {
                out[idx(j)] = out[idx(j)] / total;
            }
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out))
}

/// Gradient of softmax given its output `y`.
pub fn softmax_backward<T: Element>(y: &Tensor<T>, axis: usize, grad: &Tensor<T>) -> Tensor<T> {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let (yv, gv) = (y.data(), grad.data());
    let mut dx = vec![T::zero(); yv.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let dot = (0..len).fold(T::zero(), |a, j| a + yv[idx(j)] * gv[idx(j)]);
            for j in 0..len {
                dx[idx(j)] = yv[idx(j)] * (gv[idx(j)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

pub fn activation<T: Element>(input: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    let out = match kind {
        Activation::Relu => {
            super::gradcheck::trace_branches(|h| {
                for v in input.data() {
                    h.write_u8(u8::from(*v > T::zero()));
                }
            });
            input.map(|v| v.max(T::zero()))
        }
        Activation::Sigmoid => input.map(|v| T::one() / (T::one() + (-v).exp())),
        Activation::Exp => input.map(T::exp),
    };
    out.ensure_finite(match kind {
        Activation::Relu => "relu",
        Activation::Sigmoid => "sigmoid",
        Activation::Exp => "exp",
    })
}

pub fn activation_backward<T: Element>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    kind: Activation,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let data = match kind {
        Activation::Relu => x
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
            .collect(),
        Activation::Sigmoid => y
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&yv, &g)| g * yv * (T::one() - yv))
            .collect(),
        Activation::Exp => y
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&yv, &g)| g * yv)
            .collect(),
    };
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Per-channel parameters of inference-mode batch normalization.
pub struct NormStats<'a, T> {
    pub scale: &'a Tensor<T>,
    pub shift: &'a Tensor<T>,
    pub mean: &'a Tensor<T>,
    pub var: &'a Tensor<T>,
    pub eps: f64,
}

impl<T: Element> NormStats<'_, T> {
    fn check(&self, channels: usize) -> Result<()> {
        for (name, t) in [
            ("scale", self.scale),
            ("shift", self.shift),
            ("mean", self.mean),
            ("var", self.var),
        ] {
            if t.shape() != [channels] {
                return Err(Error::shape(
                    "batchnorm_infer",
                    format!("{name} has shape {:?}, expected [{channels}]", t.shape()),
                ));
            }
        }
        if self
            .var
            .data()
            .iter()
            .any(|&v| v.as_f64() + self.eps <= 0.0)
        {
            return Err(Error::Config(
                "batchnorm_infer: var + eps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `y = scale * (x - mean) / sqrt(var + eps) + shift` along axis 1.
pub fn batchnorm_infer<T: Element>(
    input: &Tensor<T>,
    stats: &NormStats<'_, T>,
) -> Result<Tensor<T>> {
    if input.rank() < 2 {
        return Err(Error::shape(
            "batchnorm_infer",
            "input needs a channel axis",
        ));
    }
    let (outer, c, inner) = axis_split(input.shape(), 1);
    stats.check(c)?;
    let eps = T::from_f64_lossy(stats.eps);
    let x = input.data();
    let mut out = Vec::with_capacity(x.len());
    for o in 0..outer {
        for ch in 0..c {
            let inv = (stats.var.data()[ch] + eps).sqrt().recip();
            let (s, b, m) = (
                stats.scale.data()[ch],
                stats.shift.data()[ch],
                stats.mean.data()[ch],
            );
            let base = (o * c + ch) * inner;
            out.extend(x[base..base + inner].iter().map(|&v| s * (v - m) * inv + b));
        }
    }
    Tensor::from_parts(input.shape().to_vec(), out).ensure_finite("batchnorm_infer")
}

/// Gradients for `(x, scale, shift, mean, var)`.
pub fn batchnorm_backward<T: Element>(
    input: &Tensor<T>,
    stats: &NormStats<'_, T>,
    grad: &Tensor<T>,
) -> [Tensor<T>; 5] {
    let (outer, c, inner) = axis_split(input.shape(), 1);
    let eps = T::from_f64_lossy(stats.eps);
    let half = T::from_f64_lossy(0.5);
    let (x, g) = (input.data(), grad.data());
    let mut dx = vec![T::zero(); x.len()];
    let mut dscale = vec![T::zero(); c];
    let mut dshift = vec![T::zero(); c];
    let mut dmean = vec![T::zero(); c];
    let mut dvar = vec![T::zero(); c];
    for o in 0..outer {
        for ch in 0..c {
            let denom = stats.var.data()[ch] + eps;
            let inv = denom.sqrt().recip();
            let (s, m) = (stats.scale.data()[ch], stats.mean.data()[ch]);
            let base = (o * c + ch) * inner;
            for i in base..base + inner {
                let centered = x[i] - m;
                dx[i] = g[i] * s * inv;
                dscale[ch] = dscale[ch] + g[i] * centered * inv;
                dshift[ch] = dshift[ch] + g[i];
                dmean[ch] = dmean[ch] - g[i] * s * inv;
                dvar[ch] = dvar[ch] - half * g[i] * s * centered * inv / denom;
            }
        }
    }
    let vec_c = |d: Vec<T>| Tensor::from_parts(vec![c], d);
    [
        Tensor::from_parts(input.shape().to_vec(), dx),
        vec_c(dscale),
        vec_c(dshift),
        vec_c(dmean),
        vec_c(dvar),
    ]
}

/// Pooling window geometry; padding acts as negative infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        const OP: &str = "max_pool";
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config(
                "max_pool: kernel and stride must be positive".into(),
            ));
        }
        // every window must overlap real data
        if 2 * self.padding > self.kernel {
            return Err(Error::Config(format!(
                "max_pool: padding {} exceeds half of kernel {}",
                self.padding, self.kernel
            )));
        }
        let extent = |len: usize| {
            let padded = len + 2 * self.padding;
            (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
        };
        match (extent(h), extent(w)) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok((ho, wo)),
            _ => Err(Error::EmptyOutput { op: OP }),
        }
    }
}

/// Window-wise maximum. Also returns the flat input index selected for each
/// output (first maximum in scan order), used by the backward pass.
pub fn max_pool_with_indices<T: Element>(
    input: &Tensor<T>,
    spec: PoolSpec,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    let (ho, wo) = spec.output_hw(h, w)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let pad = spec.padding as isize;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..spec.kernel {
                    let iy = (oy * spec.stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..spec.kernel {
                        let ix = (ox * spec.stride + kx) as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    super::gradcheck::trace_branches(|h| {
        for &i in &arg {
            h.write_usize(i);
        }
    });
    let out = Tensor::from_parts(vec![n, c, ho, wo], out).ensure_finite("max_pool")?;
    Ok((out, arg))
}

pub fn max_pool<T: Element>(
    input: &Tensor<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    max_pool_with_indices(
        input,
        PoolSpec {
            kernel,
            stride,
            padding,
        },
    )
    .map(|(t, _)| t)
}

pub fn max_pool_backward<T: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    grad: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    for (&idx, &g) in argmax.iter().zip(grad.data()) {
        dx[idx] = dx[idx] + g;
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Mean over the spatial extent: `(N, C, H, W) -> (N, C, 1, 1)`.
pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if h * w == 0 {
        return Err(Error::EmptyOutput {
            op: "global_avg_pool",
        });
    }
    let count = T::from_usize(h * w).expect("spatial count fits the element type");
    let out = input
        .data()
        .chunks_exact(h * w)
        .map(|plane| plane.iter().fold(T::zero(), |a, &v| a + v) / count)
        .collect();
    Ok(Tensor::from_parts(vec![n, c, 1, 1], out))
}

pub fn global_avg_pool_backward<T: Element>(input_shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let hw: usize = input_shape[2..].iter().product();
    let count = T::from_usize(hw).expect("spatial count fits the element type");
    let mut dx = Vec::with_capacity(grad.len() * hw);
    for &g in grad.data() {
        dx.extend(std::iter::repeat_n(g / count, hw));
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Same-rank broadcast: each extent of `b` equals `a`'s or is 1 (or vice
/// versa). Returns the broadcast output shape.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("rank mismatch {a:?} vs {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(
                op,
                format!("cannot broadcast {a:?} with {b:?}"),
            )),
        })
        .collect()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Maps each flat output index to the flat index of a broadcast operand.
fn broadcast_index_map(out_shape: &[usize], src_shape: &[usize]) -> Vec<usize> {
    let total: usize = out_shape.iter().product();
    if out_shape == src_shape {
        return (0..total).collect();
    }
    let out_strides = strides(out_shape);
    let src_strides = strides(src_shape);
    (0..total)
        .map(|flat| {
            let mut rem = flat;
            let mut idx = 0;
            for d in 0..out_shape.len() {
                let coord = rem / out_strides[d];
                rem %= out_strides[d];
                if src_shape[d] != 1 {
                    idx += coord * src_strides[d];
                }
            }
            idx
        })
        .collect()
}

fn binary<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let ia = broadcast_index_map(&shape, a.shape());
    let ib = broadcast_index_map(&shape, b.shape());
    let data = ia
        .iter()
        .zip(&ib)
        .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
        .collect();
    Tensor::from_parts(shape, data).ensure_finite(op)
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary("add", a, b, |x, y| x + y)
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary("mul", a, b, |x, y| x * y)
}

/// Sums a gradient of the broadcast output shape back onto `src_shape`.
pub fn reduce_to_shape<T: Element>(grad: &Tensor<T>, src_shape: &[usize]) -> Tensor<T> {
    if grad.shape() == src_shape {
        return grad.clone();
    }
    let map = broadcast_index_map(grad.shape(), src_shape);
    let mut out = vec![T::zero(); src_shape.iter().product()];
    for (&j, &g) in map.iter().zip(grad.data()) {
        out[j] = out[j] + g;
    }
    Tensor::from_parts(src_shape.to_vec(), out)
}

/// Elementwise product gradient for one operand: `grad * other`, reduced.
pub fn mul_backward<T: Element>(
    grad: &Tensor<T>,
    other: &Tensor<T>,
    src_shape: &[usize],
) -> Tensor<T> {
    let map = broadcast_index_map(grad.shape(), other.shape());
    let full = Tensor::from_parts(
        grad.shape().to_vec(),
        grad.data()
            .iter()
            .zip(&map)
            .map(|(&g, &j)| g * other.data()[j])
            .collect(),
    );
    reduce_to_shape(&full, src_shape)
}

pub fn scale<T: Element>(input: &Tensor<T>, factor: T) -> Result<Tensor<T>> {
    input.map(|v| v * factor).ensure_finite("scale")
}

pub fn concat<T: Element>(inputs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?;
    check_axis("concat", first.shape(), axis)?;
    let mut shape = first.shape().to_vec();
    shape[axis] = 0;
    for t in inputs {
        let s = t.shape();
        let compatible = s.len() == shape.len()
            && s.iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::shape(
                "concat",
                format!(
                    "{:?} incompatible with {:?} on axis {axis}",
                    s,
                    first.shape()
                ),
            ));
        }
        shape[axis] += s[axis];
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for t in inputs {
            let chunk = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data()[o * chunk..][..chunk]);
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

pub fn concat_backward<T: Element>(
    shapes: &[Vec<usize>],
    axis: usize,
    grad: &Tensor<T>,
) -> Vec<Tensor<T>> {
    let outer: usize = grad.shape()[..axis].iter().product();
    let inner: usize = grad.shape()[axis + 1..].iter().product();
    let mut parts: Vec<Vec<T>> = shapes
        .iter()
        .map(|s| Vec::with_capacity(s.iter().product()))
        .collect();
    let mut offset = 0;
    for _ in 0..outer {
        for (s, part) in shapes.iter().zip(parts.iter_mut()) {
            let chunk = s[axis] * inner;
            part.extend_from_slice(&grad.data()[offset..offset + chunk]);
            offset += chunk;
        }
    }
    shapes
        .iter()
        .zip(parts)
        .map(|(s, d)| Tensor::from_parts(s.clone(), d))
        .collect()
}

/// Sums out `axis`, removing it from the shape.
pub fn sum_axis<T: Element>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis("sum_axis", input.shape(), axis)?;
    let (outer, len, inner) = axis_split(input.shape(), axis);
    let x = input.data();
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for j in 0..len {
            let src = &x[(o * len + j) * inner..][..inner];
            let dst = &mut out[o * inner..][..inner];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
    }
    let mut shape = input.shape().to_vec();
    shape.remove(axis);
    Ok(Tensor::from_parts(shape, out))
}

pub fn sum_axis_backward<T: Element>(
    input_shape: &[usize],
    axis: usize,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let (outer, len, inner) = axis_split(input_shape, axis);
    let mut dx = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let src = &grad.data()[o * inner..][..inner];
        for _ in 0..len {
            dx.extend_from_slice(src);
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Nearest-neighbour spatial upsampling by an integer factor.
pub fn upsample_nearest<T: Element>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if factor == 0 {
        return Err(Error::Config("upsample factor must be positive".into()));
    }
    let (ho, wo) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in input.data().chunks_exact(h * w) {
        for oy in 0..ho {
            let row = &plane[(oy / factor) * w..][..w];
            for ox in 0..wo {
                out.push(row[ox / factor]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, ho, wo], out))
}

pub fn upsample_nearest_backward<T: Element>(
    input_shape: &[usize],
    factor: usize,
    grad: &Tensor<T>,
) -> Tensor<T> {
    let [_, _, h, w] = *input_shape else {
        unreachable!("upsample input is rank 4")
    };
    let (ho, wo) = (h * factor, w * factor);
    let mut dx = vec![T::zero(); input_shape.iter().product()];
    for (plane, gplane) in dx
        .chunks_exact_mut(h * w)
        .zip(grad.data().chunks_exact(ho * wo))
    {
        for oy in 0..ho {
            for ox in 0..wo {
                let d = &mut plane[(oy / factor) * w + ox / factor];
                *d = *d + gplane[oy * wo + ox];
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}
