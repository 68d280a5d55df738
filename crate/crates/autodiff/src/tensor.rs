//! Dense row-major `f64` tensors and the raw kernels the graph builds on.

use std::fmt;

use crate::error::{AutodiffError, Result};

/// A dense, row-major tensor of 64-bit floats.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(AutodiffError::ElementCount {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a rank-0 (or single-element) tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(AutodiffError::ElementCount {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

// ---------------------------------------------------------------------------
// Raw kernels. Shapes are validated by the graph before these are called.
// ---------------------------------------------------------------------------

/// `rhs` shape must equal `lhs` shape or be a suffix of it.
pub(crate) fn is_suffix(full: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= full.len() && full[full.len() - suffix.len()..] == *suffix
}

pub(crate) fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n = b.data.len();
    let data = if n == a.data.len() {
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
    } else if n == 1 {
        let y = b.data[0];
        a.data.iter().map(|&x| f(x, y)).collect()
    } else {
        let mut out = Vec::with_capacity(a.data.len());
        for chunk in a.data.chunks_exact(n) {
            out.extend(chunk.iter().zip(&b.data).map(|(&x, &y)| f(x, y)));
        }
        out
    };
    Tensor::from_parts(a.shape.clone(), data)
}

/// Sums the leading dimensions of `x` away so the result has shape `to`.
pub(crate) fn sum_leading(x: &Tensor, to: &[usize]) -> Tensor {
    let n = numel(to);
    let mut out = vec![0.0; n];
    for chunk in x.data.chunks_exact(n.max(1)) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::from_parts(to.to_vec(), out)
}

pub(crate) fn expand_leading(x: &Tensor, to: &[usize]) -> Tensor {
    let reps = numel(to) / x.data.len().max(1);
    let mut data = Vec::with_capacity(numel(to));
    for _ in 0..reps {
        data.extend_from_slice(&x.data);
    }
    Tensor::from_parts(to.to_vec(), data)
}

/// (outer, axis extent, inner) decomposition of a shape around `axis`.
fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

/// Sum along `axis`, keeping it as extent 1.
pub(crate) fn sum_axis(x: &Tensor, axis: usize) -> Tensor {
    let (outer, n, inner) = split3(&x.shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for k in 0..n {
            let src = &x.data[(o * n + k) * inner..(o * n + k + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let mut shape = x.shape.clone();
    shape[axis] = 1;
    Tensor::from_parts(shape, out)
}

/// Repeat an extent-1 `axis` to extent `n`.
pub(crate) fn expand_axis(x: &Tensor, axis: usize, n: usize) -> Tensor {
    let (outer, one, inner) = split3(&x.shape, axis);
    debug_assert_eq!(one, 1);
    let mut out = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        let src = &x.data[o * inner..(o + 1) * inner];
        for _ in 0..n {
            out.extend_from_slice(src);
        }
    }
    let mut shape = x.shape.clone();
    shape[axis] = n;
    Tensor::from_parts(shape, out)
}

pub(crate) fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
    let mut shape = parts[0].shape.clone();
    shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    let mut out = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for p in parts {
            let w = p.shape[axis] * inner;
            out.extend_from_slice(&p.data[o * w..(o + 1) * w]);
        }
    }
    Tensor::from_parts(shape, out)
}

pub(crate) fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let (outer, n, inner) = split3(&x.shape, axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&x.data[base..base + len * inner]);
    }
    let mut shape = x.shape.clone();
    shape[axis] = len;
    Tensor::from_parts(shape, out)
}

/// Zero-pad `axis` with `before` and `after` slots.
pub(crate) fn pad(x: &Tensor, axis: usize, before: usize, after: usize) -> Tensor {
    let (outer, n, inner) = split3(&x.shape, axis);
    let m = before + n + after;
    let mut out = vec![0.0; outer * m * inner];
    for o in 0..outer {
        let src = &x.data[o * n * inner..(o + 1) * n * inner];
        let dst = (o * m + before) * inner;
        out[dst..dst + n * inner].copy_from_slice(src);
    }
    let mut shape = x.shape.clone();
    shape[axis] = m;
    Tensor::from_parts(shape, out)
}

pub(crate) fn permute(x: &Tensor, perm: &[usize]) -> Tensor {
    let rank = x.shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * x.shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = x.data.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return Tensor::from_parts(out_shape, out);
    }
    // Innermost axis handled in a tight loop.
    let last = rank - 1;
    let inner_n = out_shape[last];
    let inner_stride = strides[last];
    let mut idx = vec![0usize; rank];
    let outer_total = total / inner_n.max(1);
    for _ in 0..outer_total {
        let base: usize = idx[..last].iter().zip(&strides[..last]).map(|(i, s)| i * s).sum();
        for j in 0..inner_n {
            out.push(x.data[base + j * inner_stride]);
        }
        for ax in (0..last).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

/// `c[m×n] = a[m×k] · b[k×n]`, all row-major.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    // SAFETY: slices are sized m*k, k*n and m*n by the callers, with
    // row-major strides matching those extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product over the last two axes. `b` is either rank 2 (shared across
/// all leading batch axes of `a`) or has the same leading axes as `a`.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let ra = a.shape.len();
    let (m, k) = (a.shape[ra - 2], a.shape[ra - 1]);
    let n = b.shape[b.shape.len() - 1];
    let mut shape = a.shape.clone();
    shape[ra - 1] = n;
    let batch = numel(&a.shape[..ra - 2]);
    let mut out = vec![0.0; batch * m * n];
    if b.shape.len() == 2 {
        gemm(batch * m, k, n, &a.data, &b.data, &mut out);
    } else {
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &a.data[i * m * k..(i + 1) * m * k],
                &b.data[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
    }
    Tensor::from_parts(shape, out)
}

/// Softmax along the last axis with max subtraction.
pub(crate) fn softmax_last(x: &Tensor) -> Tensor {
    let n = *x.shape.last().unwrap_or(&1);
    let mut out = x.data.clone();
    for row in out.chunks_exact_mut(n.max(1)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::from_parts(x.shape.clone(), out)
}

/// Sliding windows along the time axis of `[batch, len, ch]`, zero padded by
/// `padding` on both ends, giving `[batch, out_len, kernel*ch]`.
pub(crate) fn unfold(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Tensor {
    let (b, len, ch) = (x.shape[0], x.shape[1], x.shape[2]);
    let out_len = conv_out_len(len, kernel, stride, padding);
    let mut out = vec![0.0; b * out_len * kernel * ch];
    for bi in 0..b {
        for t in 0..out_len {
            for j in 0..kernel {
                let src = (t * stride + j) as isize - padding as isize;
                if src < 0 || src as usize >= len {
                    continue;
                }
                let s = (bi * len + src as usize) * ch;
                let d = ((bi * out_len + t) * kernel + j) * ch;
                out[d..d + ch].copy_from_slice(&x.data[s..s + ch]);
            }
        }
    }
    Tensor::from_parts(vec![b, out_len, kernel * ch], out)
}

/// Adjoint of [`unfold`]: scatter-adds windows back onto a `[batch, len, ch]` signal.
pub(crate) fn fold(x: &Tensor, len: usize, kernel: usize, stride: usize, padding: usize) -> Tensor {
    let (b, out_len, kc) = (x.shape[0], x.shape[1], x.shape[2]);
    let ch = kc / kernel;
    let mut out = vec![0.0; b * len * ch];
    for bi in 0..b {
        for t in 0..out_len {
            for j in 0..kernel {
                let dst = (t * stride + j) as isize - padding as isize;
                if dst < 0 || dst as usize >= len {
                    continue;
                }
                let d = (bi * len + dst as usize) * ch;
                let s = ((bi * out_len + t) * kernel + j) * ch;
                for c in 0..ch {
                    out[d + c] += x.data[s + c];
                }
            }
        }
    }
    Tensor::from_parts(vec![b, len, ch], out)
}

/// Output length of a strided 1-D convolution: `⌊(len + 2p − k)/s⌋ + 1`.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (len + 2 * padding - kernel) / stride + 1
}

/// Elementwise smooth-L1 of a difference `d`: `½d²/δ` inside `|d| < δ`, `|d| − δ/2` outside.
pub fn smooth_l1_scalar(d: f64, delta: f64) -> f64 {
    let a = d.abs();
    if a < delta {
        0.5 * d * d / delta
    } else {
        a - 0.5 * delta
    }
}
