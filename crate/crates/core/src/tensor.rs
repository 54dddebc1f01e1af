//! Dense row-major f64 tensors and the numeric kernels the rest of the
//! library builds on.
//!
//! Layout is row-major (last dimension contiguous). Binary operations
//! broadcast by trailing-dimension alignment: shapes are right-aligned and
//! each pair of dimensions must be equal or one of them 1. That is the only
//! broadcasting rule in the library.

use crate::error::{Error, Result};
use crate::rng::Rng;
use std::io::{Read, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} implies {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Identity matrix of size n.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn at(&self, idx: usize) -> f64 {
        self.data[idx]
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn assert_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }

    // ---- elementwise maps ----

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for x in &mut self.data {
            *x = f(*x);
        }
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| x.max(0.0))
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn neg(&self) -> Tensor {
        self.map(|x| -x)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|x| c * x)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(|x| x + c)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|x| x.clamp(lo, hi))
    }

    // ---- broadcast binary ops ----

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    /// Elementwise comparison producing a {0,1} mask.
    pub fn ge(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "ge", |a, b| if a >= b { 1.0 } else { 0.0 })
    }

    /// Broadcast combine with trailing-dimension alignment.
    pub fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape)
            .ok_or_else(|| Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)))?;
        let n: usize = out_shape.iter().product();
        let lhs_strides = broadcast_strides(&self.shape, &out_shape);
        let rhs_strides = broadcast_strides(&other.shape, &out_shape);
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; out_shape.len()];
        for _ in 0..n {
            let mut a = 0usize;
            let mut b = 0usize;
            for (d, &i) in idx.iter().enumerate() {
                a += i * lhs_strides[d];
                b += i * rhs_strides[d];
            }
            data.push(f(self.data[a], other.data[b]));
            for d in (0..out_shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    /// `self += other` for identically shaped tensors.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    /// `self += c * other` for identically shaped tensors.
    pub fn add_scaled_assign(&mut self, other: &Tensor, c: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add_scaled_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
        Ok(())
    }

    // ---- reductions ----

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    // ---- linear algebra ----

    /// Matrix product of a `[m, k]` and a `[k, n]` tensor.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = match self.shape[..] {
            [m, k] => (m, k),
            _ => return Err(Error::shape("matmul", format!("lhs must be 2-d, got {:?}", self.shape))),
        };
        let (k2, n) = match other.shape[..] {
            [k2, n] => (k2, n),
            _ => return Err(Error::shape("matmul", format!("rhs must be 2-d, got {:?}", other.shape))),
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions {k} vs {k2}"),
            ));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (o, &b) in dst.iter_mut().zip(row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `W x` for `W: [out, in]`, `x: [in]`.
    pub fn matvec(&self, x: &Tensor) -> Result<Tensor> {
        let (m, k) = match self.shape[..] {
            [m, k] => (m, k),
            _ => return Err(Error::shape("matvec", format!("lhs must be 2-d, got {:?}", self.shape))),
        };
        if x.shape != [k] {
            return Err(Error::shape(
                "matvec",
                format!("vector shape {:?} vs inner dim {k}", x.shape),
            ));
        }
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            out[i] = row.iter().zip(x.data.iter()).map(|(&w, &v)| w * v).sum();
        }
        Ok(Tensor {
            shape: vec![m],
            data: out,
        })
    }

    /// `W^T y` for `W: [out, in]`, `y: [out]`.
    pub fn matvec_transposed(&self, y: &Tensor) -> Result<Tensor> {
        let (m, k) = match self.shape[..] {
            [m, k] => (m, k),
            _ => return Err(Error::shape("matvec_transposed", format!("{:?}", self.shape))),
        };
        if y.shape != [m] {
            return Err(Error::shape(
                "matvec_transposed",
                format!("vector shape {:?} vs outer dim {m}", y.shape),
            ));
        }
        let mut out = vec![0.0; k];
        for i in 0..m {
            let c = y.data[i];
            if c == 0.0 {
                continue;
            }
            let row = &self.data[i * k..(i + 1) * k];
            for (o, &w) in out.iter_mut().zip(row.iter()) {
                *o += c * w;
            }
        }
        Ok(Tensor {
            shape: vec![k],
            data: out,
        })
    }

    /// Outer product `y x^T` as `[len(y), len(x)]`.
    pub fn outer(y: &Tensor, x: &Tensor) -> Result<Tensor> {
        if y.shape.len() != 1 || x.shape.len() != 1 {
            return Err(Error::shape("outer", "both operands must be 1-d"));
        }
        let m = y.data.len();
        let k = x.data.len();
        let mut out = Vec::with_capacity(m * k);
        for &a in &y.data {
            for &b in &x.data {
                out.push(a * b);
            }
        }
        Ok(Tensor {
            shape: vec![m, k],
            data: out,
        })
    }

    // ---- sampling ----

    /// Tensor of i.i.d. N(mean, sigma^2) draws. `sigma == 0` yields the
    /// constant `mean`.
    pub fn gaussian(rng: &mut Rng, shape: &[usize], mean: f64, sigma: f64) -> Result<Tensor> {
        if sigma < 0.0 {
            return Err(Error::Parameter(format!(
                "gaussian sigma must be >= 0, got {sigma}"
            )));
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        if sigma == 0.0 {
            data.resize(n, mean);
        } else {
            for _ in 0..n {
                data.push(mean + sigma * rng.standard_normal());
            }
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Tensor of i.i.d. U(lo, hi) draws.
    pub fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(lo, hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    // ---- serialization ----

    /// Flat binary layout: `rank: u32`, `dims: u32 * rank`, then the
    /// row-major payload as little-endian f64. The header is little-endian
    /// as well.
    pub fn write_bin(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_bin(r: &mut impl Read) -> Result<Tensor> {
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        if rank > 8 {
            return Err(Error::Format {
                offset: 0,
                detail: format!("implausible tensor rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut f64buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut f64buf)?;
            data.push(f64::from_le_bytes(f64buf));
        }
        Ok(Tensor { shape, data })
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        let s = if shape[i] == 1 { 0 } else { acc };
        strides[offset + i] = s;
        acc *= shape[i];
    }
    strides
}

/// Cross-correlation of a `[C, H, W]` input with `[O, C, kH, kW]` kernels and
/// zero padding. Output height is `(H + 2p - kH) / stride + 1`; a non-integral
/// quotient is a shape error.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (c, h, w) = match input.shape[..] {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("conv2d", format!("input must be 3-d, got {:?}", input.shape))),
    };
    let (o, kc, kh, kw) = match kernels.shape[..] {
        [o, kc, kh, kw] => (o, kc, kh, kw),
        _ => return Err(Error::shape("conv2d", format!("kernels must be 4-d, got {:?}", kernels.shape))),
    };
    if kc != c {
        return Err(Error::shape(
            "conv2d",
            format!("input channels {c} vs kernel channels {kc}"),
        ));
    }
    if stride == 0 {
        return Err(Error::Parameter("conv2d stride must be >= 1".into()));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::shape("conv2d", "kernel larger than padded input"));
    }
    if (h + 2 * padding - kh) % stride != 0 || (w + 2 * padding - kw) % stride != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("non-integral output size for input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"),
        ));
    }
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = oy * stride + ky;
                        if iy < padding || iy >= h + padding {
                            continue;
                        }
                        let iy = iy - padding;
                        for kx in 0..kw {
                            let ix = ox * stride + kx;
                            if ix < padding || ix >= w + padding {
                                continue;
                            }
                            let ix = ix - padding;
                            acc += input.data[(ic * h + iy) * w + ix]
                                * kernels.data[((oc * c + ic) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::new(vec![o, oh, ow], out)
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_backward_input(
    grad_out: &Tensor,
    kernels: &Tensor,
    input_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c, h, w) = match input_shape {
        [c, h, w] => (*c, *h, *w),
        _ => return Err(Error::shape("conv2d_backward_input", "input shape must be 3-d")),
    };
    let (o, _kc, kh, kw) = match kernels.shape[..] {
        [o, kc, kh, kw] => (o, kc, kh, kw),
        _ => return Err(Error::shape("conv2d_backward_input", "kernels must be 4-d")),
    };
    let (go, oh, ow) = match grad_out.shape[..] {
        [go, oh, ow] => (go, oh, ow),
        _ => return Err(Error::shape("conv2d_backward_input", "grad must be 3-d")),
    };
    if go != o {
        return Err(Error::shape("conv2d_backward_input", "channel mismatch"));
    }
    let mut grad_in = vec![0.0; c * h * w];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.data[(oc * oh + oy) * ow + ox];
                if g == 0.0 {
                    continue;
                }
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = oy * stride + ky;
                        if iy < padding || iy >= h + padding {
                            continue;
                        }
                        let iy = iy - padding;
                        for kx in 0..kw {
                            let ix = ox * stride + kx;
                            if ix < padding || ix >= w + padding {
                                continue;
                            }
                            let ix = ix - padding;
                            grad_in[(ic * h + iy) * w + ix] +=
                                g * kernels.data[((oc * c + ic) * kh + ky) * kw + kx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], grad_in)
}

/// Gradient of `conv2d` with respect to its kernels.
pub fn conv2d_backward_kernels(
    grad_out: &Tensor,
    input: &Tensor,
    kernel_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c, h, w) = match input.shape[..] {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("conv2d_backward_kernels", "input must be 3-d")),
    };
    let (o, kc, kh, kw) = match kernel_shape {
        [o, kc, kh, kw] => (*o, *kc, *kh, *kw),
        _ => return Err(Error::shape("conv2d_backward_kernels", "kernel shape must be 4-d")),
    };
    if kc != c {
        return Err(Error::shape("conv2d_backward_kernels", "channel mismatch"));
    }
    let (_go, oh, ow) = match grad_out.shape[..] {
        [go, oh, ow] => (go, oh, ow),
        _ => return Err(Error::shape("conv2d_backward_kernels", "grad must be 3-d")),
    };
    let mut grad_k = vec![0.0; o * c * kh * kw];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.data[(oc * oh + oy) * ow + ox];
                if g == 0.0 {
                    continue;
                }
                for ic in 0..c {
                    for ky in 0..kh {
                        let iy = oy * stride + ky;
                        if iy < padding || iy >= h + padding {
                            continue;
                        }
                        let iy = iy - padding;
                        for kx in 0..kw {
                            let ix = ox * stride + kx;
                            if ix < padding || ix >= w + padding {
                                continue;
                            }
                            let ix = ix - padding;
                            grad_k[((oc * c + ic) * kh + ky) * kw + kx] +=
                                g * input.data[(ic * h + iy) * w + ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![o, c, kh, kw], grad_k)
}

/// Non-overlapping average pooling with a square window; H and W must divide
/// evenly by the window.
pub fn avgpool2d(input: &Tensor, window: usize) -> Result<Tensor> {
    let (c, h, w) = match input.shape[..] {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::shape("avgpool2d", format!("input must be 3-d, got {:?}", input.shape))),
    };
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::shape(
            "avgpool2d",
            format!("window {window} does not tile {h}x{w}"),
        ));
    }
    let oh = h / window;
    let ow = w / window;
    let inv = 1.0 / (window * window) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for ic in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..window {
                    for kx in 0..window {
                        acc += input.data[(ic * h + oy * window + ky) * w + ox * window + kx];
                    }
                }
                out[(ic * oh + oy) * ow + ox] = acc * inv;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Gradient of `avgpool2d`: each input cell receives its window's gradient
/// divided by the window area.
pub fn avgpool2d_backward(grad_out: &Tensor, window: usize, input_shape: &[usize]) -> Result<Tensor> {
    let (c, h, w) = match input_shape {
        [c, h, w] => (*c, *h, *w),
        _ => return Err(Error::shape("avgpool2d_backward", "input shape must be 3-d")),
    };
    let oh = h / window;
    let ow = w / window;
    let inv = 1.0 / (window * window) as f64;
    let mut grad_in = vec![0.0; c * h * w];
    for ic in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.data[(ic * oh + oy) * ow + ox] * inv;
                for ky in 0..window {
                    for kx in 0..window {
                        grad_in[(ic * h + oy * window + ky) * w + ox * window + kx] = g;
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let i = Tensor::eye(2);
        assert_eq!(a.matmul(&i).unwrap(), a);
        assert_eq!(i.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_column_vector() {
        let i = Tensor::eye(2);
        let v = t(&[2, 1], &[5.0, 7.0]);
        assert_eq!(i.matmul(&v).unwrap(), v);
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let ones = t(&[2, 1], &[1.0, 1.0]);
        assert_eq!(a.matmul(&ones).unwrap(), t(&[2, 1], &[3.0, 7.0]));
    }

    #[test]
    fn matmul_dimension_error() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn conv_unit_kernel_is_identity() {
        let input = t(&[1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let kernel = t(&[1, 1, 1, 1], &[1.0]);
        let out = conv2d(&input, &kernel, 1, 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_zero_input_zero_output() {
        let input = Tensor::zeros(&[2, 4, 4]);
        let kernel = t(&[1, 2, 3, 3], &[0.5; 18]);
        let out = conv2d(&input, &kernel, 1, 1).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
        assert_eq!(out.shape(), &[1, 4, 4]);
    }

    #[test]
    fn conv_direct_substitution() {
        let input = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let kernel = t(&[1, 1, 2, 2], &[1.0, 1.0, 1.0, 1.0]);
        let out = conv2d(&input, &kernel, 1, 0).unwrap();
        assert_eq!(out, t(&[1, 1, 1], &[10.0]));
    }

    #[test]
    fn conv_non_integral_output_is_error() {
        let input = Tensor::zeros(&[1, 5, 5]);
        let kernel = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(conv2d(&input, &kernel, 2, 0).is_err());
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(Tensor::scalar(-2.0).relu().at(0), 0.0);
        assert_eq!(Tensor::scalar(0.0).tanh().at(0), 0.0);
        assert_eq!(Tensor::from_vec(vec![1.0, 2.0, 3.0]).sum(), 6.0);
    }

    #[test]
    fn broadcast_trailing_alignment() {
        let m = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let row = t(&[3], &[10.0, 20.0, 30.0]);
        let out = m.add(&row).unwrap();
        assert_eq!(out, t(&[2, 3], &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]));
    }

    #[test]
    fn broadcast_incompatible_is_error() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2], &[0.0; 2]);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn gaussian_sigma_zero_constant() {
        let mut rng = Rng::new(5);
        let g = Tensor::gaussian(&mut rng, &[4, 4], 0.5, 0.0).unwrap();
        assert!(g.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn gaussian_same_seed_identical() {
        let a = Tensor::gaussian(&mut Rng::new(11), &[100], 0.0, 1.0).unwrap();
        let b = Tensor::gaussian(&mut Rng::new(11), &[100], 0.0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn serialization_roundtrip() {
        let src = t(&[2, 3], &[1.0, -2.5, 3.25, 0.0, f64::MIN_POSITIVE, 1e300]);
        let mut buf = Vec::new();
        src.write_bin(&mut buf).unwrap();
        let back = Tensor::read_bin(&mut buf.as_slice()).unwrap();
        assert_eq!(src, back);
    }

    #[test]
    fn avgpool_and_backward() {
        let input = t(&[1, 2, 2], &[1.0, 3.0, 5.0, 7.0]);
        let out = avgpool2d(&input, 2).unwrap();
        assert_eq!(out, t(&[1, 1, 1], &[4.0]));
        let grad = avgpool2d_backward(&t(&[1, 1, 1], &[8.0]), 2, &[1, 2, 2]).unwrap();
        assert_eq!(grad, t(&[1, 2, 2], &[2.0, 2.0, 2.0, 2.0]));
    }
}
