//! Convolution kernels lowered to matrix products (im2col / col2im).
//!
//! Everything here is cross-correlation: no kernel flip. The transposed
//! convolution is implemented as the exact adjoint of the forward one, so the
//! three raw routines below (forward, data-gradient, weight-gradient) serve
//! both operators with their roles swapped.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::tensor::{Shape, Tensor};

/// Stride, dilation and padding of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    /// Extra rows/cols appended to the output of a transposed convolution so
    /// a stride-2 downsample of an even input can be inverted exactly.
    /// Ignored by the forward convolution.
    pub output_padding: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        ConvGeometry {
            stride,
            dilation,
            padding,
            output_padding: 0,
        }
    }

    /// Stride 1 with padding that keeps spatial size for an odd kernel `k`.
    pub const fn same(k: usize, dilation: usize) -> Self {
        ConvGeometry::new(1, dilation, dilation * (k - 1) / 2)
    }

    pub const fn with_output_padding(mut self, op: usize) -> Self {
        self.output_padding = op;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::invalid(format!(
                "stride and dilation must be >= 1 (got stride {}, dilation {})",
                self.stride, self.dilation
            )));
        }
        if self.output_padding >= self.stride {
            return Err(Error::invalid(format!(
                "output padding {} must be smaller than stride {}",
                self.output_padding, self.stride
            )));
        }
        Ok(())
    }
}

/// Kernel, bias and geometry of one convolution layer.
///
/// For [`conv2d`] the kernel is `(c_out, c_in, k_h, k_w)`. For
/// [`conv2d_transpose`] the same array is read as `(c_in, c_out, k_h, k_w)`,
/// which makes the transposed operator the adjoint of the forward one with
/// identical parameters.
#[derive(Debug, Clone)]
pub struct ConvParams<T> {
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geometry: ConvGeometry,
}

/// Resolved sizes of a forward convolution `x (n,ci,h,w) -> y (n,co,oh,ow)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvDims {
    fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    pub fn in_shape(&self) -> Shape {
        Shape::new(self.n, self.ci, self.h, self.w)
    }

    pub fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.co, self.oh, self.ow)
    }
}

fn out_len(len: usize, k: usize, g: &ConvGeometry, axis: &str) -> Result<usize> {
    let span = g.dilation * (k - 1) + 1;
    let padded = len + 2 * g.padding;
    if padded < span {
        return Err(Error::shape(format!(
            "{axis} extent {len} with padding {} is smaller than the dilated kernel span {span}",
            g.padding
        )));
    }
    Ok((padded - span) / g.stride + 1)
}

/// Dims of `conv2d(x, kernel)`.
pub(crate) fn conv_dims(x: Shape, kernel: Shape, g: &ConvGeometry) -> Result<ConvDims> {
    g.validate()?;
    let (co, ci, kh, kw) = (kernel.n, kernel.c, kernel.h, kernel.w);
    if kh == 0 || kw == 0 || co == 0 || ci == 0 {
        return Err(Error::shape(format!("degenerate kernel {kernel}")));
    }
    if x.c != ci {
        return Err(Error::shape(format!(
            "conv2d input has {} channels but kernel {kernel} expects {ci}",
            x.c
        )));
    }
    Ok(ConvDims {
        n: x.n,
        ci,
        h: x.h,
        w: x.w,
        co,
        kh,
        kw,
        oh: out_len(x.h, kh, g, "height")?,
        ow: out_len(x.w, kw, g, "width")?,
        stride: g.stride,
        dilation: g.dilation,
        padding: g.padding,
    })
}

fn transposed_len(len: usize, k: usize, g: &ConvGeometry, axis: &str) -> Result<usize> {
    let full = (len - 1) * g.stride + g.dilation * (k - 1) + 1 + g.output_padding;
    if full <= 2 * g.padding {
        return Err(Error::shape(format!(
            "transposed conv {axis}: padding {} consumes the whole output",
            g.padding
        )));
    }
    Ok(full - 2 * g.padding)
}

/// Dims of the forward convolution whose adjoint is
/// `conv2d_transpose(x, kernel)`; `x` plays the role of that convolution's
/// output.
pub(crate) fn transpose_dims(x: Shape, kernel: Shape, g: &ConvGeometry) -> Result<ConvDims> {
    g.validate()?;
    let (ci_t, co_t, kh, kw) = (kernel.n, kernel.c, kernel.h, kernel.w);
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(format!(
            "conv2d_transpose requires odd kernels, got {kh}x{kw}"
        )));
    }
    if x.c != ci_t {
        return Err(Error::shape(format!(
            "conv2d_transpose input has {} channels but kernel {kernel} expects {ci_t}",
            x.c
        )));
    }
    if x.h == 0 || x.w == 0 {
        return Err(Error::shape(format!("empty input {x}")));
    }
    let h = transposed_len(x.h, kh, g, "height")?;
    let w = transposed_len(x.w, kw, g, "width")?;
    let dims = ConvDims {
        n: x.n,
        ci: co_t,
        h,
        w,
        co: ci_t,
        kh,
        kw,
        oh: x.h,
        ow: x.w,
        stride: g.stride,
        dilation: g.dilation,
        padding: g.padding,
    };
    // The forward conv over the produced size must land back on x's size.
    debug_assert_eq!(out_len(h, kh, g, "height").ok(), Some(x.h));
    Ok(dims)
}

/// Range of output columns `ox` for which `ox*s - p + off` lies in `[0, len)`.
#[inline]
fn valid_range(out: usize, len: usize, s: usize, p: usize, off: usize) -> (usize, usize) {
    // ox*s + off >= p  and  ox*s + off < len + p
    let lo = if off >= p { 0 } else { (p - off).div_ceil(s) };
    let hi = if len + p <= off {
        0
    } else {
        ((len + p - off).div_ceil(s)).min(out)
    };
    (lo.min(hi), hi)
}

fn im2col<T: Scalar>(x: &[T], d: &ConvDims, cols: &mut [T]) {
    let p = d.p();
    let (s, dil, pad) = (d.stride, d.dilation, d.padding);
    for c in 0..d.ci {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            let (ylo, yhi) = valid_range(d.oh, d.h, s, pad, ki * dil);
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (xlo, xhi) = valid_range(d.ow, d.w, s, pad, kj * dil);
                for oy in 0..d.oh {
                    let out = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if oy < ylo || oy >= yhi {
                        out.fill(T::zero());
                        continue;
                    }
                    let iy = oy * s + ki * dil - pad;
                    let src = &plane[iy * d.w..(iy + 1) * d.w];
                    out[..xlo].fill(T::zero());
                    out[xhi..].fill(T::zero());
                    if s == 1 {
                        let ix0 = xlo + kj * dil - pad;
                        out[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            out[ox] = src[ox * s + kj * dil - pad];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add `cols` back onto the input plane layout.
fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, x: &mut [T]) {
    let p = d.p();
    let (s, dil, pad) = (d.stride, d.dilation, d.padding);
    for c in 0..d.ci {
        let plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            let (ylo, yhi) = valid_range(d.oh, d.h, s, pad, ki * dil);
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (xlo, xhi) = valid_range(d.ow, d.w, s, pad, kj * dil);
                for oy in ylo..yhi {
                    let iy = oy * s + ki * dil - pad;
                    let dst = &mut plane[iy * d.w..(iy + 1) * d.w];
                    let srow = &src[oy * d.ow..(oy + 1) * d.ow];
                    for ox in xlo..xhi {
                        dst[ox * s + kj * dil - pad] += srow[ox];
                    }
                }
            }
        }
    }
}

fn is_pointwise(d: &ConvDims) -> bool {
    d.kh == 1 && d.kw == 1 && d.stride == 1 && d.padding == 0
}

/// `y = W * x` without bias.
pub(crate) fn forward_raw<T: Scalar>(x: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    let (k, p) = (d.k(), d.p());
    let mut y = vec![T::zero(); d.n * d.co * p];
    let mut cols = if is_pointwise(d) {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for b in 0..d.n {
        let xb = &x[b * d.ci * d.h * d.w..(b + 1) * d.ci * d.h * d.w];
        let src: &[T] = if is_pointwise(d) {
            xb
        } else {
            im2col(xb, d, &mut cols);
            &cols
        };
        let yb = &mut y[b * d.co * p..(b + 1) * d.co * p];
        T::gemm(
            d.co, k, p, T::one(), w, k as isize, 1, src, p as isize, 1, T::zero(), yb, p as isize, 1,
        );
    }
    y
}

/// Gradient of `forward_raw` with respect to its input.
pub(crate) fn backward_data_raw<T: Scalar>(dy: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    let (k, p) = (d.k(), d.p());
    let item = d.ci * d.h * d.w;
    let mut dx = vec![T::zero(); d.n * item];
    let mut cols = vec![T::zero(); k * p];
    for b in 0..d.n {
        let dyb = &dy[b * d.co * p..(b + 1) * d.co * p];
        let dxb = &mut dx[b * item..(b + 1) * item];
        if is_pointwise(d) {
            T::gemm(
                k, d.co, p, T::one(), w, 1, k as isize, dyb, p as isize, 1, T::zero(), dxb,
                p as isize, 1,
            );
        } else {
            T::gemm(
                k, d.co, p, T::one(), w, 1, k as isize, dyb, p as isize, 1, T::zero(), &mut cols,
                p as isize, 1,
            );
            col2im(&cols, d, dxb);
        }
    }
    dx
}

/// Gradient of `forward_raw` with respect to its kernel, summed over the
/// batch in index order.
pub(crate) fn backward_weight_raw<T: Scalar>(x: &[T], dy: &[T], d: &ConvDims) -> Vec<T> {
    let (k, p) = (d.k(), d.p());
    let mut dw = vec![T::zero(); d.co * k];
    let mut cols = if is_pointwise(d) {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for b in 0..d.n {
        let xb = &x[b * d.ci * d.h * d.w..(b + 1) * d.ci * d.h * d.w];
        let src: &[T] = if is_pointwise(d) {
            xb
        } else {
            im2col(xb, d, &mut cols);
            &cols
        };
        let dyb = &dy[b * d.co * p..(b + 1) * d.co * p];
        T::gemm(
            d.co, p, k, T::one(), dyb, p as isize, 1, src, 1, p as isize, T::one(), &mut dw,
            k as isize, 1,
        );
    }
    dw
}

/// Add a per-channel bias to an `(n, c, h, w)` buffer.
pub(crate) fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], s: Shape) {
    let plane = s.plane();
    for (i, chunk) in y.chunks_mut(plane).enumerate() {
        let b = bias[i % s.c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

/// Per-channel sum of an `(n, c, h, w)` buffer.
pub(crate) fn channel_sum<T: Scalar>(y: &[T], s: Shape) -> Vec<T> {
    let plane = s.plane();
    let mut out = vec![T::zero(); s.c];
    for (i, chunk) in y.chunks(plane).enumerate() {
        out[i % s.c] += chunk.iter().copied().sum::<T>();
    }
    out
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, c: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.numel() != c {
            return Err(Error::shape(format!(
                "bias has {} entries, expected {c}",
                b.numel()
            )));
        }
    }
    Ok(())
}

/// Forward 2-D cross-correlation.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let d = conv_dims(x.shape(), p.kernel.shape(), &p.geometry)?;
    check_bias(p.bias.as_ref(), d.co)?;
    let mut y = forward_raw(x.data(), p.kernel.data(), &d);
    if let Some(b) = &p.bias {
        add_bias(&mut y, b.data(), d.out_shape());
    }
    Tensor::from_vec(d.out_shape(), y)
}

/// Transposed convolution: the adjoint of [`conv2d`] with the same kernel
/// array, plus bias.
pub fn conv2d_transpose<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let d = transpose_dims(x.shape(), p.kernel.shape(), &p.geometry)?;
    check_bias(p.bias.as_ref(), d.ci)?;
    let mut y = backward_data_raw(x.data(), p.kernel.data(), &d);
    if let Some(b) = &p.bias {
        add_bias(&mut y, b.data(), d.in_shape());
    }
    Tensor::from_vec(d.in_shape(), y)
}
