//! 2-D convolution and transposed convolution, forward and backward.
//!
//! Cross-correlation semantics with zero padding. The forward pass lowers
//! each sample to column matrices (im2col) in bounded strips and rides the
//! blocked GEMM in [`super::matmul`]; backward passes reuse the same
//! machinery (the transposed-convolution weight gradient is the convolution
//! weight gradient with the input/cotangent roles swapped). Parallelism is
//! over the batch dimension; per-element accumulation order is fixed, so
//! results are independent of the worker count.

use super::matmul::{matmul_acc, transpose};
use super::{Dims4, Scalar, ShapeError, Tensor4};
use crate::runtime;

/// Parameters of a convolution or transposed-convolution layer.
///
/// For `conv2d` the kernel is laid out `(c_out, c_in, kh, kw)`; for
/// `deconv2d` it is `(c_in, c_out, kh, kw)`, so that for a shared kernel the
/// two operations are exact adjoints of each other.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub kernel: Tensor4<T>,
    pub bias: Vec<T>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(kernel: Tensor4<T>, bias: Vec<T>, stride: (usize, usize), padding: (usize, usize)) -> Self {
        ConvParams {
            kernel,
            bias,
            stride,
            padding,
        }
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        ConvParams {
            kernel: self.kernel.cast(),
            bias: self.bias.iter().map(|&b| U::from_f64(b.to_f64())).collect(),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// Output spatial dims of a strided convolution, floor semantics as in the
/// common deep-learning frameworks. Errors when the padded input is smaller
/// than the kernel.
pub fn conv_output_dims(
    input: Dims4,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(usize, usize), ShapeError> {
    let (sh, sw) = stride;
    let (ph, pw) = padding;
    assert!(sh > 0 && sw > 0, "stride must be positive");
    if input.h + 2 * ph < kh || input.w + 2 * pw < kw || kh == 0 || kw == 0 {
        return Err(ShapeError::BadOutputSize {
            op: "conv2d",
            input,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
        });
    }
    Ok(((input.h + 2 * ph - kh) / sh + 1, (input.w + 2 * pw - kw) / sw + 1))
}

/// Scratch size budget (elements) for one im2col strip.
const STRIP_BUDGET: usize = 1 << 21;

fn strip_rows(ckk: usize, ow: usize, oh: usize) -> usize {
    (STRIP_BUDGET / (ckk * ow).max(1)).clamp(1, oh)
}

/// Fill `cols` (ckk x strip_px) with patches for output rows y0..y1 of one
/// sample. Row index is (ci, dy, dx) lexicographic, column index is the
/// output position within the strip.
#[allow(clippy::too_many_arguments)]
fn im2col_strip<T: Scalar>(
    sample: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    ow: usize,
    y0: usize,
    y1: usize,
    cols: &mut [T],
) {
    let strip_px = (y1 - y0) * ow;
    debug_assert_eq!(cols.len(), c * kh * kw * strip_px);
    let mut row = 0;
    for ci in 0..c {
        let plane = &sample[ci * h * w..(ci + 1) * h * w];
        for dy in 0..kh {
            for dx in 0..kw {
                let dst_row = &mut cols[row * strip_px..(row + 1) * strip_px];
                row += 1;
                for oy in y0..y1 {
                    let dst = &mut dst_row[(oy - y0) * ow..(oy - y0 + 1) * ow];
                    let iy = (oy * sh + dy) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    // valid ox range: 0 <= ox*sw + dx - pw < w
                    let off = dx as isize - pw as isize;
                    let ox_lo = if off >= 0 {
                        0
                    } else {
                        ((-off) as usize).div_ceil(sw)
                    };
                    let ox_hi = {
                        // largest ox with ox*sw + off <= w-1
                        let lim = w as isize - 1 - off;
                        if lim < 0 {
                            0
                        } else {
                            ((lim as usize) / sw + 1).min(ow)
                        }
                    };
                    if ox_lo >= ox_hi {
                        dst.fill(T::zero());
                        continue;
                    }
                    dst[..ox_lo].fill(T::zero());
                    dst[ox_hi..].fill(T::zero());
                    if sw == 1 {
                        let start = (ox_lo as isize + off) as usize;
                        dst[ox_lo..ox_hi].copy_from_slice(&src[start..start + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox] = src[(ox as isize * sw as isize + off) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add `cols` (ckk x strip_px, the gradient of the patches) back
/// into one sample's gradient plane set.
#[allow(clippy::too_many_arguments)]
fn col2im_acc_strip<T: Scalar>(
    cols: &[T],
    grad_sample: &mut [T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    ow: usize,
    y0: usize,
    y1: usize,
) {
    let strip_px = (y1 - y0) * ow;
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut grad_sample[ci * h * w..(ci + 1) * h * w];
        for dy in 0..kh {
            for dx in 0..kw {
                let src_row = &cols[row * strip_px..(row + 1) * strip_px];
                row += 1;
                for oy in y0..y1 {
                    let src = &src_row[(oy - y0) * ow..(oy - y0 + 1) * ow];
                    let iy = (oy * sh + dy) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dstp = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let off = dx as isize - pw as isize;
                    let ox_lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(sw) };
                    let ox_hi = {
                        let lim = w as isize - 1 - off;
                        if lim < 0 {
                            0
                        } else {
                            ((lim as usize) / sw + 1).min(ow)
                        }
                    };
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    if sw == 1 {
                        let start = (ox_lo as isize + off) as usize;
                        for (d, s) in dstp[start..start + (ox_hi - ox_lo)]
                            .iter_mut()
                            .zip(&src[ox_lo..ox_hi])
                        {
                            *d += *s;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            dstp[(ox as isize * sw as isize + off) as usize] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Standard cross-correlation with zero padding and per-channel bias.
pub fn conv2d<T: Scalar>(input: &Tensor4<T>, p: &ConvParams<T>) -> Result<Tensor4<T>, ShapeError> {
    let d = input.dims();
    let k = p.kernel.dims();
    let (c_out, c_in, kh, kw) = (k.n, k.c, k.h, k.w);
    if d.c != c_in {
        return Err(ShapeError::Mismatch {
            op: "conv2d",
            lhs: format!("input {} ({} channels)", d, d.c),
            rhs: format!("kernel {} ({} input channels)", k, c_in),
        });
    }
    if p.bias.len() != c_out {
        return Err(ShapeError::Mismatch {
            op: "conv2d",
            lhs: format!("kernel c_out {}", c_out),
            rhs: format!("bias len {}", p.bias.len()),
        });
    }
    let (oh, ow) = conv_output_dims(d, kh, kw, p.stride, p.padding)?;
    let mut out = Tensor4::zeros(Dims4::new(d.n, c_out, oh, ow));
    let ckk = c_in * kh * kw;
    let sample_out = c_out * oh * ow;
    let sample_in = d.c * d.h * d.w;
    let rows = strip_rows(ckk, ow, oh);
    let kernel_mat = p.kernel.data();

    let out_data = out.data_mut();
    runtime::par_chunks_mut(out_data, sample_out, |n, out_sample| {
        let sample = &input.data()[n * sample_in..(n + 1) * sample_in];
        let mut cols = vec![T::zero(); ckk * rows * ow];
        let single = rows == oh;
        let mut cbuf = if single {
            Vec::new()
        } else {
            vec![T::zero(); c_out * rows * ow]
        };
        let mut y0 = 0;
        while y0 < oh {
            let y1 = (y0 + rows).min(oh);
            let strip_px = (y1 - y0) * ow;
            let cols_strip = &mut cols[..ckk * strip_px];
            im2col_strip(
                sample, d.c, d.h, d.w, kh, kw, p.stride, p.padding, ow, y0, y1, cols_strip,
            );
            if single {
                for co in 0..c_out {
                    out_sample[co * strip_px..(co + 1) * strip_px].fill(p.bias[co]);
                }
                matmul_acc(kernel_mat, cols_strip, out_sample, c_out, ckk, strip_px);
            } else {
                let cbuf_strip = &mut cbuf[..c_out * strip_px];
                for co in 0..c_out {
                    cbuf_strip[co * strip_px..(co + 1) * strip_px].fill(p.bias[co]);
                }
                matmul_acc(kernel_mat, cols_strip, cbuf_strip, c_out, ckk, strip_px);
                for co in 0..c_out {
                    let dst = &mut out_sample[co * oh * ow + y0 * ow..co * oh * ow + y1 * ow];
                    dst.copy_from_slice(&cbuf_strip[co * strip_px..(co + 1) * strip_px]);
                }
            }
            y0 = y1;
        }
    });
    Ok(out)
}

/// Weight gradient of a strided cross-correlation:
/// `gk[co][ci][dy][dx] = sum_n,oy,ox grad[n][co][oy][ox] * x[n][ci][oy*sh+dy-ph][ox*sw+dx-pw]`.
///
/// Also the transposed-convolution weight gradient with the roles of `x`
/// and `grad` swapped.
#[allow(clippy::too_many_arguments)]
fn conv_grad_kernel<T: Scalar>(
    x: &Tensor4<T>,
    grad: &Tensor4<T>,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Vec<T> {
    let d = x.dims();
    let g = grad.dims();
    debug_assert_eq!(d.n, g.n);
    let ckk = d.c * kh * kw;
    let (oh, ow) = (g.h, g.w);
    let rows = strip_rows(ckk, ow, oh);
    // Accumulate the transposed gradient gk^T (ckk x c_out) =
    // sum_strips P (ckk x strip_px) . G^T (strip_px x c_out): the patch
    // matrix is built in its fast im2col layout and only the small
    // cotangent strip is transposed.
    let partials: Vec<Vec<T>> = runtime::par_map(d.n, |n| {
        let sample = x.sample(n);
        let gsample = grad.sample(n);
        let mut gkt = vec![T::zero(); ckk * g.c];
        let mut patches = vec![T::zero(); ckk * rows * ow];
        let mut gstrip = vec![T::zero(); g.c * rows * ow];
        let mut gstrip_t = Vec::new();
        let mut y0 = 0;
        while y0 < oh {
            let y1 = (y0 + rows).min(oh);
            let strip_px = (y1 - y0) * ow;
            let cols_strip = &mut patches[..ckk * strip_px];
            im2col_strip(sample, d.c, d.h, d.w, kh, kw, stride, padding, ow, y0, y1, cols_strip);
            let gs = &mut gstrip[..g.c * strip_px];
            for co in 0..g.c {
                gs[co * strip_px..(co + 1) * strip_px]
                    .copy_from_slice(&gsample[co * oh * ow + y0 * ow..co * oh * ow + y1 * ow]);
            }
            transpose(gs, g.c, strip_px, &mut gstrip_t);
            matmul_acc(cols_strip, &gstrip_t, &mut gkt, ckk, strip_px, g.c);
            y0 = y1;
        }
        gkt
    });
    let mut gkt = vec![T::zero(); g.c * ckk];
    for partial in partials {
        for (acc, v) in gkt.iter_mut().zip(partial) {
            *acc += v;
        }
    }
    let mut gk = Vec::new();
    transpose(&gkt, ckk, g.c, &mut gk);
    gk
}

/// Exact analytic gradients of `sum(grad_out * conv2d(input, p))`.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input: &Tensor4<T>,
    p: &ConvParams<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Vec<T>), ShapeError> {
    let d = input.dims();
    let k = p.kernel.dims();
    let (oh, ow) = conv_output_dims(d, k.h, k.w, p.stride, p.padding)?;
    let expected = Dims4::new(d.n, k.n, oh, ow);
    if grad_out.dims() != expected {
        return Err(ShapeError::Mismatch {
            op: "conv2d_backward",
            lhs: grad_out.dims().to_string(),
            rhs: format!("{expected} (conv output)"),
        });
    }
    if d.c != k.c {
        return Err(ShapeError::Mismatch {
            op: "conv2d_backward",
            lhs: format!("input channels {}", d.c),
            rhs: format!("kernel input channels {}", k.c),
        });
    }

    // Bias gradient: plain sums over each output channel plane.
    let mut grad_bias = vec![T::zero(); k.n];
    for n in 0..d.n {
        for co in 0..k.n {
            let mut acc = T::zero();
            for &v in grad_out.plane(n, co) {
                acc += v;
            }
            grad_bias[co] += acc;
        }
    }

    let gk = conv_grad_kernel(input, grad_out, k.h, k.w, p.stride, p.padding);
    let grad_kernel = Tensor4::new(k, gk)?;

    // Input gradient: col-space gradient is K^T (ckk x c_out) . g, scattered
    // back with col2im.
    let ckk = d.c * k.h * k.w;
    let mut kt = Vec::new();
    transpose(p.kernel.data(), k.n, ckk, &mut kt);
    let rows = strip_rows(ckk, ow, oh);
    let sample_in = d.c * d.h * d.w;
    let mut grad_input = Tensor4::zeros(d);
    runtime::par_chunks_mut(grad_input.data_mut(), sample_in, |n, gi_sample| {
        let gsample = grad_out.sample(n);
        let mut colgrad = vec![T::zero(); ckk * rows * ow];
        let mut gstrip = vec![T::zero(); k.n * rows * ow];
        let mut y0 = 0;
        while y0 < oh {
            let y1 = (y0 + rows).min(oh);
            let strip_px = (y1 - y0) * ow;
            let gs = &mut gstrip[..k.n * strip_px];
            for co in 0..k.n {
                gs[co * strip_px..(co + 1) * strip_px]
                    .copy_from_slice(&gsample[co * oh * ow + y0 * ow..co * oh * ow + y1 * ow]);
            }
            let cg = &mut colgrad[..ckk * strip_px];
            cg.fill(T::zero());
            matmul_acc(&kt, gs, cg, ckk, k.n, strip_px);
            col2im_acc_strip(
                cg, gi_sample, d.c, d.h, d.w, k.h, k.w, p.stride, p.padding, ow, y0, y1,
            );
            y0 = y1;
        }
    });

    Ok((grad_input, grad_kernel, grad_bias))
}

/// Transposed convolution. Kernel layout `(c_in, c_out, kh, kw)`; output
/// spatial size `(h-1)*sh - 2*ph + kh` (exact).
pub fn deconv2d<T: Scalar>(input: &Tensor4<T>, p: &ConvParams<T>) -> Result<Tensor4<T>, ShapeError> {
    let d = input.dims();
    let k = p.kernel.dims();
    let (c_in, c_out, kh, kw) = (k.n, k.c, k.h, k.w);
    if d.c != c_in {
        return Err(ShapeError::Mismatch {
            op: "deconv2d",
            lhs: format!("input {} ({} channels)", d, d.c),
            rhs: format!("kernel {} ({} input channels)", k, c_in),
        });
    }
    if p.bias.len() != c_out {
        return Err(ShapeError::Mismatch {
            op: "deconv2d",
            lhs: format!("kernel c_out {}", c_out),
            rhs: format!("bias len {}", p.bias.len()),
        });
    }
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let oh_s = ((d.h - 1) * sh + kh) as isize - 2 * ph as isize;
    let ow_s = ((d.w - 1) * sw + kw) as isize - 2 * pw as isize;
    if oh_s <= 0 || ow_s <= 0 {
        return Err(ShapeError::BadOutputSize {
            op: "deconv2d",
            input: d,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
        });
    }
    let (oh, ow) = (oh_s as usize, ow_s as usize);
    let mut out = Tensor4::zeros(Dims4::new(d.n, c_out, oh, ow));
    let sample_out = c_out * oh * ow;
    let sample_in = d.c * d.h * d.w;

    // Lower to one GEMM per input-row strip: cols (c_out*kh*kw x strip_px) =
    // K^T (c_out*kh*kw x c_in) . X_strip (c_in x strip_px), then scatter the
    // per-position columns into the output grid (the exact adjoint of the
    // im2col gather used by conv2d).
    let bkk = c_out * kh * kw;
    let mut kt = Vec::new();
    transpose(p.kernel.data(), c_in, bkk, &mut kt);
    let rows = (STRIP_BUDGET / (bkk * d.w).max(1)).clamp(1, d.h);

    runtime::par_chunks_mut(out.data_mut(), sample_out, |n, out_sample| {
        let sample = &input.data()[n * sample_in..(n + 1) * sample_in];
        for b in 0..c_out {
            out_sample[b * oh * ow..(b + 1) * oh * ow].fill(p.bias[b]);
        }
        let mut xstrip = vec![T::zero(); c_in * rows * d.w];
        let mut cols = vec![T::zero(); bkk * rows * d.w];
        let mut y0 = 0;
        while y0 < d.h {
            let y1 = (y0 + rows).min(d.h);
            let strip_px = (y1 - y0) * d.w;
            let xs = &mut xstrip[..c_in * strip_px];
            for a in 0..c_in {
                xs[a * strip_px..(a + 1) * strip_px]
                    .copy_from_slice(&sample[a * d.h * d.w + y0 * d.w..a * d.h * d.w + y1 * d.w]);
            }
            let cs = &mut cols[..bkk * strip_px];
            cs.fill(T::zero());
            matmul_acc(&kt, xs, cs, bkk, c_in, strip_px);
            col2im_acc_strip(
                cs,
                out_sample,
                c_out,
                oh,
                ow,
                kh,
                kw,
                (sh, sw),
                (ph, pw),
                d.w,
                y0,
                y1,
            );
            y0 = y1;
        }
    });
    Ok(out)
}

/// Exact analytic gradients of `sum(grad_out * deconv2d(input, p))`.
pub fn deconv2d_backward<T: Scalar>(
    grad_out: &Tensor4<T>,
    input: &Tensor4<T>,
    p: &ConvParams<T>,
) -> Result<(Tensor4<T>, Tensor4<T>, Vec<T>), ShapeError> {
    let d = input.dims();
    let k = p.kernel.dims();
    let (c_in, c_out, kh, kw) = (k.n, k.c, k.h, k.w);
    if d.c != c_in {
        return Err(ShapeError::Mismatch {
            op: "deconv2d_backward",
            lhs: format!("input channels {}", d.c),
            rhs: format!("kernel input channels {}", c_in),
        });
    }
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let oh = ((d.h - 1) * sh + kh).checked_sub(2 * ph);
    let ow = ((d.w - 1) * sw + kw).checked_sub(2 * pw);
    let (oh, ow) = match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
        _ => {
            return Err(ShapeError::BadOutputSize {
                op: "deconv2d_backward",
                input: d,
                kh,
                kw,
                sh,
                sw,
                ph,
                pw,
            })
        }
    };
    let expected = Dims4::new(d.n, c_out, oh, ow);
    if grad_out.dims() != expected {
        return Err(ShapeError::Mismatch {
            op: "deconv2d_backward",
            lhs: grad_out.dims().to_string(),
            rhs: format!("{expected} (deconv output)"),
        });
    }

    let mut grad_bias = vec![T::zero(); c_out];
    for n in 0..d.n {
        for b in 0..c_out {
            let mut acc = T::zero();
            for &v in grad_out.plane(n, b) {
                acc += v;
            }
            grad_bias[b] += acc;
        }
    }

    // Input gradient of a transposed convolution is a plain strided
    // convolution of the cotangent with the same kernel buffer.
    let conv_back = ConvParams {
        kernel: p.kernel.clone(),
        bias: vec![T::zero(); c_in],
        stride: p.stride,
        padding: p.padding,
    };
    let grad_input = conv2d(grad_out, &conv_back)?;
    debug_assert_eq!(grad_input.dims(), d);

    // Weight gradient: same contraction as the convolution weight gradient
    // with the input and cotangent roles swapped.
    let gk = conv_grad_kernel(grad_out, input, kh, kw, p.stride, p.padding);
    let grad_kernel = Tensor4::new(k, gk)?;

    Ok((grad_input, grad_kernel, grad_bias))
}
