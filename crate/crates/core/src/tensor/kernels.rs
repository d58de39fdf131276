//! Convolution kernels: im2col / col2im around a strided GEMM.
//!
//! Every output element is produced by one GEMM dot product over a fixed
//! reduction order, and batch entries are processed sequentially, so results
//! are bit-reproducible for a given build and machine.

use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Row-major `c ← op(a)·op(b) (+ c when accumulate)`, `op(a)` is m×k and `op(b)` is k×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    transpose_a: bool,
    b: &[T],
    transpose_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if transpose_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if transpose_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths checked above; strides describe dense row-major
    // storage of the stated logical sizes and `c` is a distinct &mut slice.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a sliding window over an image of `channels × height × width`
/// producing `out_h × out_w` positions.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate range `[lo, hi)` of output positions whose tap `k`
    /// lands inside an axis of length `len`.
    fn valid_range(
        k: usize,
        len: usize,
        out_len: usize,
        stride: usize,
        pad: usize,
    ) -> (usize, usize) {
        // o*stride + k - pad in [0, len)
        let lo = if pad > k {
            (pad - k).div_ceil(stride)
        } else {
            0
        };
        let hi = if len + pad > k {
            ((len + pad - k - 1) / stride + 1).min(out_len)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfold `img` into `cols` (`rows × positions`), zero outside the image.
pub(crate) fn im2col<T: Real>(img: &[T], g: &Geom, cols: &mut [T]) {
    let positions = g.positions();
    debug_assert_eq!(cols.len(), g.rows() * positions);
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            let (oy_lo, oy_hi) = Geom::valid_range(ki, g.height, g.out_h, g.stride, g.pad);
            for kj in 0..g.kw {
                let (ox_lo, ox_hi) = Geom::valid_range(kj, g.width, g.out_w, g.stride, g.pad);
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                dst.fill(T::zero());
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let src_row = &plane[iy * g.width..(iy + 1) * g.width];
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kj - g.pad;
                        let len = ox_hi.saturating_sub(ox_lo);
                        dst_row[ox_lo..ox_lo + len].copy_from_slice(&src_row[ix0..ix0 + len]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst_row[ox] = src_row[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Fold `cols` back onto `img`, accumulating overlapping taps.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &Geom, img: &mut [T]) {
    let positions = g.positions();
    debug_assert_eq!(cols.len(), g.rows() * positions);
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            let (oy_lo, oy_hi) = Geom::valid_range(ki, g.height, g.out_h, g.stride, g.pad);
            for kj in 0..g.kw {
                let (ox_lo, ox_hi) = Geom::valid_range(kj, g.width, g.out_w, g.stride, g.pad);
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ki - g.pad;
                    let dst_row = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let src_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for ox in ox_lo..ox_hi {
                        dst_row[ox * g.stride + kj - g.pad] += src_row[ox];
                    }
                }
            }
        }
    }
}

fn check_bias<T: Real>(bias: &Tensor<T>, channels: usize, op: &'static str) -> Result<()> {
    if bias.numel() != channels {
        return Err(Error::ShapeMismatch {
            op,
            dim: "bias channels",
            expected: channels,
            found: bias.numel(),
        });
    }
    Ok(())
}

/// Validated conv2d geometry: `(geom over the input, output shape)`.
pub(crate) fn conv2d_geom(
    input: Shape,
    weight: Shape,
    stride: usize,
    padding: usize,
) -> Result<(Geom, Shape)> {
    let [n, c, h, w] = input.0;
    let [oc, ic, kh, kw] = weight.0;
    if ic != c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            dim: "input channels",
            expected: ic,
            found: c,
        });
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d: stride must be at least 1"));
    }
    if kh == 0 || kw == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::invalid(format!(
            "conv2d: kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}"
        )));
    }
    let out_h = (h + 2 * padding - kh) / stride + 1;
    let out_w = (w + 2 * padding - kw) / stride + 1;
    let geom = Geom {
        channels: c,
        height: h,
        width: w,
        kh,
        kw,
        stride,
        pad: padding,
        out_h,
        out_w,
    };
    Ok((geom, Shape::new(n, oc, out_h, out_w)))
}

/// Validated transposed-conv geometry: `(geom over the output, output shape)`.
pub(crate) fn conv_transpose2d_geom(
    input: Shape,
    weight: Shape,
    stride: usize,
    padding: usize,
) -> Result<(Geom, Shape)> {
    let [n, c, h, w] = input.0;
    let [ic, oc, kh, kw] = weight.0;
    if ic != c {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d",
            dim: "input channels",
            expected: ic,
            found: c,
        });
    }
    if stride == 0 {
        return Err(Error::invalid(
            "conv_transpose2d: stride must be at least 1",
        ));
    }
    if h == 0
        || w == 0
        || (h - 1) * stride + kh < 2 * padding + 1
        || (w - 1) * stride + kw < 2 * padding + 1
    {
        return Err(Error::invalid(format!(
            "conv_transpose2d: padding {padding} too large for input {h}x{w} and kernel {kh}x{kw}"
        )));
    }
    let out_h = (h - 1) * stride + kh - 2 * padding;
    let out_w = (w - 1) * stride + kw - 2 * padding;
    let geom = Geom {
        channels: oc,
        height: out_h,
        width: out_w,
        kh,
        kw,
        stride,
        pad: padding,
        out_h: h,
        out_w: w,
    };
    Ok((geom, Shape::new(n, oc, out_h, out_w)))
}

/// 2-D cross-correlation with zero padding. `weight` is `(out_ch, in_ch, kh, kw)`,
/// `bias` holds one value per output channel.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (g, out_shape) = conv2d_geom(input.shape(), weight.shape(), stride, padding)?;
    let oc = out_shape.c();
    check_bias(bias, oc, "conv2d")?;
    let k = g.rows();
    let p = g.positions();
    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![T::zero(); k * p];
    let out_len = out_shape.sample_len();
    for n in 0..input.shape().n() {
        im2col(input.sample(n), &g, &mut cols);
        let dst = &mut out.data_mut()[n * out_len..(n + 1) * out_len];
        for (o, plane) in dst.chunks_mut(p).enumerate() {
            plane.fill(bias.data()[o]);
        }
        gemm(oc, p, k, weight.data(), false, &cols, false, dst, true);
    }
    Ok(out)
}

pub(crate) struct ConvGrads<T: Real> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
    stride: usize,
    padding: usize,
    need: [bool; 3],
) -> ConvGrads<T> {
    let (g, out_shape) =
        conv2d_geom(input.shape(), weight.shape(), stride, padding).expect("validated in forward");
    let oc = out_shape.c();
    let k = g.rows();
    let p = g.positions();
    let in_len = input.shape().sample_len();
    let out_len = out_shape.sample_len();
    let mut dx = need[0].then(|| vec![T::zero(); input.numel()]);
    let mut dw = need[1].then(|| vec![T::zero(); weight.numel()]);
    let mut db = need[2].then(|| vec![T::zero(); oc]);
    let mut cols = vec![T::zero(); k * p];
    for n in 0..input.shape().n() {
        let gy = &grad_out[n * out_len..(n + 1) * out_len];
        if let Some(dw) = dw.as_mut() {
            im2col(input.sample(n), &g, &mut cols);
            gemm(oc, k, p, gy, false, &cols, true, dw, true);
        }
        if let Some(db) = db.as_mut() {
            for (o, plane) in gy.chunks(p).enumerate() {
                db[o] += plane.iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            gemm(k, p, oc, weight.data(), true, gy, false, &mut cols, false);
            col2im(&cols, &g, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// Transposed 2-D convolution (the adjoint of [`conv2d`] with the same
/// stride/padding). `weight` is `(in_ch, out_ch, kh, kw)`.
pub fn conv_transpose2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (g, out_shape) = conv_transpose2d_geom(input.shape(), weight.shape(), stride, padding)?;
    let ic = input.shape().c();
    let oc = out_shape.c();
    check_bias(bias, oc, "conv_transpose2d")?;
    let k = g.rows();
    let p = g.positions();
    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![T::zero(); k * p];
    let out_len = out_shape.sample_len();
    let plane_len = out_shape.plane_len();
    for n in 0..input.shape().n() {
        gemm(
            k,
            p,
            ic,
            weight.data(),
            true,
            input.sample(n),
            false,
            &mut cols,
            false,
        );
        let dst = &mut out.data_mut()[n * out_len..(n + 1) * out_len];
        col2im(&cols, &g, dst);
        for (o, plane) in dst.chunks_mut(plane_len).enumerate() {
            let b = bias.data()[o];
            plane.iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(out)
}

pub(crate) fn conv_transpose2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
    stride: usize,
    padding: usize,
    need: [bool; 3],
) -> ConvGrads<T> {
    let (g, out_shape) = conv_transpose2d_geom(input.shape(), weight.shape(), stride, padding)
        .expect("validated in forward");
    let ic = input.shape().c();
    let oc = out_shape.c();
    let k = g.rows();
    let p = g.positions();
    let in_len = input.shape().sample_len();
    let out_len = out_shape.sample_len();
    let plane_len = out_shape.plane_len();
    let mut dx = need[0].then(|| vec![T::zero(); input.numel()]);
    let mut dw = need[1].then(|| vec![T::zero(); weight.numel()]);
    let mut db = need[2].then(|| vec![T::zero(); oc]);
    let mut cols = vec![T::zero(); k * p];
    for n in 0..input.shape().n() {
        let gy = &grad_out[n * out_len..(n + 1) * out_len];
        if dx.is_some() || dw.is_some() {
            im2col(gy, &g, &mut cols);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(
                ic,
                p,
                k,
                weight.data(),
                false,
                &cols,
                false,
                &mut dx[n * in_len..(n + 1) * in_len],
                false,
            );
        }
        if let Some(dw) = dw.as_mut() {
            gemm(ic, k, p, input.sample(n), false, &cols, true, dw, true);
        }
        if let Some(db) = db.as_mut() {
            for (o, plane) in gy.chunks(plane_len).enumerate() {
                db[o] += plane.iter().copied().sum::<T>();
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}
