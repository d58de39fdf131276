//! Separable bicubic resampling (Keys kernel, a = −0.5).
//!
//! Pixel centers map as `src = (dst + 0.5) / scale − 0.5`. When shrinking,
//! the kernel is stretched by `1 / scale` so it also acts as the
//! anti-aliasing prefilter. Taps falling outside the image are clamped to
//! the nearest edge pixel and each output's weights are normalized to sum 1.

use super::ImageRgb;
use crate::error::Result;

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = −0.5`, support `[−2, 2]`.
pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((KEYS_A + 2.0) * x - (KEYS_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((KEYS_A * x - 5.0 * KEYS_A) * x + 8.0 * KEYS_A) * x - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Taps of one output coordinate: `(source index, weight)`.
#[derive(Debug, Clone)]
struct Contribution {
    taps: Vec<(usize, f64)>,
}

fn contributions(in_len: usize, out_len: usize) -> Vec<Contribution> {
    let scale = out_len as f64 / in_len as f64;
    let (stretch, support) = if scale < 1.0 {
        (scale, 2.0 / scale)
    } else {
        (1.0, 2.0)
    };
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) / scale - 0.5;
            let lo = (center - support).floor() as i64;
            let hi = (center + support).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
            for j in lo..=hi {
                let w = cubic_kernel((center - j as f64) * stretch);
                if w == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, in_len as i64 - 1) as usize;
                match taps.iter_mut().find(|(k, _)| *k == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            Contribution { taps }
        })
        .collect()
}

/// Resamples an interleaved `width × height × channels` buffer.
pub(crate) fn resample(
    src: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    out_width: usize,
    out_height: usize,
) -> Vec<f64> {
    debug_assert_eq!(src.len(), width * height * channels);
    if width == out_width && height == out_height {
        return src.to_vec();
    }
    let horizontal = contributions(width, out_width);
    let vertical = contributions(height, out_height);

    let mut tmp = vec![0.0; out_width * height * channels];
    for y in 0..height {
        let row = &src[y * width * channels..(y + 1) * width * channels];
        let out_row = &mut tmp[y * out_width * channels..(y + 1) * out_width * channels];
        for (x, contrib) in horizontal.iter().enumerate() {
            for c in 0..channels {
                out_row[x * channels + c] = contrib
                    .taps
                    .iter()
                    .map(|&(j, w)| row[j * channels + c] * w)
                    .sum();
            }
        }
    }

    let stride = out_width * channels;
    let mut out = vec![0.0; out_height * stride];
    for (y, contrib) in vertical.iter().enumerate() {
        let out_row = &mut out[y * stride..(y + 1) * stride];
        for &(j, w) in &contrib.taps {
            let src_row = &tmp[j * stride..(j + 1) * stride];
            out_row
                .iter_mut()
                .zip(src_row)
                .for_each(|(o, &s)| *o += w * s);
        }
    }
    out
}

/// Bicubic resize of an RGB image to `out_width × out_height`.
pub fn bicubic_resize(img: &ImageRgb, out_width: usize, out_height: usize) -> Result<ImageRgb> {
    img.resize(out_width, out_height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_interpolates() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        assert_eq!(cubic_kernel(-1.0), 0.0);
        // Partition of unity at an arbitrary offset.
        let t = 0.3;
        let s: f64 = (-2..=2).map(|k| cubic_kernel(t - k as f64)).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constants_are_preserved() {
        let src = vec![0.37; 9 * 7];
        for (w, h) in [(4, 3), (18, 14), (9, 7), (5, 11)] {
            let out = resample(&src, 9, 7, 1, w, h);
            assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-14), "{w}x{h}");
        }
    }

    #[test]
    fn upscaling_by_two_hits_known_phases() {
        // Each output lies at ±0.25 from a source center; weights follow the kernel.
        let c = contributions(8, 16);
        let w: Vec<f64> = c[5].taps.iter().map(|t| t.1).collect();
        let expected = [
            cubic_kernel(1.25),
            cubic_kernel(0.25),
            cubic_kernel(0.75),
            cubic_kernel(1.75),
        ];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
