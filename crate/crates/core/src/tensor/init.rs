use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// He (Kaiming) normal initialization for a conv weight `(out, in, kh, kw)`:
/// zero mean, standard deviation `sqrt(2 / (in·kh·kw))`.
///
/// Draws come from a ChaCha8 stream seeded with `seed`, in row-major order,
/// so the result is bit-identical for identical seeds.
pub fn init_he_gaussian<T: Real>(shape: impl Into<Shape>, seed: u64) -> Result<Tensor<T>> {
    let shape = shape.into();
    let fan_in = shape.c() * shape.h() * shape.w();
    if fan_in == 0 {
        return Err(Error::invalid(format!(
            "He init: zero fan-in for weight shape {shape:?}"
        )));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.numel())
        .map(|_| T::from_f64(normal.sample(&mut rng)))
        .collect();
    Tensor::from_vec(shape, data)
}

fn bilinear_taps(kernel_size: usize) -> Result<Vec<f64>> {
    if kernel_size == 0 || !kernel_size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "bilinear kernel size must be even and positive, got {kernel_size}"
        )));
    }
    let factor = kernel_size.div_ceil(2) as f64;
    let center = (2.0 * factor - 1.0 - (factor as usize % 2) as f64) / (2.0 * factor);
    Ok((0..kernel_size)
        .map(|i| 1.0 - (i as f64 / factor - center).abs())
        .collect())
}

/// Separable bilinear upsampling kernel of shape `(1, 1, k, k)`; for `k = 4`
/// the 1-D taps are `[0.25, 0.75, 0.75, 0.25]`.
pub fn init_bilinear<T: Real>(kernel_size: usize) -> Result<Tensor<T>> {
    let taps = bilinear_taps(kernel_size)?;
    Ok(Tensor::from_fn(
        [1, 1, kernel_size, kernel_size],
        |_, _, y, x| T::from_f64(taps[y] * taps[x]),
    ))
}

/// Transposed-conv weight `(channels, channels, k, k)` that upsamples each
/// channel independently with the bilinear kernel.
pub(crate) fn bilinear_per_channel<T: Real>(
    channels: usize,
    kernel_size: usize,
) -> Result<Tensor<T>> {
    let taps = bilinear_taps(kernel_size)?;
    Ok(Tensor::from_fn(
        [channels, channels, kernel_size, kernel_size],
        |i, o, y, x| {
            if i == o {
                T::from_f64(taps[y] * taps[x])
            } else {
                T::zero()
            }
        },
    ))
}
