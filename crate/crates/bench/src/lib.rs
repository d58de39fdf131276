//! Deterministic inputs shared by the benchmarks.

use lapsr_core::imaging::{synthetic_image, ImageRgb};
use lapsr_core::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform `[-1, 1)` tensor.
pub fn random_tensor(shape: impl Into<Shape>, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// A text-like synthetic page.
pub fn page(width: usize, height: usize) -> ImageRgb {
    synthetic_image(width, height, 7, 0)
        .expect("valid synthetic size")
        .0
}
