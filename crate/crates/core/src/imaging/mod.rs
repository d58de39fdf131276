//! Image I/O, resampling, augmentation and training data.

mod augment;
mod corpus;
mod image;
mod resize;
mod sampling;

pub use augment::{
    flip, flip_h, flip_v, rotate90k, scale_by, scaled_dims, AugmentSpec, Flip, SCALE_FACTORS,
};
pub use corpus::{
    checkerboard, generate_synthetic_corpus, synthetic_image, CorpusManifest, ManifestEntry, Split,
    SyntheticSpec, MANIFEST_FILE,
};
pub use image::{
    load_image, quantize, rgb_to_luminance, save_image, ImagePlane, ImageRgb, PlaneRange,
};
pub use resize::{bicubic_resize, cubic_kernel};
pub use sampling::{batch_rng, sample_training_batch, PatchSampler, TrainingBatch};
