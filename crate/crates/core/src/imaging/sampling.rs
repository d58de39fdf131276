//! Random training patches with their multi-scale targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::{flip, rotate90k, scale_by, scaled_dims, AugmentSpec};
use super::corpus::{CorpusManifest, Split};
use super::{load_image, ImageRgb};
use crate::error::{Error, Result};
use crate::model::Scale;
use crate::tensor::{Real, Tensor};

/// One minibatch: LR input plus one target per pyramid level, finest last.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch<T: Real = f32> {
    pub lr: Tensor<T>,
    pub targets: Vec<Tensor<T>>,
}

/// Images eligible for patch sampling, each with the scale factors that keep
/// it at least one patch wide.
#[derive(Debug, Clone)]
pub struct PatchSampler {
    images: Vec<ImageRgb>,
    factors: Vec<Vec<f64>>,
    augment: AugmentSpec,
    scale: Scale,
    patch: usize,
}

impl PatchSampler {
    /// Images that are too small under every scale factor are dropped with a
    /// warning; having none left is an error.
    pub fn new(
        images: Vec<ImageRgb>,
        augment: AugmentSpec,
        scale: Scale,
        patch: usize,
    ) -> Result<Self> {
        augment.validate()?;
        let s = scale.factor() as usize;
        if patch == 0 || !patch.is_multiple_of(s) {
            return Err(Error::invalid(format!(
                "patch size {patch} must be a positive multiple of the scale {s}"
            )));
        }
        let mut kept = Vec::new();
        let mut factors = Vec::new();
        for (i, img) in images.into_iter().enumerate() {
            let ok: Vec<f64> = augment
                .scale_factors
                .iter()
                .copied()
                .filter(|&f| {
                    let (w, h) = scaled_dims(img.width(), img.height(), f);
                    w >= patch && h >= patch
                })
                .collect();
            if ok.is_empty() {
                log::warn!(
                    "skipping training image {i} ({}x{}): smaller than a {patch}px patch",
                    img.width(),
                    img.height()
                );
                continue;
            }
            kept.push(img);
            factors.push(ok);
        }
        if kept.is_empty() {
            return Err(Error::Corpus(format!(
                "no training image is at least {patch}x{patch}"
            )));
        }
        Ok(PatchSampler {
            images: kept,
            factors,
            augment,
            scale,
            patch,
        })
    }

    /// Loads the train split of `manifest`.
    pub fn from_manifest(
        manifest: &CorpusManifest,
        augment: AugmentSpec,
        scale: Scale,
        patch: usize,
    ) -> Result<Self> {
        let images = manifest
            .split(Split::Train)
            .map(|e| load_image(manifest.resolve(e)))
            .collect::<Result<Vec<_>>>()?;
        if images.is_empty() {
            return Err(Error::Corpus("manifest has no train images".into()));
        }
        Self::new(images, augment, scale, patch)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    /// One augmented HR patch. Draw order: image, scale factor, rotation,
    /// flip, crop row, crop column.
    pub fn sample_patch(&self, rng: &mut impl Rng) -> Result<ImageRgb> {
        let idx = rng.random_range(0..self.images.len());
        let factors = &self.factors[idx];
        let factor = factors[rng.random_range(0..factors.len())];
        let rotation = self.augment.rotations[rng.random_range(0..self.augment.rotations.len())];
        let flip_kind = self.augment.flips[rng.random_range(0..self.augment.flips.len())];

        let mut img = if factor == 1.0 {
            self.images[idx].clone()
        } else {
            scale_by(&self.images[idx], factor)?
        };
        img = flip(&rotate90k(&img, rotation), flip_kind);
        let top = rng.random_range(0..=img.height() - self.patch);
        let left = rng.random_range(0..=img.width() - self.patch);
        Ok(img.crop(left, top, self.patch, self.patch)?.clamped())
    }

    /// LR input and targets for one HR patch. Level `s` of a `L`-level
    /// pyramid is the patch resized to `patch / 2^(L - s)`; the finest
    /// target is the patch itself.
    pub fn pyramid(&self, hr: &ImageRgb) -> Result<(ImageRgb, Vec<ImageRgb>)> {
        let levels = self.scale.levels();
        let lr_side = self.patch / self.scale.factor() as usize;
        let lr = hr.resize(lr_side, lr_side)?.clamped();
        let targets = (1..=levels)
            .map(|s| {
                let side = self.patch >> (levels - s);
                Ok(hr.resize(side, side)?.clamped())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((lr, targets))
    }

    pub fn sample_batch<T: Real>(
        &self,
        batch: usize,
        rng: &mut impl Rng,
    ) -> Result<TrainingBatch<T>> {
        if batch == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let levels = self.scale.levels();
        let mut lrs = Vec::with_capacity(batch);
        let mut targets: Vec<Vec<Tensor<T>>> = vec![Vec::with_capacity(batch); levels];
        for _ in 0..batch {
            let hr = self.sample_patch(rng)?;
            let (lr, pyr) = self.pyramid(&hr)?;
            lrs.push(lr.to_tensor());
            for (level, t) in targets.iter_mut().zip(pyr) {
                level.push(t.to_tensor());
            }
        }
        Ok(TrainingBatch {
            lr: Tensor::stack(&lrs)?,
            targets: targets
                .iter()
                .map(|l| Tensor::stack(l))
                .collect::<Result<_>>()?,
        })
    }
}

/// Generator for iteration `iteration` of a run seeded with `seed`; batches
/// can be reproduced (and runs resumed) without saving generator state.
pub fn batch_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

/// Convenience wrapper: one batch drawn with [`batch_rng`]`(seed, 0)`.
pub fn sample_training_batch<T: Real>(
    images: Vec<ImageRgb>,
    augment: AugmentSpec,
    scale: Scale,
    patch: usize,
    batch: usize,
    seed: u64,
) -> Result<TrainingBatch<T>> {
    let sampler = PatchSampler::new(images, augment, scale, patch)?;
    sampler.sample_batch(batch, &mut batch_rng(seed, 0))
}
