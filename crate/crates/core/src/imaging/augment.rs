use super::ImageRgb;
use crate::error::{Error, Result};

pub const SCALE_FACTORS: [f64; 6] = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flip {
    None,
    Horizontal,
    Vertical,
}

/// Sets of transforms drawn from during patch sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    pub scale_factors: Vec<f64>,
    /// Quarter turns, each in `0..4`.
    pub rotations: Vec<u8>,
    pub flips: Vec<Flip>,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            scale_factors: SCALE_FACTORS.to_vec(),
            rotations: vec![0, 1, 2, 3],
            flips: vec![Flip::None, Flip::Horizontal, Flip::Vertical],
        }
    }
}

impl AugmentSpec {
    /// Only the identity transform.
    pub fn identity() -> Self {
        AugmentSpec {
            scale_factors: vec![1.0],
            rotations: vec![0],
            flips: vec![Flip::None],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_factors.is_empty() || self.rotations.is_empty() || self.flips.is_empty() {
            return Err(Error::invalid("augmentation sets must be non-empty"));
        }
        if let Some(f) = self
            .scale_factors
            .iter()
            .find(|f| !(**f > 0.0 && **f <= 1.0))
        {
            return Err(Error::invalid(format!("scale factor {f} outside (0, 1]")));
        }
        if let Some(r) = self.rotations.iter().find(|r| **r > 3) {
            return Err(Error::invalid(format!(
                "rotation {r} is not a quarter turn in 0..4"
            )));
        }
        Ok(())
    }
}

/// Mirror left-right.
pub fn flip_h(img: &ImageRgb) -> ImageRgb {
    let w = img.width();
    ImageRgb::from_fn(w, img.height(), |x, y| img.pixel(w - 1 - x, y)).expect("same dimensions")
}

/// Mirror top-bottom.
pub fn flip_v(img: &ImageRgb) -> ImageRgb {
    let h = img.height();
    ImageRgb::from_fn(img.width(), h, |x, y| img.pixel(x, h - 1 - y)).expect("same dimensions")
}

/// Rotates counter-clockwise by `k` quarter turns (`k` taken mod 4).
pub fn rotate90k(img: &ImageRgb, k: u8) -> ImageRgb {
    let (w, h) = (img.width(), img.height());
    match k % 4 {
        0 => Ok(img.clone()),
        1 => ImageRgb::from_fn(h, w, |x, y| img.pixel(w - 1 - y, x)),
        2 => ImageRgb::from_fn(w, h, |x, y| img.pixel(w - 1 - x, h - 1 - y)),
        _ => ImageRgb::from_fn(h, w, |x, y| img.pixel(y, h - 1 - x)),
    }
    .expect("permuted dimensions are valid")
}

pub fn flip(img: &ImageRgb, flip: Flip) -> ImageRgb {
    match flip {
        Flip::None => img.clone(),
        Flip::Horizontal => flip_h(img),
        Flip::Vertical => flip_v(img),
    }
}

/// Output dimensions of [`scale_by`].
pub fn scaled_dims(width: usize, height: usize, factor: f64) -> (usize, usize) {
    let s = |v: usize| ((v as f64 * factor).round() as usize).max(1);
    (s(width), s(height))
}

/// Bicubic rescale by `factor ∈ (0, 1]`.
pub fn scale_by(img: &ImageRgb, factor: f64) -> Result<ImageRgb> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::invalid(format!(
            "scale factor {factor} outside (0, 1]"
        )));
    }
    let (w, h) = scaled_dims(img.width(), img.height(), factor);
    img.resize(w, h)
}
