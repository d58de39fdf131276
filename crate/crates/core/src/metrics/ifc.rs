//! Information fidelity criterion over a Haar wavelet decomposition.
//!
//! Reference detail coefficients are modelled as a Gaussian scale mixture
//! `C = s·U` with unit-variance `U`; the test image is `D = g·C + V`. The
//! variance field `s²` is the local mean of squared reference coefficients,
//! while `g` and `σ_v²` are least-squares fits per subband. Each coefficient
//! contributes `½·log2(1 + g²s² / (σ_v² + σ_n²))`; the lowpass residual is
//! excluded.

use super::check_pair;
use crate::error::{Error, Result};
use crate::imaging::ImagePlane;
use crate::tensor::compensated_sum;

#[derive(Debug, Clone, PartialEq)]
pub struct IfcConfig {
    pub levels: usize,
    /// Side of the square window used to estimate `s²`.
    pub window: usize,
    /// Noise stabilizer `σ_n²`.
    pub sigma_n_sq: f64,
}

impl Default for IfcConfig {
    fn default() -> Self {
        IfcConfig {
            levels: 3,
            window: 3,
            sigma_n_sq: 1e-10,
        }
    }
}

impl IfcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::invalid(
                "ifc: need at least one level and an odd window",
            ));
        }
        if !(self.sigma_n_sq > 0.0) {
            return Err(Error::invalid("ifc: stabilizer must be positive"));
        }
        Ok(())
    }

    pub fn min_side(&self) -> usize {
        (1 << self.levels) * self.window
    }
}

struct Band {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// One Haar analysis step: `(lowpass, [horizontal, vertical, diagonal])`.
/// An odd trailing row or column is dropped.
fn haar_step(src: &Band) -> (Band, [Band; 3]) {
    let (w, h) = (src.width / 2, src.height / 2);
    let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(w * h));
    for y in 0..h {
        for x in 0..w {
            let at = |dx: usize, dy: usize| src.data[(2 * y + dy) * src.width + 2 * x + dx];
            let (a, b, c, d) = (at(0, 0), at(1, 0), at(0, 1), at(1, 1));
            out[0].push((a + b + c + d) / 2.0);
            out[1].push((a - b + c - d) / 2.0);
            out[2].push((a + b - c - d) / 2.0);
            out[3].push((a - b - c + d) / 2.0);
        }
    }
    let [ll, lh, hl, hh] = out;
    let band = |data| Band {
        width: w,
        height: h,
        data,
    };
    (band(ll), [band(lh), band(hl), band(hh)])
}

fn decompose(plane: &ImagePlane, levels: usize) -> Vec<Band> {
    let mut low = Band {
        width: plane.width(),
        height: plane.height(),
        data: plane.data().to_vec(),
    };
    let mut details = Vec::with_capacity(3 * levels);
    for _ in 0..levels {
        let (next, bands) = haar_step(&low);
        details.extend(bands);
        low = next;
    }
    details
}

/// Local mean of `v²` over a `window × window` neighbourhood, truncated at
/// the borders.
fn local_energy(band: &Band, window: usize) -> Vec<f64> {
    let r = (window / 2) as isize;
    let (w, h) = (band.width as isize, band.height as isize);
    let mut out = Vec::with_capacity(band.data.len());
    for y in 0..h {
        for x in 0..w {
            let (mut sum, mut n) = (0.0, 0usize);
            for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                    let v = band.data[(yy * w + xx) as usize];
                    sum += v * v;
                    n += 1;
                }
            }
            out.push(sum / n as f64);
        }
    }
    out
}

fn subband_information(reference: &Band, test: &Band, config: &IfcConfig) -> f64 {
    let rr = compensated_sum(reference.data.iter().map(|r| r * r));
    if rr == 0.0 {
        return 0.0;
    }
    let rt = compensated_sum(reference.data.iter().zip(&test.data).map(|(r, t)| r * t));
    let g = rt / rr;
    let n = reference.data.len() as f64;
    let sigma_v_sq = compensated_sum(
        reference
            .data
            .iter()
            .zip(&test.data)
            .map(|(r, t)| (t - g * r).powi(2)),
    ) / n;
    let denom = sigma_v_sq + config.sigma_n_sq;
    let s_sq = local_energy(reference, config.window);
    compensated_sum(s_sq.iter().map(|s| 0.5 * (1.0 + g * g * s / denom).log2()))
}

/// Total information (bits) over all detail subbands.
pub fn ifc(reference: &ImagePlane, test: &ImagePlane, config: &IfcConfig) -> Result<f64> {
    config.validate()?;
    check_pair("ifc", reference, test)?;
    let min = config.min_side();
    if reference.width() < min || reference.height() < min {
        return Err(Error::invalid(format!(
            "ifc: {}x{} image is too small for {} levels (minimum side {min})",
            reference.width(),
            reference.height(),
            config.levels
        )));
    }
    let rb = decompose(reference, config.levels);
    let tb = decompose(test, config.levels);
    Ok(compensated_sum(
        rb.iter()
            .zip(&tb)
            .map(|(r, t)| subband_information(r, t, config)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::PlaneRange;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn texture(w: usize, h: usize) -> ImagePlane {
        ImagePlane::from_fn(w, h, PlaneRange::Byte, |x, y| {
            128.0 + 60.0 * ((x as f64 * 0.7).sin() + (y as f64 * 0.45).cos()) + ((x * y) % 7) as f64
        })
        .unwrap()
    }

    #[test]
    fn haar_is_orthonormal() {
        let b = Band {
            width: 4,
            height: 2,
            data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        };
        let (low, details) = haar_step(&b);
        let energy = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let total = energy(&low.data) + details.iter().map(|d| energy(&d.data)).sum::<f64>();
        assert!((total - energy(&b.data)).abs() < 1e-12);
        assert_eq!(low.data, vec![7.0, 11.0]);
    }

    #[test]
    fn noise_lowers_information() {
        let r = texture(64, 64);
        let cfg = IfcConfig::default();
        let same = ifc(&r, &r, &cfg).unwrap();
        assert!(same.is_finite() && same > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<f64> = (0..64 * 64)
            .map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng))
            .collect();
        let scores: Vec<f64> = [2.0, 8.0, 32.0]
            .iter()
            .map(|s| {
                let noisy = ImagePlane::new(
                    64,
                    64,
                    PlaneRange::Byte,
                    r.data().iter().zip(&z).map(|(v, n)| v + s * n).collect(),
                )
                .unwrap();
                ifc(&r, &noisy, &cfg).unwrap()
            })
            .collect();
        assert!(
            same > scores[0] && scores[0] > scores[1] && scores[1] > scores[2],
            "{same} {scores:?}"
        );
    }

    #[test]
    fn constant_test_carries_no_information() {
        let r = texture(48, 40);
        let c = r.map(|_| 90.0);
        assert_eq!(ifc(&r, &c, &IfcConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn small_images_rejected() {
        let r = texture(23, 64);
        assert!(ifc(&r, &r, &IfcConfig::default()).is_err());
    }
}
