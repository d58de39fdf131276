use super::check_pair;
use crate::error::{Error, Result};
use crate::imaging::ImagePlane;
use crate::tensor::compensated_sum;

/// Structure term of the per-window SSIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceForm {
    /// `2σ_xy + c2`, the standard definition.
    #[default]
    CrossCovariance,
    /// `2σ_x·σ_y + c2`; blind to the sign of the correlation.
    ProductOfDeviations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsimConfig {
    pub c1: f64,
    pub c2: f64,
    pub window: usize,
    pub sigma: f64,
    pub covariance: CovarianceForm,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            c1: (0.01f64 * 255.0).powi(2),
            c2: (0.03f64 * 255.0).powi(2),
            window: 11,
            sigma: 1.5,
            covariance: CovarianceForm::CrossCovariance,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::invalid("ssim constants must be positive"));
        }
        if self.window == 0 || !(self.sigma > 0.0) {
            return Err(Error::invalid(
                "ssim window must be non-empty with positive sigma",
            ));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable weighted sums over every fully contained window.
fn filter_valid(data: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (width - k + 1, height - k + 1);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        let src = &data[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(j, t)| t * rows[(y + j) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all valid Gaussian windows.
pub fn ssim(reference: &ImagePlane, test: &ImagePlane, config: &SsimConfig) -> Result<f64> {
    config.validate()?;
    check_pair("ssim", reference, test)?;
    let (w, h) = (reference.width(), reference.height());
    if w < config.window || h < config.window {
        return Err(Error::invalid(format!(
            "ssim: {w}x{h} image is smaller than the {0}x{0} window",
            config.window
        )));
    }
    let taps = gaussian_window(config.window, config.sigma);
    let (x, y) = (reference.data(), test.data());
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    let mu_x = filter_valid(x, w, h, &taps);
    let mu_y = filter_valid(y, w, h, &taps);
    let xx = filter_valid(&prod(x, x), w, h, &taps);
    let yy = filter_valid(&prod(y, y), w, h, &taps);
    let xy = filter_valid(&prod(x, y), w, h, &taps);

    let (c1, c2) = (config.c1, config.c2);
    let values = (0..mu_x.len()).map(|i| {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = xx[i] - mx * mx;
        let var_y = yy[i] - my * my;
        let structure = match config.covariance {
            CovarianceForm::CrossCovariance => 2.0 * (xy[i] - mx * my),
            CovarianceForm::ProductOfDeviations => 2.0 * (var_x.max(0.0) * var_y.max(0.0)).sqrt(),
        };
        ((2.0 * mx * my + c1) * (structure + c2))
            / ((mx * mx + my * my + c1) * (var_x + var_y + c2))
    });
    Ok(compensated_sum(values) / mu_x.len() as f64)
}
