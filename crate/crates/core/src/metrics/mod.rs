//! Full-reference quality metrics on luminance planes (`[0, 255]` range).

mod ifc;
mod report;
mod ssim;

pub use ifc::{ifc, IfcConfig};
pub use report::{
    evaluate_corpus, evaluate_pair, evaluate_sr_dir, EvalReport, EvalRow, ImageScores, MetricConfig,
};
pub use ssim::{gaussian_window, ssim, CovarianceForm, SsimConfig};

use crate::error::{Error, Result};
use crate::imaging::{ImagePlane, PlaneRange};
use crate::tensor::compensated_sum;

pub(crate) fn check_pair(
    op: &'static str,
    reference: &ImagePlane,
    test: &ImagePlane,
) -> Result<()> {
    if reference.range() != PlaneRange::Byte || test.range() != PlaneRange::Byte {
        return Err(Error::invalid(format!(
            "{op}: planes must be on the [0, 255] scale"
        )));
    }
    if reference.width() != test.width() {
        return Err(Error::ShapeMismatch {
            op,
            dim: "width",
            expected: reference.width(),
            found: test.width(),
        });
    }
    if reference.height() != test.height() {
        return Err(Error::ShapeMismatch {
            op,
            dim: "height",
            expected: reference.height(),
            found: test.height(),
        });
    }
    Ok(())
}

/// Mean squared error between two planes of equal size.
pub fn mse(reference: &ImagePlane, test: &ImagePlane) -> Result<f64> {
    check_pair("mse", reference, test)?;
    let sum: f64 = compensated_sum(
        reference
            .data()
            .iter()
            .zip(test.data())
            .map(|(a, b)| (a - b) * (a - b)),
    );
    Ok(sum / reference.data().len() as f64)
}

/// `10·log10(255² / MSE)` in dB; identical planes give `f64::INFINITY`.
pub fn psnr(reference: &ImagePlane, test: &ImagePlane) -> Result<f64> {
    let mse = mse(reference, test)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Formats a PSNR value, writing `inf` for identical images.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}
