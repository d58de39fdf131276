use std::fs;
use std::path::Path;

use serde::{Serialize, Serializer};

use super::{format_db, ifc, psnr, ssim, IfcConfig, SsimConfig};
use crate::error::{Error, Result};
use crate::imaging::{load_image, rgb_to_luminance, CorpusManifest, ImageRgb, Split};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricConfig {
    pub ssim: SsimConfig,
    pub ifc: IfcConfig,
}

fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(&format_db(*v))
    } else {
        s.serialize_f64(*v)
    }
}

fn serialize_opt_db<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => serialize_db(v, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImageScores {
    #[serde(serialize_with = "serialize_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub ifc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub path: String,
    pub scale: u32,
    #[serde(flatten)]
    pub scores: Option<ImageScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-image metrics plus means over the rows that succeeded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub scale: u32,
    pub shave: usize,
    pub count: usize,
    pub failed: usize,
    #[serde(serialize_with = "serialize_opt_db")]
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_ifc: Option<f64>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    fn from_rows(rows: Vec<EvalRow>, scale: u32, shave: usize) -> Self {
        let ok: Vec<&ImageScores> = rows.iter().filter_map(|r| r.scores.as_ref()).collect();
        let mean = |f: fn(&ImageScores) -> f64| {
            (!ok.is_empty()).then(|| ok.iter().map(|s| f(s)).sum::<f64>() / ok.len() as f64)
        };
        EvalReport {
            scale,
            shave,
            count: rows.len(),
            failed: rows.len() - ok.len(),
            mean_psnr: mean(|s| s.psnr),
            mean_ssim: mean(|s| s.ssim),
            mean_ifc: mean(|s| s.ifc),
            rows,
        }
    }

    /// `path,scale,psnr,ssim,ifc`; failed rows leave the metric fields empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,scale,psnr,ssim,ifc\n");
        for row in &self.rows {
            match &row.scores {
                Some(s) => out.push_str(&format!(
                    "{},{},{},{:.6},{:.6}\n",
                    row.path,
                    row.scale,
                    format_db(s.psnr),
                    s.ssim,
                    s.ifc
                )),
                None => out.push_str(&format!("{},{},,,\n", row.path, row.scale)),
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let (csv_path, json_path) = (csv_path.as_ref(), json_path.as_ref());
        fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        fs::write(json_path, self.to_json()? + "\n").map_err(|e| Error::io(json_path, e))
    }
}

/// Metrics of `output` against `reference` on luminance after removing
/// `shave` border pixels from both.
pub fn evaluate_pair(
    reference: &ImageRgb,
    output: &ImageRgb,
    shave: usize,
    config: &MetricConfig,
) -> Result<ImageScores> {
    if (reference.width(), reference.height()) != (output.width(), output.height()) {
        return Err(Error::invalid(format!(
            "output is {}x{} but the reference is {}x{}",
            output.width(),
            output.height(),
            reference.width(),
            reference.height()
        )));
    }
    let r = rgb_to_luminance(reference).shave(shave)?;
    let t = rgb_to_luminance(output).shave(shave)?;
    Ok(ImageScores {
        psnr: psnr(&r, &t)?,
        ssim: ssim(&r, &t, &config.ssim)?,
        ifc: ifc(&r, &t, &config.ifc)?,
    })
}

/// Evaluates `(path, (reference, output))` pairs in order. Failed pairs become
/// error rows; the run continues. `shave` defaults to the scale.
pub fn evaluate_corpus(
    pairs: impl IntoIterator<Item = (String, Result<(ImageRgb, ImageRgb)>)>,
    scale: u32,
    shave: Option<usize>,
    config: &MetricConfig,
) -> EvalReport {
    let shave = shave.unwrap_or(scale as usize);
    let rows = pairs
        .into_iter()
        .map(|(path, pair)| {
            let scores = pair.and_then(|(r, o)| evaluate_pair(&r, &o, shave, config));
            if let Err(e) = &scores {
                log::warn!("evaluation of {path} failed: {e}");
            }
            EvalRow {
                path,
                scale,
                error: scores.as_ref().err().map(ToString::to_string),
                scores: scores.ok(),
            }
        })
        .collect();
    EvalReport::from_rows(rows, scale, shave)
}

/// Compares every test-split image of `manifest` with the file of the same
/// relative path under `sr_dir`.
pub fn evaluate_sr_dir(
    manifest: &CorpusManifest,
    sr_dir: impl AsRef<Path>,
    scale: u32,
    shave: Option<usize>,
    config: &MetricConfig,
) -> EvalReport {
    let sr_dir = sr_dir.as_ref();
    let pairs = manifest.split(Split::Test).map(|e| {
        let pair = load_image(manifest.resolve(e))
            .and_then(|r| Ok((r, load_image(sr_dir.join(&e.path))?)));
        (e.path.display().to_string(), pair)
    });
    evaluate_corpus(pairs, scale, shave, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(seed: usize) -> ImageRgb {
        ImageRgb::from_fn(40, 36, |x, y| {
            let v = (((x * 7 + y * 3 + seed) % 17) as f64) / 16.0;
            [v, 1.0 - v, 0.5 * v]
        })
        .unwrap()
    }

    #[test]
    fn identical_pairs_and_means() {
        let a = img(0);
        let b = a.clone().map_for_test();
        let report = evaluate_corpus(
            vec![
                ("a.png".to_string(), Ok((a.clone(), a.clone()))),
                ("b.png".to_string(), Ok((a.clone(), b))),
                ("c.png".to_string(), Err(Error::Corpus("missing".into()))),
            ],
            2,
            None,
            &MetricConfig::default(),
        );
        assert_eq!(report.count, 3);
        assert_eq!(report.failed, 1);
        assert_eq!(report.shave, 2);
        let first = report.rows[0].scores.unwrap();
        assert_eq!(first.psnr, f64::INFINITY);
        assert_eq!(first.ssim, 1.0);
        let second = report.rows[1].scores.unwrap();
        assert!(second.psnr.is_finite());
        assert_eq!(report.mean_ssim, Some((1.0 + second.ssim) / 2.0));
        assert_eq!(report.mean_psnr, Some(f64::INFINITY));

        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "path,scale,psnr,ssim,ifc");
        assert!(lines[1].starts_with("a.png,2,inf,1.000000,"));
        assert_eq!(lines[3], "c.png,2,,,");
        let json = report.to_json().unwrap();
        assert!(json.contains("\"mean_psnr\": \"inf\""));
        assert!(json.contains("missing"));
    }

    #[test]
    fn dimension_mismatch_is_a_row_error() {
        let a = img(0);
        let b = a.crop(0, 0, 38, 36).unwrap();
        let report = evaluate_corpus(
            vec![("x".to_string(), Ok((a, b)))],
            2,
            Some(0),
            &MetricConfig::default(),
        );
        assert_eq!(report.failed, 1);
        assert_eq!(report.mean_psnr, None);
    }

    trait MapForTest {
        fn map_for_test(self) -> ImageRgb;
    }

    impl MapForTest for ImageRgb {
        fn map_for_test(mut self) -> ImageRgb {
            self.data_mut()
                .iter_mut()
                .for_each(|v| *v = (*v * 0.9 + 0.05).clamp(0.0, 1.0));
            self
        }
    }
}
