//! Inference, evaluation against ground truth and the λ sweep.

use std::fs;
use std::path::Path;

use super::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::imaging::{load_image, save_image, CorpusManifest, ImageRgb, PatchSampler, Split};
use crate::metrics::{evaluate_corpus, format_db, EvalReport, MetricConfig};
use crate::model::{load_checkpoint, ModelParams, Scale};

/// Runs the model at `scale` and clamps the result to `[0, 1]`.
pub fn superresolve_image(params: &ModelParams, input: &ImageRgb, scale: u32) -> Result<ImageRgb> {
    let out = params.infer_at_scale(&input.to_tensor(), scale)?;
    Ok(ImageRgb::from_tensor(&out, 0)?.clamped())
}

/// Loads `checkpoint` and `input`, super-resolves and writes `output` as PNG.
pub fn superresolve(
    checkpoint: &Path,
    input: &Path,
    scale: u32,
    output: &Path,
) -> Result<ImageRgb> {
    let params: ModelParams = load_checkpoint(checkpoint)?;
    let img = superresolve_image(&params, &load_image(input)?, scale)?;
    save_image(&img, output)?;
    Ok(img)
}

/// How test images are upscaled in [`evaluate`].
#[derive(Debug, Clone)]
pub enum Method {
    Bicubic,
    Model(Box<ModelParams>),
}

impl Method {
    /// `"bicubic"` or a checkpoint path.
    pub fn from_arg(arg: &str) -> Result<Self> {
        if arg == "bicubic" {
            Ok(Method::Bicubic)
        } else {
            Ok(Method::Model(Box::new(load_checkpoint(arg)?)))
        }
    }

    pub fn upscale(&self, lr: &ImageRgb, scale: u32) -> Result<ImageRgb> {
        match self {
            Method::Bicubic => Ok(lr
                .resize(lr.width() * scale as usize, lr.height() * scale as usize)?
                .clamped()),
            Method::Model(params) => superresolve_image(params, lr, scale),
        }
    }
}

/// Ground truth cropped to a multiple of `scale` and its bicubic LR version.
pub fn degrade(hr: &ImageRgb, scale: u32) -> Result<(ImageRgb, ImageRgb)> {
    let s = scale as usize;
    let (w, h) = (hr.width() / s * s, hr.height() / s * s);
    if w == 0 || h == 0 {
        return Err(Error::invalid(format!(
            "{}x{} image is smaller than the scale {s}",
            hr.width(),
            hr.height()
        )));
    }
    let hr = hr.crop(0, 0, w, h)?;
    let lr = hr.resize(w / s, h / s)?.clamped();
    Ok((hr, lr))
}

/// Scores `method` on the test split: each image is reduced by bicubic ÷S,
/// upscaled back and compared with its (cropped) original. Per-image
/// failures become error rows. Outputs are written to `sr_dir` if given.
pub fn evaluate(
    method: &Method,
    manifest: &CorpusManifest,
    scale: u32,
    shave: Option<usize>,
    metrics: &MetricConfig,
    sr_dir: Option<&Path>,
) -> Result<EvalReport> {
    let scale_t = Scale::new(scale)?;
    if let Method::Model(p) = method {
        if scale_t > p.config().scale {
            return Err(Error::ScaleExceedsModel {
                requested: scale,
                model: p.config().scale.factor(),
            });
        }
    }
    let entries: Vec<_> = manifest.split(Split::Test).collect();
    if entries.is_empty() {
        return Err(Error::Corpus("manifest has no test images".into()));
    }
    if let Some(dir) = sr_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let pairs = entries.into_iter().map(|e| {
        let pair = (|| {
            let (hr, lr) = degrade(&load_image(manifest.resolve(e))?, scale)?;
            let sr = method.upscale(&lr, scale)?;
            if let Some(dir) = sr_dir {
                let path = dir.join(&e.path);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
                }
                save_image(&sr, path)?;
            }
            Ok((hr, sr))
        })();
        (e.path.display().to_string(), pair)
    });
    Ok(evaluate_corpus(pairs, scale, shave, metrics))
}

/// One row of the sweep grid: λ with its learning-rate range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepEntry {
    pub lambda_gdl: f64,
    pub lr: f64,
    pub lr_floor: Option<f64>,
}

/// The λ grid with the learning-rate ranges it was reported with.
pub fn lambda_grid() -> Vec<SweepEntry> {
    let e = |lambda_gdl, lr, floor| SweepEntry {
        lambda_gdl,
        lr,
        lr_floor: Some(floor),
    };
    vec![
        e(0.0, 1e-5, 1e-6),
        e(0.05, 5e-6, 1e-6),
        e(0.1, 1e-5, 1e-6),
        e(0.5, 1e-6, 1e-7),
        e(1.0, 1e-6, 1e-7),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub entry: SweepEntry,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub scale: u32,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// `lambda,lr_range,psnr,ssim,ifc` with means over the test split.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,lr_range,psnr,ssim,ifc\n");
        let opt = |v: Option<f64>, f: fn(f64) -> String| v.map_or(String::new(), f);
        for row in &self.rows {
            let e = row.entry;
            let range = match e.lr_floor {
                Some(floor) => format!("{:e}/{:e}", e.lr, floor),
                None => format!("{:e}", e.lr),
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.lambda_gdl,
                range,
                opt(row.report.mean_psnr, format_db),
                opt(row.report.mean_ssim, |v| format!("{v:.6}")),
                opt(row.report.mean_ifc, |v| format!("{v:.6}")),
            ));
        }
        out
    }
}

/// Config used for one sweep entry: `base` with λ and the lr range replaced.
pub fn sweep_config(base: &TrainConfig, entry: &SweepEntry) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.loss.lambda_gdl = entry.lambda_gdl;
    cfg.lr = entry.lr;
    cfg.lr_floor = entry.lr_floor;
    cfg
}

/// Trains one model per entry from the same seed (hence the same
/// initialization and batches) and evaluates each on the test split.
/// Each run gets its own subdirectory `lambda_<λ>` under `out_dir`.
pub fn sweep_lambda(
    base: &TrainConfig,
    entries: &[SweepEntry],
    manifest: &CorpusManifest,
    metrics: &MetricConfig,
    out_dir: Option<&Path>,
) -> Result<SweepTable> {
    if entries.is_empty() {
        return Err(Error::Config("sweep needs at least one λ".into()));
    }
    let sampler =
        PatchSampler::from_manifest(manifest, base.augment.clone(), base.model.scale, base.patch)?;
    let scale = base.model.scale.factor();
    let mut rows = Vec::with_capacity(entries.len());
    for entry in entries {
        let cfg = sweep_config(base, entry);
        log::info!(
            "sweep: λ = {} lr {} floor {:?}",
            entry.lambda_gdl,
            entry.lr,
            entry.lr_floor
        );
        let run_dir = out_dir.map(|d| d.join(format!("lambda_{}", entry.lambda_gdl)));
        let outcome = train(&cfg, &sampler, None, run_dir.as_deref())?;
        let method = Method::Model(Box::new(outcome.state.params));
        let report = evaluate(&method, manifest, scale, None, metrics, None)?;
        if let Some(dir) = &run_dir {
            report.write(dir.join("eval.csv"), dir.join("eval.json"))?;
        }
        rows.push(SweepRow {
            entry: *entry,
            report,
        });
    }
    let table = SweepTable { scale, rows };
    if let Some(dir) = out_dir {
        let path = dir.join("sweep.csv");
        fs::write(&path, table.to_csv()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(table)
}
