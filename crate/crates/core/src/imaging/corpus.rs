//! Corpus manifests and the synthetic glyph corpus.
//!
//! A corpus directory holds PNG files and a `manifest.tsv` with one line per
//! image: `<relative-path>\t<split>\t<tag>`, where split is `train` or
//! `test`. Blank lines and lines starting with `#` are ignored.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{save_image, ImageRgb};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Corpus(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's root directory.
    pub path: PathBuf,
    pub split: Split,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.path) {
                return Err(Error::Corpus(format!(
                    "duplicate manifest path {}",
                    e.path.display()
                )));
            }
        }
        Ok(CorpusManifest {
            root: root.into(),
            entries,
        })
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(path), Some(split)) = (fields.next(), fields.next()) else {
                return Err(Error::Corpus(format!(
                    "manifest line {}: expected `<path>\\t<split>\\t<tag>`",
                    lineno + 1
                )));
            };
            entries.push(ManifestEntry {
                path: PathBuf::from(path),
                split: split.parse()?,
                tag: fields.next().unwrap_or("").to_string(),
            });
        }
        Self::new(root, entries)
    }

    /// Reads a manifest file; entry paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    /// Manifest over every `.png` in `dir` (sorted by name); the last
    /// `test_count` files form the test split.
    pub fn from_folder(dir: impl AsRef<Path>, test_count: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let mut names: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| PathBuf::from(e.file_name()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        names.sort();
        let train_count = names.len().saturating_sub(test_count);
        let entries = names
            .into_iter()
            .enumerate()
            .map(|(i, path)| ManifestEntry {
                path,
                split: if i < train_count {
                    Split::Train
                } else {
                    Split::Test
                },
                tag: String::new(),
            })
            .collect();
        Self::new(dir, entries)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.path.display(), e.split, e.tag))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }
}

/// Parameters of [`generate_synthetic_corpus`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    /// The first `train` images go to the train split, the rest to test.
    pub train: usize,
    pub width: usize,
    pub height: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            count: 10,
            train: 8,
            width: 256,
            height: 256,
        }
    }
}

/// Checkerboard with square cells of `pitch` pixels, `a` in the top-left cell.
pub fn checkerboard(
    width: usize,
    height: usize,
    pitch: usize,
    a: [f64; 3],
    b: [f64; 3],
) -> Result<ImageRgb> {
    if pitch == 0 {
        return Err(Error::invalid("checkerboard pitch must be positive"));
    }
    ImageRgb::from_fn(width, height, |x, y| {
        if (x / pitch + y / pitch).is_multiple_of(2) {
            a
        } else {
            b
        }
    })
}

struct Canvas {
    img: ImageRgb,
}

impl Canvas {
    fn blend(&mut self, x: usize, y: usize, color: [f64; 3], alpha: f64) {
        if x >= self.img.width() || y >= self.img.height() || alpha <= 0.0 {
            return;
        }
        let p = self.img.pixel(x, y);
        let mixed = [0, 1, 2].map(|c| p[c] * (1.0 - alpha) + color[c] * alpha);
        self.img.set_pixel(x, y, mixed);
    }

    fn rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, color: [f64; 3]) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.blend(x, y, color, 1.0);
            }
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng, dark: bool) -> [f64; 3] {
    let (lo, hi) = if dark { (0.0, 0.35) } else { (0.65, 1.0) };
    [0; 3].map(|_| rng.random_range(lo..hi))
}

fn background(rng: &mut ChaCha8Rng, width: usize, height: usize, light: bool) -> Result<ImageRgb> {
    let a = random_color(rng, !light);
    if rng.random_bool(0.5) {
        return ImageRgb::filled(width, height, a);
    }
    let b = random_color(rng, !light);
    let horizontal = rng.random_bool(0.5);
    ImageRgb::from_fn(width, height, |x, y| {
        let t = if horizontal {
            x as f64 / (width - 1) as f64
        } else {
            y as f64 / (height - 1) as f64
        };
        [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t)
    })
}

/// Rows of glyph-like stroke clusters ("words") inside a region.
fn draw_text_lines(
    canvas: &mut Canvas,
    rng: &mut ChaCha8Rng,
    region: (usize, usize, usize, usize),
    ink: [f64; 3],
) {
    let (rx, ry, rw, rh) = region;
    let mut y = ry + rng.random_range(2..8);
    while y + 20 < ry + rh {
        let line_h = rng.random_range(6..16);
        let mut x = rx + rng.random_range(2..10);
        while x + 12 < rx + rw {
            let glyphs = rng.random_range(2..8);
            for _ in 0..glyphs {
                let gw = rng.random_range(3..(line_h / 2 + 4));
                if x + gw >= rx + rw {
                    break;
                }
                let stroke = rng.random_range(1..3);
                // Vertical stems plus an optional bar, like simple letterforms.
                canvas.rect(x, y, stroke, line_h, ink);
                if rng.random_bool(0.6) {
                    canvas.rect(
                        x + gw - stroke,
                        y + line_h / 3,
                        stroke,
                        line_h - line_h / 3,
                        ink,
                    );
                }
                match rng.random_range(0..3) {
                    0 => canvas.rect(x, y, gw, stroke, ink),
                    1 => canvas.rect(x, y + line_h / 2, gw, stroke, ink),
                    _ => canvas.rect(x, y + line_h - stroke, gw, stroke, ink),
                }
                x += gw + rng.random_range(1..3);
            }
            x += rng.random_range(4..10);
        }
        y += line_h + rng.random_range(4..10);
    }
}

fn draw_bars(
    canvas: &mut Canvas,
    rng: &mut ChaCha8Rng,
    region: (usize, usize, usize, usize),
    ink: [f64; 3],
) {
    let (rx, ry, rw, rh) = region;
    let vertical = rng.random_bool(0.5);
    let width = rng.random_range(1..6);
    let pitch = width + rng.random_range(1..8);
    let mut offset = 0;
    while offset + width <= if vertical { rw } else { rh } {
        if vertical {
            canvas.rect(rx + offset, ry, width, rh, ink);
        } else {
            canvas.rect(rx, ry + offset, rw, width, ink);
        }
        offset += pitch;
    }
}

fn draw_checker(
    canvas: &mut Canvas,
    rng: &mut ChaCha8Rng,
    region: (usize, usize, usize, usize),
    ink: [f64; 3],
) {
    let (rx, ry, rw, rh) = region;
    let pitch = [2, 3, 4, 6, 8][rng.random_range(0..5)];
    for y in 0..rh {
        for x in 0..rw {
            if (x / pitch + y / pitch) % 2 == 0 {
                canvas.blend(rx + x, ry + y, ink, 1.0);
            }
        }
    }
}

/// Half-plane step edge with 4×4 supersampled coverage.
fn draw_edge(
    canvas: &mut Canvas,
    rng: &mut ChaCha8Rng,
    region: (usize, usize, usize, usize),
    ink: [f64; 3],
) {
    let (rx, ry, rw, rh) = region;
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (nx, ny) = (angle.cos(), angle.sin());
    let cx = rw as f64 * rng.random_range(0.3..0.7);
    let cy = rh as f64 * rng.random_range(0.3..0.7);
    for y in 0..rh {
        for x in 0..rw {
            let mut covered = 0;
            for sy in 0..4 {
                for sx in 0..4 {
                    let px = x as f64 + (sx as f64 + 0.5) / 4.0 - cx;
                    let py = y as f64 + (sy as f64 + 0.5) / 4.0 - cy;
                    if px * nx + py * ny > 0.0 {
                        covered += 1;
                    }
                }
            }
            canvas.blend(rx + x, ry + y, ink, covered as f64 / 16.0);
        }
    }
}

const KINDS: [&str; 4] = ["text", "bars", "checker", "edges"];

/// Renders image `index` of a synthetic corpus.
pub fn synthetic_image(
    width: usize,
    height: usize,
    seed: u64,
    index: usize,
) -> Result<(ImageRgb, &'static str)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let light = rng.random_bool(0.7);
    let mut canvas = Canvas {
        img: background(&mut rng, width, height, light)?,
    };
    let kind = KINDS[index % KINDS.len()];
    // The primary content fills the image; a few secondary patches mix in
    // the other structure types.
    let full = (0, 0, width, height);
    let ink = random_color(&mut rng, light);
    match kind {
        "text" => draw_text_lines(&mut canvas, &mut rng, full, ink),
        "bars" => draw_bars(&mut canvas, &mut rng, full, ink),
        "checker" => draw_checker(&mut canvas, &mut rng, full, ink),
        _ => draw_edge(&mut canvas, &mut rng, full, ink),
    }
    for _ in 0..rng.random_range(2..5) {
        let w = rng.random_range(width / 6..width / 2);
        let h = rng.random_range(height / 6..height / 2);
        let region = (
            rng.random_range(0..width - w),
            rng.random_range(0..height - h),
            w,
            h,
        );
        let panel = random_color(&mut rng, !light);
        canvas.rect(region.0, region.1, w, h, panel);
        let ink = random_color(&mut rng, light);
        match rng.random_range(0..4) {
            0 => draw_text_lines(&mut canvas, &mut rng, region, ink),
            1 => draw_bars(&mut canvas, &mut rng, region, ink),
            2 => draw_checker(&mut canvas, &mut rng, region, ink),
            _ => draw_edge(&mut canvas, &mut rng, region, ink),
        }
    }
    Ok((canvas.img, kind))
}

/// Writes `spec.count` PNGs plus `manifest.tsv` into `out_dir`.
/// Output is a pure function of `spec` and `seed`.
pub fn generate_synthetic_corpus(
    spec: &SyntheticSpec,
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<CorpusManifest> {
    let out_dir = out_dir.as_ref();
    if spec.width < 32 || spec.height < 32 {
        return Err(Error::invalid("synthetic images must be at least 32x32"));
    }
    if spec.train > spec.count {
        return Err(Error::invalid(format!(
            "train split {} larger than corpus size {}",
            spec.train, spec.count
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(spec.count);
    for index in 0..spec.count {
        let (img, kind) = synthetic_image(spec.width, spec.height, seed, index)?;
        let name = PathBuf::from(format!("synth_{index:04}.png"));
        save_image(&img, out_dir.join(&name))?;
        entries.push(ManifestEntry {
            path: name,
            split: if index < spec.train {
                Split::Train
            } else {
                Split::Test
            },
            tag: kind.to_string(),
        });
    }
    let manifest = CorpusManifest::new(out_dir, entries)?;
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
