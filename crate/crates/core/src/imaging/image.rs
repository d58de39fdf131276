use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, ImageError, Result};
use crate::tensor::{Real, Tensor};

use super::resize::resample;

/// RGB image, channels interleaved, nominal values in `[0, 1]`.
///
/// Resampling may overshoot the nominal range slightly; [`ImageRgb::clamped`]
/// and [`save_image`] bring values back into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImageError::Dimensions { width, height }.into());
        }
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "RGB buffer of {} values does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(ImageRgb {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn clamped(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Bicubic resize, see [`super::bicubic_resize`].
    pub fn resize(&self, out_width: usize, out_height: usize) -> Result<Self> {
        if out_width == 0 || out_height == 0 {
            return Err(ImageError::Dimensions {
                width: out_width,
                height: out_height,
            }
            .into());
        }
        let data = resample(
            &self.data,
            self.width,
            self.height,
            3,
            out_width,
            out_height,
        );
        Self::new(out_width, out_height, data)
    }

    pub fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> Result<Self> {
        if left + width > self.width || top + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height}+{left}+{top} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Self::from_fn(width, height, |x, y| self.pixel(left + x, top + y))
    }

    /// `(1, 3, height, width)` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 3, self.height, self.width], |_, c, y, x| {
            T::from_f64(self.data[(y * self.width + x) * 3 + c])
        })
    }

    /// Image from batch entry `n` of a 3-channel tensor (values not clamped).
    pub fn from_tensor<T: Real>(tensor: &Tensor<T>, n: usize) -> Result<Self> {
        let s = tensor.shape();
        if s.c() != 3 || n >= s.n() {
            return Err(Error::invalid(format!(
                "cannot take RGB image {n} from tensor {s:?}"
            )));
        }
        Self::from_fn(s.w(), s.h(), |x, y| {
            [0, 1, 2].map(|c| tensor.at(n, c, y, x).as_f64())
        })
    }
}

/// Unit of an [`ImagePlane`]'s values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneRange {
    /// `[0, 1]`, tensor use.
    Unit,
    /// `[0, 255]`, metric use.
    Byte,
}

/// Single-channel image with a recorded value range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    range: PlaneRange,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, range: PlaneRange, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImageError::Dimensions { width, height }.into());
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "plane buffer of {} values does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(ImagePlane {
            width,
            height,
            range,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        range: PlaneRange,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, range, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn range(&self) -> PlaneRange {
        self.range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ImagePlane {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Removes `border` pixels from every side.
    pub fn shave(&self, border: usize) -> Result<Self> {
        if 2 * border >= self.width || 2 * border >= self.height {
            return Err(Error::invalid(format!(
                "cannot shave {border} pixels from a {}x{} plane",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width - 2 * border, self.height - 2 * border);
        Self::from_fn(w, h, self.range, |x, y| self.get(x + border, y + border))
    }

    pub fn resize(&self, out_width: usize, out_height: usize) -> Result<Self> {
        if out_width == 0 || out_height == 0 {
            return Err(ImageError::Dimensions {
                width: out_width,
                height: out_height,
            }
            .into());
        }
        let data = resample(
            &self.data,
            self.width,
            self.height,
            1,
            out_width,
            out_height,
        );
        Self::new(out_width, out_height, self.range, data)
    }
}

/// ITU-R BT.601 studio-swing luma on the 8-bit scale:
/// `Y = 16 + 65.481·R + 128.553·G + 24.966·B` for `R, G, B ∈ [0, 1]`.
pub fn rgb_to_luminance(img: &ImageRgb) -> ImagePlane {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| 16.0 + 65.481 * p[0] + 128.553 * p[1] + 24.966 * p[2])
        .collect();
    ImagePlane::new(img.width, img.height, PlaneRange::Byte, data)
        .expect("dimensions come from a valid image")
}

/// Reads an 8-bit PNG. Values map as `v / 255`; grayscale is replicated to
/// three channels, palettes are expanded and alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRgb> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    {
        let info = decoder.read_header_info().map_err(ImageError::from)?;
        if info.bit_depth == png::BitDepth::Sixteen {
            return Err(ImageError::UnsupportedBitDepth(16).into());
        }
    }
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(ImageError::from)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let frame = reader.next_frame(&mut buf).map_err(ImageError::from)?;
    if frame.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::UnsupportedBitDepth(frame.bit_depth as u8).into());
    }
    let samples = frame.color_type.samples();
    let (width, height) = (frame.width as usize, frame.height as usize);
    let bytes = &buf[..frame.buffer_size()];
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let row = &bytes[y * frame.line_size..y * frame.line_size + width * samples];
        for px in row.chunks_exact(samples) {
            let rgb = match frame.color_type {
                png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => [px[0]; 3],
                png::ColorType::Rgb | png::ColorType::Rgba => [px[0], px[1], px[2]],
                other => return Err(ImageError::UnsupportedColorType(format!("{other:?}")).into()),
            };
            data.extend(rgb.iter().map(|&v| v as f64 / 255.0));
        }
    }
    ImageRgb::new(width, height, data)
}

/// Quantizes one channel value: clamp to `[0, 1]`, scale, round half up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes an 8-bit RGB PNG.
pub fn save_image(img: &ImageRgb, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(ImageError::from)?;
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    writer.write_image_data(&bytes).map_err(ImageError::from)?;
    writer.finish().map_err(ImageError::from)?;
    Ok(())
}
