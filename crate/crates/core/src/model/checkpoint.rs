//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic      b"LPSR"
//! version    u16
//! config     scale u32, levels u32, depth u32, feature_channels u32,
//!            image_channels u32, leaky_slope f64
//! count      u32
//! records    count × { name_len u16, name bytes (UTF-8), dtype u8,
//!                      dims 4 × u32, values (dtype, little-endian) }
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams, Scale};
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{DType, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LPSR";
pub const CHECKPOINT_VERSION: u16 = 1;

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or(CheckpointError::UnexpectedEof)?;
        let out = self
            .bytes
            .get(self.pos..end)
            .ok_or(CheckpointError::UnexpectedEof)?;
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    pub fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Named tensor records shared by checkpoints and optimizer state files.
pub(crate) struct RecordCodec;

impl RecordCodec {
    pub fn write<T: Real>(out: &mut Vec<u8>, name: &str, tensor: &Tensor<T>) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        for d in tensor.shape().0 {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(out);
        }
    }

    /// Reads one record, converting the stored values to `T`.
    pub fn read<T: Real>(r: &mut ByteReader<'_>) -> Result<(String, Tensor<T>), CheckpointError> {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::ShapeTable("parameter name is not UTF-8".into()))?;
        let tag = r.u8()?;
        let dtype = DType::from_tag(tag).ok_or(CheckpointError::UnknownDtype(tag))?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| {
                CheckpointError::ShapeTable(format!("`{name}` has an overflowing shape"))
            })?;
        let byte_len = numel
            .checked_mul(dtype.size())
            .ok_or(CheckpointError::UnexpectedEof)?;
        let raw = r.take(byte_len)?;
        let data = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|b| T::from_f64(f32::read_le(b) as f64))
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|b| T::from_f64(f64::read_le(b)))
                .collect(),
        };
        let tensor = Tensor::from_vec(dims, data).expect("length computed from dims");
        Ok((name, tensor))
    }
}

pub fn encode_checkpoint<T: Real>(params: &ModelParams<T>) -> Result<Vec<u8>> {
    if !params.all_finite() {
        return Err(Error::invalid(
            "refusing to checkpoint non-finite parameters",
        ));
    }
    let cfg = params.config();
    let mut out = Vec::with_capacity(64 + params.numel() * T::DTYPE.size());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        cfg.scale.factor(),
        cfg.levels() as u32,
        cfg.depth as u32,
        cfg.feature_channels as u32,
        cfg.image_channels as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&cfg.leaky_slope.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        RecordCodec::write(&mut out, name, tensor);
    }
    Ok(out)
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<ModelParams<T>> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        }
        .into());
    }
    let scale = Scale::new(r.u32()?).map_err(|e| CheckpointError::Config(e.to_string()))?;
    let levels = r.u32()? as usize;
    if levels != scale.levels() {
        return Err(CheckpointError::Config(format!(
            "scale {scale} implies {} levels, file says {levels}",
            scale.levels()
        ))
        .into());
    }
    let config = ModelConfig {
        scale,
        depth: r.u32()? as usize,
        feature_channels: r.u32()? as usize,
        image_channels: r.u32()? as usize,
        leaky_slope: r.f64()?,
    };
    config
        .validate()
        .map_err(|e| CheckpointError::Config(e.to_string()))?;
    let count = r.u32()? as usize;
    let table = config.parameter_table();
    if count != table.len() {
        return Err(CheckpointError::ShapeTable(format!(
            "configuration needs {} parameters, file has {count}",
            table.len()
        ))
        .into());
    }
    let mut named = Vec::with_capacity(count);
    for (want_name, want_shape) in &table {
        let (name, tensor) = RecordCodec::read::<T>(&mut r)?;
        if &name != want_name || tensor.shape().0 != *want_shape {
            return Err(CheckpointError::ShapeTable(format!(
                "found `{name}` {:?}, expected `{want_name}` {want_shape:?}",
                tensor.shape()
            ))
            .into());
        }
        named.push((name, tensor));
    }
    if !r.is_empty() {
        return Err(CheckpointError::TrailingData.into());
    }
    ModelParams::from_named(config, named)
}

pub fn save_checkpoint<T: Real>(params: &ModelParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ModelParams<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
