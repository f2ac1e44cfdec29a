//! Portable tensor files (`SGT1`).
//!
//! Layout: `b"SGT1"` | `u8` dtype (0 = f32, 1 = u32, 2 = u8) | `u8` ndim |
//! ndim × `u32` LE dims (row-major, order H, W[, C]) | raw LE payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{BinaryMask, InstanceMask, MultiChannelImage, ProbabilityMask, Raster};

pub const MAGIC: [u8; 4] = *b"SGT1";

/// Upper bound on a single payload; larger headers are treated as overflow.
const MAX_PAYLOAD_BYTES: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    U32 = 1,
    U8 = 2,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::U32),
            2 => Ok(DType::U8),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U32(_) => DType::U32,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl Tensor {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + self.data.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.push(self.data.dtype() as u8);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::TruncatedPayload {
                expected: 6,
                actual: bytes.len(),
            });
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found,
            });
        }
        if bytes.len() < 6 {
            return Err(Error::TruncatedPayload {
                expected: 6,
                actual: bytes.len(),
            });
        }
        let dtype = DType::from_code(bytes[4])?;
        let ndim = bytes[5] as usize;
        let header = 6 + 4 * ndim;
        if bytes.len() < header {
            return Err(Error::TruncatedPayload {
                expected: header,
                actual: bytes.len(),
            });
        }
        let dims: Vec<u32> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let count = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        let payload_bytes = count.and_then(|n| n.checked_mul(dtype.size() as u64));
        let payload_bytes = match payload_bytes {
            Some(n) if n <= MAX_PAYLOAD_BYTES && usize::try_from(n).is_ok() => n as usize,
            _ => return Err(Error::DimensionOverflow { dims }),
        };
        let payload = &bytes[header..];
        if payload.len() < payload_bytes {
            return Err(Error::TruncatedPayload {
                expected: payload_bytes,
                actual: payload.len(),
            });
        }
        if payload.len() > payload_bytes {
            return Err(Error::TensorLayout(format!(
                "{} trailing bytes after payload",
                payload.len() - payload_bytes
            )));
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U32 => TensorData::U32(
                payload
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(Tensor { dims, data })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    fn hw(&self) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            [h, w] | [h, w, _] => Ok((*h as usize, *w as usize)),
            _ => Err(Error::TensorLayout(format!(
                "expected 2 or 3 dims, got {:?}",
                self.dims
            ))),
        }
    }

    pub fn into_image(self) -> Result<MultiChannelImage> {
        let (h, w) = self.hw()?;
        let c = self.dims.get(2).copied().unwrap_or(1) as usize;
        match self.data {
            TensorData::F32(v) => MultiChannelImage::unnamed(w, h, c, v),
            other => Err(Error::TensorLayout(format!(
                "image tensors are f32, found {:?}",
                other.dtype()
            ))),
        }
    }

    pub fn into_instance_mask(self) -> Result<InstanceMask> {
        let (h, w) = self.plane_dims()?;
        match self.data {
            TensorData::U32(v) => InstanceMask::new(w, h, v),
            TensorData::U8(v) => InstanceMask::new(w, h, v.into_iter().map(u32::from).collect()),
            TensorData::F32(_) => Err(Error::TensorLayout(
                "instance masks are u32 or u8, found f32".into(),
            )),
        }
    }

    /// Accepts u8 bits, u32 labels (binarized) or f32 values (non-zero = 1).
    pub fn into_binary_mask(self) -> Result<BinaryMask> {
        let (h, w) = self.plane_dims()?;
        let bits = match self.data {
            TensorData::U8(v) => v,
            TensorData::U32(v) => v.into_iter().map(|l| u8::from(l > 0)).collect(),
            TensorData::F32(v) => v.into_iter().map(|x| u8::from(x != 0.0)).collect(),
        };
        BinaryMask::new(w, h, bits)
    }

    pub fn into_probability_mask(self) -> Result<ProbabilityMask> {
        let (h, w) = self.plane_dims()?;
        match self.data {
            TensorData::F32(v) => ProbabilityMask::new(w, h, v),
            other => Err(Error::TensorLayout(format!(
                "probability masks are f32, found {:?}",
                other.dtype()
            ))),
        }
    }

    fn plane_dims(&self) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            [h, w] | [h, w, 1] => Ok((*h as usize, *w as usize)),
            _ => Err(Error::TensorLayout(format!(
                "expected a single-plane mask, got dims {:?}",
                self.dims
            ))),
        }
    }
}

/// Conversion of a raster into its tensor-file form.
pub trait ToTensor {
    fn to_tensor(&self) -> Tensor;
}

impl ToTensor for MultiChannelImage {
    fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![
                self.height() as u32,
                self.width() as u32,
                self.channels() as u32,
            ],
            data: TensorData::F32(self.pixels().to_vec()),
        }
    }
}

impl ToTensor for InstanceMask {
    fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.height() as u32, self.width() as u32],
            data: TensorData::U32(self.labels().to_vec()),
        }
    }
}

impl ToTensor for BinaryMask {
    fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.height() as u32, self.width() as u32],
            data: TensorData::U8(self.bits().to_vec()),
        }
    }
}

impl ToTensor for ProbabilityMask {
    fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.height() as u32, self.width() as u32],
            data: TensorData::F32(self.values().to_vec()),
        }
    }
}

pub fn save_tensor_file(path: impl AsRef<Path>, value: &impl ToTensor) -> Result<()> {
    value.to_tensor().write(path)
}

/// What a tensor file turned out to contain.
#[derive(Debug, Clone, PartialEq)]
pub enum Loaded {
    Image(MultiChannelImage),
    Mask(InstanceMask),
}

/// f32 tensors load as images, integer tensors as instance masks.
pub fn load_tensor_file(path: impl AsRef<Path>) -> Result<Loaded> {
    let t = Tensor::read(path)?;
    match t.data.dtype() {
        DType::F32 => t.into_image().map(Loaded::Image),
        DType::U32 | DType::U8 => t.into_instance_mask().map(Loaded::Mask),
    }
}
