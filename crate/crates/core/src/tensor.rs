//! Channel-last integer tensors and the `EDEA` tensor file format.
//!
//! File layout (little-endian): magic `EDEA`, `u16` version (1), `u8` dtype,
//! `u8` ndim, `ndim x u32` dims, then the row-major channel-last payload at
//! one byte per element for `act8`/`wgt8` and four bytes for `acc32`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EDEA";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    /// Unsigned 8-bit activation, `0..=255`.
    Act8,
    /// Signed 8-bit weight, `-128..=127`.
    Wgt8,
    /// Signed 32-bit accumulator.
    Acc32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Act8 => 0,
            DType::Wgt8 => 1,
            DType::Acc32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::Act8),
            1 => Some(DType::Wgt8),
            2 => Some(DType::Acc32),
            _ => None,
        }
    }

    pub fn range(self) -> (i64, i64) {
        match self {
            DType::Act8 => (0, 255),
            DType::Wgt8 => (-128, 127),
            DType::Acc32 => (i32::MIN as i64, i32::MAX as i64),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::Act8 => "act8",
            DType::Wgt8 => "wgt8",
            DType::Acc32 => "acc32",
        }
    }

    fn width(self) -> usize {
        match self {
            DType::Act8 | DType::Wgt8 => 1,
            DType::Acc32 => 4,
        }
    }
}

/// `rows x cols x channels`, channel fastest. Pointwise weight matrices use
/// `D x K x 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantTensor {
    dims: [usize; 3],
    dtype: DType,
    data: Vec<i32>,
}

impl QuantTensor {
    pub fn zeros(dims: [usize; 3], dtype: DType) -> Self {
        QuantTensor {
            dims,
            dtype,
            data: vec![0; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 3], dtype: DType, data: Vec<i32>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "{:?} needs {len} elements, got {}",
                dims,
                data.len()
            )));
        }
        let (lo, hi) = dtype.range();
        if let Some(&v) = data.iter().find(|&&v| (v as i64) < lo || (v as i64) > hi) {
            return Err(Error::Range {
                value: v as i64,
                dtype: dtype.name(),
            });
        }
        Ok(QuantTensor { dims, dtype, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    pub fn cols(&self) -> usize {
        self.dims[1]
    }

    pub fn channels(&self) -> usize {
        self.dims[2]
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, r: usize, c: usize, ch: usize) -> usize {
        debug_assert!(r < self.dims[0] && c < self.dims[1] && ch < self.dims[2]);
        (r * self.dims[1] + c) * self.dims[2] + ch
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize, ch: usize) -> i32 {
        self.data[self.offset(r, c, ch)]
    }

    /// Stores `v`, panicking if it is outside the dtype range.
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, ch: usize, v: i32) {
        let (lo, hi) = self.dtype.range();
        assert!(
            (v as i64) >= lo && (v as i64) <= hi,
            "{v} outside {} range",
            self.dtype.name()
        );
        let i = self.offset(r, c, ch);
        self.data[i] = v;
    }

    pub fn count_zeros(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0).count()
    }

    /// Coordinates of the first element that differs from `other`, or of the
    /// first element when the shapes disagree.
    pub fn first_difference(&self, other: &QuantTensor) -> Option<[usize; 3]> {
        if self.dims != other.dims || self.dtype != other.dtype {
            return Some([0, 0, 0]);
        }
        let i = self
            .data
            .iter()
            .zip(&other.data)
            .position(|(a, b)| a != b)?;
        let ch = self.dims[2].max(1);
        let cols = self.dims[1].max(1);
        Some([i / ch / cols, (i / ch) % cols, i % ch])
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 12 + self.data.len() * self.dtype.width());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype.code());
        out.push(3);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match self.dtype {
            DType::Act8 => out.extend(self.data.iter().map(|&v| v as u8)),
            DType::Wgt8 => out.extend(self.data.iter().map(|&v| v as i8 as u8)),
            DType::Acc32 => {
                for v in &self.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    /// Parses a tensor file. Files with fewer than three dims are padded
    /// with trailing unit dims; more than three is rejected.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, reason);
        if bytes.len() < 8 || &bytes[0..4] != MAGIC {
            return Err(bad("missing EDEA magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let dtype =
            DType::from_code(bytes[6]).ok_or_else(|| bad(format!("unknown dtype {}", bytes[6])))?;
        let ndim = bytes[7] as usize;
        if ndim > 3 {
            return Err(bad(format!("{ndim} dims, at most 3 supported")));
        }
        let header = 8 + 4 * ndim;
        if bytes.len() < header {
            return Err(bad("truncated header".into()));
        }
        let mut dims = [1usize; 3];
        for (i, d) in dims.iter_mut().take(ndim).enumerate() {
            let o = 8 + 4 * i;
            *d = u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        }
        let len: usize = dims.iter().product();
        let payload = &bytes[header..];
        if payload.len() != len * dtype.width() {
            return Err(bad(format!(
                "payload is {} bytes, expected {} for dims {:?}",
                payload.len(),
                len * dtype.width(),
                dims
            )));
        }
        let data = match dtype {
            DType::Act8 => payload.iter().map(|&b| b as i32).collect(),
            DType::Wgt8 => payload.iter().map(|&b| b as i8 as i32).collect(),
            DType::Acc32 => payload
                .chunks_exact(4)
                .map(|w| i32::from_le_bytes(w.try_into().unwrap()))
                .collect(),
        };
        Ok(QuantTensor { dims, dtype, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}
