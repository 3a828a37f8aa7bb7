//! Q8.16 fixed point and the Non-Conv unit.
//!
//! Between the two engines sit dequantization, batch normalization, ReLU and
//! requantization. With every parameter frozen at inference time they fold
//! into one affine map `y = k * x + b` per channel, with `k` and `b` held as
//! signed 24-bit Q8.16 words.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FRAC_BITS: u32 = 16;
pub const ONE_RAW: i32 = 1 << FRAC_BITS;
pub const RAW_MIN: i32 = -(1 << 23);
pub const RAW_MAX: i32 = (1 << 23) - 1;

/// Largest activation code after requantization.
pub const ACT_MAX: u8 = 255;

/// Signed Q8.16 scalar stored in the low 24 bits of an `i32`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct QFixed {
    raw: i32,
}

impl QFixed {
    pub const ZERO: QFixed = QFixed { raw: 0 };
    pub const ONE: QFixed = QFixed { raw: ONE_RAW };
    pub const MIN: QFixed = QFixed { raw: RAW_MIN };
    pub const MAX: QFixed = QFixed { raw: RAW_MAX };

    /// Returns `None` if `raw` does not fit in 24 signed bits.
    pub fn from_raw(raw: i32) -> Option<Self> {
        (RAW_MIN..=RAW_MAX).contains(&raw).then_some(QFixed { raw })
    }

    pub fn raw(self) -> i32 {
        self.raw
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 / ONE_RAW as f64
    }
}

impl fmt::Display for QFixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

/// Result of converting a real to Q8.16.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Converted {
    pub value: QFixed,
    pub saturated: bool,
}

/// Rounds half away from zero, then saturates to the 24-bit range. NaN maps
/// to zero and is reported as saturated.
pub fn to_fixed(x: f64) -> Converted {
    if x.is_nan() {
        return Converted {
            value: QFixed::ZERO,
            saturated: true,
        };
    }
    // `f64::round` is half-away-from-zero; scaling by 2^16 is exact.
    let scaled = (x * ONE_RAW as f64).round();
    if scaled > RAW_MAX as f64 {
        Converted {
            value: QFixed::MAX,
            saturated: true,
        }
    } else if scaled < RAW_MIN as f64 {
        Converted {
            value: QFixed::MIN,
            saturated: true,
        }
    } else {
        Converted {
            value: QFixed { raw: scaled as i32 },
            saturated: false,
        }
    }
}

/// Per-channel batch-norm statistics and the quantization scales around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnQuantParams {
    pub gamma: f64,
    pub beta: f64,
    pub mu: f64,
    pub sigma_sq: f64,
    pub epsilon: f64,
    /// Input activation scale.
    pub s_a: f64,
    /// Weight scale.
    pub s_w: f64,
    /// Scale of the activation produced for the next engine.
    pub s_a_next: f64,
}

impl BnQuantParams {
    pub fn identity() -> Self {
        BnQuantParams {
            gamma: 1.0,
            beta: 0.0,
            mu: 0.0,
            sigma_sq: 0.0,
            epsilon: 1.0,
            s_a: 1.0,
            s_w: 1.0,
            s_a_next: 1.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let all = [
            self.gamma,
            self.beta,
            self.mu,
            self.sigma_sq,
            self.epsilon,
            self.s_a,
            self.s_w,
            self.s_a_next,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param(format!(
                "non-finite BN/quant parameter in {self:?}"
            )));
        }
        if self.sigma_sq < 0.0 {
            return Err(Error::Param(format!("sigma_sq = {} < 0", self.sigma_sq)));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Param(format!("epsilon = {} <= 0", self.epsilon)));
        }
        if self.s_a <= 0.0 || self.s_w <= 0.0 || self.s_a_next <= 0.0 {
            return Err(Error::Param("quantization scales must be positive".into()));
        }
        Ok(())
    }

    pub fn sigma_hat(&self) -> f64 {
        (self.sigma_sq + self.epsilon).sqrt()
    }

    /// Unrounded gain of the folded transform.
    pub fn k_real(&self) -> f64 {
        self.gamma * self.s_a * self.s_w / (self.sigma_hat() * self.s_a_next)
    }

    /// Unrounded offset of the folded transform.
    pub fn b_real(&self) -> f64 {
        (self.beta - self.gamma * self.mu / self.sigma_hat()) / self.s_a_next
    }
}

/// Folded Non-Conv parameters for one output channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct NonConvParams {
    pub k: QFixed,
    pub b: QFixed,
    /// Set when folding clipped `k` or `b` to the Q8.16 range.
    pub saturated: bool,
}

impl NonConvParams {
    pub const IDENTITY: NonConvParams = NonConvParams {
        k: QFixed::ONE,
        b: QFixed::ZERO,
        saturated: false,
    };

    pub fn from_raw(k: i32, b: i32) -> Option<Self> {
        Some(NonConvParams {
            k: QFixed::from_raw(k)?,
            b: QFixed::from_raw(b)?,
            saturated: false,
        })
    }

    pub fn from_real(k: f64, b: f64) -> Self {
        let k = to_fixed(k);
        let b = to_fixed(b);
        NonConvParams {
            k: k.value,
            b: b.value,
            saturated: k.saturated || b.saturated,
        }
    }
}

pub fn fold_bn_quant(p: &BnQuantParams) -> Result<NonConvParams> {
    p.check()?;
    Ok(NonConvParams::from_real(p.k_real(), p.b_real()))
}

/// Applies the Non-Conv unit to a raw accumulator: affine in Q.16, ReLU,
/// round half away from zero, saturate to an unsigned 8-bit activation.
#[inline]
pub fn nonconv_apply(x: i32, p: &NonConvParams) -> u8 {
    let acc = p.k.raw as i64 * x as i64 + p.b.raw as i64;
    if acc <= 0 {
        return 0;
    }
    // Positive after ReLU, so adding half and shifting is half-away rounding.
    let rounded = (acc + (1 << (FRAC_BITS - 1))) >> FRAC_BITS;
    rounded.min(ACT_MAX as i64) as u8
}

// Parameter files: per channel, two little-endian i32 words (k then b).

pub fn encode_ncv(params: &[NonConvParams]) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.len() * 8);
    for p in params {
        out.extend_from_slice(&p.k.raw.to_le_bytes());
        out.extend_from_slice(&p.b.raw.to_le_bytes());
    }
    out
}

pub fn decode_ncv(bytes: &[u8], path: &Path) -> Result<Vec<NonConvParams>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::format(
            path,
            format!("length {} is not a multiple of 8", bytes.len()),
        ));
    }
    bytes
        .chunks_exact(8)
        .enumerate()
        .map(|(ch, w)| {
            let k = i32::from_le_bytes(w[0..4].try_into().unwrap());
            let b = i32::from_le_bytes(w[4..8].try_into().unwrap());
            NonConvParams::from_raw(k, b).ok_or_else(|| {
                Error::format(path, format!("channel {ch}: k/b outside 24-bit range"))
            })
        })
        .collect()
}

pub fn write_ncv(path: &Path, params: &[NonConvParams]) -> Result<()> {
    std::fs::write(path, encode_ncv(params)).map_err(|e| Error::io(path, e))
}

pub fn read_ncv(path: &Path) -> Result<Vec<NonConvParams>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ncv(&bytes, path)
}
