//! Naive ground-truth implementations. Nothing here calls into
//! [`crate::engine`]; the loops are written directly against tensor
//! payloads so the engine can be checked against them.

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::fixed::{BnQuantParams, NonConvParams};
use crate::tensor::{DType, QuantTensor};
use crate::workload::LayerShape;

fn require(t: &QuantTensor, dtype: DType, what: &str) -> Result<()> {
    if t.dtype() != dtype {
        return Err(Error::Shape(format!(
            "{what}: expected {}, got {}",
            dtype.name(),
            t.dtype().name()
        )));
    }
    Ok(())
}

/// Direct depthwise 3x3 convolution with zero padding.
pub fn ref_dwc(
    ifmap: &QuantTensor,
    weights: &QuantTensor,
    stride: usize,
    pad: usize,
) -> Result<QuantTensor> {
    require(ifmap, DType::Act8, "ref_dwc ifmap")?;
    require(weights, DType::Wgt8, "ref_dwc weights")?;
    let [rows, cols, depth] = ifmap.dims();
    let [kh, kw, kd] = weights.dims();
    if kd != depth {
        return Err(Error::Shape(format!(
            "ref_dwc: {kd} kernel channels for {depth} input channels"
        )));
    }
    if stride == 0 {
        return Err(Error::Stride(0));
    }
    let n = if rows + 2 * pad >= kh {
        (rows + 2 * pad - kh) / stride + 1
    } else {
        0
    };
    let m = if cols + 2 * pad >= kw {
        (cols + 2 * pad - kw) / stride + 1
    } else {
        0
    };

    let x = ifmap.data();
    let wt = weights.data();
    let mut out = vec![0i32; n * m * depth];
    for d in 0..depth {
        for i in 0..n {
            for j in 0..m {
                let mut s: i64 = 0;
                for h in 0..kh {
                    for w in 0..kw {
                        let r = (i * stride + h) as isize - pad as isize;
                        let c = (j * stride + w) as isize - pad as isize;
                        if r < 0 || c < 0 || r as usize >= rows || c as usize >= cols {
                            continue;
                        }
                        let xv = x[(r as usize * cols + c as usize) * depth + d] as i64;
                        s += xv * wt[(h * kw + w) * depth + d] as i64;
                    }
                }
                out[(i * m + j) * depth + d] = i32::try_from(s).expect("accumulator overflow");
            }
        }
    }
    QuantTensor::from_vec([n, m, depth], DType::Acc32, out)
}

/// Direct 1x1 convolution: `out[i][j][k] = sum_d act[i][j][d] * w[d][k]`.
pub fn ref_pwc(act: &QuantTensor, weights: &QuantTensor) -> Result<QuantTensor> {
    require(act, DType::Act8, "ref_pwc activations")?;
    require(weights, DType::Wgt8, "ref_pwc weights")?;
    let [n, m, depth] = act.dims();
    let [wd, k, one] = weights.dims();
    if wd != depth || one != 1 {
        return Err(Error::Shape(format!(
            "ref_pwc: weights {:?} do not match {depth} channels",
            weights.dims()
        )));
    }
    let a = act.data();
    let wt = weights.data();
    let mut out = vec![0i32; n * m * k];
    for p in 0..n * m {
        for kk in 0..k {
            let s: i64 = (0..depth)
                .map(|d| a[p * depth + d] as i64 * wt[d * k + kk] as i64)
                .sum();
            out[p * k + kk] = i32::try_from(s).expect("accumulator overflow");
        }
    }
    QuantTensor::from_vec([n, m, k], DType::Acc32, out)
}

/// Exact rational evaluation of `(k * x + b) / 2^16` with ReLU, half-away
/// rounding and 8-bit saturation.
pub fn ref_nonconv_exact(x: i32, p: &NonConvParams) -> u8 {
    let numer = p.k.raw() as i128 * x as i128 + p.b.raw() as i128;
    let y = Ratio::new(numer, 1i128 << 16);
    if y <= Ratio::from_integer(0) {
        return 0;
    }
    // Ratio::round rounds half away from zero.
    let r = y.round().to_integer();
    r.min(255) as u8
}

/// Real-valued dequantize -> BN -> ReLU -> requantize, before the final
/// rounding, clamped to `[0, 255]`.
pub fn ref_chain_real_unrounded(x: i32, p: &BnQuantParams) -> Result<f64> {
    p.check()?;
    let x_real = p.s_a * p.s_w * x as f64;
    let bn = p.gamma * (x_real - p.mu) / (p.sigma_sq + p.epsilon).sqrt() + p.beta;
    let relu = bn.max(0.0);
    Ok((relu / p.s_a_next).clamp(0.0, 255.0))
}

pub fn ref_chain_real(x: i32, p: &BnQuantParams) -> Result<u8> {
    Ok(ref_chain_real_unrounded(x, p)?.round() as u8)
}

/// Whole DSC layer through the naive path: depthwise conv, exact Non-Conv,
/// pointwise conv, exact Non-Conv.
pub fn ref_layer(
    layer: &LayerShape,
    ifmap: &QuantTensor,
    dwc_w: &QuantTensor,
    pwc_w: &QuantTensor,
    dwc_ncv: &[NonConvParams],
    pwc_ncv: &[NonConvParams],
) -> Result<QuantTensor> {
    let acc = ref_dwc(ifmap, dwc_w, layer.stride, layer.pad)?;
    let [n, m, d] = acc.dims();
    if dwc_ncv.len() != d {
        return Err(Error::ParamCount {
            what: "dwc non-conv",
            got: dwc_ncv.len(),
            expected: d,
        });
    }
    let mid: Vec<i32> = acc
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| ref_nonconv_exact(v, &dwc_ncv[i % d]) as i32)
        .collect();
    let mid = QuantTensor::from_vec([n, m, d], DType::Act8, mid)?;
    let acc = ref_pwc(&mid, pwc_w)?;
    let k = acc.channels();
    if pwc_ncv.len() != k {
        return Err(Error::ParamCount {
            what: "pwc non-conv",
            got: pwc_ncv.len(),
            expected: k,
        });
    }
    let out = acc
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| ref_nonconv_exact(v, &pwc_ncv[i % k]) as i32)
        .collect();
    QuantTensor::from_vec([n, m, k], DType::Act8, out)
}
