//! Bit-exact model of the dual DWC/PWC engines.
//!
//! The DWC engine computes a 2x2x8 output tile per issue (8 channels x 3x3
//! taps x 4 positions = 288 MACs). The PWC engine consumes that tile and
//! produces a 2x2x16 partial-sum tile per cycle (8 x 16 x 4 = 512 MACs).
//! Between them the Non-Conv unit requantizes DWC accumulators into 8-bit
//! activations held in a two-entry intermediate buffer.

mod network;
mod params;
mod schedule;

pub use network::{run_network, NetworkRun, ZeroStats};
pub use params::{random_input, random_layer_params, random_network_params, LayerParams};
pub use schedule::{
    run_layer, run_layer_fused, run_layer_sequential, CycleTrace, LayerRun, Mode, TraceCycle,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DType, QuantTensor};
use crate::workload::{TileConfig, DEFAULT_SPATIAL_CAP};

pub const T_D: usize = 8;
pub const T_K: usize = 16;
pub const T_N: usize = 2;
pub const T_M: usize = 2;
pub const H: usize = 3;
pub const W: usize = 3;

pub const DWC_MACS: usize = T_D * H * W * T_N * T_M;
pub const PWC_MACS: usize = T_D * T_K * T_N * T_M;

/// Stages between a DWC issue and the cycle its requantized tile can be
/// consumed by the PWC engine.
pub const DWC_PIPELINE: [(&str, u64); 6] = [
    ("window fetch", 1),
    ("multiply", 1),
    ("adder tree", 4),
    ("non-conv multiply", 1),
    ("non-conv add", 1),
    ("round and clamp", 1),
];

pub const INITIATION_CYCLES: u64 = {
    let mut total = 0;
    let mut i = 0;
    while i < DWC_PIPELINE.len() {
        total += DWC_PIPELINE[i].1;
        i += 1;
    }
    total
};

/// Engine geometry is fixed; only the buffer tiling is configurable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub spatial_cap: usize,
}

impl EngineConfig {
    pub fn with_spatial_cap(spatial_cap: usize) -> Self {
        EngineConfig { spatial_cap }
    }

    pub fn tiles(&self) -> TileConfig {
        TileConfig::NATIVE
    }

    pub fn dwc_macs(&self) -> usize {
        DWC_MACS
    }

    pub fn pwc_macs(&self) -> usize {
        PWC_MACS
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            spatial_cap: DEFAULT_SPATIAL_CAP,
        }
    }
}

/// Element-level traffic across the modeled buffer boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccessCounters {
    pub dwc_act_reads: u64,
    pub dwc_wgt_reads: u64,
    /// Intermediate activations written to external memory (sequential
    /// schedule only).
    pub dwc_out_writes: u64,
    /// Intermediate activations read back from external memory (sequential
    /// schedule only).
    pub intermediate_reads: u64,
    pub pwc_act_reads: u64,
    pub pwc_wgt_reads: u64,
    pub pwc_psum_accesses: u64,
    pub pwc_out_writes: u64,
}

impl AccessCounters {
    /// Intermediate traffic that the fused schedule removes.
    pub fn intermediate_traffic(&self) -> u64 {
        self.dwc_out_writes + self.intermediate_reads
    }
}

fn expect_dims(t: &QuantTensor, dims: [usize; 3], dtype: DType, what: &str) -> Result<()> {
    if t.dims() != dims || t.dtype() != dtype {
        return Err(Error::Shape(format!(
            "{what}: expected {} {:?}, got {} {:?}",
            dtype.name(),
            dims,
            t.dtype().name(),
            t.dims()
        )));
    }
    Ok(())
}

/// One DWC engine issue: a `T_r x T_c x 8` window convolved per channel with
/// a `3x3x8` kernel tile into `2x2x8` accumulators.
pub fn dwc_tile(
    ifmap_tile: &QuantTensor,
    weights: &QuantTensor,
    stride: usize,
) -> Result<QuantTensor> {
    if stride != 1 && stride != 2 {
        return Err(Error::Stride(stride));
    }
    let extent = (T_N - 1) * stride + H;
    expect_dims(
        ifmap_tile,
        [extent, extent, T_D],
        DType::Act8,
        "dwc ifmap tile",
    )?;
    expect_dims(weights, [H, W, T_D], DType::Wgt8, "dwc weight tile")?;

    let mut acc = QuantTensor::zeros([T_N, T_M, T_D], DType::Acc32);
    for i in 0..T_N {
        for j in 0..T_M {
            for d in 0..T_D {
                let mut sum = 0i32;
                for h in 0..H {
                    for w in 0..W {
                        sum +=
                            ifmap_tile.at(i * stride + h, j * stride + w, d) * weights.at(h, w, d);
                    }
                }
                acc.set(i, j, d, sum);
            }
        }
    }
    Ok(acc)
}

/// One PWC engine cycle: a `2x2x8` activation tile times an `8x16` weight
/// block, added onto `2x2x16` partial sums.
pub fn pwc_tile(
    act_tile: &QuantTensor,
    weights: &QuantTensor,
    acc_in: &QuantTensor,
) -> Result<QuantTensor> {
    expect_dims(
        act_tile,
        [T_N, T_M, T_D],
        DType::Act8,
        "pwc activation tile",
    )?;
    expect_dims(weights, [T_D, T_K, 1], DType::Wgt8, "pwc weight block")?;
    expect_dims(acc_in, [T_N, T_M, T_K], DType::Acc32, "pwc partial sums")?;

    let mut acc = acc_in.clone();
    for i in 0..T_N {
        for j in 0..T_M {
            for k in 0..T_K {
                let mut sum = acc.at(i, j, k);
                for d in 0..T_D {
                    sum += act_tile.at(i, j, d) * weights.at(d, k, 0);
                }
                acc.set(i, j, k, sum);
            }
        }
    }
    Ok(acc)
}
