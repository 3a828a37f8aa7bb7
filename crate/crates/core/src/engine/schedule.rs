//! Layer schedules.
//!
//! Both schedules walk depth groups outermost, then buffer-tiled ifmaps,
//! then 2x2 output positions (loop order La). Within one
//! (depth group, buffer tile) segment the fused schedule streams every
//! position through DWC -> Non-Conv -> intermediate buffer -> PWC; the
//! sequential schedule instead materializes the whole DWC output and runs
//! the PWC afterwards.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::nonconv_apply;
use crate::tensor::{DType, QuantTensor};
use crate::workload::{derive_tile_grid, LayerShape, SpatialTile, TileGrid};

use super::params::LayerParams;
use super::{
    dwc_tile, pwc_tile, AccessCounters, EngineConfig, H, INITIATION_CYCLES, T_D, T_K, T_M, T_N, W,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    Fused,
    Sequential,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Fused => "fused",
            Mode::Sequential => "sequential",
        })
    }
}

/// Active MAC slots of each engine in one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TraceCycle {
    pub dwc_macs: u16,
    pub pwc_macs: u16,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CycleTrace {
    pub cycles: Vec<TraceCycle>,
    /// Cycle index of the first PWC issue.
    pub first_pwc_cycle: Option<u64>,
    /// Number of (depth group, buffer tile) segments.
    pub segments: u64,
}

impl CycleTrace {
    pub fn total_cycles(&self) -> u64 {
        self.cycles.len() as u64
    }

    pub fn dwc_active_cycles(&self) -> u64 {
        self.cycles.iter().filter(|c| c.dwc_macs > 0).count() as u64
    }

    pub fn pwc_active_cycles(&self) -> u64 {
        self.cycles.iter().filter(|c| c.pwc_macs > 0).count() as u64
    }

    /// PWC cycles with every one of the engine's MAC slots busy.
    pub fn pwc_full_cycles(&self) -> u64 {
        self.cycles
            .iter()
            .filter(|c| c.pwc_macs as usize == super::PWC_MACS)
            .count() as u64
    }

    pub fn dwc_macs(&self) -> u64 {
        self.cycles.iter().map(|c| c.dwc_macs as u64).sum()
    }

    pub fn pwc_macs(&self) -> u64 {
        self.cycles.iter().map(|c| c.pwc_macs as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRun {
    pub ofmap: QuantTensor,
    pub counters: AccessCounters,
    pub trace: CycleTrace,
    /// Zero elements among the requantized DWC outputs.
    pub dwc_zeros: u64,
    pub dwc_elems: u64,
}

pub fn run_layer(
    mode: Mode,
    layer: &LayerShape,
    ifmap: &QuantTensor,
    params: &LayerParams,
    cfg: &EngineConfig,
) -> Result<LayerRun> {
    match mode {
        Mode::Fused => run_layer_fused(layer, ifmap, params, cfg),
        Mode::Sequential => run_layer_sequential(layer, ifmap, params, cfg),
    }
}

/// A requantized 2x2x8 DWC output waiting in the intermediate buffer.
struct Entry {
    position: usize,
    act: QuantTensor,
}

struct LayerCtx<'a> {
    layer: &'a LayerShape,
    ifmap: &'a QuantTensor,
    params: &'a LayerParams,
    grid: TileGrid,
    counters: AccessCounters,
    psum: QuantTensor,
    ofmap: QuantTensor,
    dwc_zeros: u64,
    dwc_elems: u64,
}

impl<'a> LayerCtx<'a> {
    fn new(
        layer: &'a LayerShape,
        ifmap: &'a QuantTensor,
        params: &'a LayerParams,
        cfg: &EngineConfig,
    ) -> Result<Self> {
        if layer.stride != 1 && layer.stride != 2 {
            return Err(Error::Stride(layer.stride));
        }
        if layer.h != H || layer.w != W {
            return Err(Error::Shape(format!(
                "layer {}: kernel {}x{} unsupported",
                layer.index, layer.h, layer.w
            )));
        }
        if ifmap.dims() != [layer.r, layer.c, layer.d] || ifmap.dtype() != DType::Act8 {
            return Err(Error::Shape(format!(
                "layer {}: ifmap {} {:?}, expected act8 {:?}",
                layer.index,
                ifmap.dtype().name(),
                ifmap.dims(),
                [layer.r, layer.c, layer.d]
            )));
        }
        params.check(layer)?;
        let grid = derive_tile_grid(layer, &cfg.tiles(), cfg.spatial_cap)?;
        let psum_dims = if grid.depth_groups > 1 {
            [layer.n, layer.m, layer.k]
        } else {
            [0, 0, 0]
        };
        Ok(LayerCtx {
            layer,
            ifmap,
            params,
            grid,
            counters: AccessCounters::default(),
            psum: QuantTensor::zeros(psum_dims, DType::Acc32),
            ofmap: QuantTensor::zeros([layer.n, layer.m, layer.k], DType::Act8),
            dwc_zeros: 0,
            dwc_elems: 0,
        })
    }

    fn valid_d(&self, dg: usize) -> usize {
        (self.layer.d - dg * T_D).min(T_D)
    }

    fn valid_k(&self, kg: usize) -> usize {
        (self.layer.k - kg * T_K).min(T_K)
    }

    /// Loads the depth group's kernels into the engine weight buffers:
    /// one `3x3x8` DWC tile and `ceil(K/16)` `8x16` PWC blocks.
    fn load_weights(&mut self, dg: usize) -> (QuantTensor, Vec<QuantTensor>) {
        let vd = self.valid_d(dg);
        let mut dwc = QuantTensor::zeros([H, W, T_D], DType::Wgt8);
        for h in 0..H {
            for w in 0..W {
                for d in 0..vd {
                    dwc.set(h, w, d, self.params.dwc_w.at(h, w, dg * T_D + d));
                }
            }
        }
        let pwc = (0..self.grid.kernel_groups)
            .map(|kg| {
                let mut block = QuantTensor::zeros([T_D, T_K, 1], DType::Wgt8);
                for d in 0..vd {
                    for k in 0..self.valid_k(kg) {
                        block.set(d, k, 0, self.params.pwc_w.at(dg * T_D + d, kg * T_K + k, 0));
                    }
                }
                block
            })
            .collect();
        self.counters.dwc_wgt_reads += (H * W * vd) as u64;
        self.counters.pwc_wgt_reads += (vd * self.layer.k) as u64;
        (dwc, pwc)
    }

    /// One DWC issue plus Non-Conv. Halo and padded lanes read as zero and
    /// the whole nominal window is counted.
    fn dwc_issue(
        &mut self,
        tile: &SpatialTile,
        dg: usize,
        weights: &QuantTensor,
    ) -> Result<QuantTensor> {
        let vd = self.valid_d(dg);
        let (er, ec) = tile.in_extent;
        let mut window = QuantTensor::zeros([er, ec, T_D], DType::Act8);
        for r in tile.in_rows.clone() {
            for c in tile.in_cols.clone() {
                let wr = (r as isize - tile.in_origin.0) as usize;
                let wc = (c as isize - tile.in_origin.1) as usize;
                for d in 0..vd {
                    window.set(wr, wc, d, self.ifmap.at(r, c, dg * T_D + d));
                }
            }
        }
        self.counters.dwc_act_reads += (er * ec * vd) as u64;

        let acc = dwc_tile(&window, weights, self.layer.stride)?;
        let mut act = QuantTensor::zeros([T_N, T_M, T_D], DType::Act8);
        for i in 0..tile.out_rows.len() {
            for j in 0..tile.out_cols.len() {
                for d in 0..vd {
                    let y = nonconv_apply(acc.at(i, j, d), &self.params.dwc_ncv[dg * T_D + d]);
                    act.set(i, j, d, y as i32);
                    self.dwc_zeros += (y == 0) as u64;
                }
            }
        }
        self.dwc_elems += (tile.out_rows.len() * tile.out_cols.len() * vd) as u64;
        Ok(act)
    }

    /// One PWC cycle for kernel group `kg`. Partial sums go through the
    /// psum store between depth groups; the last depth group feeds the
    /// output Non-Conv directly.
    fn pwc_step(
        &mut self,
        tile: &SpatialTile,
        act: &QuantTensor,
        dg: usize,
        kg: usize,
        block: &QuantTensor,
    ) -> Result<()> {
        let vd = self.valid_d(dg);
        let vk = self.valid_k(kg);
        let positions = tile.out_rows.len() * tile.out_cols.len();
        let last = dg + 1 == self.grid.depth_groups;

        let mut acc_in = QuantTensor::zeros([T_N, T_M, T_K], DType::Acc32);
        if dg > 0 {
            for (i, r) in tile.out_rows.clone().enumerate() {
                for (j, c) in tile.out_cols.clone().enumerate() {
                    for k in 0..vk {
                        acc_in.set(i, j, k, self.psum.at(r, c, kg * T_K + k));
                    }
                }
            }
            self.counters.pwc_psum_accesses += (positions * vk) as u64;
        }
        let out = pwc_tile(act, block, &acc_in)?;
        self.counters.pwc_act_reads += (positions * vd) as u64;

        for (i, r) in tile.out_rows.clone().enumerate() {
            for (j, c) in tile.out_cols.clone().enumerate() {
                for k in 0..vk {
                    let ch = kg * T_K + k;
                    let v = out.at(i, j, k);
                    if last {
                        let y = nonconv_apply(v, &self.params.pwc_ncv[ch]);
                        self.ofmap.set(r, c, ch, y as i32);
                    } else {
                        self.psum.set(r, c, ch, v);
                    }
                }
            }
        }
        if last {
            self.counters.pwc_out_writes += (positions * vk) as u64;
        } else {
            self.counters.pwc_psum_accesses += (positions * vk) as u64;
        }
        Ok(())
    }

    fn dwc_trace_macs(&self, tile: &SpatialTile, dg: usize) -> u16 {
        (H * W * self.valid_d(dg) * tile.out_rows.len() * tile.out_cols.len()) as u16
    }

    fn pwc_trace_macs(&self, tile: &SpatialTile, dg: usize, kg: usize) -> u16 {
        (self.valid_d(dg) * self.valid_k(kg) * tile.out_rows.len() * tile.out_cols.len()) as u16
    }

    fn finish(self, trace: CycleTrace) -> LayerRun {
        LayerRun {
            ofmap: self.ofmap,
            counters: self.counters,
            trace,
            dwc_zeros: self.dwc_zeros,
            dwc_elems: self.dwc_elems,
        }
    }
}

fn empty_run(layer: &LayerShape) -> LayerRun {
    LayerRun {
        ofmap: QuantTensor::zeros([0, 0, 0], DType::Act8),
        counters: AccessCounters::default(),
        trace: CycleTrace::default(),
        dwc_zeros: 0,
        dwc_elems: (layer.n * layer.m * layer.d) as u64,
    }
}

/// Streams DWC output straight into the PWC engine through the two-entry
/// intermediate buffer, cycle by cycle.
///
/// The DWC engine issues one position every `ceil(K/16)` cycles, which is
/// exactly the time the PWC spends on a position, so after the
/// `INITIATION_CYCLES` pipeline fill the PWC never idles within a segment.
pub fn run_layer_fused(
    layer: &LayerShape,
    ifmap: &QuantTensor,
    params: &LayerParams,
    cfg: &EngineConfig,
) -> Result<LayerRun> {
    if layer.d == 0 || layer.k == 0 {
        return Ok(empty_run(layer));
    }
    let mut ctx = LayerCtx::new(layer, ifmap, params, cfg)?;
    let mut trace = CycleTrace::default();
    let kgs = ctx.grid.kernel_groups as u64;
    let buffer_tiles = std::mem::take(&mut ctx.grid.buffer_tiles);

    for dg in 0..ctx.grid.depth_groups {
        let (dwc_w, pwc_w) = ctx.load_weights(dg);
        for bt in &buffer_tiles {
            let tiles = &bt.tiles;
            let base = trace.total_cycles();
            let mut pipe: VecDeque<(u64, Entry)> = VecDeque::new();
            let mut buffer: VecDeque<Entry> = VecDeque::with_capacity(2);
            let mut current: Option<(Entry, usize)> = None;
            let mut next_issue = 0usize;
            let mut local = 0u64;

            loop {
                let mut cycle = TraceCycle::default();

                while pipe.front().is_some_and(|(ready, _)| *ready == local) {
                    buffer.push_back(pipe.pop_front().unwrap().1);
                }
                debug_assert!(
                    buffer.len() + current.is_some() as usize <= 2,
                    "intermediate buffer overflow"
                );

                if next_issue < tiles.len() && local == next_issue as u64 * kgs {
                    let tile = &tiles[next_issue];
                    let act = ctx.dwc_issue(tile, dg, &dwc_w)?;
                    cycle.dwc_macs = ctx.dwc_trace_macs(tile, dg);
                    pipe.push_back((
                        local + INITIATION_CYCLES,
                        Entry {
                            position: next_issue,
                            act,
                        },
                    ));
                    next_issue += 1;
                }

                if current.is_none() {
                    current = buffer.pop_front().map(|e| (e, 0));
                }
                if let Some((entry, kg)) = current.as_mut() {
                    let tile = &tiles[entry.position];
                    ctx.pwc_step(tile, &entry.act, dg, *kg, &pwc_w[*kg])?;
                    cycle.pwc_macs = ctx.pwc_trace_macs(tile, dg, *kg);
                    trace.first_pwc_cycle.get_or_insert(base + local);
                    *kg += 1;
                    if *kg as u64 == kgs {
                        current = None;
                    }
                }

                trace.cycles.push(cycle);
                local += 1;
                if next_issue == tiles.len()
                    && pipe.is_empty()
                    && buffer.is_empty()
                    && current.is_none()
                {
                    break;
                }
            }
            trace.segments += 1;
        }
    }
    Ok(ctx.finish(trace))
}

/// Baseline without direct transfer: the full requantized DWC output is
/// written out as an `N x M x D` tensor and read back before the PWC runs.
pub fn run_layer_sequential(
    layer: &LayerShape,
    ifmap: &QuantTensor,
    params: &LayerParams,
    cfg: &EngineConfig,
) -> Result<LayerRun> {
    if layer.d == 0 || layer.k == 0 {
        return Ok(empty_run(layer));
    }
    let mut ctx = LayerCtx::new(layer, ifmap, params, cfg)?;
    let mut trace = CycleTrace::default();
    let buffer_tiles = std::mem::take(&mut ctx.grid.buffer_tiles);
    let groups = ctx.grid.depth_groups;
    let mut weights = Vec::with_capacity(groups);

    // DWC pass: one issue per cycle, pipeline drains at the end of each
    // segment.
    let mut intermediate = QuantTensor::zeros([layer.n, layer.m, layer.d], DType::Act8);
    for dg in 0..groups {
        let (dwc_w, pwc_w) = ctx.load_weights(dg);
        let vd = ctx.valid_d(dg);
        for bt in &buffer_tiles {
            for tile in &bt.tiles {
                let act = ctx.dwc_issue(tile, dg, &dwc_w)?;
                trace.cycles.push(TraceCycle {
                    dwc_macs: ctx.dwc_trace_macs(tile, dg),
                    pwc_macs: 0,
                });
                for (i, r) in tile.out_rows.clone().enumerate() {
                    for (j, c) in tile.out_cols.clone().enumerate() {
                        for d in 0..vd {
                            intermediate.set(r, c, dg * T_D + d, act.at(i, j, d));
                        }
                    }
                }
                ctx.counters.dwc_out_writes +=
                    (tile.out_rows.len() * tile.out_cols.len() * vd) as u64;
            }
            trace.cycles.extend(std::iter::repeat_n(
                TraceCycle::default(),
                INITIATION_CYCLES as usize,
            ));
            trace.segments += 1;
        }
        weights.push(pwc_w);
    }

    // PWC pass over the materialized intermediate tensor.
    for (dg, pwc_w) in weights.iter().enumerate() {
        let vd = ctx.valid_d(dg);
        for bt in &buffer_tiles {
            for tile in &bt.tiles {
                let mut act = QuantTensor::zeros([T_N, T_M, T_D], DType::Act8);
                for (i, r) in tile.out_rows.clone().enumerate() {
                    for (j, c) in tile.out_cols.clone().enumerate() {
                        for d in 0..vd {
                            act.set(i, j, d, intermediate.at(r, c, dg * T_D + d));
                        }
                    }
                }
                ctx.counters.intermediate_reads +=
                    (tile.out_rows.len() * tile.out_cols.len() * vd) as u64;
                for (kg, block) in pwc_w.iter().enumerate() {
                    ctx.pwc_step(tile, &act, dg, kg, block)?;
                    trace.first_pwc_cycle.get_or_insert(trace.total_cycles());
                    trace.cycles.push(TraceCycle {
                        dwc_macs: 0,
                        pwc_macs: ctx.pwc_trace_macs(tile, dg, kg),
                    });
                }
            }
        }
    }
    Ok(ctx.finish(trace))
}
