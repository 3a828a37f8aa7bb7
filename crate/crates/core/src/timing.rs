//! Analytic latency, throughput and utilization.
//!
//! Per depth group and buffer tile the engines spend `INITIATION_CYCLES`
//! filling the DWC -> Non-Conv pipeline and then one cycle per
//! (position, kernel group) pair in the PWC:
//!
//! ```text
//! lat_tile  = 9 + ceil(n_t/T_n) * ceil(m_t/T_m) * ceil(K/T_k)
//! lat_total = lat_tile * n_buf * ceil(D/T_d)
//! ```
//!
//! where `n_t x m_t` is the output extent of one buffer-tiled ifmap
//! (capped at `spatial_cap`) and `n_buf` the number of such tiles.

use serde::Serialize;

use crate::engine::{CycleTrace, EngineConfig, INITIATION_CYCLES};
use crate::error::{Error, Result};
use crate::workload::{layer_mac_counts, LayerShape, Network, TileConfig};

/// Clock period at the 1 GHz signoff frequency.
pub const DEFAULT_PERIOD_NS: f64 = 1.0;

pub fn tile_latency(n_t: usize, m_t: usize, k: usize, tiles: &TileConfig) -> u64 {
    INITIATION_CYCLES
        + (n_t.div_ceil(tiles.t_n) * m_t.div_ceil(tiles.t_m) * k.div_ceil(tiles.t_k)) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerTiming {
    pub index: usize,
    pub lat_tile: u64,
    pub n_buf: u64,
    pub depth_groups: u64,
    pub total_cycles: u64,
    pub total_ns: f64,
    pub ops: u64,
    pub throughput_gops: f64,
    pub dwc_utilization: f64,
    pub pwc_utilization: f64,
}

impl LayerTiming {
    /// Cycles spent in pipeline fill across all segments.
    pub fn initiation_cycles(&self) -> u64 {
        INITIATION_CYCLES * self.n_buf * self.depth_groups
    }
}

pub fn layer_latency(layer: &LayerShape, cfg: &EngineConfig, t_period_ns: f64) -> LayerTiming {
    let tiles = cfg.tiles();
    let cap = cfg.spatial_cap;
    let n_t = layer.n.min(cap);
    let m_t = layer.m.min(cap);
    let lat_tile = tile_latency(n_t, m_t, layer.k, &tiles);
    let n_buf = (layer.n.div_ceil(cap) * layer.m.div_ceil(cap)) as u64;
    let depth_groups = layer.d.div_ceil(tiles.t_d) as u64;
    let total_cycles = lat_tile * n_buf * depth_groups;
    let total_ns = total_cycles as f64 * t_period_ns;
    let ops = layer_mac_counts(layer).ops();

    let positions =
        (n_t.div_ceil(tiles.t_n) * m_t.div_ceil(tiles.t_m)) as u64 * n_buf * depth_groups;
    let kernel_groups = layer.k.div_ceil(tiles.t_k) as u64;
    let ratio = |active: u64| {
        if total_cycles == 0 {
            0.0
        } else {
            active as f64 / total_cycles as f64
        }
    };
    LayerTiming {
        index: layer.index,
        lat_tile,
        n_buf,
        depth_groups,
        total_cycles,
        total_ns,
        ops,
        throughput_gops: if total_ns > 0.0 {
            ops as f64 / total_ns
        } else {
            0.0
        },
        dwc_utilization: ratio(positions),
        pwc_utilization: ratio(positions * kernel_groups),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub t_period_ns: f64,
    pub layers: Vec<LayerTiming>,
    /// Unweighted mean over layers.
    pub mean_gops: f64,
    /// Total ops over total time.
    pub weighted_gops: f64,
    pub total_cycles: u64,
    pub total_ns: f64,
}

pub fn network_timing(net: &Network, cfg: &EngineConfig, t_period_ns: f64) -> TimingReport {
    let layers: Vec<_> = net
        .layers
        .iter()
        .map(|l| layer_latency(l, cfg, t_period_ns))
        .collect();
    let total_ns: f64 = layers.iter().map(|l| l.total_ns).sum();
    let total_ops: u64 = layers.iter().map(|l| l.ops).sum();
    let mean_gops = if layers.is_empty() {
        0.0
    } else {
        layers.iter().map(|l| l.throughput_gops).sum::<f64>() / layers.len() as f64
    };
    TimingReport {
        t_period_ns,
        mean_gops,
        weighted_gops: if total_ns > 0.0 {
            total_ops as f64 / total_ns
        } else {
            0.0
        },
        total_cycles: layers.iter().map(|l| l.total_cycles).sum(),
        total_ns,
        layers,
    }
}

/// Compares an instrumented engine trace with the analytic model: equal
/// cycle counts and the first PWC issue right after pipeline fill.
///
/// Fails with an error when the trace's MAC work does not belong to `layer`.
pub fn crosscheck_trace(
    layer: &LayerShape,
    model_cfg: &EngineConfig,
    trace: &CycleTrace,
) -> Result<bool> {
    let macs = layer_mac_counts(layer);
    if trace.dwc_macs() != macs.dwc || trace.pwc_macs() != macs.pwc {
        return Err(Error::Trace(format!(
            "trace performs {} DWC / {} PWC MACs, layer {} needs {} / {}",
            trace.dwc_macs(),
            trace.pwc_macs(),
            layer.index,
            macs.dwc,
            macs.pwc
        )));
    }
    let model = layer_latency(layer, model_cfg, DEFAULT_PERIOD_NS);
    Ok(trace.total_cycles() == model.total_cycles
        && trace.first_pwc_cycle == Some(INITIATION_CYCLES))
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::builtin_mobilenet_v1_cifar10;

    #[test]
    fn tile_latency_examples() {
        let t = TileConfig::NATIVE;
        assert_eq!(tile_latency(2, 2, 1024, &t), 73);
        assert_eq!(tile_latency(8, 8, 64, &t), 73);
        assert_eq!(tile_latency(2, 2, 16, &t), 10);
    }

    #[test]
    fn layer_examples() {
        let net = builtin_mobilenet_v1_cifar10();
        let cfg = EngineConfig::default();
        let l12 = layer_latency(&net.layers[12], &cfg, 1.0);
        assert_eq!(
            (l12.lat_tile, l12.n_buf, l12.depth_groups, l12.total_cycles),
            (73, 1, 128, 9_344)
        );
        assert_eq!(l12.ops, 8_462_336);
        let l10 = layer_latency(&net.layers[10], &cfg, 1.0);
        assert_eq!((l10.total_cycles, l10.ops), (8_768, 8_536_064));
        let l1 = layer_latency(&net.layers[1], &cfg, 1.0);
        assert_eq!(
            (l1.lat_tile, l1.n_buf, l1.depth_groups, l1.total_cycles),
            (137, 4, 8, 4_384)
        );
        assert_eq!(l1.ops, 4_489_216);
        assert_eq!(l1.throughput_gops, 1024.0);
    }

    #[test]
    fn initiation_overhead() {
        let net = builtin_mobilenet_v1_cifar10();
        let cfg = EngineConfig::default();
        for l in &net.layers {
            let t = layer_latency(l, &cfg, 1.0);
            let kg = l.k.div_ceil(16);
            let without =
                ((l.n.min(8) / 2) * (l.m.min(8) / 2) * kg) as u64 * t.n_buf * t.depth_groups;
            assert_eq!(t.total_cycles - without, 9 * t.n_buf * t.depth_groups);
            assert_eq!(t.initiation_cycles(), 9 * t.n_buf * t.depth_groups);
        }
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]);
        assert!(r > 0.8 && r < 1.0);
    }

    #[test]
    fn period_scaling() {
        let net = builtin_mobilenet_v1_cifar10();
        let cfg = EngineConfig::default();
        let a = network_timing(&net, &cfg, 1.0);
        let b = network_timing(&net, &cfg, 2.0);
        for (x, y) in a.layers.iter().zip(&b.layers) {
            assert_eq!(y.total_ns, 2.0 * x.total_ns);
            assert!((y.throughput_gops - x.throughput_gops / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn throughput_plateaus_and_mean() {
        let rep = network_timing(
            &builtin_mobilenet_v1_cifar10(),
            &EngineConfig::default(),
            1.0,
        );
        for l in &rep.layers {
            let want = match l.index {
                0..=4 => 1024.0,
                5..=10 => 973.55,
                _ => 905.64,
            };
            assert!(
                (l.throughput_gops - want).abs() <= 0.01,
                "layer {}: {}",
                l.index,
                l.throughput_gops
            );
        }
        assert!((rep.mean_gops - 982.5).abs() < 0.05);
        assert!((rep.mean_gops - 981.42).abs() / 981.42 < 0.005);
    }

    #[test]
    fn latency_tracks_mac_count() {
        let rep = network_timing(
            &builtin_mobilenet_v1_cifar10(),
            &EngineConfig::default(),
            1.0,
        );
        let ops: Vec<f64> = rep.layers.iter().map(|l| l.ops as f64).collect();
        let ns: Vec<f64> = rep.layers.iter().map(|l| l.total_ns).collect();
        assert!(pearson(&ops, &ns) > 0.99);
        // Ops fall into two bands (~4.3M and ~8.5M); every layer of the
        // upper band takes longer than every layer of the lower one.
        let split = 6e6;
        let low = rep
            .layers
            .iter()
            .filter(|l| (l.ops as f64) < split)
            .map(|l| l.total_ns);
        let high = rep
            .layers
            .iter()
            .filter(|l| (l.ops as f64) >= split)
            .map(|l| l.total_ns);
        assert!(low.fold(0.0, f64::max) < high.fold(f64::INFINITY, f64::min));
        // Within a band the order follows throughput, not ops, so the rank
        // correlation stays well below the linear one.
        assert!((spearman(&ops, &ns) - 0.650).abs() < 1e-3);
    }

    #[test]
    fn full_buffer_tiles_approach_peak() {
        let cfg = EngineConfig::default();
        let mut last = 0.0;
        for k in [16, 64, 256, 1024, 4096] {
            let l = LayerShape::square(0, 8, 8, k, 1);
            let t = layer_latency(&l, &cfg, 1.0);
            let exact = 2.0 * 64.0 * 8.0 * (9.0 + k as f64) / (9.0 + 64.0 * k as f64 / 64.0);
            assert!((t.throughput_gops - exact).abs() < 1e-9);
            assert!((t.throughput_gops - 1024.0).abs() < 1e-9);
            assert!(t.throughput_gops >= last);
            last = t.throughput_gops;
        }
    }

    #[test]
    fn crosscheck_examples() {
        use crate::engine::{random_network_params, run_layer_fused};
        let net = builtin_mobilenet_v1_cifar10();
        let (_, params) = random_network_params(&net, 2);
        let cfg = EngineConfig::default();
        for i in [6, 12] {
            let l = &net.layers[i];
            let x = crate::tensor::QuantTensor::zeros([l.r, l.c, l.d], crate::tensor::DType::Act8);
            let run = run_layer_fused(l, &x, &params[i], &cfg).unwrap();
            assert!(crosscheck_trace(l, &cfg, &run.trace).unwrap());
            assert_eq!(run.trace.first_pwc_cycle, Some(9));
        }
        let l = &net.layers[0];
        let x = crate::tensor::QuantTensor::zeros([l.r, l.c, l.d], crate::tensor::DType::Act8);
        let run = run_layer_fused(l, &x, &params[0], &cfg).unwrap();
        assert!(!crosscheck_trace(l, &EngineConfig::with_spatial_cap(4), &run.trace).unwrap());
        assert!(crosscheck_trace(&net.layers[1], &cfg, &run.trace).is_err());
    }

    proptest::proptest! {
        #[test]
        fn cycles_monotone_in_each_dimension(
            r in 1usize..40,
            c in 1usize..40,
            d in 1usize..64,
            k in 1usize..80,
            stride in 1usize..=2,
            axis in 0usize..4,
        ) {
            let cfg = EngineConfig::default();
            let base = LayerShape::new(0, r, c, d, k, stride, 1);
            let grown = match axis {
                0 => LayerShape::new(0, r + 1, c, d, k, stride, 1),
                1 => LayerShape::new(0, r, c + 1, d, k, stride, 1),
                2 => LayerShape::new(0, r, c, d + 1, k, stride, 1),
                _ => LayerShape::new(0, r, c, d, k + 1, stride, 1),
            };
            proptest::prop_assert!(
                layer_latency(&grown, &cfg, 1.0).total_cycles >= layer_latency(&base, &cfg, 1.0).total_cycles
            );
        }
    }
}
