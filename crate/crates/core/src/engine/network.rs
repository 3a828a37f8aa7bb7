use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::QuantTensor;
use crate::workload::Network;

use super::params::LayerParams;
use super::schedule::{run_layer, LayerRun, Mode};
use super::EngineConfig;

/// Fraction of zero activations produced by each engine of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZeroStats {
    pub layer: usize,
    pub dwc_zero_fraction: f64,
    pub pwc_zero_fraction: f64,
}

impl ZeroStats {
    pub fn of(index: usize, run: &LayerRun) -> Self {
        let frac = |zeros: u64, total: u64| {
            if total == 0 {
                0.0
            } else {
                zeros as f64 / total as f64
            }
        };
        ZeroStats {
            layer: index,
            dwc_zero_fraction: frac(run.dwc_zeros, run.dwc_elems),
            pwc_zero_fraction: frac(run.ofmap.count_zeros() as u64, run.ofmap.len() as u64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkRun {
    pub layers: Vec<LayerRun>,
    pub zero_stats: Vec<ZeroStats>,
}

impl NetworkRun {
    pub fn output(&self) -> Option<&QuantTensor> {
        self.layers.last().map(|l| &l.ofmap)
    }
}

/// Runs every layer in order, feeding each ofmap to the next layer.
pub fn run_network(
    net: &Network,
    input: &QuantTensor,
    params: &[LayerParams],
    cfg: &EngineConfig,
    mode: Mode,
) -> Result<NetworkRun> {
    if params.len() != net.layers.len() {
        return Err(Error::ParamCount {
            what: "layer parameter sets",
            got: params.len(),
            expected: net.layers.len(),
        });
    }
    let mut layers: Vec<LayerRun> = Vec::with_capacity(net.layers.len());
    let mut zero_stats = Vec::with_capacity(net.layers.len());
    for (i, (layer, p)) in net.layers.iter().zip(params).enumerate() {
        let ifmap = layers.last().map_or(input, |prev| &prev.ofmap);
        let run = run_layer(mode, layer, ifmap, p, cfg)?;
        zero_stats.push(ZeroStats::of(i, &run));
        layers.push(run);
    }
    Ok(NetworkRun { layers, zero_stats })
}
