//! Fused vs sequential vs naive-oracle comparison on seeded random layers.

use std::fmt;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::{
    random_input, random_layer_params, run_layer_fused, run_layer_sequential, EngineConfig,
};
use crate::error::Result;
use crate::reference::ref_layer;
use crate::workload::LayerShape;

/// Which path disagreed with the oracle, and where.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub path: &'static str,
    pub at: [usize; 3],
    pub got: i32,
    pub want: i32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenOutcome {
    pub layer: usize,
    pub trial: u64,
    pub elements: usize,
    pub mismatch: Option<Mismatch>,
}

impl fmt::Display for GoldenOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {} trial {}: ", self.layer, self.trial)?;
        match &self.mismatch {
            None => write!(f, "ok ({} elements bit-exact)", self.elements),
            Some(m) => write!(
                f,
                "MISMATCH in {} at (row {}, col {}, ch {}): got {}, oracle {}",
                m.path, m.at[0], m.at[1], m.at[2], m.got, m.want
            ),
        }
    }
}

/// Seed for one (layer, trial) pair, so outcomes do not depend on which
/// layers are selected or on evaluation order.
pub fn trial_seed(seed: u64, layer: usize, trial: u64) -> u64 {
    seed ^ ((layer as u64) << 40) ^ trial.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Runs both engine schedules and the oracle on one random draw.
/// `inject_fault` flips the first fused output element by one.
pub fn check_layer(
    layer: &LayerShape,
    cfg: &EngineConfig,
    seed: u64,
    trial: u64,
    inject_fault: bool,
) -> Result<GoldenOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, layer.index, trial));
    let params = random_layer_params(layer, &mut rng);
    let input = random_input(layer, &mut rng);

    let mut fused = run_layer_fused(layer, &input, &params, cfg)?.ofmap;
    if inject_fault && !fused.is_empty() {
        let v = fused.at(0, 0, 0);
        fused.set(0, 0, 0, if v == 255 { 254 } else { v + 1 });
    }
    let sequential = run_layer_sequential(layer, &input, &params, cfg)?.ofmap;
    let oracle = ref_layer(
        layer,
        &input,
        &params.dwc_w,
        &params.pwc_w,
        &params.dwc_ncv,
        &params.pwc_ncv,
    )?;

    let mismatch = [("fused", &fused), ("sequential", &sequential)]
        .into_iter()
        .find_map(|(path, t)| {
            t.first_difference(&oracle).map(|at| {
                let get = |x: &crate::tensor::QuantTensor| {
                    if x.dims() == oracle.dims() {
                        x.at(at[0], at[1], at[2])
                    } else {
                        -1
                    }
                };
                Mismatch {
                    path,
                    at,
                    got: get(t),
                    want: get(&oracle),
                }
            })
        });
    Ok(GoldenOutcome {
        layer: layer.index,
        trial,
        elements: oracle.len(),
        mismatch,
    })
}

/// Checks `trials` draws per layer in parallel; results come back in
/// (layer, trial) order.
pub fn run_golden(
    layers: &[LayerShape],
    cfg: &EngineConfig,
    seed: u64,
    trials: u64,
    inject_fault: bool,
) -> Result<Vec<GoldenOutcome>> {
    let jobs: Vec<(&LayerShape, u64)> = layers
        .iter()
        .flat_map(|l| (0..trials).map(move |t| (l, t)))
        .collect();
    jobs.par_iter()
        .map(|(l, t)| check_layer(l, cfg, seed, *t, inject_fault))
        .collect()
}
