//! Closed-form design-space exploration over loop order and tile sizes.
//!
//! Loop levels, innermost first: (1) MACs within a window, (2) channels
//! within a depth tile, (3) the spatial scan, (4) depth tiles, (5) kernel
//! tiles (PWC only). `La` keeps the spatial scan inside the depth loop, so
//! weights stay resident while partial sums are revisited per depth tile.
//! `Lb` swaps levels 3 and 4: each spatial tile accumulates its full depth
//! locally, at the price of re-reading weights per spatial tile.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::workload::{LayerShape, Network, TileConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LoopOrder {
    La,
    Lb,
}

impl fmt::Display for LoopOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopOrder::La => "La",
            LoopOrder::Lb => "Lb",
        })
    }
}

/// `(T_d, T_k)` for cases 1 through 6.
pub const CASES: [(usize, usize); 6] = [(4, 4), (4, 8), (4, 16), (8, 4), (8, 8), (8, 16)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SweepPoint {
    pub order: LoopOrder,
    /// `T_n = T_m`, 1 or 2.
    pub t_nm: usize,
    /// 1-based index into [`CASES`].
    pub case: usize,
}

impl SweepPoint {
    pub const NATIVE: SweepPoint = SweepPoint {
        order: LoopOrder::La,
        t_nm: 2,
        case: 6,
    };

    pub fn tiles(&self) -> TileConfig {
        let (t_d, t_k) = CASES[self.case - 1];
        TileConfig {
            t_n: self.t_nm,
            t_m: self.t_nm,
            t_d,
            t_k,
        }
    }
}

impl fmt::Display for SweepPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.tiles();
        write!(
            f,
            "{}, Tn=Tm={}, case {} (Td={}, Tk={})",
            self.order, self.t_nm, self.case, t.t_d, t.t_k
        )
    }
}

/// All 24 points: two loop orders x two output tiles x six cases.
pub fn sweep_points() -> Vec<SweepPoint> {
    let mut out = Vec::with_capacity(24);
    for order in [LoopOrder::La, LoopOrder::Lb] {
        for t_nm in [1, 2] {
            for case in 1..=CASES.len() {
                out.push(SweepPoint { order, t_nm, case });
            }
        }
    }
    out
}

/// MAC slots needed by the DWC and PWC arrays.
pub fn pe_array_size(pt: &SweepPoint) -> (u64, u64) {
    let t = pt.tiles();
    let spatial = (t.t_n * t.t_m) as u64;
    (t.t_d as u64 * 9 * spatial, (t.t_d * t.t_k) as u64 * spatial)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct AccessCounts {
    pub dwc_act: u64,
    pub dwc_wgt: u64,
    pub pwc_act: u64,
    pub pwc_wgt: u64,
    pub psum: u64,
    pub pe_dwc: u64,
    pub pe_pwc: u64,
}

impl AccessCounts {
    /// Activation traffic including partial sums.
    pub fn activation(&self) -> u64 {
        self.dwc_act + self.pwc_act + self.psum
    }

    pub fn weight(&self) -> u64 {
        self.dwc_wgt + self.pwc_wgt
    }

    pub fn total(&self) -> u64 {
        self.activation() + self.weight()
    }
}

pub fn access_counts(layer: &LayerShape, pt: &SweepPoint) -> AccessCounts {
    let t = pt.tiles();
    let (n, m, d, k) = (
        layer.n as u64,
        layer.m as u64,
        layer.d as u64,
        layer.k as u64,
    );
    let hw = (layer.h * layer.w) as u64;
    let window = (t.t_r(layer.stride, layer.h) * t.t_c(layer.stride, layer.w)) as u64;
    let spatial_tiles = (layer.n.div_ceil(t.t_n) * layer.m.div_ceil(t.t_m)) as u64;
    let depth_tiles = layer.d.div_ceil(t.t_d) as u64;
    let kernel_tiles = layer.k.div_ceil(t.t_k) as u64;
    let (pe_dwc, pe_pwc) = pe_array_size(pt);

    let dwc_act = window * d * spatial_tiles;
    let pwc_act = n * m * d * kernel_tiles;
    match pt.order {
        LoopOrder::La => AccessCounts {
            dwc_act,
            dwc_wgt: hw * d,
            pwc_act,
            pwc_wgt: d * k,
            psum: 2 * n * m * k * depth_tiles.saturating_sub(1),
            pe_dwc,
            pe_pwc,
        },
        LoopOrder::Lb => AccessCounts {
            dwc_act,
            dwc_wgt: hw * d * spatial_tiles,
            pwc_act,
            pwc_wgt: d * k * spatial_tiles,
            psum: 0,
            pe_dwc,
            pe_pwc,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccessReport {
    pub point: SweepPoint,
    pub layers: Vec<AccessCounts>,
    pub total: AccessCounts,
}

pub fn network_access_report(net: &Network, pt: &SweepPoint) -> AccessReport {
    let layers: Vec<_> = net.layers.iter().map(|l| access_counts(l, pt)).collect();
    let (pe_dwc, pe_pwc) = pe_array_size(pt);
    let mut total = AccessCounts {
        pe_dwc,
        pe_pwc,
        ..Default::default()
    };
    for r in &layers {
        total.dwc_act += r.dwc_act;
        total.dwc_wgt += r.dwc_wgt;
        total.pwc_act += r.pwc_act;
        total.pwc_wgt += r.pwc_wgt;
        total.psum += r.psum;
    }
    AccessReport {
        point: *pt,
        layers,
        total,
    }
}

/// How the intermediate-elimination baseline is costed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Convention {
    /// Tensor sizes: DWC input, intermediate written and read, PWC output.
    Raw,
    /// Tiled La access counts for the DWC and PWC inputs plus one write of
    /// the intermediate and of the output.
    TableII,
}

impl Convention {
    pub const ALL: [Convention; 2] = [Convention::Raw, Convention::TableII];
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::Raw => "raw",
            Convention::TableII => "tableII",
        })
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Convention::Raw),
            "tableII" => Ok(Convention::TableII),
            other => Err(Error::Convention(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReductionRow {
    pub baseline: u64,
    pub proposed: u64,
}

impl ReductionRow {
    /// Fraction of baseline traffic removed, in `[0, 1]`.
    pub fn reduction(&self) -> f64 {
        if self.baseline == 0 {
            0.0
        } else {
            1.0 - self.proposed as f64 / self.baseline as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionReport {
    pub convention: Convention,
    pub layers: Vec<ReductionRow>,
    pub total: ReductionRow,
}

pub fn layer_reduction(layer: &LayerShape, convention: Convention) -> ReductionRow {
    let (r, c, n, m, d, k) = (
        layer.r as u64,
        layer.c as u64,
        layer.n as u64,
        layer.m as u64,
        layer.d as u64,
        layer.k as u64,
    );
    match convention {
        Convention::Raw => ReductionRow {
            baseline: r * c * d + 2 * n * m * d + n * m * k,
            proposed: r * c * d + n * m * k,
        },
        Convention::TableII => {
            let la = access_counts(layer, &SweepPoint::NATIVE);
            ReductionRow {
                baseline: la.dwc_act + n * m * d + la.pwc_act + n * m * k,
                proposed: la.dwc_act + n * m * k,
            }
        }
    }
}

pub fn intermediate_reduction(net: &Network, convention: Convention) -> ReductionReport {
    let layers: Vec<_> = net
        .layers
        .iter()
        .map(|l| layer_reduction(l, convention))
        .collect();
    let total = ReductionRow {
        baseline: layers.iter().map(|r| r.baseline).sum(),
        proposed: layers.iter().map(|r| r.proposed).sum(),
    };
    ReductionReport {
        convention,
        layers,
        total,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedPoint {
    pub point: SweepPoint,
    /// Activation accesses including psum.
    pub activation: u64,
    pub weight: u64,
    pub psum: u64,
    pub pe: u64,
}

impl RankedPoint {
    /// Activation plus weight accesses, psum included.
    pub fn total(&self) -> u64 {
        self.activation + self.weight
    }

    /// DWC/PWC activation and weight accesses without psum traffic.
    pub fn table_total(&self) -> u64 {
        self.total() - self.psum
    }
}

/// Every sweep point, cheapest first. The primary key is the activation and
/// weight access count without psum; ties go to less psum traffic, then the
/// smaller PE array, then the lower case index.
pub fn rank_configs(net: &Network) -> Vec<RankedPoint> {
    let mut ranked: Vec<_> = sweep_points()
        .into_iter()
        .map(|pt| {
            let rep = network_access_report(net, &pt);
            let (pe_dwc, pe_pwc) = pe_array_size(&pt);
            RankedPoint {
                point: pt,
                activation: rep.total.activation(),
                weight: rep.total.weight(),
                psum: rep.total.psum,
                pe: pe_dwc + pe_pwc,
            }
        })
        .collect();
    ranked.sort_by_key(|r| (r.table_total(), r.psum, r.pe, r.point.case));
    ranked
}
