//! Layer and network geometry for depthwise-separable convolution (DSC)
//! workloads, tiling arithmetic and operation counting.
//!
//! A DSC layer is a 3x3 depthwise convolution over an `R x C x D` input,
//! producing `N x M x D`, followed by a 1x1 pointwise convolution with `K`
//! output channels producing `N x M x K`.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Depthwise kernel extent. The DWC engine is built around 3x3 windows.
pub const KERNEL: usize = 3;

/// Default output extent covered by one buffer-tiled ifmap.
pub const DEFAULT_SPATIAL_CAP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub index: usize,
    /// Input rows.
    pub r: usize,
    /// Input columns.
    pub c: usize,
    /// Input (and depthwise) channels.
    pub d: usize,
    pub h: usize,
    pub w: usize,
    /// Output rows.
    pub n: usize,
    /// Output columns.
    pub m: usize,
    /// Pointwise output channels.
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

fn out_extent(input: usize, pad: usize, kernel: usize, stride: usize) -> usize {
    let span = input + 2 * pad;
    if span < kernel || stride == 0 {
        0
    } else {
        (span - kernel) / stride + 1
    }
}

impl LayerShape {
    /// Builds a 3x3 DSC layer, deriving the output extent from input, stride
    /// and padding.
    pub fn new(
        index: usize,
        r: usize,
        c: usize,
        d: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        LayerShape {
            index,
            r,
            c,
            d,
            h: KERNEL,
            w: KERNEL,
            n: out_extent(r, pad, KERNEL, stride),
            m: out_extent(c, pad, KERNEL, stride),
            k,
            stride,
            pad,
        }
    }

    /// Square layer with the usual `pad = 1`.
    pub fn square(index: usize, r: usize, d: usize, k: usize, stride: usize) -> Self {
        Self::new(index, r, r, d, k, stride, 1)
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn macs(&self) -> MacCounts {
        layer_mac_counts(self)
    }
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L{} {}x{}x{} -> {}x{}x{} (s{})",
            self.index, self.r, self.c, self.d, self.n, self.m, self.k, self.stride
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    pub layers: Vec<LayerShape>,
}

/// Tiling parameters. The input tile extent (`T_r`, `T_c`) is derived from
/// the output tile and the stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileConfig {
    pub t_n: usize,
    pub t_m: usize,
    pub t_d: usize,
    pub t_k: usize,
}

impl TileConfig {
    /// The configuration the engines are built for.
    pub const NATIVE: TileConfig = TileConfig {
        t_n: 2,
        t_m: 2,
        t_d: 8,
        t_k: 16,
    };

    pub fn t_r(&self, stride: usize, h: usize) -> usize {
        (self.t_n - 1) * stride + h
    }

    pub fn t_c(&self, stride: usize, w: usize) -> usize {
        (self.t_m - 1) * stride + w
    }
}

impl Default for TileConfig {
    fn default() -> Self {
        Self::NATIVE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MacCounts {
    pub dwc: u64,
    pub pwc: u64,
}

impl MacCounts {
    pub fn total(&self) -> u64 {
        self.dwc + self.pwc
    }

    /// One MAC is one multiply plus one add.
    pub fn ops(&self) -> u64 {
        2 * self.total()
    }
}

pub fn layer_mac_counts(layer: &LayerShape) -> MacCounts {
    let nm = (layer.n * layer.m) as u64;
    let d = layer.d as u64;
    MacCounts {
        dwc: nm * d * (layer.h * layer.w) as u64,
        pwc: nm * d * layer.k as u64,
    }
}

/// A rule broken by a layer, or by a pair of consecutive layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    KernelExtent {
        h: usize,
        w: usize,
    },
    Stride(usize),
    EmptyDepth,
    EmptyKernels,
    EmptyOutput,
    OutputExtent {
        expected: (usize, usize),
        got: (usize, usize),
    },
    ChainDepth {
        prev_k: usize,
        d: usize,
    },
    ChainSpatial {
        prev: (usize, usize),
        input: (usize, usize),
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub layer: usize,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {}: ", self.layer)?;
        match &self.rule {
            Rule::KernelExtent { h, w } => write!(f, "kernel {h}x{w}, engine supports 3x3 only"),
            Rule::Stride(s) => write!(f, "stride {s} not in {{1, 2}}"),
            Rule::EmptyDepth => write!(f, "D must be >= 1"),
            Rule::EmptyKernels => write!(f, "K must be >= 1"),
            Rule::EmptyOutput => write!(f, "output extent is empty"),
            Rule::OutputExtent { expected, got } => write!(
                f,
                "output extent {}x{} does not match {}x{} implied by input/stride/pad",
                got.0, got.1, expected.0, expected.1
            ),
            Rule::ChainDepth { prev_k, d } => {
                write!(f, "D={d} does not match previous layer K={prev_k}")
            }
            Rule::ChainSpatial { prev, input } => write!(
                f,
                "input {}x{} does not match previous layer output {}x{}",
                input.0, input.1, prev.0, prev.1
            ),
        }
    }
}

/// Checks every per-layer and chaining invariant. An empty result means the
/// network is runnable.
pub fn validate_network(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, l) in net.layers.iter().enumerate() {
        let mut push = |rule| out.push(Violation { layer: i, rule });
        if l.h != KERNEL || l.w != KERNEL {
            push(Rule::KernelExtent { h: l.h, w: l.w });
        }
        if !(l.stride == 1 || l.stride == 2) {
            push(Rule::Stride(l.stride));
        }
        if l.d == 0 {
            push(Rule::EmptyDepth);
        }
        if l.k == 0 {
            push(Rule::EmptyKernels);
        }
        let expected = (
            out_extent(l.r, l.pad, l.h, l.stride),
            out_extent(l.c, l.pad, l.w, l.stride),
        );
        if expected != (l.n, l.m) {
            push(Rule::OutputExtent {
                expected,
                got: (l.n, l.m),
            });
        } else if l.n == 0 || l.m == 0 {
            push(Rule::EmptyOutput);
        }
        if i > 0 {
            let prev = &net.layers[i - 1];
            if prev.k != l.d {
                push(Rule::ChainDepth {
                    prev_k: prev.k,
                    d: l.d,
                });
            }
            if (prev.n, prev.m) != (l.r, l.c) {
                push(Rule::ChainSpatial {
                    prev: (prev.n, prev.m),
                    input: (l.r, l.c),
                });
            }
        }
    }
    out
}

/// The 13 DSC layers of MobileNetV1 at 32x32 input resolution.
pub fn builtin_mobilenet_v1_cifar10() -> Network {
    // (R, D, K, stride)
    const SCHEDULE: [(usize, usize, usize, usize); 13] = [
        (32, 32, 64, 1),
        (32, 64, 128, 2),
        (16, 128, 128, 1),
        (16, 128, 256, 2),
        (8, 256, 256, 1),
        (8, 256, 512, 2),
        (4, 512, 512, 1),
        (4, 512, 512, 1),
        (4, 512, 512, 1),
        (4, 512, 512, 1),
        (4, 512, 512, 1),
        (4, 512, 1024, 2),
        (2, 1024, 1024, 1),
    ];
    Network {
        name: "mobilenet_v1_cifar10".to_string(),
        layers: SCHEDULE
            .iter()
            .enumerate()
            .map(|(i, &(r, d, k, s))| LayerShape::square(i, r, d, k, s))
            .collect(),
    }
}

/// A 2x2 (or smaller, at ragged borders) output tile and the input window
/// it needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialTile {
    pub out_rows: Range<usize>,
    pub out_cols: Range<usize>,
    /// Top-left corner of the nominal `T_r x T_c` input window, in unpadded
    /// input coordinates; negative when the window starts in the halo.
    pub in_origin: (isize, isize),
    pub in_extent: (usize, usize),
    /// The part of the window that lies inside the input. Everything else
    /// reads as zero.
    pub in_rows: Range<usize>,
    pub in_cols: Range<usize>,
}

/// One buffer-tiled ifmap: an output block of at most `cap x cap`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferTile {
    pub out_rows: Range<usize>,
    pub out_cols: Range<usize>,
    pub tiles: Vec<SpatialTile>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    /// Spatial tile positions in a full buffer tile.
    pub positions_per_buffer_tile: usize,
    pub n_buf: usize,
    pub depth_groups: usize,
    pub kernel_groups: usize,
    pub buffer_tiles: Vec<BufferTile>,
}

fn clip(origin: isize, extent: usize, limit: usize) -> Range<usize> {
    let lo = origin.max(0) as usize;
    let hi = (origin + extent as isize).clamp(0, limit as isize) as usize;
    lo.min(hi)..hi
}

pub fn derive_tile_grid(
    layer: &LayerShape,
    cfg: &TileConfig,
    spatial_cap: usize,
) -> Result<TileGrid> {
    if cfg.t_n == 0 || cfg.t_m == 0 || cfg.t_d == 0 || cfg.t_k == 0 {
        return Err(Error::Tiling("tile sizes must be non-zero".into()));
    }
    if spatial_cap < cfg.t_n || spatial_cap < cfg.t_m {
        return Err(Error::Tiling(format!(
            "spatial cap {spatial_cap} smaller than output tile {}x{}",
            cfg.t_n, cfg.t_m
        )));
    }
    if !spatial_cap.is_multiple_of(cfg.t_n) || !spatial_cap.is_multiple_of(cfg.t_m) {
        return Err(Error::Tiling(format!(
            "spatial cap {spatial_cap} not a multiple of output tile {}x{}",
            cfg.t_n, cfg.t_m
        )));
    }

    let t_r = cfg.t_r(layer.stride, layer.h);
    let t_c = cfg.t_c(layer.stride, layer.w);
    let pad = layer.pad as isize;
    let stride = layer.stride as isize;

    let mut buffer_tiles = Vec::new();
    for br in (0..layer.n).step_by(spatial_cap) {
        for bc in (0..layer.m).step_by(spatial_cap) {
            let rows = br..(br + spatial_cap).min(layer.n);
            let cols = bc..(bc + spatial_cap).min(layer.m);
            let mut tiles = Vec::new();
            for tr in rows.clone().step_by(cfg.t_n) {
                for tc in cols.clone().step_by(cfg.t_m) {
                    let origin = (tr as isize * stride - pad, tc as isize * stride - pad);
                    tiles.push(SpatialTile {
                        out_rows: tr..(tr + cfg.t_n).min(rows.end),
                        out_cols: tc..(tc + cfg.t_m).min(cols.end),
                        in_origin: origin,
                        in_extent: (t_r, t_c),
                        in_rows: clip(origin.0, t_r, layer.r),
                        in_cols: clip(origin.1, t_c, layer.c),
                    });
                }
            }
            buffer_tiles.push(BufferTile {
                out_rows: rows,
                out_cols: cols,
                tiles,
            });
        }
    }

    let cap_n = layer.n.min(spatial_cap);
    let cap_m = layer.m.min(spatial_cap);
    Ok(TileGrid {
        positions_per_buffer_tile: cap_n.div_ceil(cfg.t_n) * cap_m.div_ceil(cfg.t_m),
        n_buf: layer.n.div_ceil(spatial_cap) * layer.m.div_ceil(spatial_cap),
        depth_groups: layer.d.div_ceil(cfg.t_d),
        kernel_groups: layer.k.div_ceil(cfg.t_k),
        buffer_tiles,
    })
}

// Network file.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    #[serde(rename = "R")]
    r: usize,
    #[serde(rename = "C")]
    c: usize,
    #[serde(rename = "D")]
    d: usize,
    #[serde(rename = "K")]
    k: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    name: String,
    layers: Vec<LayerEntry>,
}

impl Network {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let file: NetworkFile = serde_json::from_str(text)?;
        Ok(Network {
            name: file.name,
            layers: file
                .layers
                .iter()
                .enumerate()
                .map(|(i, e)| LayerShape::new(i, e.r, e.c, e.d, e.k, e.stride, e.pad))
                .collect(),
        })
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            name: self.name.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerEntry {
                    r: l.r,
                    c: l.c,
                    d: l.d,
                    k: l.k,
                    stride: l.stride,
                    pad: l.pad,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_is_valid() {
        let net = builtin_mobilenet_v1_cifar10();
        assert_eq!(net.layers.len(), 13);
        assert!(validate_network(&net).is_empty());
    }

    #[test]
    fn builtin_shapes() {
        let net = builtin_mobilenet_v1_cifar10();
        let l0 = &net.layers[0];
        assert_eq!((l0.r, l0.d, l0.k), (32, 32, 64));
        assert_eq!(net.layers[11].stride, 2);
        assert_eq!(net.layers[12].n, 2);
        let strided: Vec<_> = net
            .layers
            .iter()
            .filter(|l| l.stride == 2)
            .map(|l| l.index)
            .collect();
        assert_eq!(strided, vec![1, 3, 5, 11]);
    }

    #[test]
    fn chaining_violation() {
        let net = Network {
            name: "bad".into(),
            layers: vec![
                LayerShape::square(0, 8, 16, 64, 1),
                LayerShape::square(1, 8, 32, 32, 1),
            ],
        };
        let v = validate_network(&net);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].layer, 1);
        assert_eq!(v[0].rule, Rule::ChainDepth { prev_k: 64, d: 32 });
    }

    #[test]
    fn stride_violation() {
        let net = Network {
            name: "bad".into(),
            layers: vec![LayerShape::square(0, 9, 8, 8, 3)],
        };
        let v = validate_network(&net);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::Stride(3));
        assert!(v[0].to_string().contains("stride"));
    }

    #[test]
    fn mac_counts() {
        let net = builtin_mobilenet_v1_cifar10();
        assert_eq!(
            layer_mac_counts(&net.layers[12]),
            MacCounts {
                dwc: 36_864,
                pwc: 4_194_304
            }
        );
        assert_eq!(
            layer_mac_counts(&net.layers[10]),
            MacCounts {
                dwc: 73_728,
                pwc: 4_194_304
            }
        );
        let empty = LayerShape::square(0, 4, 0, 8, 1);
        assert_eq!(layer_mac_counts(&empty), MacCounts::default());
    }

    #[test]
    fn tile_grid_counts() {
        let net = builtin_mobilenet_v1_cifar10();
        let g = derive_tile_grid(&net.layers[12], &TileConfig::NATIVE, 8).unwrap();
        assert_eq!(
            (
                g.positions_per_buffer_tile,
                g.n_buf,
                g.depth_groups,
                g.kernel_groups
            ),
            (1, 1, 128, 64)
        );
        let g = derive_tile_grid(&net.layers[0], &TileConfig::NATIVE, 8).unwrap();
        assert_eq!((g.positions_per_buffer_tile, g.n_buf), (16, 16));
        let g = derive_tile_grid(&net.layers[11], &TileConfig::NATIVE, 8).unwrap();
        assert_eq!(
            (
                g.positions_per_buffer_tile,
                g.n_buf,
                g.depth_groups,
                g.kernel_groups
            ),
            (1, 1, 64, 64)
        );
    }

    #[test]
    fn tile_grid_rejects_small_cap() {
        let l = LayerShape::square(0, 8, 8, 8, 1);
        assert!(derive_tile_grid(&l, &TileConfig::NATIVE, 1).is_err());
        assert!(derive_tile_grid(&l, &TileConfig::NATIVE, 3).is_err());
    }

    #[test]
    fn halo_windows() {
        let l = LayerShape::square(0, 5, 1, 1, 2);
        assert_eq!(l.n, 3);
        let g = derive_tile_grid(&l, &TileConfig::NATIVE, 8).unwrap();
        let t = &g.buffer_tiles[0].tiles[0];
        assert_eq!(t.in_origin, (-1, -1));
        assert_eq!(t.in_extent, (5, 5));
        assert_eq!(t.in_rows, 0..4);
        // ragged last tile: one output row, full nominal window
        let last = g.buffer_tiles[0].tiles.last().unwrap();
        assert_eq!(last.out_rows, 2..3);
        assert_eq!(last.in_origin, (3, 3));
        assert_eq!(last.in_rows, 3..5);
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let net = builtin_mobilenet_v1_cifar10();
        let back = Network::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
        let bad = r#"{"name":"x","layers":[{"R":4,"C":4,"D":8,"K":8,"stride":1,"pad":1,"H":3}]}"#;
        assert!(Network::from_json(bad).is_err());
    }

    proptest::proptest! {
        #[test]
        fn tile_grid_covers_every_output_once(
            r in 1usize..20,
            c in 1usize..20,
            d in 1usize..20,
            k in 1usize..40,
            stride in 1usize..=2,
            cap_mult in 1usize..5,
        ) {
            let l = LayerShape::new(0, r, c, d, k, stride, 1);
            let cap = 2 * cap_mult;
            let g = derive_tile_grid(&l, &TileConfig::NATIVE, cap).unwrap();
            let mut seen = vec![0u8; l.n * l.m];
            for bt in &g.buffer_tiles {
                proptest::prop_assert!(bt.out_rows.len() <= cap && bt.out_cols.len() <= cap);
                proptest::prop_assert!(bt.tiles.len() <= g.positions_per_buffer_tile);
                for t in &bt.tiles {
                    proptest::prop_assert!(t.out_rows.start >= bt.out_rows.start && t.out_rows.end <= bt.out_rows.end);
                    proptest::prop_assert!(t.out_cols.start >= bt.out_cols.start && t.out_cols.end <= bt.out_cols.end);
                    proptest::prop_assert_eq!(t.in_extent, (3 + stride, 3 + stride));
                    proptest::prop_assert_eq!(t.in_origin.0, (t.out_rows.start * stride) as isize - 1);
                    for rr in t.out_rows.clone() {
                        for cc in t.out_cols.clone() {
                            seen[rr * l.m + cc] += 1;
                        }
                    }
                }
            }
            proptest::prop_assert!(seen.iter().all(|&s| s == 1));
            proptest::prop_assert_eq!(g.n_buf, l.n.div_ceil(cap) * l.m.div_ceil(cap));
            proptest::prop_assert_eq!(g.depth_groups, d.div_ceil(8));
            proptest::prop_assert_eq!(g.kernel_groups, k.div_ceil(16));
        }
    }

    #[test]
    fn tile_macs_sum_to_layer_macs() {
        for l in &builtin_mobilenet_v1_cifar10().layers {
            let g = derive_tile_grid(l, &TileConfig::NATIVE, DEFAULT_SPATIAL_CAP).unwrap();
            let outputs: usize = g
                .buffer_tiles
                .iter()
                .flat_map(|bt| &bt.tiles)
                .map(|t| t.out_rows.len() * t.out_cols.len())
                .sum();
            let macs = l.macs();
            assert_eq!((outputs * 9 * l.d) as u64, macs.dwc);
            assert_eq!((outputs * l.d * l.k) as u64, macs.pwc);
            assert_eq!(layer_mac_counts(l), macs);
        }
    }
}
