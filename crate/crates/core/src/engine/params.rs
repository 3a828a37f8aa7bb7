use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fixed::{read_ncv, write_ncv, NonConvParams};
use crate::tensor::{DType, QuantTensor};
use crate::workload::{LayerShape, Network};

use super::{H, W};

/// Everything a layer needs besides its input: depthwise kernels `3x3xD`,
/// pointwise weights `DxKx1`, and one Non-Conv pair per produced channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub dwc_w: QuantTensor,
    pub pwc_w: QuantTensor,
    pub dwc_ncv: Vec<NonConvParams>,
    pub pwc_ncv: Vec<NonConvParams>,
}

impl LayerParams {
    pub fn check(&self, layer: &LayerShape) -> Result<()> {
        let expect = |t: &QuantTensor, dims: [usize; 3], what: &str| {
            if t.dims() != dims || t.dtype() != DType::Wgt8 {
                Err(Error::Shape(format!(
                    "layer {} {what}: expected wgt8 {:?}, got {} {:?}",
                    layer.index,
                    dims,
                    t.dtype().name(),
                    t.dims()
                )))
            } else {
                Ok(())
            }
        };
        expect(&self.dwc_w, [H, W, layer.d], "dwc weights")?;
        expect(&self.pwc_w, [layer.d, layer.k, 1], "pwc weights")?;
        if self.dwc_ncv.len() != layer.d {
            return Err(Error::ParamCount {
                what: "dwc non-conv",
                got: self.dwc_ncv.len(),
                expected: layer.d,
            });
        }
        if self.pwc_ncv.len() != layer.k {
            return Err(Error::ParamCount {
                what: "pwc non-conv",
                got: self.pwc_ncv.len(),
                expected: layer.k,
            });
        }
        Ok(())
    }

    pub fn file_names(index: usize) -> [String; 4] {
        [
            format!("L{index}.dwc.w"),
            format!("L{index}.pwc.w"),
            format!("L{index}.dwc.ncv"),
            format!("L{index}.pwc.ncv"),
        ]
    }

    pub fn write_bundle(&self, dir: &Path, index: usize) -> Result<()> {
        let [dw, pw, dn, pn] = Self::file_names(index);
        self.dwc_w.write(&dir.join(dw))?;
        self.pwc_w.write(&dir.join(pw))?;
        write_ncv(&dir.join(dn), &self.dwc_ncv)?;
        write_ncv(&dir.join(pn), &self.pwc_ncv)
    }

    pub fn read_bundle(dir: &Path, index: usize) -> Result<Self> {
        let [dw, pw, dn, pn] = Self::file_names(index).map(|f| dir.join(f));
        let weights = |p: &PathBuf| -> Result<QuantTensor> {
            let t = QuantTensor::read(p)?;
            if t.dtype() != DType::Wgt8 {
                return Err(Error::format(
                    p,
                    format!("expected wgt8, found {}", t.dtype().name()),
                ));
            }
            Ok(t)
        };
        Ok(LayerParams {
            dwc_w: weights(&dw)?,
            pwc_w: weights(&pw)?,
            dwc_ncv: read_ncv(&dn)?,
            pwc_ncv: read_ncv(&pn)?,
        })
    }
}

fn random_tensor(dims: [usize; 3], dtype: DType, rng: &mut impl Rng) -> QuantTensor {
    let (lo, hi) = dtype.range();
    let n = dims.iter().product();
    let data = (0..n)
        .map(|_| rng.gen_range(lo as i32..=hi as i32))
        .collect();
    QuantTensor::from_vec(dims, dtype, data).expect("in range by construction")
}

/// `|k|` log-uniform in `[2^-8, 8]` with random sign, `|b| <= 100`.
fn random_nonconv(rng: &mut impl Rng) -> NonConvParams {
    let magnitude = 2f64.powf(rng.gen_range(-8.0..=3.0));
    let k = if rng.gen_bool(0.5) {
        magnitude
    } else {
        -magnitude
    };
    let b = rng.gen_range(-100.0..=100.0);
    NonConvParams::from_real(k, b)
}

pub fn random_layer_params(layer: &LayerShape, rng: &mut impl Rng) -> LayerParams {
    LayerParams {
        dwc_w: random_tensor([H, W, layer.d], DType::Wgt8, rng),
        pwc_w: random_tensor([layer.d, layer.k, 1], DType::Wgt8, rng),
        dwc_ncv: (0..layer.d).map(|_| random_nonconv(rng)).collect(),
        pwc_ncv: (0..layer.k).map(|_| random_nonconv(rng)).collect(),
    }
}

pub fn random_input(layer: &LayerShape, rng: &mut impl Rng) -> QuantTensor {
    random_tensor([layer.r, layer.c, layer.d], DType::Act8, rng)
}

/// Input and per-layer parameters for a whole network, fully determined by
/// `seed`.
pub fn random_network_params(net: &Network, seed: u64) -> (QuantTensor, Vec<LayerParams>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = match net.layers.first() {
        Some(l) => random_input(l, &mut rng),
        None => QuantTensor::zeros([0, 0, 0], DType::Act8),
    };
    let params = net
        .layers
        .iter()
        .map(|l| random_layer_params(l, &mut rng))
        .collect();
    (input, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonconv_draws_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let p = random_nonconv(&mut rng);
            let k = p.k.to_f64().abs();
            assert!((2f64.powi(-8) - 1e-5..=8.0).contains(&k), "{k}");
            assert!(p.b.to_f64().abs() <= 100.0);
            assert!(!p.saturated);
        }
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let layer = LayerShape::square(3, 4, 8, 16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_layer_params(&layer, &mut rng);
        p.write_bundle(dir.path(), 3).unwrap();
        let back = LayerParams::read_bundle(dir.path(), 3).unwrap();
        assert_eq!(back, p);
        back.check(&layer).unwrap();
    }

    #[test]
    fn missing_bundle_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = LayerParams::read_bundle(dir.path(), 7).unwrap_err();
        assert!(err.to_string().contains("L7.dwc.w"), "{err}");
    }

    #[test]
    fn param_count_checked() {
        let layer = LayerShape::square(0, 4, 8, 16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = random_layer_params(&layer, &mut rng);
        p.pwc_ncv.pop();
        assert!(matches!(p.check(&layer), Err(Error::ParamCount { .. })));
    }
}
