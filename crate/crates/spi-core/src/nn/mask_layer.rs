//! The learnable sampling-mask layer.
//!
//! Holds real-valued weights `omega` of shape `M x (H*W)`; every forward pass
//! binarizes them to ±1 and takes inner products with the flattened scene,
//! matching the physics forward model exactly at sigma = 0. Gradients cross
//! the sign function with a straight-through estimator clipped at |omega| = 1.

use ndarray::{Array2, Array3, Dimension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::param::Param;
use crate::error::{Error, Result};
use crate::imaging::MaskSet;

#[derive(Debug, Clone)]
pub struct MaskLayer {
    pub omega: Param<ndarray::Ix2>,
    height: usize,
    width: usize,
    cache: Option<MaskCache>,
}

#[derive(Debug, Clone)]
struct MaskCache {
    /// `(B, C, K)` flattened scenes from the forward pass.
    scenes: Array3<f64>,
}

/// Seeded uniform initialization on [-0.1, 0.1].
pub fn init_mask_layer(m: usize, height: usize, width: usize, seed: u64) -> Result<MaskLayer> {
    if m < 1 {
        return Err(Error::InvalidConfig("mask count must be at least 1".into()));
    }
    let k = height * width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Array2::from_shape_fn((m, k), |_| rng.random_range(-0.1..0.1));
    Ok(MaskLayer { omega: Param::new(omega), height, width, cache: None })
}

/// Straight-through estimator with hard clip: the upstream gradient passes
/// where `|omega| <= 1` and is zeroed elsewhere.
pub fn ste_gradient<D: Dimension>(
    upstream: &ndarray::Array<f64, D>,
    omega: &ndarray::Array<f64, D>,
) -> Result<ndarray::Array<f64, D>> {
    if upstream.raw_dim() != omega.raw_dim() {
        return Err(Error::shape(
            format!("{:?}", omega.shape()),
            format!("{:?}", upstream.shape()),
        ));
    }
    let mut g = upstream.clone();
    g.zip_mut_with(omega, |gv, &w| {
        if w.abs() > 1.0 {
            *gv = 0.0;
        }
    });
    Ok(g)
}

impl MaskLayer {
    pub fn measurement_count(&self) -> usize {
        self.omega.value.nrows()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scene_len(&self) -> usize {
        self.height * self.width
    }

    /// The live binary masks, `binarize(omega)` reshaped to `M x H x W`.
    pub fn mask_set(&self) -> MaskSet {
        let bin = crate::imaging::binarize(&self.omega.value).expect("omega stays finite");
        let (m, k) = bin.dim();
        debug_assert_eq!(k, self.scene_len());
        let masks = bin.into_shape_with_order((m, self.height, self.width)).expect("mask reshape");
        MaskSet::new(masks).expect("binarized entries are ±1")
    }

    /// Measure a batch of flattened scenes.
    ///
    /// `scenes` is `(B, C, K)` with `C` = 1 (grayscale) or 3 (RGB). Each
    /// channel is measured with the same binarized masks and the per-channel
    /// blocks are concatenated in channel order, giving `(B, C*M)`.
    pub fn forward(&mut self, scenes: &Array3<f64>, train: bool) -> Result<Array2<f64>> {
        let (b, c, k) = scenes.dim();
        if k != self.scene_len() {
            return Err(Error::shape(format!("scene len {}", self.scene_len()), format!("{k}")));
        }
        if c != 1 && c != 3 {
            return Err(Error::shape("1 or 3 channels", format!("{c}")));
        }
        let bin = crate::imaging::binarize(&self.omega.value)?;
        let m = self.measurement_count();
        let mut out = Array2::zeros((b, c * m));
        for ch in 0..c {
            let flat = scenes.index_axis(ndarray::Axis(1), ch);
            let meas = flat.dot(&bin.t());
            out.slice_mut(ndarray::s![.., ch * m..(ch + 1) * m]).assign(&meas);
        }
        if train {
            self.cache = Some(MaskCache { scenes: scenes.clone() });
        }
        Ok(out)
    }

    /// Accumulate the STE gradient for `omega` from the measurement gradient
    /// `(B, C*M)`. Scene gradients are not propagated (scenes are data).
    pub fn backward(&mut self, gmeas: &Array2<f64>) {
        let cache = self.cache.as_ref().expect("mask layer backward without forward");
        let (_, c, _) = cache.scenes.dim();
        let m = self.measurement_count();
        let mut g_bin = Array2::zeros(self.omega.value.raw_dim());
        for ch in 0..c {
            let flat = cache.scenes.index_axis(ndarray::Axis(1), ch);
            let gm = gmeas.slice(ndarray::s![.., ch * m..(ch + 1) * m]);
            g_bin += &gm.t().dot(&flat);
        }
        let g = ste_gradient(&g_bin, &self.omega.value).expect("shapes match by construction");
        self.omega.grad += &g;
    }

    pub fn zero_grad(&mut self) {
        self.omega.zero_grad();
    }

    pub fn param_count(&self) -> usize {
        self.omega.count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{forward_measure, NoiseConfig, SceneImage};
    use ndarray::{arr1, Array2};
    use rand::Rng;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_mask_layer(40, 64, 64, 7).unwrap();
        let b = init_mask_layer(40, 64, 64, 7).unwrap();
        assert_eq!(a.omega.value, b.omega.value);
        assert_eq!(a.omega.value.dim(), (40, 4096));
        assert!(a.omega.value.iter().all(|v| (-0.1..0.1).contains(v)));
        assert!(init_mask_layer(0, 8, 8, 1).is_err());
    }

    #[test]
    fn init_produces_both_signs_across_seeds() {
        for seed in 0..200 {
            let layer = init_mask_layer(4, 5, 5, seed).unwrap();
            let bin = crate::imaging::binarize(&layer.omega.value).unwrap();
            let pos = bin.iter().filter(|&&v| v > 0.0).count();
            assert!(pos > 0 && pos < bin.len(), "seed {seed} produced a one-sided mask");
        }
    }

    #[test]
    fn ste_gradient_applies_clip_rule() {
        let up = arr1(&[2.0, 2.0, 1.0, 1.0, 1.0]);
        let omega = arr1(&[0.5, 1.5, 0.9, -1.0, -1.1]);
        let g = ste_gradient(&up, &omega).unwrap();
        assert_eq!(g, arr1(&[2.0, 0.0, 1.0, 1.0, 0.0]));
        assert!(ste_gradient(&arr1(&[1.0]), &arr1(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn forward_matches_imaging_core_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut layer = init_mask_layer(6, 8, 8, 3).unwrap();
        let masks = layer.mask_set();
        for _ in 0..10 {
            let scene = Array2::from_shape_fn((8, 8), |_| rng.random::<f64>());
            let reference = forward_measure(
                &SceneImage::gray(scene.clone()).unwrap(),
                &masks,
                NoiseConfig::none(),
            )
            .unwrap();
            let flat = scene.into_shape_with_order((1, 1, 64)).unwrap();
            let out = layer.forward(&flat, false).unwrap();
            for (a, b) in out.row(0).iter().zip(reference.values.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_scene_measures_zero_and_batch_shape_holds() {
        let mut layer = init_mask_layer(5, 4, 4, 0).unwrap();
        let scenes = ndarray::Array3::zeros((3, 1, 16));
        let out = layer.forward(&scenes, false).unwrap();
        assert_eq!(out.dim(), (3, 5));
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positive_scaling_of_omega_leaves_measurements_unchanged() {
        let mut layer = init_mask_layer(4, 6, 6, 11).unwrap();
        let scenes = ndarray::Array3::from_shape_fn((2, 1, 36), |(b, _, k)| {
            ((b * 36 + k) as f64 * 0.01).sin().abs()
        });
        let before = layer.forward(&scenes, false).unwrap();
        layer.omega.value *= 3.7;
        let after = layer.forward(&scenes, false).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn rgb_blocks_concatenate_in_channel_order() {
        let mut layer = init_mask_layer(3, 4, 4, 2).unwrap();
        let gray = ndarray::Array1::from_shape_fn(16, |k| k as f64 / 16.0);
        let mut scenes = ndarray::Array3::zeros((1, 3, 16));
        for c in 0..3 {
            scenes.slice_mut(ndarray::s![0, c, ..]).assign(&gray);
        }
        let out = layer.forward(&scenes, false).unwrap();
        assert_eq!(out.dim(), (1, 9));
        for c in 1..3 {
            for m in 0..3 {
                assert_eq!(out[[0, c * 3 + m]], out[[0, m]]);
            }
        }
    }
}
