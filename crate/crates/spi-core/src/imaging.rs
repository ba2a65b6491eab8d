//! Physics forward model for single-pixel imaging.
//!
//! A scene is illuminated through a sequence of binary ±1 masks displayed on a
//! spatial light modulator; a single-pixel detector integrates the reflection
//! into one scalar per mask. Stacked, the masks form the rows of the
//! measurement matrix `A` and the readouts form the measurement vector `I`,
//! so that `I = A·O (+ noise)` for the flattened scene `O`.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// A reflectance image, grayscale (1 channel) or RGB (3 channels).
///
/// Stored as `H x W x C`. Scenes built from datasets are confined to `[0, 1]`;
/// reconstructions use the `*_raw` constructors and may exceed that range
/// until explicitly clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pixels: Array3<f64>,
}

impl SceneImage {
    /// Grayscale scene with all values validated to lie in `[0, 1]`.
    pub fn gray(pixels: Array2<f64>) -> Result<Self> {
        Self::check_range(pixels.iter())?;
        Ok(Self::gray_raw(pixels))
    }

    /// Grayscale scene without the `[0, 1]` range check (values must be finite).
    pub fn gray_raw(pixels: Array2<f64>) -> Self {
        let (h, w) = pixels.dim();
        let pixels = pixels.into_shape_with_order((h, w, 1)).expect("h*w*1 reshape");
        Self { pixels }
    }

    /// RGB scene (`H x W x 3`) with all values validated to lie in `[0, 1]`.
    pub fn rgb(pixels: Array3<f64>) -> Result<Self> {
        if pixels.dim().2 != 3 {
            return Err(Error::shape("H x W x 3", format!("{:?}", pixels.dim())));
        }
        Self::check_range(pixels.iter())?;
        Ok(Self { pixels })
    }

    /// RGB scene without the range check.
    pub fn rgb_raw(pixels: Array3<f64>) -> Result<Self> {
        if pixels.dim().2 != 3 {
            return Err(Error::shape("H x W x 3", format!("{:?}", pixels.dim())));
        }
        Ok(Self { pixels })
    }

    fn check_range<'a>(values: impl Iterator<Item = &'a f64>) -> Result<()> {
        for &v in values {
            if !v.is_finite() {
                return Err(Error::NonFinite { context: "scene pixels".into() });
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange { context: "scene pixel".into(), value: v });
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn is_rgb(&self) -> bool {
        self.channels() == 3
    }

    /// Flattened scene length `K = width * height`.
    pub fn pixel_count(&self) -> usize {
        self.height() * self.width()
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    /// View of a grayscale scene as `H x W`.
    pub fn as_gray(&self) -> Result<ArrayView2<'_, f64>> {
        if self.is_rgb() {
            return Err(Error::shape("grayscale scene", "RGB scene"));
        }
        Ok(self.pixels.index_axis(Axis(2), 0))
    }

    /// One channel as `H x W`.
    pub fn channel(&self, c: usize) -> ArrayView2<'_, f64> {
        self.pixels.index_axis(Axis(2), c)
    }

    /// Clamp all pixels into `[0, 1]`.
    pub fn clamp01(mut self) -> Self {
        self.pixels.mapv_inplace(|v| v.clamp(0.0, 1.0));
        self
    }
}

/// A stack of `M` binary ±1 sampling masks, the rows of the measurement matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    masks: Array3<f64>,
}

impl MaskSet {
    /// Build from an `M x H x W` array; every entry must be exactly -1 or +1.
    pub fn new(masks: Array3<f64>) -> Result<Self> {
        for &v in masks.iter() {
            if v != 1.0 && v != -1.0 {
                return Err(Error::NonBinaryMask { found: v });
            }
        }
        Ok(Self { masks })
    }

    /// Binarize a real weight array into a mask set (entry >= 0 maps to +1).
    pub fn from_weights(weights: &Array3<f64>) -> Result<Self> {
        Ok(Self { masks: binarize(weights)? })
    }

    pub fn count(&self) -> usize {
        self.masks.dim().0
    }

    pub fn height(&self) -> usize {
        self.masks.dim().1
    }

    pub fn width(&self) -> usize {
        self.masks.dim().2
    }

    pub fn masks(&self) -> &Array3<f64> {
        &self.masks
    }

    pub fn mask(&self, m: usize) -> ArrayView2<'_, f64> {
        self.masks.index_axis(Axis(0), m)
    }

    /// Masks flattened to `M x (H*W)`, the measurement matrix `A`.
    pub fn as_matrix(&self) -> Array2<f64> {
        let (m, h, w) = self.masks.dim();
        self.masks.clone().into_shape_with_order((m, h * w)).expect("m x hw reshape")
    }
}

/// Detector readouts for one scene under a mask set.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub values: Array1<f64>,
    /// Standard deviation of the additive readout noise that produced `values`.
    pub noise_sigma: f64,
}

impl MeasurementVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Additive zero-mean Gaussian readout noise, seeded for repeatability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::OutOfRange { context: "noise sigma".into(), value: sigma });
        }
        Ok(Self { sigma, seed })
    }

    /// Noiseless measurements, bit-identical across runs.
    pub fn none() -> Self {
        Self { sigma: 0.0, seed: 0 }
    }
}

/// Number of measurements `J = floor(sr * width * height)` for a sampling rate.
pub fn sampling_count(sr: f64, width: usize, height: usize) -> Result<usize> {
    if !sr.is_finite() || sr <= 0.0 || sr > 1.0 {
        return Err(Error::InvalidSamplingRate { sr });
    }
    let k = (width * height) as f64;
    let count = (sr * k).floor() as usize;
    if count < 1 {
        return Err(Error::SamplingCountTooSmall { sr, width, height });
    }
    Ok(count.min(width * height))
}

/// Sign binarization: entries >= 0 map to +1, entries < 0 map to -1.
pub fn binarize<D: ndarray::Dimension>(weights: &ndarray::Array<f64, D>) -> Result<ndarray::Array<f64, D>> {
    for &v in weights.iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { context: "binarize input".into() });
        }
    }
    Ok(weights.mapv(|v| if v >= 0.0 { 1.0 } else { -1.0 }))
}

/// Simulate the detector: one inner product per mask, plus seeded Gaussian noise.
///
/// `values[m] = sum_{x,y} masks[m](x,y) * scene(x,y) + eta_m` with
/// `eta_m ~ N(0, sigma^2)`. With `sigma = 0` the inner products are exact and
/// the result is bit-identical across runs.
pub fn forward_measure(scene: &SceneImage, masks: &MaskSet, noise: NoiseConfig) -> Result<MeasurementVector> {
    let gray = scene.as_gray()?;
    if scene.height() != masks.height() || scene.width() != masks.width() {
        return Err(Error::shape(
            format!("{}x{}", masks.height(), masks.width()),
            format!("{}x{}", scene.height(), scene.width()),
        ));
    }
    let mut values = Array1::zeros(masks.count());
    for (m, mask) in masks.masks().axis_iter(Axis(0)).enumerate() {
        values[m] = mask.iter().zip(gray.iter()).map(|(a, b)| a * b).sum();
    }
    if noise.sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let normal = Normal::new(0.0, noise.sigma).expect("sigma validated nonnegative");
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(MeasurementVector { values, noise_sigma: noise.sigma })
}

/// Split a ±1 mask into the two {0,1} patterns a DMD can actually display.
///
/// `pos = (mask+1)/2`, `neg = (1-mask)/2`; `pos - neg` recovers the mask
/// exactly, and for any scene `measure(pos) - measure(neg) = measure(mask)`.
pub fn decompose_mask(mask: &ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    for &v in mask.iter() {
        if v != 1.0 && v != -1.0 {
            return Err(Error::NonBinaryMask { found: v });
        }
    }
    let pos = mask.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let neg = mask.mapv(|v| if v < 0.0 { 1.0 } else { 0.0 });
    Ok((pos, neg))
}
