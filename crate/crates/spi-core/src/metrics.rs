//! Evaluation metrics (PSNR, SSIM) and the serialized metrics report.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::SceneImage;

/// PSNR ceiling reported for a perfect reconstruction; keeps aggregate
/// tables free of infinities.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn check_same_shape(truth: &SceneImage, recon: &SceneImage) -> Result<()> {
    if truth.pixels().dim() != recon.pixels().dim() {
        return Err(Error::shape(
            format!("{:?}", truth.pixels().dim()),
            format!("{:?}", recon.pixels().dim()),
        ));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB: `10·log10(peak^2 / MSE)`, capped at
/// [`PSNR_CAP_DB`]; identical images report the cap.
pub fn psnr(truth: &SceneImage, recon: &SceneImage, peak: f64) -> Result<f64> {
    check_same_shape(truth, recon)?;
    let mse = crate::loss::mse_loss(truth, recon)?;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5),
/// `C1 = 0.01^2`, `C2 = 0.03^2` for unit dynamic range. RGB scenes report
/// the mean over channels. Inputs are expected in `[0, 1]`.
pub fn ssim(truth: &SceneImage, recon: &SceneImage) -> Result<f64> {
    check_same_shape(truth, recon)?;
    if truth.height() < SSIM_WINDOW || truth.width() < SSIM_WINDOW {
        return Err(Error::InvalidConfig(format!(
            "ssim needs images at least {SSIM_WINDOW}px per side, got {}x{}",
            truth.height(),
            truth.width()
        )));
    }
    let mut total = 0.0;
    for c in 0..truth.channels() {
        total += ssim_plane(&truth.channel(c), &recon.channel(c));
    }
    Ok(total / truth.channels() as f64)
}

fn gaussian_window() -> Array2<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Array2::zeros((SSIM_WINDOW, SSIM_WINDOW));
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as isize - half;
            let dx = x as isize - half;
            let r2 = (dy * dy + dx * dx) as f64;
            w[[y, x]] = (-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let sum = w.sum();
    w / sum
}

/// Windowed correlation in valid mode: output is `(H-10) x (W-10)`.
fn filter_valid(img: &ArrayView2<'_, f64>, window: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut out = Array2::zeros((oh, ow));
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    acc += window[[ky, kx]] * img[[oy + ky, ox + kx]];
                }
            }
            out[[oy, ox]] = acc;
        }
    }
    out
}

fn ssim_plane(truth: &ArrayView2<'_, f64>, recon: &ArrayView2<'_, f64>) -> f64 {
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let window = gaussian_window();
    let mu_t = filter_valid(truth, &window);
    let mu_r = filter_valid(recon, &window);
    let tt = truth.mapv(|v| v * v);
    let rr = recon.mapv(|v| v * v);
    let tr = truth.to_owned() * recon;
    let sigma_t2 = filter_valid(&tt.view(), &window) - &mu_t * &mu_t;
    let sigma_r2 = filter_valid(&rr.view(), &window) - &mu_r * &mu_r;
    let sigma_tr = filter_valid(&tr.view(), &window) - &mu_t * &mu_r;

    let mut acc = 0.0;
    for idx in 0..mu_t.len() {
        let (mt, mr) = (mu_t.as_slice().unwrap()[idx], mu_r.as_slice().unwrap()[idx]);
        let (st, sr) = (sigma_t2.as_slice().unwrap()[idx], sigma_r2.as_slice().unwrap()[idx]);
        let str_ = sigma_tr.as_slice().unwrap()[idx];
        let num = (2.0 * mt * mr + c1) * (2.0 * str_ + c2);
        let den = (mt * mt + mr * mr + c1) * (st + sr + c2);
        acc += num / den;
    }
    acc / mu_t.len() as f64
}

/// Per-image metrics entry of a [`MetricsReport`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Evaluation results for one checkpoint on one dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub images: Vec<ImageMetrics>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub sr: f64,
    pub n_images: usize,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn from_images(images: Vec<ImageMetrics>, sr: f64, config_hash: String) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyDataset { context: "metrics report".into() });
        }
        let n = images.len();
        let mean_psnr_db = images.iter().map(|m| m.psnr_db).sum::<f64>() / n as f64;
        let mean_ssim = images.iter().map(|m| m.ssim).sum::<f64>() / n as f64;
        Ok(Self { images, mean_psnr_db, mean_ssim, sr, n_images: n, config_hash })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gray(values: Array2<f64>) -> SceneImage {
        SceneImage::gray_raw(values)
    }

    #[test]
    fn psnr_frozen_examples() {
        let a = gray(Array2::from_elem((8, 8), 0.4));
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
        assert!((psnr_from_mse(1.0, 1.0) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = Array2::from_shape_fn((16, 16), |_| rng.random::<f64>());
        let truth = gray(base.clone());
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.02, 0.05, 0.1, 0.2] {
            // average over trials: monotone in expectation
            let mut acc = 0.0;
            let trials = 20;
            for _ in 0..trials {
                let noisy = base.mapv(|v| v + sigma * (rng.random::<f64>() - 0.5) * 3.46);
                acc += psnr(&truth, &gray(noisy), 1.0).unwrap();
            }
            let mean = acc / trials as f64;
            assert!(mean < last, "psnr must fall as noise grows ({mean} !< {last})");
            last = mean;
        }
    }

    #[test]
    fn ssim_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = gray(Array2::from_shape_fn((16, 16), |_| rng.random::<f64>()));
        let s = ssim(&img, &img).unwrap();
        assert!((s - 1.0).abs() < 1e-12);

        let zeros = gray(Array2::zeros((16, 16)));
        let ones = gray(Array2::ones((16, 16)));
        let s01 = ssim(&zeros, &ones).unwrap();
        let expected = 1e-4 / (1.0 + 1e-4); // C1 / (1 + C1)
        assert!((s01 - expected).abs() / 1e-4 < 0.05, "constant-image ssim {s01}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = gray(Array2::from_shape_fn((12, 14), |_| rng.random::<f64>()));
        let b = gray(Array2::from_shape_fn((12, 14), |_| rng.random::<f64>()));
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = gray(Array2::zeros((8, 8)));
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn report_aggregates_and_serializes_deterministically() {
        let images = vec![
            ImageMetrics { id: "a".into(), psnr_db: 20.0, ssim: 0.5 },
            ImageMetrics { id: "b".into(), psnr_db: 30.0, ssim: 0.7 },
        ];
        let r = MetricsReport::from_images(images, 0.1, "deadbeef".into()).unwrap();
        assert_eq!(r.n_images, 2);
        assert!((r.mean_psnr_db - 25.0).abs() < 1e-12);
        assert!((r.mean_ssim - 0.6).abs() < 1e-12);
        assert_eq!(r.to_json().unwrap(), r.to_json().unwrap());
        assert!(MetricsReport::from_images(vec![], 0.1, String::new()).is_err());
    }
}
