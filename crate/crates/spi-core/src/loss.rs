//! Training losses: pixel MSE, perceptual feature distance, and the
//! least-squares adversarial pair. The total objective is
//! `mse + perceptual + lambda_adv * adversarial`.

use ndarray::{Array1, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::SceneImage;
use crate::nn::PerceptualExtractor;

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_adv: f64,
    /// (block, conv) feature position for the perceptual term.
    pub perceptual_layer: (usize, usize),
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_adv: 0.05, perceptual_layer: (5, 4) }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_adv.is_finite() || self.lambda_adv < 0.0 {
            return Err(Error::OutOfRange { context: "lambda_adv".into(), value: self.lambda_adv });
        }
        Ok(())
    }
}

fn check_same_shape(truth: &SceneImage, recon: &SceneImage) -> Result<()> {
    if truth.pixels().dim() != recon.pixels().dim() {
        return Err(Error::shape(
            format!("{:?}", truth.pixels().dim()),
            format!("{:?}", recon.pixels().dim()),
        ));
    }
    Ok(())
}

/// Pixel-wise mean squared error, `(1/(W·H)) Σ (O - G)^2` (mean over
/// channels as well for RGB scenes).
pub fn mse_loss(truth: &SceneImage, recon: &SceneImage) -> Result<f64> {
    check_same_shape(truth, recon)?;
    let n = truth.pixels().len() as f64;
    let sum: f64 = truth
        .pixels()
        .iter()
        .zip(recon.pixels().iter())
        .map(|(t, r)| (t - r) * (t - r))
        .sum();
    Ok(sum / n)
}

/// Batch MSE and its gradient w.r.t. the reconstruction, on `(B, C, H, W)`.
pub fn mse_batch_grad(truth: &Array4<f64>, recon: &Array4<f64>) -> Result<(f64, Array4<f64>)> {
    if truth.dim() != recon.dim() {
        return Err(Error::shape(format!("{:?}", truth.dim()), format!("{:?}", recon.dim())));
    }
    let b = truth.dim().0 as f64;
    let per_image = (truth.len() as f64) / b;
    let diff = recon - truth;
    let loss = diff.mapv(|v| v * v).sum() / b / per_image;
    let grad = diff.mapv(|v| 2.0 * v / b / per_image);
    Ok((loss, grad))
}

/// Replicate grayscale batches to 3 channels; RGB passes through.
fn replicate3(x: &Array4<f64>) -> Array4<f64> {
    let (b, c, h, w) = x.dim();
    if c == 3 {
        return x.clone();
    }
    let mut out = Array4::zeros((b, 3, h, w));
    for ch in 0..3 {
        out.index_axis_mut(Axis(1), ch).assign(&x.index_axis(Axis(1), 0));
    }
    out
}

/// Perceptual loss on a batch, plus its gradient w.r.t. the reconstruction.
///
/// Per image: `Σ_{c,x,y} (φ(O) - φ(G))^2 / (W_f · H_f)` where `W_f, H_f` are
/// the feature-map spatial dims; averaged over the batch. Grayscale inputs
/// are replicated to 3 channels before extraction.
pub fn perceptual_batch_grad(
    extractor: &mut PerceptualExtractor,
    truth: &Array4<f64>,
    recon: &Array4<f64>,
) -> Result<(f64, Array4<f64>)> {
    if truth.dim() != recon.dim() {
        return Err(Error::shape(format!("{:?}", truth.dim()), format!("{:?}", recon.dim())));
    }
    let (b, c, _, _) = truth.dim();
    let t3 = replicate3(truth);
    let r3 = replicate3(recon);
    let ft = extractor.forward(&t3, false)?;
    let fr = extractor.forward(&r3, true)?;
    let (_, _, fh, fw) = ft.dim();
    let norm = (b * fh * fw) as f64;
    let diff = &fr - &ft;
    let loss = diff.mapv(|v| v * v).sum() / norm;
    let gfeat = diff.mapv(|v| 2.0 * v / norm);
    let gin3 = extractor.backward_input(&gfeat);
    let grad = if c == 1 {
        // fold the replicated channels back onto the single input plane
        let mut g = Array4::zeros(truth.raw_dim());
        {
            let mut g0 = g.index_axis_mut(Axis(1), 0);
            for ch in 0..3 {
                g0 += &gin3.index_axis(Axis(1), ch);
            }
        }
        g
    } else {
        gin3
    };
    Ok((loss, grad))
}

/// Perceptual loss between two single scenes.
pub fn perceptual_loss(
    extractor: &mut PerceptualExtractor,
    truth: &SceneImage,
    recon: &SceneImage,
) -> Result<f64> {
    check_same_shape(truth, recon)?;
    let t = scene_to_batch(truth);
    let r = scene_to_batch(recon);
    let (loss, _) = perceptual_batch_grad(extractor, &t, &r)?;
    Ok(loss)
}

/// `H x W x C` scene to a single-sample `(1, C, H, W)` batch.
pub fn scene_to_batch(scene: &SceneImage) -> Array4<f64> {
    let (h, w, c) = scene.pixels().dim();
    let mut out = Array4::zeros((1, c, h, w));
    for ch in 0..c {
        out.index_axis_mut(Axis(1), ch)
            .index_axis_mut(Axis(0), 0)
            .assign(&scene.pixels().index_axis(Axis(2), ch));
    }
    out
}

/// `(C, H, W)` sample of a batch back to an `H x W x C` scene (raw values).
pub fn batch_to_scene(batch: &Array4<f64>, index: usize) -> SceneImage {
    let (_, c, h, w) = batch.dim();
    let mut pixels = ndarray::Array3::zeros((h, w, c));
    for ch in 0..c {
        pixels
            .index_axis_mut(Axis(2), ch)
            .assign(&batch.index_axis(Axis(0), index).index_axis(Axis(0), ch));
    }
    if c == 3 {
        SceneImage::rgb_raw(pixels).expect("3 channels")
    } else {
        let flat = pixels.index_axis(Axis(2), 0).to_owned();
        SceneImage::gray_raw(flat)
    }
}

fn check_scores(scores: &Array1<f64>, context: &str) -> Result<()> {
    for &s in scores.iter() {
        if !s.is_finite() || !(0.0..=1.0).contains(&s) {
            return Err(Error::OutOfRange { context: context.into(), value: s });
        }
    }
    Ok(())
}

/// Generator-side adversarial loss: `mean(½ (D(G) - 1)^2)`.
pub fn adversarial_loss_g(d_scores: &Array1<f64>) -> Result<f64> {
    check_scores(d_scores, "generator adversarial scores")?;
    let b = d_scores.len() as f64;
    Ok(d_scores.iter().map(|s| 0.5 * (s - 1.0) * (s - 1.0)).sum::<f64>() / b)
}

/// Adversarial loss plus its gradient w.r.t. the scores.
pub fn adversarial_loss_g_grad(d_scores: &Array1<f64>) -> Result<(f64, Array1<f64>)> {
    let loss = adversarial_loss_g(d_scores)?;
    let b = d_scores.len() as f64;
    Ok((loss, d_scores.mapv(|s| (s - 1.0) / b)))
}

/// Least-squares discriminator loss: `½ mean((D(real)-1)^2) + ½ mean(D(fake)^2)`.
pub fn discriminator_loss(real_scores: &Array1<f64>, fake_scores: &Array1<f64>) -> Result<f64> {
    check_scores(real_scores, "discriminator real scores")?;
    check_scores(fake_scores, "discriminator fake scores")?;
    let br = real_scores.len() as f64;
    let bf = fake_scores.len() as f64;
    let real: f64 = real_scores.iter().map(|s| (s - 1.0) * (s - 1.0)).sum::<f64>() / br;
    let fake: f64 = fake_scores.iter().map(|s| s * s).sum::<f64>() / bf;
    Ok(0.5 * real + 0.5 * fake)
}

/// Discriminator loss plus gradients w.r.t. both score vectors.
pub fn discriminator_loss_grads(
    real_scores: &Array1<f64>,
    fake_scores: &Array1<f64>,
) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    let loss = discriminator_loss(real_scores, fake_scores)?;
    let br = real_scores.len() as f64;
    let bf = fake_scores.len() as f64;
    Ok((loss, real_scores.mapv(|s| (s - 1.0) / br), fake_scores.mapv(|s| s / bf)))
}

/// Combined objective: `mse + vgg + lambda_adv * adv`.
pub fn total_loss(mse: f64, vgg: f64, adv: f64, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    for (name, v) in [("mse", mse), ("vgg", vgg), ("adv", adv)] {
        if !v.is_finite() {
            return Err(Error::NonFinite { context: format!("loss component {name}") });
        }
    }
    Ok(mse + vgg + weights.lambda_adv * adv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array2};

    fn gray(values: Array2<f64>) -> SceneImage {
        SceneImage::gray_raw(values)
    }

    #[test]
    fn mse_frozen_examples() {
        let a = gray(Array2::ones((4, 4)));
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let zero = gray(Array2::zeros((4, 4)));
        assert_eq!(mse_loss(&a, &zero).unwrap(), 1.0);
        let t = gray(arr2(&[[0.0, 1.0]]));
        let r = gray(arr2(&[[1.0, 1.0]]));
        assert_eq!(mse_loss(&t, &r).unwrap(), 0.5);
        let small = gray(Array2::zeros((2, 2)));
        assert!(mse_loss(&a, &small).is_err());
    }

    #[test]
    fn adversarial_frozen_examples() {
        assert_eq!(adversarial_loss_g(&arr1(&[1.0])).unwrap(), 0.0);
        assert_eq!(adversarial_loss_g(&arr1(&[0.0])).unwrap(), 0.5);
        assert_eq!(adversarial_loss_g(&arr1(&[1.0, 0.0])).unwrap(), 0.25);
        assert!(adversarial_loss_g(&arr1(&[1.2])).is_err());
        assert!(adversarial_loss_g(&arr1(&[-0.1])).is_err());
    }

    #[test]
    fn discriminator_frozen_examples() {
        assert_eq!(discriminator_loss(&arr1(&[1.0]), &arr1(&[0.0])).unwrap(), 0.0);
        assert_eq!(discriminator_loss(&arr1(&[0.0]), &arr1(&[1.0])).unwrap(), 1.0);
        assert_eq!(discriminator_loss(&arr1(&[0.5]), &arr1(&[0.5])).unwrap(), 0.25);
    }

    #[test]
    fn total_loss_arithmetic() {
        let w = LossWeights::default();
        assert_eq!(w.lambda_adv, 0.05);
        let t = total_loss(0.1, 0.2, 0.5, &w).unwrap();
        assert!((t - 0.325).abs() < 1e-15);
        let zero = LossWeights { lambda_adv: 0.0, ..w };
        assert_eq!(total_loss(0.0, 0.0, 123.0, &zero).unwrap(), 0.0);
        assert!(total_loss(f64::NAN, 0.0, 0.0, &w).is_err());
    }

    #[test]
    fn total_loss_is_linear_in_adv() {
        let w = LossWeights { lambda_adv: 0.05, perceptual_layer: (5, 4) };
        let l1 = total_loss(0.3, 0.1, 1.0, &w).unwrap();
        let l2 = total_loss(0.3, 0.1, 3.0, &w).unwrap();
        assert!(((l2 - l1) / 2.0 - w.lambda_adv).abs() < 1e-12);
    }

    #[test]
    fn perceptual_identity_gives_zero_and_scales_quadratically() {
        let mut ex = PerceptualExtractor::identity();
        let t = gray(arr2(&[[0.2, 0.4], [0.6, 0.8]]));
        assert_eq!(perceptual_loss(&mut ex, &t, &t).unwrap(), 0.0);

        let r1 = gray(arr2(&[[0.3, 0.4], [0.6, 0.8]]));
        let r2 = gray(arr2(&[[0.4, 0.4], [0.6, 0.8]]));
        let l1 = perceptual_loss(&mut ex, &t, &r1).unwrap();
        let l2 = perceptual_loss(&mut ex, &t, &r2).unwrap();
        assert!(l1 > 0.0);
        assert!((l2 / l1 - 4.0).abs() < 1e-9, "doubling differences must quadruple the loss");
    }

    #[test]
    fn perceptual_identity_matches_mse_up_to_replication() {
        let mut ex = PerceptualExtractor::identity();
        let t = gray(arr2(&[[0.1, 0.9], [0.5, 0.3]]));
        let r = gray(arr2(&[[0.2, 0.7], [0.5, 0.1]]));
        let p = perceptual_loss(&mut ex, &t, &r).unwrap();
        let m = mse_loss(&t, &r).unwrap();
        // identity features replicate the gray plane 3x; spatial norm matches MSE's
        assert!((p - 3.0 * m).abs() < 1e-12);
    }

    #[test]
    fn perceptual_gradient_matches_finite_differences_with_vgg() {
        use crate::nn::PerceptualConfig;
        use rand::{Rng, SeedableRng};
        let mut ex = PerceptualExtractor::vgg(PerceptualConfig {
            layer: (2, 1),
            base_width: 2,
            seed: 3,
        })
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let truth = Array4::from_shape_fn((1, 1, 4, 4), |_| rng.random::<f64>());
        let recon = Array4::from_shape_fn((1, 1, 4, 4), |_| rng.random::<f64>());
        let (_, grad) = perceptual_batch_grad(&mut ex, &truth, &recon).unwrap();

        let h = 1e-6;
        let mut rp = recon.clone();
        for idx in 0..recon.len() {
            let orig = rp.as_slice_mut().unwrap()[idx];
            rp.as_slice_mut().unwrap()[idx] = orig + h;
            let (fp, _) = perceptual_batch_grad(&mut ex, &truth, &rp).unwrap();
            rp.as_slice_mut().unwrap()[idx] = orig - h;
            let (fm, _) = perceptual_batch_grad(&mut ex, &truth, &rp).unwrap();
            rp.as_slice_mut().unwrap()[idx] = orig;
            let num = (fp - fm) / (2.0 * h);
            let ana = grad.as_slice().unwrap()[idx];
            let denom = ana.abs().max(num.abs()).max(1e-6);
            assert!((ana - num).abs() / denom < 1e-3, "{ana} vs {num}");
        }
    }
}
