//! Joint optimization of mask layer, generator, and discriminator, plus
//! inference and evaluation on trained checkpoints.

mod checkpoint;
mod trainer;

pub use checkpoint::Checkpoint;
pub use trainer::{LossComponents, Trainer};

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{forward_measure, sampling_count, MaskSet, MeasurementVector, NoiseConfig, SceneImage};
use crate::loss::batch_to_scene;
use crate::metrics::{ImageMetrics, MetricsReport};
use crate::nn::perceptual::BLOCK_CONVS;

fn default_sr() -> f64 {
    0.1
}
fn default_image_size() -> usize {
    128
}
fn default_lr_mask() -> f64 {
    1e-5
}
fn default_lr_gen() -> f64 {
    1e-4
}
fn default_lr_disc() -> f64 {
    1e-5
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_warmup() -> usize {
    4
}
fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    32
}
fn default_lambda_adv() -> f64 {
    0.05
}
fn default_use_gan() -> bool {
    true
}
fn default_gen_width() -> usize {
    64
}
fn default_disc_width() -> usize {
    32
}
fn default_disc_fc_hidden() -> usize {
    1024
}
fn default_disc_steps() -> usize {
    1
}
fn default_perceptual_layer() -> (usize, usize) {
    (5, 4)
}
fn default_perceptual_width() -> usize {
    64
}

/// Full training configuration; echoed into every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub sr: f64,
    pub image_size: usize,
    pub lr_mask: f64,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Generator-only epochs before adversarial training starts.
    pub warmup_epochs_before_adversarial: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_adv: f64,
    pub seed: u64,
    pub use_gan: bool,
    pub rgb: bool,
    pub gen_width: usize,
    pub disc_width: usize,
    pub disc_fc_hidden: usize,
    /// Discriminator steps following each generator step once active.
    pub disc_steps_per_gen_step: usize,
    /// (block, conv) feature position of the perceptual loss.
    pub perceptual_layer: (usize, usize),
    /// Base width of the perceptual extractor (64 = the VGG-19 widths).
    pub perceptual_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sr: default_sr(),
            image_size: default_image_size(),
            lr_mask: default_lr_mask(),
            lr_gen: default_lr_gen(),
            lr_disc: default_lr_disc(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            warmup_epochs_before_adversarial: default_warmup(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            lambda_adv: default_lambda_adv(),
            seed: 0,
            use_gan: default_use_gan(),
            rgb: false,
            gen_width: default_gen_width(),
            disc_width: default_disc_width(),
            disc_fc_hidden: default_disc_fc_hidden(),
            disc_steps_per_gen_step: default_disc_steps(),
            perceptual_layer: default_perceptual_layer(),
            perceptual_width: default_perceptual_width(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_mask", self.lr_mask), ("lr_gen", self.lr_gen), ("lr_disc", self.lr_disc)] {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !self.lambda_adv.is_finite() || self.lambda_adv < 0.0 {
            return Err(Error::InvalidConfig(format!("lambda_adv must be nonnegative, got {}", self.lambda_adv)));
        }
        // surfaces invalid sampling rates as well
        sampling_count(self.sr, self.image_size, self.image_size)?;
        if self.image_size < 16 {
            return Err(Error::InvalidConfig(format!("image_size must be at least 16, got {}", self.image_size)));
        }
        if self.use_gan && self.image_size % 4 != 0 {
            return Err(Error::InvalidConfig(
                "image_size must be divisible by 4 when the discriminator is enabled".into(),
            ));
        }
        let (bi, cj) = self.perceptual_layer;
        if !(1..=5).contains(&bi) || cj < 1 || cj > BLOCK_CONVS[bi - 1] {
            return Err(Error::InvalidConfig(format!("perceptual layer ({bi},{cj}) is invalid")));
        }
        let div = 1usize << (bi - 1);
        if self.image_size % div != 0 || self.image_size / div == 0 {
            return Err(Error::InvalidConfig(format!(
                "image_size {} incompatible with perceptual layer block {bi}",
                self.image_size
            )));
        }
        if self.gen_width < 1 || self.disc_width < 1 || self.disc_fc_hidden < 1 || self.perceptual_width < 1 {
            return Err(Error::InvalidConfig("network widths must be positive".into()));
        }
        if self.disc_steps_per_gen_step < 1 {
            return Err(Error::InvalidConfig("disc_steps_per_gen_step must be at least 1".into()));
        }
        Ok(())
    }

    /// Measurements per channel, `floor(sr * K)`.
    pub fn measurement_count(&self) -> Result<usize> {
        sampling_count(self.sr, self.image_size, self.image_size)
    }

    pub fn channels(&self) -> usize {
        if self.rgb {
            3
        } else {
            1
        }
    }

    /// Stable hex digest of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mse: f64,
    pub vgg: f64,
    pub adv: f64,
    pub d_loss: f64,
    pub val_psnr: f64,
}

/// How a training run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainOutcome {
    Completed,
    /// A non-finite loss appeared; the returned checkpoints are the last
    /// good snapshots taken before the divergence.
    AbortedNonFinite { epoch: usize, step: usize },
}

pub struct TrainOutput {
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub outcome: TrainOutcome,
}

/// Stack uniform scenes into a `(N, C, H, W)` batch array.
pub fn scenes_to_batch(scenes: &[SceneImage]) -> Result<Array4<f64>> {
    let first = scenes.first().ok_or(Error::EmptyDataset { context: "scene batch".into() })?;
    let (h, w, c) = first.pixels().dim();
    let mut out = Array4::zeros((scenes.len(), c, h, w));
    for (i, scene) in scenes.iter().enumerate() {
        if scene.pixels().dim() != (h, w, c) {
            return Err(Error::shape(format!("{h}x{w}x{c}"), format!("{:?}", scene.pixels().dim())));
        }
        for ch in 0..c {
            out.index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), ch)
                .assign(&scene.pixels().index_axis(Axis(2), ch));
        }
    }
    Ok(out)
}

/// Train on pre-split scene sets. Returns last and best-validation
/// checkpoints; a non-finite loss aborts with the last good snapshots and a
/// distinct outcome instead of corrupted parameters.
pub fn train(
    cfg: &TrainConfig,
    train_scenes: &[SceneImage],
    val_scenes: &[SceneImage],
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_scenes.is_empty() {
        return Err(Error::EmptyDataset { context: "training split".into() });
    }
    if val_scenes.is_empty() {
        return Err(Error::EmptyDataset { context: "validation split".into() });
    }
    let expect_c = cfg.channels();
    let train_data = scenes_to_batch(train_scenes)?;
    let val_data = scenes_to_batch(val_scenes)?;
    for (name, data) in [("train", &train_data), ("val", &val_data)] {
        let (_, c, h, w) = data.dim();
        if c != expect_c || h != cfg.image_size || w != cfg.image_size {
            return Err(Error::shape(
                format!("{name} scenes {expect_c}x{}x{}", cfg.image_size, cfg.image_size),
                format!("{c}x{h}x{w}"),
            ));
        }
    }

    let mut trainer = Trainer::new(cfg.clone())?;
    let mut last_good = Checkpoint::from_trainer(&trainer);
    let mut best: Option<(f64, Checkpoint)> = None;

    let n = train_data.dim().0;
    for epoch in 1..=cfg.epochs {
        let order = trainer.shuffled_indices(n);
        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut steps = 0usize;
        let mut d_steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = gather(&train_data, chunk);
            let (components, recon) = match trainer.generator_step(&batch) {
                Ok(ok) => ok,
                Err(Error::NonFiniteLoss { .. }) => {
                    return Ok(TrainOutput {
                        best: best.map(|(_, c)| c).unwrap_or_else(|| last_good.clone()),
                        last: last_good,
                        outcome: TrainOutcome::AbortedNonFinite { epoch, step },
                    });
                }
                Err(e) => return Err(e),
            };
            sums.0 += components.mse;
            sums.1 += components.vgg;
            sums.2 += components.adv;
            steps += 1;
            if trainer.gan_active_now() {
                for _ in 0..cfg.disc_steps_per_gen_step {
                    sums.3 += trainer.discriminator_step(&batch, &recon)?;
                    d_steps += 1;
                }
            }
        }
        let val_psnr = trainer.validation_psnr(&val_data)?;
        let stats = EpochStats {
            epoch,
            mse: sums.0 / steps as f64,
            vgg: sums.1 / steps as f64,
            adv: sums.2 / steps as f64,
            d_loss: if d_steps > 0 { sums.3 / d_steps as f64 } else { 0.0 },
            val_psnr,
        };
        trainer.finish_epoch(stats);
        last_good = Checkpoint::from_trainer(&trainer);
        if best.as_ref().map(|(p, _)| val_psnr > *p).unwrap_or(true) {
            best = Some((val_psnr, last_good.clone()));
        }
    }
    Ok(TrainOutput {
        best: best.map(|(_, c)| c).unwrap_or_else(|| last_good.clone()),
        last: last_good,
        outcome: TrainOutcome::Completed,
    })
}

fn gather(data: &Array4<f64>, indices: &[usize]) -> Array4<f64> {
    let (_, c, h, w) = data.dim();
    let mut out = Array4::zeros((indices.len(), c, h, w));
    for (i, &idx) in indices.iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&data.index_axis(Axis(0), idx));
    }
    out
}

/// Inference result with the measured wall-clock latency.
pub struct Reconstruction {
    pub scene: SceneImage,
    pub latency: std::time::Duration,
}

/// Run the generator on a measurement vector in evaluation mode; the output
/// is clamped to `[0, 1]`.
pub fn reconstruct(ckpt: &mut Checkpoint, measurements: &MeasurementVector) -> Result<Reconstruction> {
    let m = ckpt.config.measurement_count()?;
    let expected = ckpt.config.channels() * m;
    if measurements.len() != expected {
        return Err(Error::shape(format!("{expected} measurements"), format!("{}", measurements.len())));
    }
    let start = std::time::Instant::now();
    let input = measurements
        .values
        .clone()
        .into_shape_with_order((1, expected))
        .expect("row vector reshape");
    let out = ckpt.gen.forward(&input, false)?;
    let scene = batch_to_scene(&out, 0).clamp01();
    let latency = start.elapsed();
    Ok(Reconstruction { scene, latency })
}

/// Measure an RGB scene channel by channel with the same masks and
/// concatenate the readouts in R, G, B order (length `3M`). Each channel's
/// noise stream is derived from `noise.seed + channel`.
pub fn rgb_measure_concat(
    scene: &SceneImage,
    masks: &MaskSet,
    noise: NoiseConfig,
) -> Result<MeasurementVector> {
    if !scene.is_rgb() {
        return Err(Error::shape("RGB scene", "grayscale scene"));
    }
    let m = masks.count();
    let mut values = ndarray::Array1::zeros(3 * m);
    for c in 0..3 {
        let channel = SceneImage::gray_raw(scene.channel(c).to_owned());
        let chan_noise = NoiseConfig { sigma: noise.sigma, seed: noise.seed.wrapping_add(c as u64) };
        let meas = forward_measure(&channel, masks, chan_noise)?;
        values.slice_mut(ndarray::s![c * m..(c + 1) * m]).assign(&meas.values);
    }
    Ok(MeasurementVector { values, noise_sigma: noise.sigma })
}

/// Measure a scene with a checkpoint's learned masks (noiseless), matching
/// what [`evaluate`] and the CLI simulate command feed the generator.
pub fn measure_scene(ckpt: &Checkpoint, scene: &SceneImage, noise: NoiseConfig) -> Result<MeasurementVector> {
    let masks = ckpt.mask.mask_set();
    if ckpt.config.rgb {
        rgb_measure_concat(scene, &masks, noise)
    } else {
        forward_measure(scene, &masks, noise)
    }
}

/// Measure, reconstruct, and score every scene; aggregates the means.
pub fn evaluate(
    ckpt: &mut Checkpoint,
    scenes: &[SceneImage],
    ids: Option<&[String]>,
) -> Result<MetricsReport> {
    if scenes.is_empty() {
        return Err(Error::EmptyDataset { context: "evaluation dataset".into() });
    }
    if let Some(ids) = ids {
        if ids.len() != scenes.len() {
            return Err(Error::shape(format!("{} ids", scenes.len()), format!("{}", ids.len())));
        }
    }
    let mut images = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let meas = measure_scene(ckpt, scene, NoiseConfig::none())?;
        let recon = reconstruct(ckpt, &meas)?;
        let id = ids.map(|v| v[i].clone()).unwrap_or_else(|| format!("scene_{i:05}"));
        images.push(ImageMetrics {
            id,
            psnr_db: crate::metrics::psnr(scene, &recon.scene, 1.0)?,
            ssim: crate::metrics::ssim(scene, &recon.scene)?,
        });
    }
    MetricsReport::from_images(images, ckpt.config.sr, ckpt.config.config_hash())
}
