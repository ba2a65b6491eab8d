//! The trainer owns all parameters and applies the alternating optimization:
//! every batch takes one Adam step on {mask weights (via STE), generator};
//! once past warm-up (and with the GAN enabled), each generator step is
//! followed by discriminator step(s) on {real batch, reconstructed batch}.

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EpochStats, TrainConfig};
use crate::error::{Error, Result};
use crate::loss::{
    adversarial_loss_g_grad, discriminator_loss, mse_batch_grad, perceptual_batch_grad,
    total_loss, LossWeights,
};
use crate::nn::{
    init_mask_layer, Adam, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
    MaskLayer, PerceptualConfig, PerceptualExtractor,
};

/// Loss components reported by one generator step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub mse: f64,
    pub vgg: f64,
    pub adv: f64,
    pub total: f64,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub mask: MaskLayer,
    pub gen: Generator,
    pub disc: Discriminator,
    pub perceptual: PerceptualExtractor,
    pub opt_mask: Adam,
    pub opt_gen: Adam,
    pub opt_disc: Adam,
    /// Completed epochs (0 before training).
    pub epoch: usize,
    pub history: Vec<EpochStats>,
    shuffle_rng: ChaCha8Rng,
}

impl Trainer {
    /// Build the three networks deterministically from the config seed.
    pub fn build_networks(cfg: &TrainConfig) -> Result<(MaskLayer, Generator, Discriminator)> {
        let m = cfg.measurement_count()?;
        let c = cfg.channels();
        let mask = init_mask_layer(m, cfg.image_size, cfg.image_size, cfg.seed)?;
        let mut gen_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let gen = Generator::new(
            GeneratorConfig {
                input_len: c * m,
                height: cfg.image_size,
                width: cfg.image_size,
                out_channels: c,
                conv_width: cfg.gen_width,
            },
            &mut gen_rng,
        )?;
        let mut disc_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
        let disc = Discriminator::new(
            DiscriminatorConfig {
                height: cfg.image_size,
                width: cfg.image_size,
                in_channels: c,
                conv_width: cfg.disc_width,
                fc_hidden: cfg.disc_fc_hidden,
            },
            &mut disc_rng,
        )?;
        let mut gen = gen;
        // warm-start the affine map as the adjoint of the initial masks
        // (A^T/K per channel block): for ±1 masks A·A^T ≈ K·Id, so the first
        // image estimate is a backprojection rather than noise
        let k = (cfg.image_size * cfg.image_size) as f64;
        let adjoint = mask.mask_set().as_matrix().t().to_owned() / k;
        let mut fc_w = ndarray::Array2::zeros((cfg.image_size * cfg.image_size, c * m));
        for ch in 0..c {
            fc_w.slice_mut(ndarray::s![.., ch * m..(ch + 1) * m])
                .assign(&(&adjoint / c as f64));
        }
        gen.warm_start_fc(fc_w)?;
        Ok((mask, gen, disc))
    }

    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (mask, gen, disc) = Self::build_networks(&cfg)?;
        let perceptual = PerceptualExtractor::vgg(PerceptualConfig {
            layer: cfg.perceptual_layer,
            base_width: cfg.perceptual_width,
            seed: cfg.seed.wrapping_add(3),
        })?;
        let shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(4));
        Ok(Self {
            opt_mask: Adam::new(cfg.lr_mask, cfg.adam_beta1, cfg.adam_beta2),
            opt_gen: Adam::new(cfg.lr_gen, cfg.adam_beta1, cfg.adam_beta2),
            opt_disc: Adam::new(cfg.lr_disc, cfg.adam_beta1, cfg.adam_beta2),
            cfg,
            mask,
            gen,
            disc,
            perceptual,
            epoch: 0,
            history: Vec::new(),
            shuffle_rng,
        })
    }

    /// Whether the adversarial term and discriminator updates are active for
    /// the epoch currently being trained (`epoch + 1`).
    pub fn gan_active_now(&self) -> bool {
        self.cfg.use_gan && self.epoch + 1 > self.cfg.warmup_epochs_before_adversarial
    }

    pub(super) fn shuffled_indices(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle_rng);
        order
    }

    pub(super) fn finish_epoch(&mut self, stats: EpochStats) {
        self.history.push(stats);
        self.epoch += 1;
    }

    /// Flatten a `(B, C, H, W)` batch into the `(B, C, K)` layout the mask
    /// layer consumes.
    fn flatten_scenes(&self, scenes: &Array4<f64>) -> ndarray::Array3<f64> {
        let (b, c, h, w) = scenes.dim();
        scenes
            .clone()
            .into_shape_with_order((b, c, h * w))
            .expect("batch flatten")
    }

    /// One Adam step on {mask weights, generator} minimizing
    /// `mse + vgg + lambda_adv * adv` (the adversarial term joins after
    /// warm-up). Returns the loss components and the raw reconstruction.
    pub fn generator_step(&mut self, scenes: &Array4<f64>) -> Result<(LossComponents, Array4<f64>)> {
        let flat = self.flatten_scenes(scenes);
        let meas = self.mask.forward(&flat, true)?;
        let recon = self.gen.forward(&meas, true)?;

        let (mse, g_mse) = mse_batch_grad(scenes, &recon)?;
        let (vgg, g_vgg) = perceptual_batch_grad(&mut self.perceptual, scenes, &recon)?;
        let mut g_recon = g_mse + g_vgg;

        let weights = LossWeights {
            lambda_adv: self.cfg.lambda_adv,
            perceptual_layer: self.cfg.perceptual_layer,
        };
        let adv = if self.gan_active_now() {
            let scores = self.disc.forward(&recon, true)?;
            let (adv, g_scores) = adversarial_loss_g_grad(&scores)?;
            // discriminator parameters pick up gradients here; they are
            // zeroed at the start of the discriminator's own step
            let g_adv_input = self.disc.backward(&g_scores);
            g_recon.scaled_add(self.cfg.lambda_adv, &g_adv_input);
            adv
        } else {
            0.0
        };

        let total = total_loss(mse, vgg, adv, &weights).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFiniteLoss { epoch: self.epoch + 1, step: 0 },
            other => other,
        })?;

        self.gen.zero_grad();
        self.mask.zero_grad();
        let g_meas = self.gen.backward(&g_recon);
        self.mask.backward(&g_meas);

        self.opt_gen.begin_step();
        self.gen.apply_adam(&self.opt_gen);
        self.opt_mask.begin_step();
        self.opt_mask.update(&mut self.mask.omega);

        Ok((LossComponents { mse, vgg, adv, total }, recon))
    }

    /// One Adam step on the discriminator with the least-squares loss.
    /// Generator and mask parameters are untouched. Erroring during warm-up
    /// keeps the schedule honest.
    pub fn discriminator_step(&mut self, real: &Array4<f64>, fake: &Array4<f64>) -> Result<f64> {
        if !self.cfg.use_gan || !self.gan_active_now() {
            return Err(Error::DiscriminatorDuringWarmup {
                epoch: self.epoch + 1,
                warmup: self.cfg.warmup_epochs_before_adversarial,
            });
        }
        self.disc.zero_grad();
        // the loss separates over real/fake, so each forward can be followed
        // by its own backward before caches are overwritten
        let real_scores = self.disc.forward(real, true)?;
        let g_real = real_scores.mapv(|s| (s - 1.0) / real_scores.len() as f64);
        self.disc.backward(&g_real);
        let fake_scores = self.disc.forward(fake, true)?;
        let g_fake = fake_scores.mapv(|s| s / fake_scores.len() as f64);
        self.disc.backward(&g_fake);
        let loss = discriminator_loss(&real_scores, &fake_scores)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: self.epoch + 1, step: 0 });
        }
        self.opt_disc.begin_step();
        self.disc.apply_adam(&self.opt_disc);
        Ok(loss)
    }

    /// Mean PSNR of clamped evaluation-mode reconstructions.
    pub fn validation_psnr(&mut self, val: &Array4<f64>) -> Result<f64> {
        let (n, _, _, _) = val.dim();
        let mut acc = 0.0;
        for start in (0..n).step_by(self.cfg.batch_size.max(1)) {
            let end = (start + self.cfg.batch_size).min(n);
            let batch = val.slice(ndarray::s![start..end, .., .., ..]).to_owned();
            let flat = self.flatten_scenes(&batch);
            let meas = self.mask.forward(&flat, false)?;
            let recon = self.gen.forward(&meas, false)?.mapv(|v| v.clamp(0.0, 1.0));
            for i in 0..(end - start) {
                let t = batch.index_axis(Axis(0), i);
                let r = recon.index_axis(Axis(0), i);
                let mse = (&t.to_owned() - &r)
                    .mapv(|v| v * v)
                    .sum()
                    / t.len() as f64;
                acc += crate::metrics::psnr_from_mse(mse, 1.0);
            }
        }
        Ok(acc / n as f64)
    }
}
