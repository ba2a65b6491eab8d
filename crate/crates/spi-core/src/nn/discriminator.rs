//! The adversarial discriminator.
//!
//! Nine 3x3 conv layers (batch norm + leaky ReLU, slope 0.2) with 2x2 max
//! pools after the fifth and ninth, then two affine layers and a sigmoid,
//! scoring each image in the open interval (0, 1). Channels double after the
//! first pool; both widths and the hidden affine size are configurable.

use ndarray::{Array1, Array4, Ix1, Ix2, Ix4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{flatten_batch, unflatten_batch, ActKind, Activation, BatchNorm2d, Conv2d, Dense, MaxPool2d};
use crate::error::{Error, Result};

pub const CONV_LAYERS: usize = 9;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub height: usize,
    pub width: usize,
    /// 1 for grayscale, 3 for RGB.
    pub in_channels: usize,
    /// Channel width of conv layers 1-5; layers 6-9 use twice this.
    pub conv_width: usize,
    /// Hidden size of the first affine layer.
    pub fc_hidden: usize,
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
    act: Activation<Ix4>,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    convs: Vec<ConvBlock>,
    pool_mid: MaxPool2d,
    pool_end: MaxPool2d,
    fc1: Dense,
    fc_act: Activation<Ix2>,
    fc2: Dense,
    sig: Activation<Ix1>,
}

impl Discriminator {
    pub fn new<R: Rng>(cfg: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        if cfg.height % 4 != 0 || cfg.width % 4 != 0 {
            return Err(Error::InvalidConfig(format!(
                "discriminator needs H and W divisible by 4, got {}x{}",
                cfg.height, cfg.width
            )));
        }
        if cfg.in_channels != 1 && cfg.in_channels != 3 {
            return Err(Error::InvalidConfig("discriminator in_channels must be 1 or 3".into()));
        }
        let mut convs = Vec::with_capacity(CONV_LAYERS);
        let mut in_ch = cfg.in_channels;
        for i in 0..CONV_LAYERS {
            let out_ch = if i < 5 { cfg.conv_width } else { 2 * cfg.conv_width };
            convs.push(ConvBlock {
                conv: Conv2d::new(in_ch, out_ch, rng),
                bn: BatchNorm2d::new(out_ch),
                act: Activation::new(ActKind::LeakyRelu(LEAKY_SLOPE)),
            });
            in_ch = out_ch;
        }
        let flat = 2 * cfg.conv_width * (cfg.height / 4) * (cfg.width / 4);
        Ok(Self {
            cfg,
            convs,
            pool_mid: MaxPool2d::new(),
            pool_end: MaxPool2d::new(),
            fc1: Dense::new(flat, cfg.fc_hidden, rng),
            fc_act: Activation::new(ActKind::LeakyRelu(LEAKY_SLOPE)),
            fc2: Dense::new(cfg.fc_hidden, 1, rng),
            sig: Activation::new(ActKind::Sigmoid),
        })
    }

    /// Images `(B, C, H, W)` to scores `(B,)`, each strictly inside (0, 1).
    pub fn forward(&mut self, images: &Array4<f64>, train: bool) -> Result<Array1<f64>> {
        let (b, c, h, w) = images.dim();
        if c != self.cfg.in_channels || h != self.cfg.height || w != self.cfg.width {
            return Err(Error::shape(
                format!("{}x{}x{}", self.cfg.in_channels, self.cfg.height, self.cfg.width),
                format!("{c}x{h}x{w}"),
            ));
        }
        let mut x = images.clone();
        for i in 0..self.convs.len() {
            let block = &mut self.convs[i];
            x = block.conv.forward(&x, train);
            x = block.bn.forward(&x, train);
            x = block.act.forward(&x, train);
            if i == 4 {
                x = self.pool_mid.forward(&x, train);
            } else if i == 8 {
                x = self.pool_end.forward(&x, train);
            }
        }
        let flat = flatten_batch(&x);
        let z = self.fc1.forward(&flat, train);
        let z = self.fc_act.forward(&z, train);
        let z = self.fc2.forward(&z, train);
        let logits = z.into_shape_with_order(b).expect("scalar per image");
        Ok(self.sig.forward(&logits, train))
    }

    /// Backward from score gradients `(B,)` to image gradients.
    ///
    /// Parameter gradients accumulate as usual; callers updating only the
    /// generator discard them by zeroing before the discriminator's own step.
    pub fn backward(&mut self, gscores: &Array1<f64>) -> Array4<f64> {
        let g = self.sig.backward(gscores);
        let b = g.len();
        let g = g.into_shape_with_order((b, 1)).expect("column grad");
        let g = self.fc2.backward(&g);
        let g = self.fc_act.backward(&g);
        let g = self.fc1.backward(&g);
        let (h4, w4) = (self.cfg.height / 4, self.cfg.width / 4);
        let mut g = unflatten_batch(&g, 2 * self.cfg.conv_width, h4, w4);
        for i in (0..self.convs.len()).rev() {
            if i == 8 {
                g = self.pool_end.backward(&g);
            } else if i == 4 {
                g = self.pool_mid.backward(&g);
            }
            let block = &mut self.convs[i];
            g = block.act.backward(&g);
            g = block.bn.backward(&g);
            g = block.conv.backward(&g);
        }
        g
    }

    pub fn zero_grad(&mut self) {
        for block in &mut self.convs {
            block.conv.zero_grad();
            block.bn.zero_grad();
        }
        self.fc1.zero_grad();
        self.fc2.zero_grad();
    }

    pub fn conv_layer_count(&self) -> usize {
        self.convs.len()
    }

    pub fn param_count(&self) -> usize {
        self.convs
            .iter()
            .map(|b| b.conv.param_count() + b.bn.param_count())
            .sum::<usize>()
            + self.fc1.param_count()
            + self.fc2.param_count()
    }

    pub fn expected_param_count(cfg: &DiscriminatorConfig) -> usize {
        let w1 = cfg.conv_width;
        let w2 = 2 * cfg.conv_width;
        let mut total = 0;
        let mut in_ch = cfg.in_channels;
        for i in 0..CONV_LAYERS {
            let out_ch = if i < 5 { w1 } else { w2 };
            total += out_ch * in_ch * 9 + out_ch + 2 * out_ch;
            in_ch = out_ch;
        }
        let flat = w2 * (cfg.height / 4) * (cfg.width / 4);
        total += flat * cfg.fc_hidden + cfg.fc_hidden;
        total += cfg.fc_hidden + 1;
        total
    }

    /// Order-stable hash of all parameter values; used to assert the
    /// freeze contract across discriminator steps.
    pub fn param_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut mix = |v: f64| {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x100000001b3);
        };
        for block in &self.convs {
            block.conv.w.value.iter().for_each(|&v| mix(v));
            block.conv.b.value.iter().for_each(|&v| mix(v));
            block.bn.gamma.value.iter().for_each(|&v| mix(v));
            block.bn.beta.value.iter().for_each(|&v| mix(v));
        }
        self.fc1.w.value.iter().for_each(|&v| mix(v));
        self.fc1.b.value.iter().for_each(|&v| mix(v));
        self.fc2.w.value.iter().for_each(|&v| mix(v));
        self.fc2.b.value.iter().for_each(|&v| mix(v));
        h
    }

    pub(crate) fn state_arrays(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, block) in self.convs.iter_mut().enumerate() {
            out.extend(block.conv.w.state_views(&format!("disc.conv{i}.w")));
            out.extend(block.conv.b.state_views(&format!("disc.conv{i}.b")));
            out.extend(block.bn.gamma.state_views(&format!("disc.conv{i}.bn.gamma")));
            out.extend(block.bn.beta.state_views(&format!("disc.conv{i}.bn.beta")));
            out.push((
                format!("disc.conv{i}.bn.running_mean"),
                block.bn.running_mean.view_mut().into_dyn(),
            ));
            out.push((
                format!("disc.conv{i}.bn.running_var"),
                block.bn.running_var.view_mut().into_dyn(),
            ));
        }
        out.extend(self.fc1.w.state_views("disc.fc1.w"));
        out.extend(self.fc1.b.state_views("disc.fc1.b"));
        out.extend(self.fc2.w.state_views("disc.fc2.w"));
        out.extend(self.fc2.b.state_views("disc.fc2.b"));
        out
    }

    pub(crate) fn apply_adam(&mut self, opt: &super::param::Adam) {
        for block in &mut self.convs {
            opt.update(&mut block.conv.w);
            opt.update(&mut block.conv.b);
            opt.update(&mut block.bn.gamma);
            opt.update(&mut block.bn.beta);
        }
        opt.update(&mut self.fc1.w);
        opt.update(&mut self.fc1.b);
        opt.update(&mut self.fc2.w);
        opt.update(&mut self.fc2.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_cfg() -> DiscriminatorConfig {
        DiscriminatorConfig { height: 8, width: 8, in_channels: 1, conv_width: 4, fc_hidden: 16 }
    }

    #[test]
    fn scores_live_in_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut d = Discriminator::new(toy_cfg(), &mut rng).unwrap();
        let images = Array4::from_shape_fn((4, 1, 8, 8), |_| rand::Rng::random::<f64>(&mut rng));
        let scores = d.forward(&images, false).unwrap();
        assert_eq!(scores.len(), 4);
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn nine_convs_and_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = toy_cfg();
        let d = Discriminator::new(cfg, &mut rng).unwrap();
        assert_eq!(d.conv_layer_count(), CONV_LAYERS);
        assert_eq!(d.param_count(), Discriminator::expected_param_count(&cfg));
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bad = DiscriminatorConfig { height: 6, width: 8, ..toy_cfg() };
        assert!(Discriminator::new(bad, &mut rng).is_err());
        let mut d = Discriminator::new(toy_cfg(), &mut rng).unwrap();
        assert!(d.forward(&Array4::zeros((1, 1, 4, 4)), false).is_err());
    }

    #[test]
    fn param_hash_tracks_changes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut d = Discriminator::new(toy_cfg(), &mut rng).unwrap();
        let h0 = d.param_hash();
        assert_eq!(h0, d.param_hash());
        d.fc2.b.value[0] += 1e-9;
        assert_ne!(h0, d.param_hash());
    }
}
