//! The reconstruction generator.
//!
//! Seven weight-bearing layers: one affine map lifting the measurement vector
//! to an initial image estimate, five conv blocks (3x3 conv, batch norm,
//! ReLU), and a linear 3x3 head producing the output plane(s). The head is
//! linear; clamping to [0,1] happens at evaluation time, not here.

use ndarray::{Array2, Array4, Ix4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{ActKind, Activation, BatchNorm2d, Conv2d, Dense};
use crate::error::{Error, Result};

pub const CONV_BLOCKS: usize = 5;
/// 1 affine + 5 conv blocks + 1 head.
pub const WEIGHT_BEARING_LAYERS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Input measurement vector length (`M`, or `3M` in RGB mode).
    pub input_len: usize,
    pub height: usize,
    pub width: usize,
    /// 1 for grayscale, 3 for RGB.
    pub out_channels: usize,
    /// Channel width of every conv block.
    pub conv_width: usize,
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
    act: Activation<Ix4>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    fc: Dense,
    blocks: Vec<ConvBlock>,
    head: Conv2d,
}

impl Generator {
    pub fn new<R: Rng>(cfg: GeneratorConfig, rng: &mut R) -> Result<Self> {
        if cfg.out_channels != 1 && cfg.out_channels != 3 {
            return Err(Error::InvalidConfig("generator out_channels must be 1 or 3".into()));
        }
        if cfg.conv_width == 0 || cfg.input_len == 0 {
            return Err(Error::InvalidConfig("generator widths must be positive".into()));
        }
        let fc = Dense::new(cfg.input_len, cfg.height * cfg.width, rng);
        let mut blocks = Vec::with_capacity(CONV_BLOCKS);
        let mut in_ch = 1;
        for _ in 0..CONV_BLOCKS {
            blocks.push(ConvBlock {
                conv: Conv2d::new(in_ch, cfg.conv_width, rng),
                bn: BatchNorm2d::new(cfg.conv_width),
                act: Activation::new(ActKind::Relu),
            });
            in_ch = cfg.conv_width;
        }
        let head = Conv2d::new(cfg.conv_width, cfg.out_channels, rng);
        Ok(Self { cfg, fc, blocks, head })
    }

    /// Replace the affine map's weight matrix (`(H*W) x input_len`),
    /// typically with the adjoint of the initial measurement matrix so the
    /// first image estimate starts as a backprojection instead of noise.
    pub fn warm_start_fc(&mut self, w: Array2<f64>) -> Result<()> {
        if w.dim() != self.fc.w.value.dim() {
            return Err(Error::shape(
                format!("{:?}", self.fc.w.value.dim()),
                format!("{:?}", w.dim()),
            ));
        }
        self.fc.w.value = w;
        Ok(())
    }

    /// Measurements `(B, input_len)` to raw reconstructions
    /// `(B, out_channels, H, W)`.
    pub fn forward(&mut self, measurements: &Array2<f64>, train: bool) -> Result<Array4<f64>> {
        if measurements.ncols() != self.cfg.input_len {
            return Err(Error::shape(
                format!("{} measurements", self.cfg.input_len),
                format!("{}", measurements.ncols()),
            ));
        }
        let b = measurements.nrows();
        let z = self.fc.forward(measurements, train);
        let mut x = z
            .into_shape_with_order((b, 1, self.cfg.height, self.cfg.width))
            .expect("initial estimate reshape");
        for block in &mut self.blocks {
            x = block.conv.forward(&x, train);
            x = block.bn.forward(&x, train);
            x = block.act.forward(&x, train);
        }
        Ok(self.head.forward(&x, train))
    }

    /// Backward from the reconstruction gradient to the measurement gradient.
    pub fn backward(&mut self, gy: &Array4<f64>) -> Array2<f64> {
        let mut g = self.head.backward(gy);
        for block in self.blocks.iter_mut().rev() {
            g = block.act.backward(&g);
            g = block.bn.backward(&g);
            g = block.conv.backward(&g);
        }
        let b = g.dim().0;
        let gz = g
            .into_shape_with_order((b, self.cfg.height * self.cfg.width))
            .expect("flatten grad");
        self.fc.backward(&gz)
    }

    pub fn zero_grad(&mut self) {
        self.fc.zero_grad();
        for block in &mut self.blocks {
            block.conv.zero_grad();
            block.bn.zero_grad();
        }
        self.head.zero_grad();
    }

    pub fn weight_bearing_layers(&self) -> usize {
        1 + self.blocks.len() + 1
    }

    pub fn param_count(&self) -> usize {
        self.fc.param_count()
            + self
                .blocks
                .iter()
                .map(|b| b.conv.param_count() + b.bn.param_count())
                .sum::<usize>()
            + self.head.param_count()
    }

    /// Expected parameter count from the architecture contract.
    pub fn expected_param_count(cfg: &GeneratorConfig) -> usize {
        let hw = cfg.height * cfg.width;
        let w = cfg.conv_width;
        let fc = cfg.input_len * hw + hw;
        let block1 = w * 1 * 9 + w + 2 * w; // conv w+b, bn gamma+beta
        let blockn = w * w * 9 + w + 2 * w;
        let head = cfg.out_channels * w * 9 + cfg.out_channels;
        fc + block1 + (CONV_BLOCKS - 1) * blockn + head
    }

    pub(crate) fn state_arrays(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        out.extend(self.fc.w.state_views("gen.fc.w"));
        out.extend(self.fc.b.state_views("gen.fc.b"));
        for (i, block) in self.blocks.iter_mut().enumerate() {
            out.extend(block.conv.w.state_views(&format!("gen.block{i}.conv.w")));
            out.extend(block.conv.b.state_views(&format!("gen.block{i}.conv.b")));
            out.extend(block.bn.gamma.state_views(&format!("gen.block{i}.bn.gamma")));
            out.extend(block.bn.beta.state_views(&format!("gen.block{i}.bn.beta")));
            out.push((
                format!("gen.block{i}.bn.running_mean"),
                block.bn.running_mean.view_mut().into_dyn(),
            ));
            out.push((
                format!("gen.block{i}.bn.running_var"),
                block.bn.running_var.view_mut().into_dyn(),
            ));
        }
        out.extend(self.head.w.state_views("gen.head.w"));
        out.extend(self.head.b.state_views("gen.head.b"));
        out
    }

    pub(crate) fn apply_adam(&mut self, opt: &super::param::Adam) {
        opt.update(&mut self.fc.w);
        opt.update(&mut self.fc.b);
        for block in &mut self.blocks {
            opt.update(&mut block.conv.w);
            opt.update(&mut block.conv.b);
            opt.update(&mut block.bn.gamma);
            opt.update(&mut block.bn.beta);
        }
        opt.update(&mut self.head.w);
        opt.update(&mut self.head.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_cfg() -> GeneratorConfig {
        GeneratorConfig { input_len: 6, height: 8, width: 8, out_channels: 1, conv_width: 4 }
    }

    #[test]
    fn output_shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut gen = Generator::new(toy_cfg(), &mut rng).unwrap();
        let meas = Array2::from_shape_fn((3, 6), |(i, j)| (i + j) as f64 * 0.1);
        let y = gen.forward(&meas, false).unwrap();
        assert_eq!(y.dim(), (3, 1, 8, 8));
        assert!(gen.forward(&Array2::zeros((1, 5)), false).is_err());
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gen = Generator::new(toy_cfg(), &mut rng).unwrap();
        let meas = Array2::from_shape_fn((2, 6), |(i, j)| (i * 6 + j) as f64 * 0.05);
        let a = gen.forward(&meas, false).unwrap();
        let b = gen.forward(&meas, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_same_network() {
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let mut g1 = Generator::new(toy_cfg(), &mut r1).unwrap();
        let mut g2 = Generator::new(toy_cfg(), &mut r2).unwrap();
        let meas = Array2::from_elem((1, 6), 0.3);
        assert_eq!(g1.forward(&meas, false).unwrap(), g2.forward(&meas, false).unwrap());
    }

    #[test]
    fn seven_weight_bearing_layers_and_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = toy_cfg();
        let gen = Generator::new(cfg, &mut rng).unwrap();
        assert_eq!(gen.weight_bearing_layers(), WEIGHT_BEARING_LAYERS);
        assert_eq!(gen.param_count(), Generator::expected_param_count(&cfg));
        let rgb = GeneratorConfig { out_channels: 3, ..cfg };
        let gen3 = Generator::new(rgb, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(gen3.param_count(), Generator::expected_param_count(&rgb));
    }
}
