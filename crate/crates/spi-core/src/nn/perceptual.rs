//! Frozen feature extractor for the perceptual loss.
//!
//! Follows the VGG-19 convolutional layout: five blocks of [2, 2, 4, 4, 4]
//! 3x3 conv+ReLU layers with 2x2 max pooling between blocks, channel widths
//! [w, 2w, 4w, 8w, 8w]. Features are taken after the ReLU of a configurable
//! (block, conv) position. Weights are seeded He-normal and never trained;
//! pretrained weights are an external asset this artifact does not bundle.
//! An identity variant exists for cross-checking the loss against plain MSE.

use ndarray::{Array4, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{ActKind, Activation, Conv2d, MaxPool2d};
use crate::error::{Error, Result};

pub const BLOCK_CONVS: [usize; 5] = [2, 2, 4, 4, 4];
pub const BLOCK_WIDTH_FACTORS: [usize; 5] = [1, 2, 4, 8, 8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptualConfig {
    /// 1-indexed (block, conv) feature position; (5, 4) is the usual choice.
    pub layer: (usize, usize),
    /// Width of the first block; later blocks scale by [1, 2, 4, 8, 8].
    pub base_width: usize,
    pub seed: u64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self { layer: (5, 4), base_width: 64, seed: 0 }
    }
}

#[derive(Debug, Clone)]
enum Stage {
    Conv(Conv2d, Activation<Ix4>),
    Pool(MaxPool2d),
}

#[derive(Debug, Clone)]
pub enum PerceptualExtractor {
    /// Passes the input through unchanged; makes the perceptual loss collapse
    /// to pixel MSE (up to channel replication), which tests exploit.
    Identity,
    Vgg(VggFeatures),
}

#[derive(Debug, Clone)]
pub struct VggFeatures {
    pub cfg: PerceptualConfig,
    stages: Vec<Stage>,
    /// Pools applied before the feature layer; constrains input sizes.
    depth_pools: usize,
}

impl PerceptualExtractor {
    pub fn identity() -> Self {
        PerceptualExtractor::Identity
    }

    pub fn vgg(cfg: PerceptualConfig) -> Result<Self> {
        let (bi, cj) = cfg.layer;
        if !(1..=5).contains(&bi) || cj < 1 || cj > BLOCK_CONVS[bi - 1] {
            return Err(Error::InvalidConfig(format!(
                "perceptual layer ({bi},{cj}) outside the [2,2,4,4,4] conv layout"
            )));
        }
        if cfg.base_width == 0 {
            return Err(Error::InvalidConfig("perceptual base_width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut stages = Vec::new();
        let mut in_ch = 3;
        'blocks: for (b, &n_convs) in BLOCK_CONVS.iter().enumerate() {
            let width = cfg.base_width * BLOCK_WIDTH_FACTORS[b];
            for c in 0..n_convs {
                stages.push(Stage::Conv(
                    Conv2d::new(in_ch, width, &mut rng),
                    Activation::new(ActKind::Relu),
                ));
                in_ch = width;
                if b + 1 == bi && c + 1 == cj {
                    break 'blocks;
                }
            }
            stages.push(Stage::Pool(MaxPool2d::new()));
        }
        Ok(PerceptualExtractor::Vgg(VggFeatures { cfg, stages, depth_pools: bi - 1 }))
    }

    /// Feature maps for a `(B, 3, H, W)` batch. Set `cache` when a
    /// [`Self::backward_input`] call will follow (the reconstruction branch);
    /// the reference branch runs cache-free.
    pub fn forward(&mut self, x: &Array4<f64>, cache: bool) -> Result<Array4<f64>> {
        match self {
            PerceptualExtractor::Identity => Ok(x.clone()),
            PerceptualExtractor::Vgg(v) => {
                let (_, c, h, w) = x.dim();
                if c != 3 {
                    return Err(Error::shape("3 input channels", format!("{c}")));
                }
                let div = 1usize << v.depth_pools;
                if h % div != 0 || w % div != 0 || h / div == 0 || w / div == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "input {h}x{w} incompatible with {} pooling stages",
                        v.depth_pools
                    )));
                }
                let mut out = x.clone();
                for stage in &mut v.stages {
                    out = match stage {
                        Stage::Conv(conv, act) => {
                            let y = conv.forward(&out, cache);
                            act.forward(&y, cache)
                        }
                        Stage::Pool(pool) => pool.forward(&out, cache),
                    };
                }
                Ok(out)
            }
        }
    }

    /// Gradient of the cached forward pass w.r.t. its input. Conv weights are
    /// frozen, so only the input gradient is formed.
    pub fn backward_input(&mut self, gfeat: &Array4<f64>) -> Array4<f64> {
        match self {
            PerceptualExtractor::Identity => gfeat.clone(),
            PerceptualExtractor::Vgg(v) => {
                let mut g = gfeat.clone();
                for stage in v.stages.iter_mut().rev() {
                    g = match stage {
                        Stage::Conv(conv, act) => {
                            let ga = act.backward(&g);
                            conv.backward_impl(&ga, true)
                        }
                        Stage::Pool(pool) => pool.backward(&g),
                    };
                }
                g
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, PerceptualExtractor::Identity)
    }
}
