//! SR-sweep and GAN-stability probe for desk-scale configs.

use spi_core::data::{split, synth_shapes};
use spi_core::train::{train, TrainConfig};

fn recipe(sr: f64, seed: u64, epochs: usize, use_gan: bool) -> TrainConfig {
    TrainConfig {
        sr,
        image_size: 32,
        epochs,
        batch_size: 8,
        lr_gen: 3e-3,
        use_gan,
        gen_width: 16,
        disc_width: 8,
        disc_fc_hidden: 64,
        perceptual_layer: (1, 1),
        perceptual_width: 2,
        seed,
        ..TrainConfig::default()
    }
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "sr".into());
    let scenes = synth_shapes(450, 32, 42).unwrap();
    let (train_scenes, val_scenes) = split(scenes, 0.9, 42).unwrap();

    if mode == "sr" {
        for sr in [0.1, 0.05] {
            let mut mean_over_seeds = 0.0;
            for seed in [1u64] {
                let t0 = std::time::Instant::now();
                let out = train(&recipe(sr, seed, 40, false), &train_scenes, &val_scenes).unwrap();
                let p = out.best.history.iter().map(|h| h.val_psnr).fold(f64::MIN, f64::max);
                let last = out.last.history.last().unwrap().val_psnr;
                println!("sr {sr} seed {seed}: best {p:.2} last {last:.2} dB ({:?})", t0.elapsed());
                mean_over_seeds += last;
            }
            println!("sr {sr}: mean last {:.2} dB", mean_over_seeds / 3.0);
        }
    } else {
        // gan stability: warmup 4 + 10 epochs
        let t0 = std::time::Instant::now();
        let non_gan = train(&recipe(0.1, 7, 14, false), &train_scenes, &val_scenes).unwrap();
        let with_gan = train(&recipe(0.1, 7, 14, true), &train_scenes, &val_scenes).unwrap();
        let p_non = non_gan.last.history.last().unwrap().val_psnr;
        let p_gan = with_gan.last.history.last().unwrap().val_psnr;
        println!("non-gan {p_non:.2} dB, gan {p_gan:.2} dB ({:?})", t0.elapsed());
        for h in &with_gan.last.history {
            println!(
                "epoch {:2} mse {:.5} adv {:.4} d_loss {:.4} val {:.2}",
                h.epoch, h.mse, h.adv, h.d_loss, h.val_psnr
            );
        }
    }
}
