//! Quick training-trajectory probe for tuning desk-scale configs.

use spi_core::data::{split, synth_shapes};
use spi_core::train::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr_gen: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let lr_mask: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-5);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(30);
    let count: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(200);
    let width: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(16);

    let scenes = synth_shapes(count, 32, 11).unwrap();
    let (train_scenes, val_scenes) = split(scenes, 0.9, 11).unwrap();

    let mut mean = ndarray::Array3::<f64>::zeros(train_scenes[0].pixels().raw_dim());
    for s in &train_scenes {
        mean += s.pixels();
    }
    mean /= train_scenes.len() as f64;
    let mut acc = 0.0;
    for s in &val_scenes {
        let mse = (s.pixels() - &mean).mapv(|v| v * v).sum() / mean.len() as f64;
        acc += spi_core::metrics::psnr_from_mse(mse, 1.0);
    }
    println!("mean-predictor: {:.2} dB", acc / val_scenes.len() as f64);

    // ridge oracle: best linear map measurements -> pixels fit on train
    {
        use ndarray::{Array1, Array2};
        let mut layer = spi_core::nn::init_mask_layer(
            spi_core::sampling_count(args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.1), 32, 32).unwrap(),
            32,
            32,
            5,
        )
        .unwrap();
        let m = layer.measurement_count();
        let k = 1024usize;
        let n = train_scenes.len();
        let mut x = Array2::zeros((n, m));
        let mut y = Array2::zeros((n, k));
        for (i, s) in train_scenes.iter().enumerate() {
            let flat = s.pixels().clone().into_shape_with_order((1, 1, k)).unwrap();
            let meas = layer.forward(&flat, false).unwrap();
            x.row_mut(i).assign(&meas.row(0));
            y.row_mut(i).assign(&flat.into_shape_with_order(k).unwrap());
        }
        // center + ridge
        let x_mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let y_mean = y.mean_axis(ndarray::Axis(0)).unwrap();
        let xc = &x - &x_mean;
        let yc = &y - &y_mean;
        let mut gram = xc.t().dot(&xc);
        for i in 0..m {
            gram[[i, i]] += 1e-3 * gram[[i, i]].max(1.0);
        }
        let rhs = xc.t().dot(&yc); // m x k
        // solve gram * W = rhs column-wise with Gaussian elimination
        let mut a = gram.clone();
        let mut b = rhs.clone();
        for col in 0..m {
            let piv = (col..m).max_by(|&i, &j| a[[i, col]].abs().partial_cmp(&a[[j, col]].abs()).unwrap()).unwrap();
            if piv != col {
                for j in 0..m { a.swap([col, j], [piv, j]); }
                for j in 0..k { b.swap([col, j], [piv, j]); }
            }
            for row in col + 1..m {
                let f = a[[row, col]] / a[[col, col]];
                for j in col..m { a[[row, j]] -= f * a[[col, j]]; }
                for j in 0..k { b[[row, j]] -= f * b[[col, j]]; }
            }
        }
        let mut w = Array2::zeros((m, k));
        for row in (0..m).rev() {
            for j in 0..k {
                let mut s = b[[row, j]];
                for r2 in row + 1..m {
                    s -= a[[row, r2]] * w[[r2, j]];
                }
                w[[row, j]] = s / a[[row, row]];
            }
        }
        let mut acc = 0.0;
        for s in &val_scenes {
            let flat = s.pixels().clone().into_shape_with_order((1, 1, k)).unwrap();
            let meas = layer.forward(&flat, false).unwrap();
            let pred: Array1<f64> = (&meas.row(0).to_owned() - &x_mean).dot(&w) + &y_mean;
            let pred = pred.mapv(|v| v.clamp(0.0, 1.0));
            let truth = flat.into_shape_with_order(k).unwrap();
            let mse = (&pred - &truth).mapv(|v| v * v).sum() / k as f64;
            acc += spi_core::metrics::psnr_from_mse(mse, 1.0);
        }
        println!("ridge-linear oracle: {:.2} dB", acc / val_scenes.len() as f64);
    }

    let cfg = TrainConfig {
        sr: 0.1,
        image_size: 32,
        epochs,
        batch_size: args.get(6).and_then(|s| s.parse().ok()).unwrap_or(32),
        use_gan: false,
        gen_width: width,
        lr_gen,
        lr_mask,
        perceptual_layer: (2, 2),
        perceptual_width: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let out = train(&cfg, &train_scenes, &val_scenes).unwrap();
    for h in &out.last.history {
        println!(
            "epoch {:3}  mse {:.5}  vgg {:.5}  val_psnr {:.2}",
            h.epoch, h.mse, h.vgg, h.val_psnr
        );
    }
    println!("wall: {:?}", t0.elapsed());
}
