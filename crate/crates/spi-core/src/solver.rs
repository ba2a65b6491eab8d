//! Regularized least-squares reconstruction, the non-learned baseline.
//!
//! Solves `argmin ||I - A·O||^2 + reg_weight·||O||^2` by conjugate gradient on
//! the normal equations `(A^T A + reg_weight·Id)·O = A^T I`. The operator is
//! applied as `A^T(A·v)` so the `K x K` normal matrix is never formed.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::imaging::{MaskSet, MeasurementVector, SceneImage};

/// Conjugate-gradient Tikhonov solve. Returns the raw (unclamped) estimate;
/// call [`SceneImage::clamp01`] when a display-ready image is wanted.
pub fn classical_reconstruct(
    masks: &MaskSet,
    measurements: &MeasurementVector,
    reg_weight: f64,
    max_iters: usize,
    tol: f64,
) -> Result<SceneImage> {
    if reg_weight < 0.0 || !reg_weight.is_finite() {
        return Err(Error::NegativeRegWeight { weight: reg_weight });
    }
    if measurements.len() != masks.count() {
        return Err(Error::shape(
            format!("{} measurements", masks.count()),
            format!("{}", measurements.len()),
        ));
    }
    let a = masks.as_matrix();
    let (h, w) = (masks.height(), masks.width());
    let k = h * w;

    let normal_op = |v: &Array1<f64>| -> Array1<f64> {
        let av = a.dot(v);
        let mut out = a.t().dot(&av);
        if reg_weight > 0.0 {
            out.scaled_add(reg_weight, v);
        }
        out
    };

    let b = a.t().dot(&measurements.values);
    let b_norm = b.dot(&b).sqrt();
    let mut x = Array1::<f64>::zeros(k);
    if b_norm == 0.0 {
        // Zero data: the quadratic objective is minimized by the zero scene.
        return Ok(SceneImage::gray_raw(x.into_shape_with_order((h, w)).expect("h x w reshape")));
    }

    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs_old = r.dot(&r);
    let mut converged = false;
    let mut iters = 0;
    for _ in 0..max_iters {
        iters += 1;
        let ap = normal_op(&p);
        let alpha = rs_old / p.dot(&ap);
        if !alpha.is_finite() {
            break;
        }
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        let rs_new = r.dot(&r);
        if rs_new.sqrt() / b_norm < tol {
            converged = true;
            break;
        }
        p = &r + &(p * (rs_new / rs_old));
        rs_old = rs_new;
    }
    if !converged {
        return Err(Error::DidNotConverge { iters, residual: rs_old.sqrt() / b_norm, tol });
    }
    Ok(SceneImage::gray_raw(x.into_shape_with_order((h, w)).expect("h x w reshape")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hadamard::{hadamard_reconstruct_full, walsh_hadamard_masks, HadamardOrdering};
    use crate::imaging::{binarize, forward_measure, MaskSet, NoiseConfig};
    use ndarray::{Array1, Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain Gaussian elimination with partial pivoting; the independent
    /// oracle for the conjugate-gradient path.
    pub(crate) fn dense_solve(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
        let n = b.len();
        let mut m = a.clone();
        let mut rhs = b.clone();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| m[[i, col]].abs().partial_cmp(&m[[j, col]].abs()).unwrap())
                .unwrap();
            if pivot != col {
                for j in 0..n {
                    m.swap([col, j], [pivot, j]);
                }
                rhs.swap(col, pivot);
            }
            for row in col + 1..n {
                let f = m[[row, col]] / m[[col, col]];
                for j in col..n {
                    m[[row, j]] -= f * m[[col, j]];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut x = Array1::zeros(n);
        for row in (0..n).rev() {
            let mut s = rhs[row];
            for j in row + 1..n {
                s -= m[[row, j]] * x[j];
            }
            x[row] = s / m[[row, row]];
        }
        x
    }

    #[test]
    fn matches_hadamard_closed_form_on_full_rank_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let order = 4;
        let masks = walsh_hadamard_masks(order, order, HadamardOrdering::Natural).unwrap();
        let scene = SceneImage::gray(Array2::from_shape_fn((2, 2), |_| rng.random())).unwrap();
        let meas = forward_measure(&scene, &masks, NoiseConfig::none()).unwrap();
        let direct = hadamard_reconstruct_full(&meas, order, HadamardOrdering::Natural).unwrap();
        let cg = classical_reconstruct(&masks, &meas, 0.0, 100, 1e-12).unwrap();
        for (a, b) in cg.pixels().iter().zip(direct.pixels().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn underdetermined_ridge_splits_evenly() {
        let masks = MaskSet::new(Array3::from_elem((1, 1, 2), 1.0)).unwrap();
        let meas = MeasurementVector { values: ndarray::arr1(&[1.0]), noise_sigma: 0.0 };
        let o = classical_reconstruct(&masks, &meas, 1e-6, 100, 1e-10).unwrap();
        assert!((o.pixels()[[0, 0, 0]] - 0.5).abs() < 1e-3);
        assert!((o.pixels()[[0, 1, 0]] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn zero_measurements_give_zero_scene() {
        let masks = walsh_hadamard_masks(16, 16, HadamardOrdering::Sequency).unwrap();
        let meas = MeasurementVector { values: Array1::zeros(16), noise_sigma: 0.0 };
        let o = classical_reconstruct(&masks, &meas, 0.1, 50, 1e-10).unwrap();
        assert!(o.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn agrees_with_dense_solve_on_random_square_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // ±1 random masks; retry until the system is well-conditioned enough
        // for the oracle comparison to be meaningful.
        for attempt in 0.. {
            let weights = Array3::from_shape_fn((9, 3, 3), |_| rng.random::<f64>() - 0.5);
            let masks = MaskSet::new(binarize(&weights).unwrap()).unwrap();
            let a = masks.as_matrix();
            let scene = SceneImage::gray(Array2::from_shape_fn((3, 3), |_| rng.random())).unwrap();
            let meas = forward_measure(&scene, &masks, NoiseConfig::none()).unwrap();

            let lambda = 1e-10;
            let mut normal = a.t().dot(&a);
            for i in 0..9 {
                normal[[i, i]] += lambda;
            }
            let rhs = a.t().dot(&meas.values);
            let reference = dense_solve(&normal, &rhs);
            if !reference.iter().all(|v| v.is_finite() && v.abs() < 1e3) {
                assert!(attempt < 20, "could not draw a usable system");
                continue;
            }
            let cg = classical_reconstruct(&masks, &meas, lambda, 500, 1e-12).unwrap();
            let flat: Vec<f64> = cg.pixels().iter().copied().collect();
            for (x, y) in flat.iter().zip(reference.iter()) {
                assert!((x - y).abs() < 1e-5, "cg {x} vs dense {y}");
            }
            break;
        }
    }

    #[test]
    fn rejects_negative_regularization_and_reports_non_convergence() {
        let masks = walsh_hadamard_masks(16, 16, HadamardOrdering::Natural).unwrap();
        let meas = MeasurementVector { values: Array1::from_elem(16, 1.0), noise_sigma: 0.0 };
        assert!(classical_reconstruct(&masks, &meas, -1.0, 10, 1e-10).is_err());
        let err = classical_reconstruct(&masks, &meas, 0.0, 0, 1e-14).unwrap_err();
        assert!(matches!(err, Error::DidNotConverge { .. }), "got {err}");
    }
}
