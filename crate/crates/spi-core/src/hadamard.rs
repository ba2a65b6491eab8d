//! Walsh–Hadamard sampling masks and the exact SR=1 inverse.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{MaskSet, MeasurementVector, SceneImage};

/// Row ordering of the Hadamard matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HadamardOrdering {
    /// Sylvester construction order.
    Natural,
    /// Rows sorted by sign-change count ascending (Walsh order).
    Sequency,
}

/// Sylvester-constructed Hadamard matrix of a power-of-two order.
pub fn hadamard_matrix(order: usize) -> Result<Array2<f64>> {
    if order == 0 || !order.is_power_of_two() {
        return Err(Error::NotPowerOfTwo { order });
    }
    let mut h = Array2::from_elem((1, 1), 1.0);
    let mut n = 1;
    while n < order {
        let mut next = Array2::zeros((2 * n, 2 * n));
        for i in 0..n {
            for j in 0..n {
                let v = h[[i, j]];
                next[[i, j]] = v;
                next[[i, j + n]] = v;
                next[[i + n, j]] = v;
                next[[i + n, j + n]] = -v;
            }
        }
        h = next;
        n *= 2;
    }
    Ok(h)
}

fn sign_changes(row: &[f64]) -> usize {
    row.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Row permutation that sorts by sign-change count ascending.
pub fn sequency_permutation(h: &Array2<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..h.nrows()).collect();
    idx.sort_by_key(|&i| sign_changes(h.row(i).as_slice().expect("contiguous row")));
    idx
}

fn ordered_matrix(order: usize, ordering: HadamardOrdering) -> Result<Array2<f64>> {
    let h = hadamard_matrix(order)?;
    Ok(match ordering {
        HadamardOrdering::Natural => h,
        HadamardOrdering::Sequency => {
            let perm = sequency_permutation(&h);
            let mut out = Array2::zeros(h.dim());
            for (dst, &src) in perm.iter().enumerate() {
                out.row_mut(dst).assign(&h.row(src));
            }
            out
        }
    })
}

/// Side length the rows reshape to: `sqrt(order)` when the order is an even
/// power of two, otherwise the masks stay as `1 x order` vectors.
fn mask_shape(order: usize) -> (usize, usize) {
    let log2 = order.trailing_zeros();
    if log2 % 2 == 0 {
        let side = 1usize << (log2 / 2);
        (side, side)
    } else {
        (1, order)
    }
}

/// The first `count` rows of the Hadamard matrix as a ±1 mask set.
pub fn walsh_hadamard_masks(order: usize, count: usize, ordering: HadamardOrdering) -> Result<MaskSet> {
    if count > order {
        return Err(Error::CountExceedsOrder { count, order });
    }
    let h = ordered_matrix(order, ordering)?;
    let (mh, mw) = mask_shape(order);
    let rows = h.slice(ndarray::s![..count, ..]).to_owned();
    let masks = rows.into_shape_with_order((count, mh, mw)).expect("count x h x w reshape");
    MaskSet::new(masks)
}

/// Closed-form inverse for measurements taken with all `order` Hadamard masks:
/// `O = H^T · I / order`, exact in the noiseless case since `H·H^T = order·Id`.
pub fn hadamard_reconstruct_full(
    measurements: &MeasurementVector,
    order: usize,
    ordering: HadamardOrdering,
) -> Result<SceneImage> {
    if measurements.len() != order {
        return Err(Error::shape(format!("{order} measurements"), format!("{}", measurements.len())));
    }
    let h = ordered_matrix(order, ordering)?;
    let flat: Array1<f64> = h.t().dot(&measurements.values) / order as f64;
    let (mh, mw) = mask_shape(order);
    let pixels = flat.into_shape_with_order((mh, mw)).expect("scene reshape");
    Ok(SceneImage::gray_raw(pixels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{forward_measure, NoiseConfig};
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sylvester_base_case() {
        let h = hadamard_matrix(2).unwrap();
        assert_eq!(h, arr2(&[[1.0, 1.0], [1.0, -1.0]]));
    }

    #[test]
    fn order_4_sequency_permutation() {
        let h = hadamard_matrix(4).unwrap();
        let counts: Vec<usize> = (0..4)
            .map(|i| sign_changes(h.row(i).as_slice().unwrap()))
            .collect();
        assert_eq!(counts, vec![0, 3, 1, 2]);
        assert_eq!(sequency_permutation(&h), vec![0, 2, 3, 1]);
    }

    #[test]
    fn rows_are_orthogonal() {
        for order in [2usize, 4, 16, 64] {
            for ordering in [HadamardOrdering::Natural, HadamardOrdering::Sequency] {
                let h = ordered_matrix(order, ordering).unwrap();
                let gram = h.dot(&h.t());
                for i in 0..order {
                    for j in 0..order {
                        let expected = if i == j { order as f64 } else { 0.0 };
                        assert_eq!(gram[[i, j]], expected);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two_and_excess_count() {
        assert!(walsh_hadamard_masks(12, 4, HadamardOrdering::Natural).is_err());
        assert!(walsh_hadamard_masks(0, 0, HadamardOrdering::Natural).is_err());
        assert!(walsh_hadamard_masks(16, 17, HadamardOrdering::Natural).is_err());
    }

    #[test]
    fn odd_power_masks_are_row_vectors() {
        let masks = walsh_hadamard_masks(8, 8, HadamardOrdering::Natural).unwrap();
        assert_eq!((masks.height(), masks.width()), (1, 8));
        let masks = walsh_hadamard_masks(16, 16, HadamardOrdering::Natural).unwrap();
        assert_eq!((masks.height(), masks.width()), (4, 4));
    }

    #[test]
    fn round_trip_recovers_random_scene() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let order = 16;
        let masks = walsh_hadamard_masks(order, order, HadamardOrdering::Sequency).unwrap();
        let scene = SceneImage::gray(ndarray::Array2::from_shape_fn((4, 4), |_| rng.random())).unwrap();
        let meas = forward_measure(&scene, &masks, NoiseConfig::none()).unwrap();
        let recon = hadamard_reconstruct_full(&meas, order, HadamardOrdering::Sequency).unwrap();
        let err = (&recon.pixels().clone() - scene.pixels())
            .iter()
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-9, "max abs error {err}");
    }

    #[test]
    fn constant_scene_concentrates_in_zero_sequency() {
        let order = 16;
        let c = 0.37;
        let masks = walsh_hadamard_masks(order, order, HadamardOrdering::Sequency).unwrap();
        let scene = SceneImage::gray(ndarray::Array2::from_elem((4, 4), c)).unwrap();
        let meas = forward_measure(&scene, &masks, NoiseConfig::none()).unwrap();
        assert!((meas.values[0] - c * order as f64).abs() < 1e-12);
        for m in 1..order {
            assert!(meas.values[m].abs() < 1e-12);
        }
        let recon = hadamard_reconstruct_full(&meas, order, HadamardOrdering::Sequency).unwrap();
        for v in recon.pixels().iter() {
            assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_scene_reconstructs_to_zero() {
        let order = 16;
        let masks = walsh_hadamard_masks(order, order, HadamardOrdering::Natural).unwrap();
        let scene = SceneImage::gray(ndarray::Array2::zeros((4, 4))).unwrap();
        let meas = forward_measure(&scene, &masks, NoiseConfig::none()).unwrap();
        let recon = hadamard_reconstruct_full(&meas, order, HadamardOrdering::Natural).unwrap();
        assert!(recon.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruct_rejects_length_mismatch() {
        let meas = MeasurementVector { values: ndarray::Array1::zeros(8), noise_sigma: 0.0 };
        assert!(hadamard_reconstruct_full(&meas, 16, HadamardOrdering::Natural).is_err());
    }
}
