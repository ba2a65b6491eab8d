//! Mask export for DMD upload.
//!
//! Each ±1 mask becomes a pair of {0,255} PGM images (the positive and
//! negative patterns from [`decompose_mask`]) plus a JSON manifest describing
//! the set. Subtracting the two pattern measurements reproduces the ±1
//! measurement, which is how the hardware realizes signed masks.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{decompose_mask, MaskSet};
use crate::pgm;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MaskManifest {
    pub sr: f64,
    pub width: usize,
    pub height: usize,
    pub count: usize,
    /// "natural", "sequency", or "learned".
    pub ordering: String,
    pub seed: u64,
    pub files: Vec<MaskFilePair>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MaskFilePair {
    pub index: usize,
    pub pos: String,
    pub neg: String,
}

pub const MANIFEST_NAME: &str = "masks.json";

/// Write `2·count` PGM pattern files plus the manifest into `dir`.
pub fn export_masks(
    masks: &MaskSet,
    sr: f64,
    ordering: &str,
    seed: u64,
    dir: &Path,
) -> Result<MaskManifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(masks.count());
    for (i, mask) in masks.masks().axis_iter(Axis(0)).enumerate() {
        let (pos, neg) = decompose_mask(&mask)?;
        let pos_name = format!("mask_{i:05}_pos.pgm");
        let neg_name = format!("mask_{i:05}_neg.pgm");
        pgm::write_pgm(&dir.join(&pos_name), &to_pattern(&pos))?;
        pgm::write_pgm(&dir.join(&neg_name), &to_pattern(&neg))?;
        files.push(MaskFilePair { index: i, pos: pos_name, neg: neg_name });
    }
    let manifest = MaskManifest {
        sr,
        width: masks.width(),
        height: masks.height(),
        count: masks.count(),
        ordering: ordering.to_string(),
        seed,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_NAME), json)?;
    Ok(manifest)
}

/// Read an exported directory back into a ±1 mask set (`pos - neg`).
pub fn import_masks(dir: &Path) -> Result<(MaskSet, MaskManifest)> {
    let json = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let manifest: MaskManifest = serde_json::from_str(&json)?;
    let mut masks = Array3::zeros((manifest.count, manifest.height, manifest.width));
    for pair in &manifest.files {
        let pos = from_pattern(&pgm::read_pgm(&dir.join(&pair.pos))?)?;
        let neg = from_pattern(&pgm::read_pgm(&dir.join(&pair.neg))?)?;
        masks.index_axis_mut(Axis(0), pair.index).assign(&(&pos - &neg));
    }
    Ok((MaskSet::new(masks)?, manifest))
}

fn to_pattern(zero_one: &Array2<f64>) -> Array2<u8> {
    zero_one.mapv(|v| if v > 0.5 { 255u8 } else { 0u8 })
}

fn from_pattern(img: &Array2<u8>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(img.dim());
    for (o, &v) in out.iter_mut().zip(img.iter()) {
        *o = match v {
            0 => 0.0,
            255 => 1.0,
            other => return Err(Error::Format(format!("pattern pixel {other} is not 0 or 255"))),
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::binarize;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn export_import_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let weights = Array3::from_shape_fn((7, 6, 6), |_| rng.random::<f64>() - 0.5);
        let masks = MaskSet::new(binarize(&weights).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_masks(&masks, 0.1, "learned", 9, dir.path()).unwrap();
        assert_eq!(manifest.files.len(), 7);

        let (imported, manifest2) = import_masks(dir.path()).unwrap();
        assert_eq!(manifest, manifest2);
        assert_eq!(imported.masks(), masks.masks());
    }

    #[test]
    fn pattern_pixels_are_binary() {
        let masks = MaskSet::new(Array3::from_elem((1, 2, 2), -1.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_masks(&masks, 1.0, "natural", 0, dir.path()).unwrap();
        let pos = pgm::read_pgm(&dir.path().join("mask_00000_pos.pgm")).unwrap();
        let neg = pgm::read_pgm(&dir.path().join("mask_00000_neg.pgm")).unwrap();
        assert!(pos.iter().all(|&v| v == 0));
        assert!(neg.iter().all(|&v| v == 255));
    }
}
