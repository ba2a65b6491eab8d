//! Dataset ingestion and preprocessing: STL-10 binary records, bicubic
//! resizing, luma grayscale conversion, deterministic splits, and a seeded
//! synthetic-shapes dataset for desk-scale runs.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::SceneImage;
use crate::pgm;

/// One raw 8-bit RGB image, `H x W x 3`.
pub type RawImage = Array3<u8>;

pub const STL10_SIDE: usize = 96;
pub const STL10_RECORD_BYTES: usize = STL10_SIDE * STL10_SIDE * 3;

/// Where training scenes come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    /// Seeded procedural shapes, no files needed.
    Synthetic,
    /// An STL-10 binary file (e.g. `unlabeled_X.bin`), read as-is.
    Stl10Binary(PathBuf),
}

impl std::fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetSource::Synthetic => write!(f, "synthetic"),
            DatasetSource::Stl10Binary(p) => write!(f, "stl10:{}", p.display()),
        }
    }
}

impl std::str::FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "synthetic" {
            Ok(DatasetSource::Synthetic)
        } else if let Some(path) = s.strip_prefix("stl10:") {
            Ok(DatasetSource::Stl10Binary(PathBuf::from(path)))
        } else {
            Err(Error::InvalidConfig(format!(
                "unknown dataset source '{s}' (expected 'synthetic' or 'stl10:<path>')"
            )))
        }
    }
}

impl Serialize for DatasetSource {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DatasetSource {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    /// Target side length after preprocessing.
    pub image_size: usize,
    pub grayscale: bool,
    /// Train fraction of the split.
    pub split_ratio: f64,
    pub seed: u64,
    /// Number of images to generate when the source is synthetic.
    pub synth_count: usize,
    /// Optional cap on loaded images (useful for desk-scale STL-10 runs).
    pub max_images: Option<usize>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: DatasetSource::Synthetic,
            image_size: 128,
            grayscale: true,
            split_ratio: 0.9,
            seed: 0,
            synth_count: 500,
            max_images: None,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split_ratio must lie in (0,1), got {}",
                self.split_ratio
            )));
        }
        if self.image_size < 16 {
            return Err(Error::InvalidConfig(format!(
                "image_size must be at least 16, got {}",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// Decode an STL-10 binary file: fixed 27648-byte records, three 96x96
/// channel planes (R, G, B), each stored column-major.
pub fn load_stl10(path: &Path) -> Result<Vec<RawImage>> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() {
        return Err(Error::EmptyDataset { context: format!("{}", path.display()) });
    }
    if bytes.len() % STL10_RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a multiple of the {}-byte record",
            path.display(),
            bytes.len(),
            STL10_RECORD_BYTES
        )));
    }
    let n = bytes.len() / STL10_RECORD_BYTES;
    let mut images = Vec::with_capacity(n);
    let plane = STL10_SIDE * STL10_SIDE;
    for rec in 0..n {
        let base = rec * STL10_RECORD_BYTES;
        let mut img = Array3::zeros((STL10_SIDE, STL10_SIDE, 3));
        for c in 0..3 {
            let data = &bytes[base + c * plane..base + (c + 1) * plane];
            // column-major: consecutive bytes walk down one column
            for (k, &v) in data.iter().enumerate() {
                let col = k / STL10_SIDE;
                let row = k % STL10_SIDE;
                img[[row, col, c]] = v;
            }
        }
        images.push(img);
    }
    Ok(images)
}

/// Catmull-Rom cubic kernel (the classic a = -0.5 bicubic).
fn cubic_kernel(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x < 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic resample of one plane to `out_h x out_w` with edge clamping.
fn resize_plane(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.clone();
    }
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    let mut out = Array2::zeros((out_h, out_w));
    for oy in 0..out_h {
        let sy = (oy as f64 + 0.5) * scale_y - 0.5;
        let y0 = sy.floor() as isize;
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = (ox as f64 + 0.5) * scale_x - 0.5;
            let x0 = sx.floor() as isize;
            let fx = sx - x0 as f64;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for ky in -1..=2isize {
                let wy = cubic_kernel(ky as f64 - fy);
                let iy = (y0 + ky).clamp(0, h as isize - 1) as usize;
                for kx in -1..=2isize {
                    let wx = cubic_kernel(kx as f64 - fx);
                    let ix = (x0 + kx).clamp(0, w as isize - 1) as usize;
                    acc += wy * wx * src[[iy, ix]];
                    wsum += wy * wx;
                }
            }
            out[[oy, ox]] = acc / wsum;
        }
    }
    out
}

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Resize to `image_size` (bicubic), optionally convert to grayscale via
/// luma weights, and scale into `[0, 1]`.
pub fn preprocess(images: &[RawImage], spec: &DatasetSpec) -> Result<Vec<SceneImage>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        let (h, w, c) = img.dim();
        if h == 0 || w == 0 {
            return Err(Error::EmptyDataset { context: "zero-sized input image".into() });
        }
        if c != 3 {
            return Err(Error::shape("H x W x 3 raw image", format!("{:?}", img.dim())));
        }
        let s = spec.image_size;
        let mut channels = Vec::with_capacity(3);
        for ch in 0..3 {
            let plane = img.index_axis(Axis(2), ch).mapv(|v| v as f64 / 255.0);
            let resized = resize_plane(&plane, s, s).mapv(|v| v.clamp(0.0, 1.0));
            channels.push(resized);
        }
        if spec.grayscale {
            let mut gray = Array2::zeros((s, s));
            for (ch, plane) in channels.iter().enumerate() {
                gray.scaled_add(LUMA_WEIGHTS[ch], plane);
            }
            gray.mapv_inplace(|v| v.clamp(0.0, 1.0));
            out.push(SceneImage::gray(gray)?);
        } else {
            let mut rgbv = Array3::zeros((s, s, 3));
            for (ch, plane) in channels.iter().enumerate() {
                rgbv.index_axis_mut(Axis(2), ch).assign(plane);
            }
            out.push(SceneImage::rgb(rgbv)?);
        }
    }
    Ok(out)
}

/// Seeded shuffle, then partition at `floor(ratio * N)`.
pub fn split(
    scenes: Vec<SceneImage>,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<SceneImage>, Vec<SceneImage>)> {
    if scenes.is_empty() {
        return Err(Error::EmptyDataset { context: "split input".into() });
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio must lie in (0,1), got {ratio}")));
    }
    let n = scenes.len();
    let cut = (ratio * n as f64).floor() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut slots: Vec<Option<SceneImage>> = scenes.into_iter().map(Some).collect();
    let mut train = Vec::with_capacity(cut);
    let mut val = Vec::with_capacity(n - cut);
    for (pos, &idx) in indices.iter().enumerate() {
        let scene = slots[idx].take().expect("each index visited once");
        if pos < cut {
            train.push(scene);
        } else {
            val.push(scene);
        }
    }
    Ok((train, val))
}

// ---------------------------------------------------------------------------
// Synthetic shapes
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum ShapeKind {
    Rectangle,
    Ellipse,
    Bar,
}

/// Anti-aliased coverage from a signed distance (in pixels).
fn coverage(signed_dist: f64) -> f64 {
    (0.5 - signed_dist).clamp(0.0, 1.0)
}

fn paint_shape<R: Rng>(img: &mut Array2<f64>, rng: &mut R) {
    let size = img.nrows() as f64;
    let kind = match rng.random_range(0..3u32) {
        0 => ShapeKind::Rectangle,
        1 => ShapeKind::Ellipse,
        _ => ShapeKind::Bar,
    };
    let cx = rng.random_range(0.15 * size..0.85 * size);
    let cy = rng.random_range(0.15 * size..0.85 * size);
    let intensity: f64 = rng.random_range(0.0..1.0);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (half_w, half_h) = match kind {
        ShapeKind::Rectangle => {
            (rng.random_range(0.08 * size..0.3 * size), rng.random_range(0.08 * size..0.3 * size))
        }
        ShapeKind::Ellipse => {
            (rng.random_range(0.08 * size..0.3 * size), rng.random_range(0.08 * size..0.3 * size))
        }
        ShapeKind::Bar => {
            (rng.random_range(0.2 * size..0.45 * size), rng.random_range(0.02 * size..0.08 * size))
        }
    };
    let (sin, cos) = angle.sin_cos();
    let (h, w) = img.dim();
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // rotate into the shape frame
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            let d = match kind {
                ShapeKind::Rectangle | ShapeKind::Bar => {
                    let ddx = u.abs() - half_w;
                    let ddy = v.abs() - half_h;
                    ddx.max(ddy)
                }
                ShapeKind::Ellipse => {
                    // approximate signed distance, good enough for AA
                    let r = ((u / half_w).powi(2) + (v / half_h).powi(2)).sqrt();
                    (r - 1.0) * half_w.min(half_h)
                }
            };
            let cov = coverage(d);
            if cov > 0.0 {
                img[[y, x]] = img[[y, x]] * (1.0 - cov) + intensity * cov;
            }
        }
    }
}

fn graded_background<R: Rng>(size: usize, rng: &mut R) -> Array2<f64> {
    let lo: f64 = rng.random_range(0.05..0.35);
    // keep a visible gradient so every image has nonzero variance
    let hi: f64 = lo + rng.random_range(0.08..0.3);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (sin, cos) = angle.sin_cos();
    let denom = (size as f64 - 1.0).max(1.0);
    Array2::from_shape_fn((size, size), |(y, x)| {
        let t = (x as f64 * cos + y as f64 * sin) / (denom * (cos.abs() + sin.abs()).max(1e-9));
        let t = (t + 1.0) / 2.0; // into [0,1] regardless of direction
        (lo + (hi - lo) * t.clamp(0.0, 1.0)).clamp(0.0, 1.0)
    })
}

fn synth_one<R: Rng>(size: usize, rng: &mut R) -> Array2<f64> {
    let mut img = graded_background(size, rng);
    let n_shapes = rng.random_range(2..=5u32);
    for _ in 0..n_shapes {
        paint_shape(&mut img, rng);
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// Seeded random compositions of rectangles, ellipses, and bars on graded
/// backgrounds; values in `[0, 1]`.
pub fn synth_shapes(count: usize, size: usize, seed: u64) -> Result<Vec<SceneImage>> {
    if count < 1 {
        return Err(Error::EmptyDataset { context: "synthetic dataset count".into() });
    }
    if size < 16 {
        return Err(Error::InvalidConfig(format!("synthetic size must be at least 16, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| SceneImage::gray(synth_one(size, &mut rng))).collect()
}

/// RGB variant: the same composition process per image with per-channel
/// shape intensities (shared geometry, colored fills).
pub fn synth_shapes_rgb(count: usize, size: usize, seed: u64) -> Result<Vec<SceneImage>> {
    if count < 1 {
        return Err(Error::EmptyDataset { context: "synthetic dataset count".into() });
    }
    if size < 16 {
        return Err(Error::InvalidConfig(format!("synthetic size must be at least 16, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pixels = Array3::zeros((size, size, 3));
        for c in 0..3 {
            pixels.index_axis_mut(Axis(2), c).assign(&synth_one(size, &mut rng));
        }
        out.push(SceneImage::rgb(pixels)?);
    }
    Ok(out)
}

/// Load scenes for a training spec (synthetic or STL-10).
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<SceneImage>> {
    spec.validate()?;
    match &spec.source {
        DatasetSource::Synthetic => {
            let scenes = if spec.grayscale {
                synth_shapes(spec.synth_count, spec.image_size, spec.seed)?
            } else {
                synth_shapes_rgb(spec.synth_count, spec.image_size, spec.seed)?
            };
            Ok(scenes)
        }
        DatasetSource::Stl10Binary(path) => {
            let mut raw = load_stl10(path)?;
            if let Some(cap) = spec.max_images {
                raw.truncate(cap);
            }
            preprocess(&raw, spec)
        }
    }
}

// ---------------------------------------------------------------------------
// PGM dataset cache
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneDirManifest {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub files: Vec<String>,
}

pub const SCENE_MANIFEST_NAME: &str = "scenes.json";

/// Write grayscale scenes as 8-bit PGM files plus a JSON manifest.
pub fn save_scenes_pgm(scenes: &[SceneImage], seed: u64, dir: &Path) -> Result<SceneDirManifest> {
    if scenes.is_empty() {
        return Err(Error::EmptyDataset { context: "scene export".into() });
    }
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let gray = scene.as_gray()?;
        let name = format!("scene_{i:05}.pgm");
        pgm::write_pgm(&dir.join(&name), &pgm::quantize_unit(&gray.to_owned()))?;
        files.push(name);
    }
    let manifest = SceneDirManifest { count: scenes.len(), size: scenes[0].height(), seed, files };
    fs::write(dir.join(SCENE_MANIFEST_NAME), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Read a PGM scene directory written by [`save_scenes_pgm`].
pub fn load_scenes_pgm(dir: &Path) -> Result<(Vec<SceneImage>, SceneDirManifest)> {
    let manifest: SceneDirManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(SCENE_MANIFEST_NAME))?)?;
    let mut scenes = Vec::with_capacity(manifest.files.len());
    for name in &manifest.files {
        let img = pgm::read_pgm(&dir.join(name))?;
        scenes.push(SceneImage::gray(img.mapv(|v| v as f64 / 255.0))?);
    }
    Ok((scenes, manifest))
}
