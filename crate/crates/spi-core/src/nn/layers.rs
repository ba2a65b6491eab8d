//! Network building blocks with hand-written forward/backward passes.
//!
//! Every layer caches what its backward pass needs when `train` is true and
//! accumulates parameter gradients into `Param::grad`. Convolutions are
//! 3x3, stride 1, zero-padded by 1 (the only kernel the architectures use);
//! the inner product is carried by im2col plus a dense GEMM.

use ndarray::{Array1, Array2, Array4, Axis, Ix1, Ix2, Ix4};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::param::Param;

pub const KSIZE: usize = 3;
pub const PAD: usize = 1;

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// Affine layer `y = x·W^T + b` on `(batch, features)` inputs.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param<Ix2>,
    pub b: Param<Ix1>,
    cache_x: Option<Array2<f64>>,
}

impl Dense {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        // Glorot-uniform keeps the linear image estimate well scaled.
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-bound..bound));
        Self { w: Param::new(w), b: Param::new(Array1::zeros(out_dim)), cache_x: None }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let mut y = x.dot(&self.w.value.t());
        y += &self.b.value;
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let x = self.cache_x.as_ref().expect("dense backward without forward");
        self.w.grad += &gy.t().dot(x);
        self.b.grad += &gy.sum_axis(Axis(0));
        gy.dot(&self.w.value)
    }

    pub fn zero_grad(&mut self) {
        self.w.zero_grad();
        self.b.zero_grad();
    }

    pub fn param_count(&self) -> usize {
        self.w.count() + self.b.count()
    }
}

// ---------------------------------------------------------------------------
// Conv2d (3x3, stride 1, pad 1)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `(out_ch, in_ch, 3, 3)`.
    pub w: Param<Ix4>,
    pub b: Param<Ix1>,
    cache_x: Option<Array4<f64>>,
}

impl Conv2d {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        // He-normal for the ReLU trunks.
        let std = (2.0 / (in_ch * KSIZE * KSIZE) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let w = Array4::from_shape_fn((out_ch, in_ch, KSIZE, KSIZE), |_| normal.sample(rng));
        Self { w: Param::new(w), b: Param::new(Array1::zeros(out_ch)), cache_x: None }
    }

    pub fn in_ch(&self) -> usize {
        self.w.value.dim().1
    }

    pub fn out_ch(&self) -> usize {
        self.w.value.dim().0
    }

    /// Samples per im2col chunk, sized to keep the patch matrix around a few
    /// hundred MB even at 128x128 paper scale.
    fn chunk_len(&self, h: usize, w: usize) -> usize {
        const COL_BUDGET: usize = 1 << 22; // f64 entries per chunk
        (COL_BUDGET / (self.in_ch() * KSIZE * KSIZE * h * w)).max(1)
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (batch, in_ch, h, w) = x.dim();
        assert_eq!(in_ch, self.in_ch(), "conv input channels");
        let out_ch = self.out_ch();
        let wmat = self
            .w
            .value
            .view()
            .into_shape_with_order((out_ch, in_ch * KSIZE * KSIZE))
            .expect("weight reshape");
        let mut y = Array4::zeros((batch, out_ch, h, w));
        let chunk = self.chunk_len(h, w);
        let mut col = Array2::zeros((in_ch * KSIZE * KSIZE, chunk * h * w));
        for start in (0..batch).step_by(chunk) {
            let len = chunk.min(batch - start);
            let xs = x
                .slice(ndarray::s![start..start + len, .., .., ..])
                .to_slice()
                .expect("contiguous batch slice");
            let mut col_view = col.slice_mut(ndarray::s![.., ..len * h * w]);
            im2col_batch(xs, len, in_ch, h, w, &mut col_view);
            // one GEMM per chunk: (out, in*9) x (in*9, len*h*w)
            let yb = wmat.dot(&col_view);
            let mut dst = y
                .slice_mut(ndarray::s![start..start + len, .., .., ..])
                .into_shape_with_order((len, out_ch, h * w))
                .expect("output reshape");
            for bi in 0..len {
                for (o, &bias) in self.b.value.iter().enumerate() {
                    let mut row = dst.slice_mut(ndarray::s![bi, o, ..]);
                    row.assign(&yb.slice(ndarray::s![o, bi * h * w..(bi + 1) * h * w]));
                    row += bias;
                }
            }
        }
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    /// Backward to the input, accumulating weight gradients unless `frozen`.
    pub fn backward_impl(&mut self, gy: &Array4<f64>, frozen: bool) -> Array4<f64> {
        let x = self.cache_x.as_ref().expect("conv backward without forward");
        let (batch, in_ch, h, w) = x.dim();
        let out_ch = self.out_ch();
        let wmat = self
            .w
            .value
            .view()
            .into_shape_with_order((out_ch, in_ch * KSIZE * KSIZE))
            .expect("weight reshape");
        let mut gx = Array4::zeros((batch, in_ch, h, w));
        let chunk = self.chunk_len(h, w);
        let mut col = Array2::zeros((in_ch * KSIZE * KSIZE, chunk * h * w));
        let mut gw = Array2::zeros((out_ch, in_ch * KSIZE * KSIZE));
        let mut gy_chunk = Array2::zeros((out_ch, chunk * h * w));
        for start in (0..batch).step_by(chunk) {
            let len = chunk.min(batch - start);
            // gather the chunk's output grads as (out, len*h*w)
            let gy_src = gy.slice(ndarray::s![start..start + len, .., .., ..]);
            let mut gyb = gy_chunk.slice_mut(ndarray::s![.., ..len * h * w]);
            for bi in 0..len {
                for o in 0..out_ch {
                    gyb.slice_mut(ndarray::s![o, bi * h * w..(bi + 1) * h * w])
                        .assign(&gy_src.slice(ndarray::s![bi, o, .., ..]).into_shape_with_order(h * w).expect("row reshape"));
                }
            }
            if !frozen {
                let xs = x
                    .slice(ndarray::s![start..start + len, .., .., ..])
                    .to_slice()
                    .expect("contiguous batch slice");
                let mut col_view = col.slice_mut(ndarray::s![.., ..len * h * w]);
                im2col_batch(xs, len, in_ch, h, w, &mut col_view);
                gw += &gyb.dot(&col_view.t());
                self.b.grad += &gyb.sum_axis(Axis(1));
            }
            let gcol = wmat.t().dot(&gyb);
            let gxs = gx
                .slice_mut(ndarray::s![start..start + len, .., .., ..])
                .into_slice()
                .expect("contiguous batch slice");
            col2im_batch(&gcol, len, in_ch, h, w, gxs);
        }
        if !frozen {
            let gw = gw
                .into_shape_with_order((out_ch, in_ch, KSIZE, KSIZE))
                .expect("grad reshape");
            self.w.grad += &gw;
        }
        gx
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        self.backward_impl(gy, false)
    }

    pub fn zero_grad(&mut self) {
        self.w.zero_grad();
        self.b.zero_grad();
    }

    pub fn param_count(&self) -> usize {
        self.w.count() + self.b.count()
    }
}

/// Unfold a `(len, C, H, W)` slab into `(C*9, len*H*W)` patch columns.
fn im2col_batch(
    xs: &[f64],
    len: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    col: &mut ndarray::ArrayViewMut2<'_, f64>,
) {
    col.fill(0.0);
    let hw = h * w;
    let chw = in_ch * hw;
    for c in 0..in_ch {
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row_idx = (c * KSIZE + ky) * KSIZE + kx;
                let mut row = col.row_mut(row_idx);
                let dst = row.as_slice_mut().expect("contiguous col row");
                let dy = ky as isize - PAD as isize;
                let dx = kx as isize - PAD as isize;
                for bi in 0..len {
                    let plane = &xs[bi * chw + c * hw..bi * chw + (c + 1) * hw];
                    let dplane = &mut dst[bi * hw..(bi + 1) * hw];
                    for y in 0..h {
                        let iy = y as isize + dy;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x0 = (-dx).max(0) as usize;
                        let x1 = ((w as isize - dx).min(w as isize)) as usize;
                        if x0 >= x1 {
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..iy as usize * w + w];
                        let s0 = (x0 as isize + dx) as usize;
                        let s1 = (x1 as isize + dx) as usize;
                        dplane[y * w + x0..y * w + x1].copy_from_slice(&src_row[s0..s1]);
                    }
                }
            }
        }
    }
}

/// Fold `(C*9, len*H*W)` patch-column gradients back onto the input slab.
fn col2im_batch(gcol: &Array2<f64>, len: usize, in_ch: usize, h: usize, w: usize, gx: &mut [f64]) {
    let hw = h * w;
    let chw = in_ch * hw;
    for c in 0..in_ch {
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row_idx = (c * KSIZE + ky) * KSIZE + kx;
                let src_row_all = gcol.row(row_idx);
                let src = src_row_all.as_slice().expect("contiguous col grad row");
                let dy = ky as isize - PAD as isize;
                let dx = kx as isize - PAD as isize;
                for bi in 0..len {
                    let plane = &mut gx[bi * chw + c * hw..bi * chw + (c + 1) * hw];
                    let splane = &src[bi * hw..(bi + 1) * hw];
                    for y in 0..h {
                        let iy = y as isize + dy;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x0 = (-dx).max(0) as usize;
                        let x1 = ((w as isize - dx).min(w as isize)) as usize;
                        for xx in x0..x1 {
                            let ix = (xx as isize + dx) as usize;
                            plane[iy as usize * w + ix] += splane[y * w + xx];
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

/// Per-channel batch normalization over `(batch, H, W)`.
///
/// Training normalizes with per-batch statistics and updates the running
/// estimates (`new = (1-momentum)·old + momentum·batch`, biased variance);
/// evaluation normalizes with the running estimates only.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param<Ix1>,
    pub beta: Param<Ix1>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array4<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Array1::ones(channels)),
            beta: Param::new(Array1::zeros(channels)),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.count()
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (batch, ch, h, w) = x.dim();
        assert_eq!(ch, self.channels(), "batchnorm channels");
        let n = (batch * h * w) as f64;
        let mut y = Array4::zeros(x.raw_dim());
        if train {
            let mut xhat = Array4::zeros(x.raw_dim());
            let mut inv_std = Array1::zeros(ch);
            for c in 0..ch {
                let xc = x.index_axis(Axis(1), c);
                let mean = xc.sum() / n;
                let var = xc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[c] = istd;
                let g = self.gamma.value[c];
                let b = self.beta.value[c];
                let mut xhat_c = xhat.index_axis_mut(Axis(1), c);
                let mut yc = y.index_axis_mut(Axis(1), c);
                for ((xh, yv), &xv) in xhat_c.iter_mut().zip(yc.iter_mut()).zip(xc.iter()) {
                    *xh = (xv - mean) * istd;
                    *yv = g * *xh + b;
                }
                self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
                self.running_var[c] = (1.0 - self.momentum) * self.running_var[c] + self.momentum * var;
            }
            self.cache = Some(BnCache { xhat, inv_std });
        } else {
            for c in 0..ch {
                let mean = self.running_mean[c];
                let istd = 1.0 / (self.running_var[c] + self.eps).sqrt();
                let g = self.gamma.value[c];
                let b = self.beta.value[c];
                let xc = x.index_axis(Axis(1), c);
                let mut yc = y.index_axis_mut(Axis(1), c);
                for (yv, &xv) in yc.iter_mut().zip(xc.iter()) {
                    *yv = g * (xv - mean) * istd + b;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let cache = self.cache.as_ref().expect("batchnorm backward without forward");
        let (batch, ch, h, w) = gy.dim();
        let n = (batch * h * w) as f64;
        let mut gx = Array4::zeros(gy.raw_dim());
        for c in 0..ch {
            let gyc = gy.index_axis(Axis(1), c);
            let xhat_c = cache.xhat.index_axis(Axis(1), c);
            let sum_gy: f64 = gyc.sum();
            let sum_gy_xhat: f64 = gyc.iter().zip(xhat_c.iter()).map(|(a, b)| a * b).sum();
            self.beta.grad[c] += sum_gy;
            self.gamma.grad[c] += sum_gy_xhat;
            let g = self.gamma.value[c];
            let istd = cache.inv_std[c];
            let mut gxc = gx.index_axis_mut(Axis(1), c);
            for ((gxv, &gyv), &xh) in gxc.iter_mut().zip(gyc.iter()).zip(xhat_c.iter()) {
                *gxv = g * istd / n * (n * gyv - sum_gy - xh * sum_gy_xhat);
            }
        }
        gx
    }

    pub fn zero_grad(&mut self) {
        self.gamma.zero_grad();
        self.beta.zero_grad();
    }

    pub fn param_count(&self) -> usize {
        self.gamma.count() + self.beta.count()
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActKind {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

/// Elementwise activation caching its pre-activation for the backward pass.
#[derive(Debug, Clone)]
pub struct Activation<D: ndarray::Dimension> {
    pub kind: ActKind,
    cache_x: Option<ndarray::Array<f64, D>>,
}

impl<D: ndarray::Dimension> Activation<D> {
    pub fn new(kind: ActKind) -> Self {
        Self { kind, cache_x: None }
    }

    pub fn forward(&mut self, x: &ndarray::Array<f64, D>, train: bool) -> ndarray::Array<f64, D> {
        if train {
            self.cache_x = Some(x.clone());
        }
        match self.kind {
            ActKind::Relu => x.mapv(|v| v.max(0.0)),
            ActKind::LeakyRelu(slope) => x.mapv(|v| if v >= 0.0 { v } else { slope * v }),
            ActKind::Sigmoid => x.mapv(sigmoid_clamped),
        }
    }

    pub fn backward(&mut self, gy: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
        let x = self.cache_x.as_ref().expect("activation backward without forward");
        match self.kind {
            ActKind::Relu => {
                let mut gx = gy.clone();
                gx.zip_mut_with(x, |g, &xv| {
                    if xv < 0.0 {
                        *g = 0.0;
                    }
                });
                gx
            }
            ActKind::LeakyRelu(slope) => {
                let mut gx = gy.clone();
                gx.zip_mut_with(x, |g, &xv| {
                    if xv < 0.0 {
                        *g *= slope;
                    }
                });
                gx
            }
            ActKind::Sigmoid => {
                let mut gx = gy.clone();
                gx.zip_mut_with(x, |g, &xv| {
                    let y = sigmoid_clamped(xv);
                    *g *= y * (1.0 - y);
                });
                gx
            }
        }
    }
}

/// Sigmoid kept strictly inside (0, 1) so discriminator scores satisfy the
/// open-interval contract even at extreme pre-activations.
pub fn sigmoid_clamped(x: f64) -> f64 {
    let y = 1.0 / (1.0 + (-x).exp());
    y.clamp(1e-12, 1.0 - 1e-12)
}

// ---------------------------------------------------------------------------
// MaxPool2d (2x2, stride 2)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct MaxPool2d {
    /// Winner offset (0..4) per output element.
    cache_argmax: Option<Array4<u8>>,
    cache_in_dim: Option<(usize, usize, usize, usize)>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (batch, ch, h, w) = x.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool needs even spatial dims, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Array4::zeros((batch, ch, oh, ow));
        let mut arg = Array4::zeros((batch, ch, oh, ow));
        for bi in 0..batch {
            for c in 0..ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_k = 0u8;
                        for k in 0..4usize {
                            let iy = 2 * oy + k / 2;
                            let ix = 2 * ox + k % 2;
                            let v = x[[bi, c, iy, ix]];
                            if v > best {
                                best = v;
                                best_k = k as u8;
                            }
                        }
                        y[[bi, c, oy, ox]] = best;
                        arg[[bi, c, oy, ox]] = best_k;
                    }
                }
            }
        }
        if train {
            self.cache_argmax = Some(arg);
            self.cache_in_dim = Some((batch, ch, h, w));
        }
        y
    }

    pub fn backward(&mut self, gy: &Array4<f64>) -> Array4<f64> {
        let arg = self.cache_argmax.as_ref().expect("maxpool backward without forward");
        let dim = self.cache_in_dim.expect("maxpool backward without forward");
        let (batch, ch, oh, ow) = gy.dim();
        let mut gx = Array4::zeros(dim);
        for bi in 0..batch {
            for c in 0..ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let k = arg[[bi, c, oy, ox]] as usize;
                        let iy = 2 * oy + k / 2;
                        let ix = 2 * ox + k % 2;
                        gx[[bi, c, iy, ix]] += gy[[bi, c, oy, ox]];
                    }
                }
            }
        }
        gx
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Flatten `(B, C, H, W)` to `(B, C*H*W)`.
pub fn flatten_batch(x: &Array4<f64>) -> Array2<f64> {
    let (b, c, h, w) = x.dim();
    x.clone().into_shape_with_order((b, c * h * w)).expect("flatten reshape")
}

/// Inverse of [`flatten_batch`].
pub fn unflatten_batch(x: &Array2<f64>, c: usize, h: usize, w: usize) -> Array4<f64> {
    let b = x.nrows();
    x.clone().into_shape_with_order((b, c, h, w)).expect("unflatten reshape")
}

#[cfg(test)]
use ndarray::Array3;

/// Direct (no im2col) 3x3 convolution used only as a test oracle.
#[cfg(test)]
pub fn conv3x3_reference(x: &Array3<f64>, w: &Array4<f64>, b: &Array1<f64>) -> Array3<f64> {
    let (in_ch, h, wd) = x.dim();
    let out_ch = w.dim().0;
    let mut y = Array3::zeros((out_ch, h, wd));
    for o in 0..out_ch {
        for yy in 0..h {
            for xx in 0..wd {
                let mut acc = b[o];
                for c in 0..in_ch {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = yy as isize + ky as isize - 1;
                            let ix = xx as isize + kx as isize - 1;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                acc += w[[o, c, ky, kx]] * x[[c, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
                y[[o, yy, xx]] = acc;
            }
        }
    }
    y
}
