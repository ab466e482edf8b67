//! Minimal f64 layer zoo with explicit forward caches and analytic
//! backward passes. Convolution goes through im2col so the inner product is
//! a single matrix multiply; everything else is plain loops.
//!
//! Layers own their parameters. Networks flatten them into one `Vec<f64>`
//! (see the `write_params` / `read_params` pair) so a single optimizer state
//! covers the whole model.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{CoreError, Result};

/// Negative-side slope shared by every leaky rectifier in this crate.
pub const LEAK: f64 = 0.01;

/// Same-size 2-d convolution with zero padding, stride 1, square taps.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    /// Shape `(out_ch, in_ch * ksize * ksize)`, the im2col layout.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    /// He-style init scaled for leaky rectifiers.
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, ksize: usize, rng: &mut R) -> Self {
        let fan_in = (in_ch * ksize * ksize) as f64;
        let std = (2.0 / (fan_in * (1.0 + LEAK * LEAK))).sqrt();
        let weight = Array2::from_shape_fn((out_ch, in_ch * ksize * ksize), |_| {
            let n: f64 = StandardNormal.sample(rng);
            n * std
        });
        Conv2d { in_ch, out_ch, ksize, weight, bias: Array1::zeros(out_ch) }
    }

    pub fn param_len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend(self.weight.iter());
        out.extend(self.bias.iter());
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let wl = self.weight.len();
        let bl = self.bias.len();
        for (dst, &v) in self.weight.iter_mut().zip(&src[..wl]) {
            *dst = v;
        }
        for (dst, &v) in self.bias.iter_mut().zip(&src[wl..wl + bl]) {
            *dst = v;
        }
        wl + bl
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (c_in, h, w) = x.dim();
        let k = self.ksize;
        let p = (k / 2) as isize;
        let mut cols = Array2::zeros((c_in * k * k, h * w));
        for c in 0..c_in {
            for a in 0..k {
                for b in 0..k {
                    let row = (c * k + a) * k + b;
                    for i in 0..h {
                        let si = i as isize + a as isize - p;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        for j in 0..w {
                            let sj = j as isize + b as isize - p;
                            if sj < 0 || sj >= w as isize {
                                continue;
                            }
                            cols[[row, i * w + j]] = x[[c, si as usize, sj as usize]];
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, gcols: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
        let k = self.ksize;
        let p = (k / 2) as isize;
        let mut gx = Array3::zeros((self.in_ch, h, w));
        for c in 0..self.in_ch {
            for a in 0..k {
                for b in 0..k {
                    let row = (c * k + a) * k + b;
                    for i in 0..h {
                        let si = i as isize + a as isize - p;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        for j in 0..w {
                            let sj = j as isize + b as isize - p;
                            if sj < 0 || sj >= w as isize {
                                continue;
                            }
                            gx[[c, si as usize, sj as usize]] += gcols[[row, i * w + j]];
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let (c_in, h, w) = x.dim();
        if c_in != self.in_ch {
            return Err(CoreError::Shape(format!(
                "conv expects {} input channels, got {c_in}",
                self.in_ch
            )));
        }
        let cols = self.im2col(x);
        let mut y2 = self.weight.dot(&cols);
        for (mut row, &b) in y2.rows_mut().into_iter().zip(self.bias.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        y2.into_shape_with_order((self.out_ch, h, w))
            .map_err(|e| CoreError::Shape(e.to_string()))
    }

    /// Returns `(grad_input, grad_weight, grad_bias)` given the forward input
    /// `x`. The im2col matrix is rebuilt here; that keeps caches small at the
    /// price of a loop that is cheap next to the two matrix multiplies.
    pub fn backward(
        &self,
        x: &Array3<f64>,
        gy: &Array3<f64>,
    ) -> Result<(Array3<f64>, Array2<f64>, Array1<f64>)> {
        let (c_out, h, w) = gy.dim();
        if c_out != self.out_ch || (x.dim().1, x.dim().2) != (h, w) {
            return Err(CoreError::Shape("conv backward shape mismatch".into()));
        }
        let cols = self.im2col(x);
        let gy2 = gy
            .to_owned()
            .into_shape_with_order((c_out, h * w))
            .map_err(|e| CoreError::Shape(e.to_string()))?;
        let gw = gy2.dot(&cols.t());
        let gb = gy2.sum_axis(ndarray::Axis(1));
        let gcols = self.weight.t().dot(&gy2);
        let gx = self.col2im(&gcols, h, w);
        Ok((gx, gw, gb))
    }
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, weight_std: f64, rng: &mut R) -> Self {
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| {
            let n: f64 = StandardNormal.sample(rng);
            n * weight_std
        });
        Linear { weight, bias: Array1::zeros(out_dim) }
    }

    pub fn param_len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend(self.weight.iter());
        out.extend(self.bias.iter());
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let wl = self.weight.len();
        let bl = self.bias.len();
        for (dst, &v) in self.weight.iter_mut().zip(&src[..wl]) {
            *dst = v;
        }
        for (dst, &v) in self.bias.iter_mut().zip(&src[wl..wl + bl]) {
            *dst = v;
        }
        wl + bl
    }

    pub fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.weight.ncols() {
            return Err(CoreError::Shape(format!(
                "linear expects input {}, got {}",
                self.weight.ncols(),
                x.len()
            )));
        }
        Ok(self.weight.dot(x) + &self.bias)
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(
        &self,
        x: &Array1<f64>,
        gy: &Array1<f64>,
    ) -> (Array1<f64>, Array2<f64>, Array1<f64>) {
        let gx = self.weight.t().dot(gy);
        let mut gw = Array2::zeros(self.weight.dim());
        for (i, &g) in gy.iter().enumerate() {
            for (j, &xv) in x.iter().enumerate() {
                gw[[i, j]] = g * xv;
            }
        }
        (gx, gw, gy.clone())
    }
}

pub fn leaky_relu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { LEAK * v })
}

/// Gradient through the rectifier given its pre-activation input.
pub fn leaky_relu_backward(pre: &Array3<f64>, gy: &Array3<f64>) -> Array3<f64> {
    let mut gx = gy.clone();
    gx.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g *= LEAK;
        }
    });
    gx
}

pub fn leaky_relu_vec(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| if v > 0.0 { v } else { LEAK * v })
}

pub fn leaky_relu_vec_backward(pre: &Array1<f64>, gy: &Array1<f64>) -> Array1<f64> {
    let mut gx = gy.clone();
    gx.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g *= LEAK;
        }
    });
    gx
}

/// Per-channel RMS normalization over the spatial extent: each channel is
/// divided by sqrt(mean of squares + 1e-6). Keeps activation scale bounded
/// regardless of how far the optimizer drifts the weights.
pub fn channel_rms_norm(x: &Array3<f64>) -> (Array3<f64>, Array1<f64>) {
    let (c, h, w) = x.dim();
    let n = (h * w) as f64;
    let mut r = Array1::zeros(c);
    let mut y = x.clone();
    for ci in 0..c {
        let ms = x.index_axis(ndarray::Axis(0), ci).iter().map(|v| v * v).sum::<f64>() / n;
        let rc = (ms + 1e-6).sqrt();
        r[ci] = rc;
        y.index_axis_mut(ndarray::Axis(0), ci).mapv_inplace(|v| v / rc);
    }
    (y, r)
}

/// Gradient through the normalization given its output and the cached
/// per-channel divisors: gx = (g − y·mean(g⊙y)) / r.
pub fn channel_rms_norm_backward(
    y: &Array3<f64>,
    r: &Array1<f64>,
    gy: &Array3<f64>,
) -> Array3<f64> {
    let (c, h, w) = y.dim();
    let n = (h * w) as f64;
    let mut gx = gy.clone();
    for ci in 0..c {
        let yc = y.index_axis(ndarray::Axis(0), ci);
        let gc = gy.index_axis(ndarray::Axis(0), ci);
        let dot = yc.iter().zip(gc.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        let rc = r[ci];
        let mut out = gx.index_axis_mut(ndarray::Axis(0), ci);
        out.zip_mut_with(&yc, |g, &yv| *g = (*g - yv * dot) / rc);
    }
    gx
}

pub fn sigmoid(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Gradient through the sigmoid given its output.
pub fn sigmoid_backward(out: &Array3<f64>, gy: &Array3<f64>) -> Array3<f64> {
    let mut gx = gy.clone();
    gx.zip_mut_with(out, |g, &y| *g *= y * (1.0 - y));
    gx
}

/// 2x2 mean pooling; requires even spatial dims.
pub fn avg_pool2(x: &Array3<f64>) -> Result<Array3<f64>> {
    let (c, h, w) = x.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(CoreError::Shape(format!("pooling needs even dims, got {h}x{w}")));
    }
    let mut y = Array3::zeros((c, h / 2, w / 2));
    for ci in 0..c {
        for i in 0..h / 2 {
            for j in 0..w / 2 {
                y[[ci, i, j]] = 0.25
                    * (x[[ci, 2 * i, 2 * j]]
                        + x[[ci, 2 * i + 1, 2 * j]]
                        + x[[ci, 2 * i, 2 * j + 1]]
                        + x[[ci, 2 * i + 1, 2 * j + 1]]);
            }
        }
    }
    Ok(y)
}

pub fn avg_pool2_backward(gy: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = gy.dim();
    let mut gx = Array3::zeros((c, h * 2, w * 2));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                let g = 0.25 * gy[[ci, i, j]];
                gx[[ci, 2 * i, 2 * j]] = g;
                gx[[ci, 2 * i + 1, 2 * j]] = g;
                gx[[ci, 2 * i, 2 * j + 1]] = g;
                gx[[ci, 2 * i + 1, 2 * j + 1]] = g;
            }
        }
    }
    gx
}

/// Source taps for one bilinear output index: half-pixel-aligned 2x grid,
/// border-clamped, weights (0.75, 0.25).
fn bilinear_taps(o: usize, n: usize) -> ((usize, f64), (usize, f64)) {
    let i = o / 2;
    if o.is_multiple_of(2) {
        let prev = if i == 0 { 0 } else { i - 1 };
        ((prev, 0.25), (i, 0.75))
    } else {
        let next = (i + 1).min(n - 1);
        ((i, 0.75), (next, 0.25))
    }
}

/// Bilinear 2x upsampling. Interpolation keeps the decoder free of the
/// stride-2 checkerboard patterns that nearest-neighbor replication admits.
pub fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, h * 2, w * 2));
    for ci in 0..c {
        for oi in 0..h * 2 {
            let ((r0, wi0), (r1, wi1)) = bilinear_taps(oi, h);
            for oj in 0..w * 2 {
                let ((c0, wj0), (c1, wj1)) = bilinear_taps(oj, w);
                y[[ci, oi, oj]] = wi0 * (wj0 * x[[ci, r0, c0]] + wj1 * x[[ci, r0, c1]])
                    + wi1 * (wj0 * x[[ci, r1, c0]] + wj1 * x[[ci, r1, c1]]);
            }
        }
    }
    y
}

/// Exact adjoint of `upsample2`.
pub fn upsample2_backward(gy: &Array3<f64>) -> Result<Array3<f64>> {
    let (c, h, w) = gy.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(CoreError::Shape("upsample gradient needs even dims".into()));
    }
    let mut gx = Array3::zeros((c, h / 2, w / 2));
    for ci in 0..c {
        for oi in 0..h {
            let ((r0, wi0), (r1, wi1)) = bilinear_taps(oi, h / 2);
            for oj in 0..w {
                let ((c0, wj0), (c1, wj1)) = bilinear_taps(oj, w / 2);
                let g = gy[[ci, oi, oj]];
                gx[[ci, r0, c0]] += wi0 * wj0 * g;
                gx[[ci, r0, c1]] += wi0 * wj1 * g;
                gx[[ci, r1, c0]] += wi1 * wj0 * g;
                gx[[ci, r1, c1]] += wi1 * wj1 * g;
            }
        }
    }
    Ok(gx)
}

/// Channel concatenation `[a; b]`.
pub fn concat_channels(a: &Array3<f64>, b: &Array3<f64>) -> Result<Array3<f64>> {
    let (ca, h, w) = a.dim();
    let (cb, hb, wb) = b.dim();
    if (h, w) != (hb, wb) {
        return Err(CoreError::Shape("concat spatial dims differ".into()));
    }
    let mut y = Array3::zeros((ca + cb, h, w));
    y.slice_mut(ndarray::s![..ca, .., ..]).assign(a);
    y.slice_mut(ndarray::s![ca.., .., ..]).assign(b);
    Ok(y)
}

pub fn split_channels(g: &Array3<f64>, at: usize) -> (Array3<f64>, Array3<f64>) {
    (
        g.slice(ndarray::s![..at, .., ..]).to_owned(),
        g.slice(ndarray::s![at.., .., ..]).to_owned(),
    )
}

/// Numerically stable softmax over a flat vector.
pub fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e = x.mapv(|v| (v - m).exp());
    let s = e.sum();
    e.mapv_inplace(|v| v / s);
    e
}

/// Gradient through softmax given its output `p`: `p .* (g - <p, g>)`.
pub fn softmax_backward(p: &Array1<f64>, gy: &Array1<f64>) -> Array1<f64> {
    let dot: f64 = p.iter().zip(gy.iter()).map(|(a, b)| a * b).sum();
    Array1::from_iter(p.iter().zip(gy.iter()).map(|(&pi, &gi)| pi * (gi - dot)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand3(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
        Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution oracle against the im2col path.
    #[test]
    fn conv_forward_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::new(2, 3, 3, &mut rng);
        let x = rand3(2, 5, 6, &mut rng);
        let y = conv.forward(&x).unwrap();
        for o in 0..3 {
            for i in 0..5i32 {
                for j in 0..6i32 {
                    let mut acc = conv.bias[o];
                    for c in 0..2usize {
                        for a in 0..3i32 {
                            for b in 0..3i32 {
                                let (si, sj) = (i + a - 1, j + b - 1);
                                if !(0..5).contains(&si) || !(0..6).contains(&sj) {
                                    continue;
                                }
                                let wrow = (c * 3 + a as usize) * 3 + b as usize;
                                acc += conv.weight[[o, wrow]]
                                    * x[[c, si as usize, sj as usize]];
                            }
                        }
                    }
                    assert_abs_diff_eq!(y[[o, i as usize, j as usize]], acc, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(2, 2, 3, &mut rng);
        let x = rand3(2, 4, 4, &mut rng);
        let wgt = rand3(2, 4, 4, &mut rng);
        let loss = |c: &Conv2d, x: &Array3<f64>| -> f64 {
            let y = c.forward(x).unwrap();
            y.iter().zip(wgt.iter()).map(|(a, b)| a * b).sum()
        };
        let (gx, gw, gb) = conv.backward(&x, &wgt).unwrap();
        let eps = 1e-6;
        // Weights.
        for &idx in &[0usize, 7, 16, 33] {
            let (r, c) = (idx / conv.weight.ncols(), idx % conv.weight.ncols());
            let orig = conv.weight[[r, c]];
            conv.weight[[r, c]] = orig + eps;
            let up = loss(&conv, &x);
            conv.weight[[r, c]] = orig - eps;
            let dn = loss(&conv, &x);
            conv.weight[[r, c]] = orig;
            assert_abs_diff_eq!(gw[[r, c]], (up - dn) / (2.0 * eps), epsilon = 1e-6);
        }
        // Bias.
        for b in 0..2 {
            let orig = conv.bias[b];
            conv.bias[b] = orig + eps;
            let up = loss(&conv, &x);
            conv.bias[b] = orig - eps;
            let dn = loss(&conv, &x);
            conv.bias[b] = orig;
            assert_abs_diff_eq!(gb[b], (up - dn) / (2.0 * eps), epsilon = 1e-6);
        }
        // Input.
        let mut xp = x.clone();
        for &(c, i, j) in &[(0usize, 0usize, 0usize), (1, 2, 3), (0, 3, 1)] {
            let orig = xp[[c, i, j]];
            xp[[c, i, j]] = orig + eps;
            let up = loss(&conv, &xp);
            xp[[c, i, j]] = orig - eps;
            let dn = loss(&conv, &xp);
            xp[[c, i, j]] = orig;
            assert_abs_diff_eq!(gx[[c, i, j]], (up - dn) / (2.0 * eps), epsilon = 1e-6);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lin = Linear::new(4, 3, 0.5, &mut rng);
        let x = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
        let wgt = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let loss = |l: &Linear, x: &Array1<f64>| -> f64 {
            l.forward(x).unwrap().iter().zip(wgt.iter()).map(|(a, b)| a * b).sum()
        };
        let (gx, gw, gb) = lin.backward(&x, &wgt);
        let eps = 1e-6;
        for r in 0..3 {
            for c in 0..4 {
                let orig = lin.weight[[r, c]];
                lin.weight[[r, c]] = orig + eps;
                let up = loss(&lin, &x);
                lin.weight[[r, c]] = orig - eps;
                let dn = loss(&lin, &x);
                lin.weight[[r, c]] = orig;
                assert_abs_diff_eq!(gw[[r, c]], (up - dn) / (2.0 * eps), epsilon = 1e-7);
            }
        }
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += eps;
            let up = loss(&lin, &xp);
            xp[i] -= 2.0 * eps;
            let dn = loss(&lin, &xp);
            assert_abs_diff_eq!(gx[i], (up - dn) / (2.0 * eps), epsilon = 1e-7);
        }
        assert_eq!(gb, wgt);
    }

    #[test]
    fn pooling_and_upsampling_are_adjoint_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand3(3, 6, 8, &mut rng);
        let g = rand3(3, 3, 4, &mut rng);
        let y = avg_pool2(&x).unwrap();
        let gx = avg_pool2_backward(&g);
        let lhs: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(gx.iter()).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);

        let up = upsample2(&y);
        let gu = rand3(3, 6, 8, &mut rng);
        let gyu = upsample2_backward(&gu).unwrap();
        let lhs2: f64 = up.iter().zip(gu.iter()).map(|(a, b)| a * b).sum();
        let rhs2: f64 = y.iter().zip(gyu.iter()).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(lhs2, rhs2, epsilon = 1e-12);
        assert!(avg_pool2(&rand3(1, 5, 4, &mut rng)).is_err());
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand3(1, 4, 4, &mut rng);
        let g = rand3(1, 4, 4, &mut rng);
        let eps = 1e-7;
        let glr = leaky_relu_backward(&x, &g);
        let gsig = sigmoid_backward(&sigmoid(&x), &g);
        for idx in 0..16 {
            let (i, j) = (idx / 4, idx % 4);
            let mut xp = x.clone();
            xp[[0, i, j]] += eps;
            let mut xm = x.clone();
            xm[[0, i, j]] -= eps;
            let fd_lr = (leaky_relu(&xp)[[0, i, j]] - leaky_relu(&xm)[[0, i, j]]) / (2.0 * eps);
            assert_abs_diff_eq!(glr[[0, i, j]], fd_lr * g[[0, i, j]], epsilon = 1e-6);
            let fd_sig = (sigmoid(&xp)[[0, i, j]] - sigmoid(&xm)[[0, i, j]]) / (2.0 * eps);
            assert_abs_diff_eq!(gsig[[0, i, j]], fd_sig * g[[0, i, j]], epsilon = 1e-6);
        }
    }

    #[test]
    fn softmax_is_a_distribution_and_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array1::from_shape_fn(9, |_| rng.random_range(-3.0..3.0f64));
        let p = softmax(&x);
        assert_abs_diff_eq!(p.sum(), 1.0, epsilon = 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
        // Stability under large offsets.
        let shifted = softmax(&x.mapv(|v| v + 500.0));
        for (a, b) in p.iter().zip(shifted.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let g = Array1::from_shape_fn(9, |_| rng.random_range(-1.0..1.0f64));
        let gx = softmax_backward(&p, &g);
        let eps = 1e-6;
        for i in 0..9 {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd: f64 = softmax(&xp)
                .iter()
                .zip(softmax(&xm).iter())
                .zip(g.iter())
                .map(|((a, b), gi)| (a - b) / (2.0 * eps) * gi)
                .sum();
            assert_abs_diff_eq!(gx[i], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn concat_and_split_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand3(2, 3, 3, &mut rng);
        let b = rand3(4, 3, 3, &mut rng);
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.dim(), (6, 3, 3));
        let (ba, bb) = split_channels(&y, 2);
        assert_eq!(a, ba);
        assert_eq!(b, bb);
        let c = rand3(1, 2, 3, &mut rng);
        assert!(concat_channels(&a, &c).is_err());
    }

    #[test]
    fn param_round_trip_preserves_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut conv = Conv2d::new(2, 3, 3, &mut rng);
        let mut flat = Vec::new();
        conv.write_params(&mut flat);
        assert_eq!(flat.len(), conv.param_len());
        let orig = conv.weight.clone();
        conv.weight.fill(0.0);
        let consumed = conv.read_params(&flat);
        assert_eq!(consumed, flat.len());
        assert_eq!(conv.weight, orig);
    }
}
