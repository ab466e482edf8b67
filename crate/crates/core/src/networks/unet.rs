//! Encoder-decoder image estimator.
//!
//! A noise seed at target resolution goes through `depth` encoder scales
//! (two 3x3 convolutions with leaky rectifiers each, 2x2 mean pooling
//! between scales), then back up through nearest-neighbor upsampling with
//! skip concatenation, and ends in a 1x1 convolution squashed by a sigmoid.
//! Channel width doubles per scale. All parameters flatten into one vector
//! in construction order so a single optimizer state drives the whole model.

use ndarray::{Array2, Array3, Axis};
use rand::Rng;

use super::layers::{
    avg_pool2, avg_pool2_backward, channel_rms_norm, channel_rms_norm_backward, concat_channels,
    leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, split_channels, upsample2,
    upsample2_backward, Conv2d,
};
use ndarray::Array1;
use crate::kernel::{gaussian_kernel, CovarianceSpec};
use crate::{CoreError, Result};

/// Mean of the uniform [0, 0.1) seed field; subtracted on entry.
const SEED_SHIFT: f64 = 0.05;
/// Standard deviation of the same distribution (0.1 / sqrt(12)); entry
/// standardization keeps first-layer activations at unit scale, which the
/// He-initialized cascade then preserves.
const SEED_SCALE: f64 = 0.028_867_513_459_481_29;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ImageNetConfig {
    /// Number of resolution scales, including full resolution.
    pub depth: usize,
    /// Channel count at full resolution; doubles per scale.
    pub base_width: usize,
}

impl Default for ImageNetConfig {
    fn default() -> Self {
        ImageNetConfig { depth: 3, base_width: 32 }
    }
}

#[derive(Debug, Clone)]
pub struct ImageEstimator {
    cfg: ImageNetConfig,
    /// Frozen smoothing stem; never optimized. Band-limits the seed so the
    /// output spectrum is shaped by the learned layers, not by raw noise
    /// passing straight through.
    stem: Conv2d,
    /// Two convolutions per encoder scale, outermost first.
    enc: Vec<[Conv2d; 2]>,
    /// Two convolutions per decoder scale, deepest first (forward order).
    dec: Vec<[Conv2d; 2]>,
    head: Conv2d,
}

/// Intermediate state of one forward pass, consumed by `backward`.
pub struct ImageNetCache {
    /// Input of each convolution, execution order.
    conv_in: Vec<Array3<f64>>,
    /// Pre-activation output of each convolution, execution order.
    conv_pre: Vec<Array3<f64>>,
    /// Normalized activations and their per-channel divisors, one entry per
    /// non-head convolution, same order as `conv_in`.
    norm_out: Vec<Array3<f64>>,
    norm_r: Vec<Array1<f64>>,
    /// Standardized seed, the stem's input.
    stem_in: Array3<f64>,
    sig_out: Array3<f64>,
}

impl ImageEstimator {
    pub fn new<R: Rng + ?Sized>(cfg: ImageNetConfig, rng: &mut R) -> Result<Self> {
        if cfg.depth < 2 {
            return Err(CoreError::InvalidArgument(
                "image estimator needs at least two scales".into(),
            ));
        }
        if cfg.base_width == 0 {
            return Err(CoreError::InvalidArgument("base width must be positive".into()));
        }
        let width = |d: usize| cfg.base_width << d;
        let mut enc = Vec::with_capacity(cfg.depth);
        for d in 0..cfg.depth {
            let in_ch = if d == 0 { 1 } else { width(d - 1) };
            enc.push([
                Conv2d::new(in_ch, width(d), 3, rng),
                Conv2d::new(width(d), width(d), 3, rng),
            ]);
        }
        let mut dec = Vec::with_capacity(cfg.depth - 1);
        for scale in (0..cfg.depth - 1).rev() {
            dec.push([
                Conv2d::new(width(scale + 1) + width(scale), width(scale), 3, rng),
                Conv2d::new(width(scale), width(scale), 3, rng),
            ]);
        }
        let head = Conv2d::new(cfg.base_width, 1, 1, rng);
        // Isotropic Gaussian taps; even symmetry makes the zero-padded
        // correlation its own adjoint in `backward`.
        let smooth = gaussian_kernel(7, &CovarianceSpec::new(1.2, 1.2, 0.0)?)?;
        let mut stem = Conv2d::new(1, 1, 7, rng);
        for (dst, &v) in stem.weight.iter_mut().zip(smooth.values().iter()) {
            *dst = v;
        }
        stem.bias.fill(0.0);
        Ok(ImageEstimator { cfg, stem, enc, dec, head })
    }

    pub fn config(&self) -> ImageNetConfig {
        self.cfg
    }

    fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.enc
            .iter()
            .flatten()
            .chain(self.dec.iter().flatten())
            .chain(std::iter::once(&self.head))
    }

    fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv2d> {
        self.enc
            .iter_mut()
            .flatten()
            .chain(self.dec.iter_mut().flatten())
            .chain(std::iter::once(&mut self.head))
    }

    pub fn param_len(&self) -> usize {
        self.convs().map(Conv2d::param_len).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        for conv in self.convs() {
            conv.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.param_len();
        if flat.len() != expected {
            return Err(CoreError::Shape(format!(
                "parameter vector length {} does not match model size {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for conv in self.convs_mut() {
            offset += conv.read_params(&flat[offset..]);
        }
        Ok(())
    }

    fn check_input(&self, z: &Array3<f64>) -> Result<()> {
        let (c, h, w) = z.dim();
        if c != 1 {
            return Err(CoreError::Shape(format!("seed must have one channel, got {c}")));
        }
        let divisor = 1usize << (self.cfg.depth - 1);
        if h == 0 || w == 0 || h % divisor != 0 || w % divisor != 0 {
            return Err(CoreError::Shape(format!(
                "seed dims {h}x{w} must be positive multiples of {divisor} for depth {}",
                self.cfg.depth
            )));
        }
        Ok(())
    }

    /// Produces the estimated image in (0, 1) plus the cache for `backward`.
    pub fn forward(&self, z: &Array3<f64>) -> Result<(Array2<f64>, ImageNetCache)> {
        self.check_input(z)?;
        let depth = self.cfg.depth;
        let mut conv_in = Vec::with_capacity(4 * depth - 1);
        let mut conv_pre = Vec::with_capacity(4 * depth - 1);
        let mut norm_out = Vec::with_capacity(4 * depth - 2);
        let mut norm_r = Vec::with_capacity(4 * depth - 2);
        let mut skips: Vec<Array3<f64>> = Vec::with_capacity(depth - 1);
        let stem_in = z.mapv(|v| (v - SEED_SHIFT) / SEED_SCALE);
        let mut x = self.stem.forward(&stem_in)?;
        for d in 0..depth {
            if d > 0 {
                x = avg_pool2(&x)?;
            }
            for conv in &self.enc[d] {
                conv_in.push(x.clone());
                let pre = conv.forward(&x)?;
                let (xn, r) = channel_rms_norm(&leaky_relu(&pre));
                conv_pre.push(pre);
                norm_out.push(xn.clone());
                norm_r.push(r);
                x = xn;
            }
            if d < depth - 1 {
                skips.push(x.clone());
            }
        }
        for (i, block) in self.dec.iter().enumerate() {
            let scale = depth - 2 - i;
            x = upsample2(&x);
            x = concat_channels(&x, &skips[scale])?;
            for conv in block {
                conv_in.push(x.clone());
                let pre = conv.forward(&x)?;
                let (xn, r) = channel_rms_norm(&leaky_relu(&pre));
                conv_pre.push(pre);
                norm_out.push(xn.clone());
                norm_r.push(r);
                x = xn;
            }
        }
        conv_in.push(x.clone());
        let pre = self.head.forward(&x)?;
        let out = sigmoid(&pre);
        conv_pre.push(pre);
        let img = out.index_axis(Axis(0), 0).to_owned();
        Ok((img, ImageNetCache { conv_in, conv_pre, norm_out, norm_r, stem_in, sig_out: out }))
    }

    /// Backpropagates an image-space gradient to a flat parameter gradient
    /// aligned with [`ImageEstimator::params`]. Also returns the gradient
    /// with respect to the seed.
    pub fn backward(
        &self,
        cache: &ImageNetCache,
        g_img: &Array2<f64>,
    ) -> Result<(Vec<f64>, Array3<f64>)> {
        let depth = self.cfg.depth;
        let width = |d: usize| self.cfg.base_width << d;
        let n_convs = cache.conv_in.len();
        let mut grads: Vec<Option<(Array2<f64>, ndarray::Array1<f64>)>> = vec![None; n_convs];

        let (h, w) = g_img.dim();
        let g3 = g_img
            .to_owned()
            .into_shape_with_order((1, h, w))
            .map_err(|e| CoreError::Shape(e.to_string()))?;
        let mut g = sigmoid_backward(&cache.sig_out, &g3);

        // Head.
        let mut ci = n_convs - 1;
        let (gx, gw, gb) = self.head.backward(&cache.conv_in[ci], &g)?;
        grads[ci] = Some((gw, gb));
        g = gx;

        // Decoder blocks, last executed first. Block `i` (forward order)
        // serves scale `depth - 2 - i` and owns convolution slots
        // `2 * depth + 2 * i` and the one after.
        let mut skip_grads: Vec<Option<Array3<f64>>> = vec![None; depth - 1];
        for i in (0..self.dec.len()).rev() {
            let scale = depth - 2 - i;
            let base = 2 * depth + 2 * i;
            for half in [1usize, 0] {
                ci = base + half;
                g = channel_rms_norm_backward(&cache.norm_out[ci], &cache.norm_r[ci], &g);
                g = leaky_relu_backward(&cache.conv_pre[ci], &g);
                let (gx, gw, gb) = self.dec[i][half].backward(&cache.conv_in[ci], &g)?;
                grads[ci] = Some((gw, gb));
                g = gx;
            }
            let (g_up, g_skip) = split_channels(&g, width(scale + 1));
            skip_grads[scale] = Some(g_skip);
            g = upsample2_backward(&g_up)?;
        }

        // Encoder blocks, deepest first. The skip branch re-enters where the
        // pooled path left the scale.
        for d in (0..depth).rev() {
            for half in [1usize, 0] {
                ci = 2 * d + half;
                g = channel_rms_norm_backward(&cache.norm_out[ci], &cache.norm_r[ci], &g);
                g = leaky_relu_backward(&cache.conv_pre[ci], &g);
                let (gx, gw, gb) = self.enc[d][half].backward(&cache.conv_in[ci], &g)?;
                grads[ci] = Some((gw, gb));
                g = gx;
            }
            if d > 0 {
                g = avg_pool2_backward(&g);
                if let Some(sg) = &skip_grads[d - 1] {
                    g += sg;
                }
            }
        }

        let mut flat = Vec::with_capacity(self.param_len());
        for entry in grads {
            let (gw, gb) = entry.expect("every convolution visited in backward");
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        let (mut g, _, _) = self.stem.backward(&cache.stem_in, &g)?;
        g.mapv_inplace(|v| v / SEED_SCALE);
        Ok((flat, g))
    }
}
