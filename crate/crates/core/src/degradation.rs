//! Forward degradation model: blur with a kernel, decimate by an integer
//! scale, add white Gaussian noise. Also provides the pieces training needs
//! around it: the adjoint of the clean operator (for image gradients), the
//! gradient with respect to the kernel, and an explicit matrix form used by
//! the stability analysis on small instances.
//!
//! Conventions, fixed across every function here:
//! * Blur is correlation style: `out[i, j] = sum_ab x[i + a - c, j + b - c] * k[a, b]`
//!   with `c = k/2`. Gaussian kernels are centro-symmetric, so this equals
//!   convolution for them.
//! * Out-of-range indices reflect once without repeating the edge sample:
//!   `-1 -> 1`, `n -> n - 2`. This requires `c <= n - 1`, which is validated.
//! * Decimation keeps samples at offsets `0, s, 2s, ...`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::image_grid::ImageGrid;
use crate::kernel::Kernel;
use crate::{CoreError, Result};

/// How the blurred image is brought down to low resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DownsampleMode {
    /// Keep every `s`-th sample. The model the learners invert; the only mode
    /// with gradient support.
    Strided,
    /// Bicubic resampling to the target size; useful for generating
    /// off-model observations.
    Bicubic,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DegradationSpec {
    pub scale: usize,
    pub noise_sigma: f64,
    pub mode: DownsampleMode,
}

impl DegradationSpec {
    pub fn new(scale: usize, noise_sigma: f64, mode: DownsampleMode) -> Result<Self> {
        if scale == 0 {
            return Err(CoreError::InvalidArgument("scale must be positive".into()));
        }
        if !noise_sigma.is_finite() || noise_sigma < 0.0 {
            return Err(CoreError::InvalidArgument(format!(
                "noise sigma must be finite and non-negative, got {noise_sigma}"
            )));
        }
        Ok(DegradationSpec { scale, noise_sigma, mode })
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
    debug_assert!((0..n).contains(&r), "reflection out of range: pad exceeds image");
    r as usize
}

fn check_shapes(h: usize, w: usize, k: usize, scale: usize) -> Result<()> {
    let c = k / 2;
    if c + 1 > h || c + 1 > w {
        return Err(CoreError::Shape(format!(
            "kernel side {k} too large for {h}x{w} image under single-bounce reflection"
        )));
    }
    if !h.is_multiple_of(scale) || !w.is_multiple_of(scale) {
        return Err(CoreError::Shape(format!(
            "image {h}x{w} not divisible by scale {scale}"
        )));
    }
    Ok(())
}

/// Source image extended by `pad` on each side with single-bounce reflection.
fn reflect_pad(x: &Array2<f64>, pad: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    Array2::from_shape_fn((h + 2 * pad, w + 2 * pad), |(i, j)| {
        x[[reflect(i as isize - pad as isize, h), reflect(j as isize - pad as isize, w)]]
    })
}

/// Same-size blur with reflect boundary handling.
pub fn convolve_reflect(x: &Array2<f64>, kernel: &Kernel) -> Result<Array2<f64>> {
    let (h, w) = x.dim();
    let k = kernel.size();
    check_shapes(h, w, k, 1)?;
    let c = k / 2;
    let padded = reflect_pad(x, c);
    let kv = kernel.values();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for a in 0..k {
                for b in 0..k {
                    acc += padded[[i + a, j + b]] * kv[[a, b]];
                }
            }
            out[[i, j]] = acc;
        }
    }
    Ok(out)
}

/// Blur + decimate without noise: the operator whose inversion is being
/// learned, and the linear map the gradients below differentiate.
pub fn degrade_clean(
    x: &ImageGrid,
    kernel: &Kernel,
    scale: usize,
    mode: DownsampleMode,
) -> Result<ImageGrid> {
    let (h, w) = (x.height(), x.width());
    check_shapes(h, w, kernel.size(), scale.max(1))?;
    if scale == 0 {
        return Err(CoreError::InvalidArgument("scale must be positive".into()));
    }
    let blurred = convolve_reflect(x.data(), kernel)?;
    match mode {
        DownsampleMode::Strided => {
            let (oh, ow) = (h / scale, w / scale);
            let out = Array2::from_shape_fn((oh, ow), |(i, j)| blurred[[i * scale, j * scale]]);
            Ok(ImageGrid::new(out))
        }
        DownsampleMode::Bicubic => {
            ImageGrid::new(blurred).resize_bicubic(h / scale, w / scale)
        }
    }
}

/// Full observation model: clean degradation plus white Gaussian noise drawn
/// from `rng`. With `noise_sigma = 0` no draws are consumed.
pub fn degrade<R: Rng + ?Sized>(
    x: &ImageGrid,
    kernel: &Kernel,
    spec: &DegradationSpec,
    rng: &mut R,
) -> Result<ImageGrid> {
    let mut out = degrade_clean(x, kernel, spec.scale, spec.mode)?;
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| CoreError::InvalidArgument(e.to_string()))?;
        for v in out.data_mut().iter_mut() {
            *v += normal.sample(rng);
        }
    }
    Ok(out)
}

/// Adjoint of the strided clean operator applied to a low-resolution
/// gradient: returns `d(sum(grad . A x)) / dx`, shape `(h, w)`.
///
/// Scatter form of the forward loop: each forward tap
/// `out[i,j] += x[r(si + a - c), r(sj + b - c)] * k[a,b]` contributes
/// `grad[i,j] * k[a,b]` back to that same reflected source cell.
pub fn grad_input(
    grad: &Array2<f64>,
    kernel: &Kernel,
    scale: usize,
    in_shape: (usize, usize),
) -> Result<Array2<f64>> {
    let (h, w) = in_shape;
    let k = kernel.size();
    check_shapes(h, w, k, scale.max(1))?;
    let (oh, ow) = (h / scale, w / scale);
    if grad.dim() != (oh, ow) {
        return Err(CoreError::Shape(format!(
            "gradient shape {:?} does not match output shape ({oh}, {ow})",
            grad.dim()
        )));
    }
    let c = (k / 2) as isize;
    let kv = kernel.values();
    let mut gx = Array2::zeros((h, w));
    for i in 0..oh {
        for j in 0..ow {
            let g = grad[[i, j]];
            if g == 0.0 {
                continue;
            }
            for a in 0..k {
                for b in 0..k {
                    let pi = reflect((i * scale) as isize + a as isize - c, h);
                    let pj = reflect((j * scale) as isize + b as isize - c, w);
                    gx[[pi, pj]] += g * kv[[a, b]];
                }
            }
        }
    }
    Ok(gx)
}

/// Gradient of `sum(grad . A_k x)` with respect to the kernel entries:
/// `gk[a,b] = sum_ij grad[i,j] * x[r(si + a - c), r(sj + b - c)]`.
pub fn grad_kernel(
    grad: &Array2<f64>,
    x: &ImageGrid,
    scale: usize,
    kernel_size: usize,
) -> Result<Array2<f64>> {
    let (h, w) = (x.height(), x.width());
    check_shapes(h, w, kernel_size, scale.max(1))?;
    let (oh, ow) = (h / scale, w / scale);
    if grad.dim() != (oh, ow) {
        return Err(CoreError::Shape(format!(
            "gradient shape {:?} does not match output shape ({oh}, {ow})",
            grad.dim()
        )));
    }
    let c = kernel_size / 2;
    let padded = reflect_pad(x.data(), c);
    let mut gk = Array2::zeros((kernel_size, kernel_size));
    for i in 0..oh {
        for j in 0..ow {
            let g = grad[[i, j]];
            if g == 0.0 {
                continue;
            }
            for a in 0..kernel_size {
                for b in 0..kernel_size {
                    gk[[a, b]] += g * padded[[i * scale + a, j * scale + b]];
                }
            }
        }
    }
    Ok(gk)
}

/// Explicit matrix of the strided clean operator acting on row-major
/// flattened images: shape `(h/s * w/s, h * w)`. Only intended for small
/// instances; entries accumulate where reflection folds taps together.
pub fn degradation_matrix(
    kernel: &Kernel,
    scale: usize,
    h: usize,
    w: usize,
) -> Result<Array2<f64>> {
    check_shapes(h, w, kernel.size(), scale.max(1))?;
    if scale == 0 {
        return Err(CoreError::InvalidArgument("scale must be positive".into()));
    }
    let (oh, ow) = (h / scale, w / scale);
    let k = kernel.size();
    let c = (k / 2) as isize;
    let kv = kernel.values();
    let mut a_mat = Array2::zeros((oh * ow, h * w));
    for i in 0..oh {
        for j in 0..ow {
            let row = i * ow + j;
            for a in 0..k {
                for b in 0..k {
                    let pi = reflect((i * scale) as isize + a as isize - c, h);
                    let pj = reflect((j * scale) as isize + b as isize - c, w);
                    a_mat[[row, pi * w + pj]] += kv[[a, b]];
                }
            }
        }
    }
    Ok(a_mat)
}
