//! Reconstruction quality metrics.
//!
//! Image PSNR assumes a unit data range and caps at 100 dB so identical
//! inputs stay finite. SSIM uses the standard Gaussian window (11 taps,
//! sigma 1.5) over fully interior positions only, which avoids inventing a
//! boundary policy. Kernel PSNR first aligns centers of mass to the nearest
//! integer shift so a recovered kernel is not penalized for sitting one cell
//! off-center, then scores against the true kernel's peak value.

use std::path::Path;

use ndarray::Array2;

use crate::image_grid::ImageGrid;
use crate::kernel::Kernel;
use crate::{CoreError, Result};

/// Cap applied when the mean squared error underflows.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(CoreError::Shape(format!(
            "metric operands differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for unit-range images.
pub fn psnr(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_same_shape(a.data(), b.data())?;
    let n = (a.height() * a.width()) as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse, 1.0))
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= peak * peak * 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Structural similarity with configurable window and data range; exposed so
/// kernel similarity scoring can reuse it with a smaller window.
pub fn ssim_with(
    a: &Array2<f64>,
    b: &Array2<f64>,
    window: usize,
    sigma: f64,
    data_range: f64,
) -> Result<f64> {
    check_same_shape(a, b)?;
    let (h, w) = a.dim();
    if window == 0 || window.is_multiple_of(2) {
        return Err(CoreError::InvalidArgument(format!(
            "SSIM window must be odd and positive, got {window}"
        )));
    }
    if h < window || w < window {
        return Err(CoreError::Shape(format!(
            "image {h}x{w} smaller than SSIM window {window}"
        )));
    }
    if !(data_range > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "data range must be positive, got {data_range}"
        )));
    }
    // Normalized 2-d Gaussian window weights.
    let c = (window / 2) as f64;
    let mut wgt = Array2::from_shape_fn((window, window), |(i, j)| {
        let (di, dj) = (i as f64 - c, j as f64 - c);
        (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
    });
    let wsum = wgt.sum();
    wgt.mapv_inplace(|v| v / wsum);

    let c1 = (0.01 * data_range) * (0.01 * data_range);
    let c2 = (0.03 * data_range) * (0.03 * data_range);
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=(h - window) {
        for j0 in 0..=(w - window) {
            let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in 0..window {
                for dj in 0..window {
                    let wv = wgt[[di, dj]];
                    let av = a[[i0 + di, j0 + dj]];
                    let bv = b[[i0 + di, j0 + dj]];
                    ma += wv * av;
                    mb += wv * bv;
                    maa += wv * av * av;
                    mbb += wv * bv * bv;
                    mab += wv * av * bv;
                }
            }
            let va = maa - ma * ma;
            let vb = mbb - mb * mb;
            let cov = mab - ma * mb;
            let val = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += val;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Structural similarity with the standard 11-tap window on unit-range images.
pub fn ssim(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    ssim_with(a.data(), b.data(), 11, 1.5, 1.0)
}

pub fn evaluate_pair(sr: &ImageGrid, hr: &ImageGrid) -> Result<MetricReport> {
    Ok(MetricReport { psnr: psnr(sr, hr)?, ssim: ssim(sr, hr)? })
}

/// Bicubic upsampling of a low-resolution observation; the no-learning
/// baseline every run is compared against.
pub fn bicubic_baseline(lr: &ImageGrid, scale: usize) -> Result<ImageGrid> {
    if scale == 0 {
        return Err(CoreError::InvalidArgument("scale must be positive".into()));
    }
    lr.resize_bicubic(lr.height() * scale, lr.width() * scale)
}

/// PSNR between kernels of equal size after integer center-of-mass
/// alignment, scored against the true kernel's peak.
pub fn kernel_psnr(estimate: &Kernel, truth: &Kernel) -> Result<f64> {
    if estimate.size() != truth.size() {
        return Err(CoreError::Shape(format!(
            "kernel sizes differ: {} vs {}",
            estimate.size(),
            truth.size()
        )));
    }
    let k = truth.size();
    let (er, ec) = estimate.center_of_mass();
    let (tr, tc) = truth.center_of_mass();
    let dr = (tr - er).round() as isize;
    let dc = (tc - ec).round() as isize;
    // Shift the estimate by (dr, dc), zero-filling uncovered cells.
    let mut shifted = Array2::zeros((k, k));
    for i in 0..k as isize {
        for j in 0..k as isize {
            let (si, sj) = (i - dr, j - dc);
            if si >= 0 && si < k as isize && sj >= 0 && sj < k as isize {
                shifted[[i as usize, j as usize]] =
                    estimate.values()[[si as usize, sj as usize]];
            }
        }
    }
    let peak = truth.values().iter().cloned().fold(f64::MIN, f64::max);
    let mse: f64 = shifted
        .iter()
        .zip(truth.values().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / (k * k) as f64;
    Ok(psnr_from_mse(mse, peak))
}

/// One scored reconstruction in an evaluation table.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalRow {
    pub image: String,
    pub scale: usize,
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Writes `image,scale,method,psnr,ssim` rows with shortest round-trip float
/// formatting.
pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut out = String::from("image,scale,method,psnr,ssim\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.image, r.scale, r.method, r.psnr, r.ssim
        ));
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gaussian_kernel, uniform_kernel, CovarianceSpec};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_has_closed_form_on_constant_offset() {
        let a = ImageGrid::new(Array2::zeros((8, 8)));
        let b = ImageGrid::new(Array2::from_elem((8, 8), 0.1));
        // mse = 0.01, so 10 log10(1 / 0.01) = 20 dB exactly.
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB, epsilon = 0.0);
        let c = ImageGrid::new(Array2::zeros((4, 8)));
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn ssim_is_one_on_identical_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = ImageGrid::new(Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..1.0)));
        let b = ImageGrid::new(Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..1.0)));
        assert_abs_diff_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap(), epsilon = 1e-12);
        assert!(ssim(&a, &b).unwrap() < 0.9);
    }

    #[test]
    fn ssim_on_constants_matches_closed_form() {
        let a = ImageGrid::new(Array2::from_elem((12, 12), 0.4));
        let b = ImageGrid::new(Array2::from_elem((12, 12), 0.6));
        // Zero variance everywhere: luminance term only.
        let c1 = 1e-4;
        let expected = (2.0 * 0.4 * 0.6 + c1) / (0.4f64.powi(2) + 0.6f64.powi(2) + c1);
        assert_abs_diff_eq!(ssim(&a, &b).unwrap(), expected, epsilon = 1e-12);
    }

    /// Brute-force oracle with independently computed window statistics.
    #[test]
    fn ssim_matches_direct_window_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Array2::from_shape_fn((14, 13), |_| rng.random_range(0.0..1.0));
        let b = a.mapv(|v| (v + rng.random_range(-0.1..0.1f64)).clamp(0.0, 1.0));
        let got = ssim_with(&a, &b, 7, 1.5, 1.0).unwrap();
        // Oracle: accumulate raw weighted moments per window.
        let mut weights = vec![];
        for i in 0..7 {
            for j in 0..7 {
                let (di, dj) = (i as f64 - 3.0, j as f64 - 3.0);
                weights.push((-(di * di + dj * dj) / 4.5).exp());
            }
        }
        let wsum: f64 = weights.iter().sum();
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        let mut count = 0;
        for i0 in 0..=(14 - 7) {
            for j0 in 0..=(13 - 7) {
                let mut m = [0.0f64; 5];
                let mut idx = 0;
                for di in 0..7 {
                    for dj in 0..7 {
                        let wv = weights[idx] / wsum;
                        idx += 1;
                        let (x, y) = (a[[i0 + di, j0 + dj]], b[[i0 + di, j0 + dj]]);
                        m[0] += wv * x;
                        m[1] += wv * y;
                        m[2] += wv * x * x;
                        m[3] += wv * y * y;
                        m[4] += wv * x * y;
                    }
                }
                let (va, vb, cov) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
                total += ((2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2))
                    / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
                count += 1;
            }
        }
        assert_abs_diff_eq!(got, total / count as f64, epsilon = 1e-12);
    }

    #[test]
    fn kernel_psnr_forgives_integer_misalignment() {
        let spec = CovarianceSpec::new(1.2, 1.8, 0.3).unwrap();
        let k = gaussian_kernel(11, &spec).unwrap();
        // Roll the kernel one cell down-right; mass stays 1 because the
        // Gaussian tail that falls off the grid is far below 1e-6.
        let mut rolled = Array2::zeros((11, 11));
        for i in 0..10 {
            for j in 0..10 {
                rolled[[i + 1, j + 1]] = k.values()[[i, j]];
            }
        }
        let rolled_sum = rolled.sum();
        rolled.mapv_inplace(|v| v / rolled_sum);
        let shifted = Kernel::from_values(rolled).unwrap();
        let aligned_score = kernel_psnr(&shifted, &k).unwrap();
        assert!(
            aligned_score > 40.0,
            "alignment should nearly cancel the shift, got {aligned_score} dB"
        );
        assert_abs_diff_eq!(kernel_psnr(&k, &k).unwrap(), PSNR_CAP_DB, epsilon = 0.0);
        // A flat kernel is a poor match even after alignment.
        let flat = uniform_kernel(11).unwrap();
        assert!(kernel_psnr(&flat, &k).unwrap() < aligned_score - 10.0);
        let other = uniform_kernel(13).unwrap();
        assert!(kernel_psnr(&other, &k).is_err());
    }

    #[test]
    fn eval_csv_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        write_eval_csv(
            &path,
            &[
                EvalRow {
                    image: "000".into(),
                    scale: 2,
                    method: "bicubic".into(),
                    psnr: 27.5,
                    ssim: 0.695,
                },
                EvalRow {
                    image: "000".into(),
                    scale: 2,
                    method: "learned".into(),
                    psnr: 32.25,
                    ssim: 0.8125,
                },
            ],
        )
        .unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            body,
            "image,scale,method,psnr,ssim\n000,2,bicubic,27.5,0.695\n000,2,learned,32.25,0.8125\n"
        );
    }

    #[test]
    fn bicubic_baseline_scales_up() {
        let lr = ImageGrid::new(Array2::from_elem((8, 6), 0.25));
        let up = bicubic_baseline(&lr, 3).unwrap();
        assert_eq!((up.height(), up.width()), (24, 18));
        assert!(bicubic_baseline(&lr, 0).is_err());
    }
}
