//! Synthetic grayscale terrain corpus: smooth large-scale relief, crater
//! bowls with raised rims, and band-limited surface noise. Each image gets
//! one low-resolution observation per requested scale, degraded with a
//! covariance-sampled Gaussian kernel, plus the kernel itself on disk so
//! recovery can be scored later.
//!
//! Generation is a pure function of the spec: per-image generators are
//! derived from the corpus seed and the image index, and the manifest
//! contains no timestamps, so re-running with the same spec is byte-identical.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degradation::{degrade, DegradationSpec, DownsampleMode};
use crate::image_grid::{ImageGrid, PngDepth};
use crate::kernel::{
    default_kernel_size, default_sigma_range, gaussian_kernel, sample_covariance,
    CovarianceSpec, DEFAULT_RHO_RANGE,
};
use crate::{CoreError, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetSpec {
    pub n_images: usize,
    /// Square high-resolution side; must be divisible by every scale.
    pub hr_size: usize,
    pub scales: Vec<usize>,
    pub noise_sigma: f64,
    pub mode: DownsampleMode,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(CoreError::InvalidArgument("n_images must be positive".into()));
        }
        if self.scales.is_empty() {
            return Err(CoreError::InvalidArgument("at least one scale required".into()));
        }
        for &s in &self.scales {
            if s < 2 {
                return Err(CoreError::InvalidArgument(format!(
                    "scales must be at least 2, got {s}"
                )));
            }
            if !self.hr_size.is_multiple_of(s) {
                return Err(CoreError::InvalidArgument(format!(
                    "hr_size {} not divisible by scale {s}",
                    self.hr_size
                )));
            }
            if self.hr_size / 2 < default_kernel_size(s) / 2 + 1 {
                return Err(CoreError::InvalidArgument(format!(
                    "hr_size {} too small for the scale-{s} blur support",
                    self.hr_size
                )));
            }
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(CoreError::InvalidArgument(
                "noise_sigma must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One low-resolution observation of one image.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrRecord {
    pub scale: usize,
    pub lr_path: String,
    pub kernel_path: String,
    pub covariance: CovarianceSpec,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetEntry {
    pub index: usize,
    pub hr_path: String,
    pub observations: Vec<LrRecord>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub spec: DatasetSpec,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&body).map_err(|e| CoreError::malformed(path, e.to_string()))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(CoreError::malformed(
                path,
                format!(
                    "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                    manifest.version
                ),
            ));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::io(path, e))?;
        std::fs::write(path, body + "\n").map_err(|e| CoreError::io(path, e))
    }
}

fn per_image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    // Splitmix-style spread so adjacent indices land far apart in seed space.
    let mixed = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Renders one terrain image: a few long cosine swells, several crater bowls
/// with rims, and blurred white noise, affinely normalized into [0.08, 0.92].
pub fn generate_terrain<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<ImageGrid> {
    if size < 16 {
        return Err(CoreError::InvalidArgument(format!(
            "terrain size must be at least 16, got {size}"
        )));
    }
    let n = size as f64;
    let mut field = Array2::<f64>::zeros((size, size));

    // Large-scale swells.
    let n_waves = 4;
    for m in 1..=n_waves {
        let amp = rng.random_range(0.5..1.0) / m as f64;
        let fi = rng.random_range(0.5..3.0) / n;
        let fj = rng.random_range(0.5..3.0) / n;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for ((i, j), v) in field.indexed_iter_mut() {
            let arg = std::f64::consts::TAU * (fi * i as f64 + fj * j as f64) + phase;
            *v += amp * arg.cos();
        }
    }

    // Craters: smooth bowl with zero slope at the rim plus a raised lip.
    let n_craters = rng.random_range(3..7);
    for _ in 0..n_craters {
        let ci = rng.random_range(0.0..n);
        let cj = rng.random_range(0.0..n);
        let radius = rng.random_range(n / 12.0..n / 5.0);
        let depth = rng.random_range(0.3..1.0);
        for ((i, j), v) in field.indexed_iter_mut() {
            let d = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
            let t = d / radius;
            if t < 1.0 {
                let bowl = (std::f64::consts::FRAC_PI_2 * t).cos();
                *v -= depth * bowl * bowl;
            }
            if t < 1.6 {
                let lip = ((t - 1.0) / 0.18).powi(2);
                *v += 0.18 * depth * (-lip).exp();
            }
        }
    }

    // Band-limited noise: white field blurred by a small isotropic Gaussian.
    let white = Array2::from_shape_fn((size, size), |_| rng.random_range(-1.0..1.0));
    let smooth_kernel =
        gaussian_kernel(7, &CovarianceSpec::new(1.2, 1.2, 0.0)?)?;
    let smooth = crate::degradation::convolve_reflect(&white, &smooth_kernel)?;
    field.zip_mut_with(&smooth, |v, &s| *v += 0.35 * s);

    // Affine normalization into a fixed interior range.
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &field {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo < 1e-12 {
        field.fill(0.5);
    } else {
        field.mapv_inplace(|v| 0.08 + 0.84 * (v - lo) / (hi - lo));
    }
    Ok(ImageGrid::new(field))
}

/// Writes the corpus under `dir` (`hr/`, `lr/`, `kernels/`, `manifest.json`)
/// and returns the manifest. Images are 16-bit PNG so quantization stays well
/// below the configured noise floor.
pub fn synthesize_dataset(dir: &Path, spec: &DatasetSpec) -> Result<DatasetManifest> {
    spec.validate()?;
    for sub in ["hr", "lr", "kernels"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| CoreError::io(dir.join(sub), e))?;
    }
    let mut entries = Vec::with_capacity(spec.n_images);
    for index in 0..spec.n_images {
        let mut rng = per_image_rng(spec.seed, index);
        let hr = generate_terrain(spec.hr_size, &mut rng)?;
        let hr_rel = format!("hr/{index:03}.png");
        hr.save_png(&dir.join(&hr_rel), PngDepth::Sixteen)?;

        let mut observations = Vec::with_capacity(spec.scales.len());
        for &scale in &spec.scales {
            let cov = sample_covariance(
                &mut rng,
                default_sigma_range(scale),
                DEFAULT_RHO_RANGE,
            )?;
            let kernel = gaussian_kernel(default_kernel_size(scale), &cov)?;
            let deg = DegradationSpec::new(scale, spec.noise_sigma, spec.mode)?;
            let lr = degrade(&hr, &kernel, &deg, &mut rng)?;
            let lr_rel = format!("lr/{index:03}_x{scale}.png");
            let kernel_rel = format!("kernels/{index:03}_x{scale}.csv");
            lr.save_png(&dir.join(&lr_rel), PngDepth::Sixteen)?;
            kernel.write_csv(&dir.join(&kernel_rel))?;
            observations.push(LrRecord {
                scale,
                lr_path: lr_rel,
                kernel_path: kernel_rel,
                covariance: cov,
                noise_sigma: spec.noise_sigma,
            });
        }
        entries.push(DatasetEntry { index, hr_path: hr_rel, observations });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        spec: spec.clone(),
        entries,
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Absolute path of a manifest-relative artifact.
pub fn resolve(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}
