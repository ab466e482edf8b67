//! Anisotropic Gaussian blur kernels parameterized by a 2x2 covariance.
//!
//! The covariance is given by per-axis standard deviations and a correlation
//! coefficient: `sigma1` acts along the horizontal (column) axis, `sigma2`
//! along the vertical (row) axis, and `rho` tilts the ellipse. Kernels are
//! square with odd side and renormalized to unit mass after evaluating the
//! Gaussian density on the integer grid.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::{CoreError, Result};

/// Covariance parameters of an anisotropic Gaussian.
///
/// Valid when both deviations are strictly positive and `|rho| < 1`; the
/// implied 2x2 covariance matrix is then symmetric positive definite.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CovarianceSpec {
    /// Standard deviation along the horizontal axis.
    pub sigma1: f64,
    /// Standard deviation along the vertical axis.
    pub sigma2: f64,
    /// Correlation in (-1, 1); positive values elongate along the main
    /// image diagonal (down-right).
    pub rho: f64,
}

impl CovarianceSpec {
    pub fn new(sigma1: f64, sigma2: f64, rho: f64) -> Result<Self> {
        let spec = CovarianceSpec { sigma1, sigma2, rho };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1.is_finite() && self.sigma1 > 0.0)
            || !(self.sigma2.is_finite() && self.sigma2 > 0.0)
        {
            return Err(CoreError::InvalidArgument(format!(
                "standard deviations must be finite and positive, got ({}, {})",
                self.sigma1, self.sigma2
            )));
        }
        if !(self.rho.is_finite() && self.rho.abs() < 1.0) {
            return Err(CoreError::InvalidArgument(format!(
                "correlation must satisfy |rho| < 1, got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Determinant of the covariance matrix; positive for valid specs.
    pub fn det(&self) -> f64 {
        self.sigma1 * self.sigma1 * self.sigma2 * self.sigma2 * (1.0 - self.rho * self.rho)
    }
}

/// Square blur kernel with odd side and (approximately) unit mass.
///
/// Construction validates shape, finiteness, and non-negativity, and checks
/// the mass is within 1e-6 of one; it does not silently renormalize, so CSV
/// round trips are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    values: Array2<f64>,
}

/// Tolerance on unit mass accepted by [`Kernel::from_values`].
pub const MASS_TOL: f64 = 1e-6;

impl Kernel {
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let (h, w) = values.dim();
        if h != w {
            return Err(CoreError::Shape(format!("kernel must be square, got {h}x{w}")));
        }
        if h < 3 || h % 2 == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "kernel side must be odd and at least 3, got {h}"
            )));
        }
        let mut sum = 0.0;
        for &v in &values {
            if !v.is_finite() || v < 0.0 {
                return Err(CoreError::InvalidArgument(format!(
                    "kernel entries must be finite and non-negative, got {v}"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(CoreError::InvalidArgument(format!(
                "kernel mass must be 1 within {MASS_TOL:e}, got {sum}"
            )));
        }
        Ok(Kernel { values })
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.values.sum()
    }

    /// Centroid in (row, col) coordinates; the geometric center for a
    /// symmetric kernel of side `k` is `((k-1)/2, (k-1)/2)`.
    pub fn center_of_mass(&self) -> (f64, f64) {
        let mut r = 0.0;
        let mut c = 0.0;
        let mut m = 0.0;
        for ((i, j), &v) in self.values.indexed_iter() {
            r += i as f64 * v;
            c += j as f64 * v;
            m += v;
        }
        (r / m, c / m)
    }

    /// Writes one row per line, entries comma-separated, shortest round-trip
    /// float formatting. Reading the file back reproduces the kernel exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        let mut file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| CoreError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
        let reader = BufReader::new(file);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| CoreError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|tok| tok.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| {
                CoreError::malformed(path, format!("line {}: {e}", lineno + 1))
            })?;
            rows.push(row);
        }
        let k = rows.len();
        if k == 0 {
            return Err(CoreError::malformed(path, "empty kernel file"));
        }
        if rows.iter().any(|r| r.len() != k) {
            return Err(CoreError::malformed(path, "ragged rows: kernel must be square"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let values = Array2::from_shape_vec((k, k), flat)
            .map_err(|e| CoreError::malformed(path, e.to_string()))?;
        Kernel::from_values(values).map_err(|e| CoreError::malformed(path, e.to_string()))
    }
}

/// Evaluates the anisotropic Gaussian density on a `size` x `size` integer
/// grid centered at the middle cell and renormalizes to unit mass.
///
/// At row `i`, column `j` the offset is `u = j - c` (horizontal) and
/// `v = i - c` (vertical), and the exponent is the covariance quadratic form
/// `-(u^2 s2^2 - 2 rho s1 s2 u v + v^2 s1^2) / (2 det)`.
pub fn gaussian_kernel(size: usize, spec: &CovarianceSpec) -> Result<Kernel> {
    spec.validate()?;
    if size < 3 || size.is_multiple_of(2) {
        return Err(CoreError::InvalidArgument(format!(
            "kernel side must be odd and at least 3, got {size}"
        )));
    }
    let c = (size / 2) as f64;
    let det = spec.det();
    let (s1, s2, rho) = (spec.sigma1, spec.sigma2, spec.rho);
    let mut values = Array2::zeros((size, size));
    for i in 0..size {
        for j in 0..size {
            let u = j as f64 - c;
            let v = i as f64 - c;
            let q = (u * u * s2 * s2 - 2.0 * rho * s1 * s2 * u * v + v * v * s1 * s1) / det;
            values[[i, j]] = (-0.5 * q).exp();
        }
    }
    let sum = values.sum();
    values.mapv_inplace(|x| x / sum);
    Kernel::from_values(values)
}

/// Flat kernel with every entry `1 / size^2`; the maximum-entropy baseline
/// for kernel-recovery comparisons.
pub fn uniform_kernel(size: usize) -> Result<Kernel> {
    if size < 3 || size.is_multiple_of(2) {
        return Err(CoreError::InvalidArgument(format!(
            "kernel side must be odd and at least 3, got {size}"
        )));
    }
    let v = 1.0 / (size * size) as f64;
    Kernel::from_values(Array2::from_elem((size, size), v))
}

/// Draws covariance parameters uniformly from the given closed ranges.
/// Draw order is `sigma1`, `sigma2`, `rho`, so a seeded generator yields a
/// reproducible sequence.
pub fn sample_covariance<R: Rng + ?Sized>(
    rng: &mut R,
    sigma_range: (f64, f64),
    rho_range: (f64, f64),
) -> Result<CovarianceSpec> {
    let (slo, shi) = sigma_range;
    let (rlo, rhi) = rho_range;
    if !(slo > 0.0 && shi >= slo) {
        return Err(CoreError::InvalidArgument(format!(
            "sigma range must satisfy 0 < lo <= hi, got [{slo}, {shi}]"
        )));
    }
    if !(rlo > -1.0 && rhi < 1.0 && rhi >= rlo) {
        return Err(CoreError::InvalidArgument(format!(
            "rho range must lie inside (-1, 1), got [{rlo}, {rhi}]"
        )));
    }
    let sigma1 = rng.random_range(slo..=shi);
    let sigma2 = rng.random_range(slo..=shi);
    let rho = rng.random_range(rlo..=rhi);
    CovarianceSpec::new(sigma1, sigma2, rho)
}

/// Default kernel side for an integer scale factor: wide enough to hold the
/// largest sampled blur at that scale.
pub fn default_kernel_size(scale: usize) -> usize {
    4 * scale + 3
}

/// Default deviation range for an integer scale factor.
pub fn default_sigma_range(scale: usize) -> (f64, f64) {
    (0.7, 2.5 * scale as f64)
}

/// Default correlation range.
pub const DEFAULT_RHO_RANGE: (f64, f64) = (-0.8, 0.8);
