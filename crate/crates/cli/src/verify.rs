//! Stability-bound verification over randomized linearized instances.

use std::path::PathBuf;

use clap::Args;
use hacbsr_core::dataset::generate_terrain;
use hacbsr_core::degradation::degradation_matrix;
use hacbsr_core::image_grid::ImageGrid;
use hacbsr_core::kernel::{
    default_kernel_size, default_sigma_range, gaussian_kernel, sample_covariance,
    DEFAULT_RHO_RANGE,
};
use hacbsr_core::metrics::bicubic_baseline;
use hacbsr_core::networks::FeatureEncoder;
use hacbsr_core::stability::{verify_bounds, LinearSystem, DEFAULT_THETA_GRID};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{CliError, CliResult};

#[derive(Args)]
pub struct VerifyArgs {
    /// Square high-resolution side of each generated instance.
    #[arg(long, default_value_t = 16)]
    pub image_size: usize,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    /// Rows of the feature projection.
    #[arg(long, default_value_t = 128)]
    pub feature_dim: usize,
    /// Comma-separated regularization grid; defaults to five decades around 1.
    #[arg(long, value_delimiter = ',')]
    pub theta_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub noise_sigma: f64,
    /// Replace the observation with the exact degradation of the historical
    /// anchor, so the residual and the feature deviation both vanish.
    #[arg(long)]
    pub consistent: bool,
    /// Directory for per-trial CSV reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn execute(args: VerifyArgs) -> CliResult {
    if args.trials == 0 {
        return Err(CliError::args("at least one trial required"));
    }
    let grid = args.theta_grid.clone().unwrap_or_else(|| DEFAULT_THETA_GRID.to_vec());
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut failures = 0_usize;
    for trial in 0..args.trials {
        let sys = build_instance(&args, grid.clone(), &mut rng)?;
        let report = verify_bounds(&sys)?;
        println!("trial {trial:02}: {}", report.verdict());
        if let Some(dir) = &args.out {
            report.save_csv(&dir.join(format!("stability-{trial:02}.csv")))?;
        }
        if !report.all_pass() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CliError::verify(format!("{failures} of {} trials failed", args.trials)));
    }
    println!("all {} trials passed", args.trials);
    Ok(())
}

/// One randomized instance: a terrain image degraded by a sampled kernel,
/// a random full-row-rank feature projection, and the bicubic upsampling of
/// the observation as the historical anchor.
fn build_instance(
    args: &VerifyArgs,
    grid: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<LinearSystem, CliError> {
    let n = args.image_size;
    if args.scale < 2 || !n.is_multiple_of(args.scale) {
        return Err(CliError::args(format!(
            "image size {n} must be divisible by scale {} (>= 2)",
            args.scale
        )));
    }
    let hr = generate_terrain(n, rng)?;
    let cov = sample_covariance(rng, default_sigma_range(args.scale), DEFAULT_RHO_RANGE)?;
    let kernel = gaussian_kernel(default_kernel_size(args.scale), &cov)?;
    let a = degradation_matrix(&kernel, args.scale, n, n)?;
    let encoder = FeatureEncoder::linear_random((n, n), args.feature_dim, rng)?;
    let b = encoder
        .matrix()
        .expect("linear-random encoders always expose their matrix")
        .clone();

    let x = hr.to_vec();
    let mut y = a.dot(&x);
    if args.noise_sigma > 0.0 {
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += args.noise_sigma * z;
        }
    }
    let side = n / args.scale;
    let lr = ImageGrid::new(
        Array2::from_shape_vec((side, side), y.to_vec())
            .expect("observation length matches the decimated grid"),
    );
    let x_h: Array1<f64> = bicubic_baseline(&lr, args.scale)?.to_vec();
    if args.consistent {
        y = a.dot(&x_h);
    }
    Ok(LinearSystem::new(&a, &b, &y, &x_h, grid)?)
}
