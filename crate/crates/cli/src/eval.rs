//! Evaluation command: scores run artifacts against a dataset's ground
//! truth and writes the per-run and averaged metric rows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use hacbsr_core::dataset::{resolve, DatasetManifest, LrRecord};
use hacbsr_core::image_grid::ImageGrid;
use hacbsr_core::kernel::Kernel;
use hacbsr_core::metrics::{bicubic_baseline, evaluate_pair, kernel_psnr, write_eval_csv, EvalRow};

use crate::manifest::RunManifest;
use crate::run::kernel_ssim;
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct EvalArgs {
    /// Dataset directory holding the ground-truth manifest.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory containing run output directories.
    #[arg(long)]
    pub runs: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Extra baseline rows computed from the observations ("bicubic").
    #[arg(long)]
    pub baseline: Option<String>,
}

struct GroundTruth {
    hr_path: PathBuf,
    kernel_path: PathBuf,
    lr_path: PathBuf,
    scale: usize,
}

pub fn execute(args: EvalArgs) -> CliResult {
    let manifest = DatasetManifest::load(&args.dataset.join("manifest.json"))?;
    let mut truth_by_name: BTreeMap<String, GroundTruth> = BTreeMap::new();
    for entry in &manifest.entries {
        for obs in &entry.observations {
            truth_by_name.insert(
                file_name(&resolve(&args.dataset, &obs.lr_path))?,
                ground_truth(&args.dataset, &entry.hr_path, obs),
            );
        }
    }

    let mut run_dirs = Vec::new();
    let listing = std::fs::read_dir(&args.runs)
        .map_err(|e| CliError::io(format!("reading {}: {e}", args.runs.display())))?;
    for item in listing {
        let item = item.map_err(|e| CliError::io(format!("reading {}: {e}", args.runs.display())))?;
        if item.path().join("manifest.json").is_file() {
            run_dirs.push(item.path());
        }
    }
    run_dirs.sort();
    if run_dirs.is_empty() {
        return Err(CliError::args(format!("no run directories under {}", args.runs.display())));
    }

    let mut rows = Vec::new();
    for dir in &run_dirs {
        let run = RunManifest::load(&dir.join("manifest.json"))?;
        let input_name = file_name(Path::new(&run.input))?;
        let truth = truth_by_name.get(&input_name).ok_or_else(|| {
            CliError::args(format!(
                "missing ground truth: dataset has no observation named {input_name}"
            ))
        })?;
        let hr = load_ground_truth_png(&truth.hr_path)?;
        let sr = ImageGrid::load_png(&dir.join("sr.png"))?;
        let metrics = evaluate_pair(&sr, &hr)?;
        let image = input_name.trim_end_matches(".png").to_string();
        rows.push(EvalRow {
            image: image.clone(),
            scale: truth.scale,
            method: "hacbsr".into(),
            psnr: metrics.psnr,
            ssim: metrics.ssim,
        });
        let estimate = Kernel::read_csv(&dir.join("kernel.csv"))?;
        let true_kernel = Kernel::read_csv(&truth.kernel_path)?;
        rows.push(EvalRow {
            image: image.clone(),
            scale: truth.scale,
            method: "kernel".into(),
            psnr: kernel_psnr(&estimate, &true_kernel)?,
            ssim: kernel_ssim(&estimate, &true_kernel)?,
        });
        if args.baseline.as_deref() == Some("bicubic") {
            let lr = ImageGrid::load_png(&truth.lr_path)?;
            let upsampled = bicubic_baseline(&lr, truth.scale)?;
            let base = evaluate_pair(&upsampled, &hr)?;
            rows.push(EvalRow {
                image,
                scale: truth.scale,
                method: "bicubic".into(),
                psnr: base.psnr,
                ssim: base.ssim,
            });
        } else if let Some(other) = &args.baseline {
            return Err(CliError::args(format!("unknown baseline {other}; supported: bicubic")));
        }
    }

    // One average row per (method, scale), appended after the per-run rows.
    let mut groups: BTreeMap<(String, usize), Vec<&EvalRow>> = BTreeMap::new();
    for row in &rows {
        groups.entry((row.method.clone(), row.scale)).or_default().push(row);
    }
    let mut averages = Vec::new();
    for ((method, scale), members) in groups {
        let n = members.len() as f64;
        let psnr = members.iter().map(|r| r.psnr).sum::<f64>() / n;
        let ssim = members.iter().map(|r| r.ssim).sum::<f64>() / n;
        println!("{method} x{scale}: psnr {psnr:.3} dB, ssim {ssim:.4} over {} runs", members.len());
        averages.push(EvalRow { image: "average".into(), scale, method, psnr, ssim });
    }
    rows.extend(averages);
    write_eval_csv(&args.out, &rows)?;
    Ok(())
}

fn ground_truth(dataset: &Path, hr_rel: &str, obs: &LrRecord) -> GroundTruth {
    GroundTruth {
        hr_path: resolve(dataset, hr_rel),
        kernel_path: resolve(dataset, &obs.kernel_path),
        lr_path: resolve(dataset, &obs.lr_path),
        scale: obs.scale,
    }
}

fn file_name(path: &Path) -> Result<String, CliError> {
    path.file_name()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::args(format!("path {} has no file name", path.display())))
}

/// Ground-truth images named by the manifest must exist; a gap is an
/// argument error, not an I/O failure.
fn load_ground_truth_png(path: &Path) -> Result<ImageGrid, CliError> {
    if !path.is_file() {
        return Err(CliError::args(format!("missing ground truth image {}", path.display())));
    }
    Ok(ImageGrid::load_png(path)?)
}
