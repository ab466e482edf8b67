//! Training command: one observation, or every observation of a dataset at
//! the configured scale.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::Args;
use hacbsr_core::dataset::{resolve, DatasetManifest};
use hacbsr_core::image_grid::{ImageGrid, PngDepth};
use hacbsr_core::kernel::Kernel;
use hacbsr_core::metrics::{evaluate_pair, kernel_psnr, write_eval_csv, EvalRow};
use hacbsr_core::optim::{RunOutcome, TrainConfig, TrainState};

use crate::manifest::{timestamp_now, RunManifest};
use crate::{CliError, CliResult};

#[derive(Args)]
pub struct RunArgs {
    /// Low-resolution PNG, or a dataset directory containing a manifest.
    #[arg(long)]
    pub input: PathBuf,
    /// Root directory for run outputs.
    #[arg(long)]
    pub out: PathBuf,
    /// Training configuration file; the flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scale: Option<usize>,
    /// Outer iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Inner image steps per outer iteration.
    #[arg(long)]
    pub inner: Option<usize>,
    /// History-contrast weight.
    #[arg(long)]
    pub theta_h: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn execute(args: RunArgs) -> CliResult {
    let cfg = assemble_config(&args)?;
    if args.input.is_dir() {
        run_dataset(&args.input, &args.out, &cfg)
    } else {
        let summary = run_one(&args.input, &args.out, &cfg)?;
        println!("run {} {}", summary.run_id, summary.outcome);
        if summary.diverged {
            Err(CliError::diverged(format!("run {} diverged; partial artifacts written", summary.run_id)))
        } else {
            Ok(())
        }
    }
}

/// Config file first, then flag overrides, then validation.
fn assemble_config(args: &RunArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::load_toml(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.scale {
        cfg.scale = v;
    }
    if let Some(v) = args.iters {
        cfg.n_outer = v;
    }
    if let Some(v) = args.inner {
        cfg.p_inner = v;
    }
    if let Some(v) = args.theta_h {
        cfg.theta_history = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Worker cap for dataset fan-out; single-threaded unless HACBSR_THREADS
/// raises it.
fn worker_count() -> usize {
    std::env::var("HACBSR_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

struct RunSummary {
    run_id: String,
    dir: PathBuf,
    outcome: String,
    diverged: bool,
}

/// Trains on one observation and writes the five run artifacts.
fn run_one(lr_path: &Path, out_root: &Path, cfg: &TrainConfig) -> Result<RunSummary, CliError> {
    let started = timestamp_now();
    let lr = ImageGrid::load_png(lr_path)?;
    let stem = lr_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let run_id = format!("{stem}-s{}-seed{}", cfg.scale, cfg.seed);
    let dir = out_root.join(&run_id);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))?;

    let mut state = TrainState::new(&lr, cfg.clone())?;
    let output = state.run()?;

    output.image.save_png(&dir.join("sr.png"), PngDepth::Sixteen)?;
    output.kernel.write_csv(&dir.join("kernel.csv"))?;
    output.report.save(&dir.join("report.json"))?;
    state.checkpoint().save(&dir.join("checkpoint.bin"))?;
    let outcome = match &output.outcome {
        RunOutcome::Completed => "completed".to_string(),
        RunOutcome::Diverged(info) => {
            format!("diverged at iteration {} during {}", info.iteration, info.stage)
        }
    };
    let manifest = RunManifest {
        run_id: run_id.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_utc: started,
        finished_utc: timestamp_now(),
        seed: cfg.seed,
        input: lr_path.display().to_string(),
        config: cfg.clone(),
        sampling: cfg.sampling_config(),
        artifacts: ["sr.png", "kernel.csv", "report.json", "checkpoint.bin", "manifest.json"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        outcome: outcome.clone(),
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(RunSummary {
        run_id,
        dir,
        outcome,
        diverged: matches!(output.outcome, RunOutcome::Diverged(_)),
    })
}

struct Job {
    lr_path: PathBuf,
    hr_path: PathBuf,
    kernel_path: PathBuf,
    image: String,
}

/// Runs every observation at the configured scale, fanning jobs out over
/// HACBSR_THREADS workers, then writes one aggregate CSV in input order.
fn run_dataset(dataset_dir: &Path, out_root: &Path, cfg: &TrainConfig) -> CliResult {
    let manifest = DatasetManifest::load(&dataset_dir.join("manifest.json"))?;
    let mut jobs = Vec::new();
    for entry in &manifest.entries {
        for obs in &entry.observations {
            if obs.scale != cfg.scale {
                continue;
            }
            let lr_path = resolve(dataset_dir, &obs.lr_path);
            let image = lr_path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image")
                .to_string();
            jobs.push(Job {
                lr_path,
                hr_path: resolve(dataset_dir, &entry.hr_path),
                kernel_path: resolve(dataset_dir, &obs.kernel_path),
                image,
            });
        }
    }
    if jobs.is_empty() {
        return Err(CliError::args(format!(
            "dataset {} has no observations at scale {}",
            dataset_dir.display(),
            cfg.scale
        )));
    }

    let workers = worker_count().min(jobs.len());
    let results: Vec<Mutex<Option<Result<JobOutcome, CliError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for worker in 0..workers {
            let jobs = &jobs;
            let results = &results;
            scope.spawn(move || {
                for (idx, job) in jobs.iter().enumerate() {
                    if idx % workers != worker {
                        continue;
                    }
                    let outcome = run_job(job, out_root, cfg);
                    *results[idx].lock().expect("result slot") = Some(outcome);
                }
            });
        }
    });

    let mut rows = Vec::new();
    let mut diverged_runs = Vec::new();
    for slot in results {
        let outcome = slot
            .into_inner()
            .expect("result slot")
            .expect("every job was assigned to a worker")?;
        if outcome.diverged {
            diverged_runs.push(outcome.run_id.clone());
        }
        rows.extend(outcome.rows);
    }
    let csv_path = out_root.join("aggregate.csv");
    write_eval_csv(&csv_path, &rows)?;
    println!("{} runs aggregated into {}", jobs.len(), csv_path.display());
    if diverged_runs.is_empty() {
        Ok(())
    } else {
        Err(CliError::diverged(format!(
            "{} of {} runs diverged ({}); partial artifacts written",
            diverged_runs.len(),
            jobs.len(),
            diverged_runs.join(", ")
        )))
    }
}

struct JobOutcome {
    run_id: String,
    rows: Vec<EvalRow>,
    diverged: bool,
}

/// One dataset job: train, then score the artifacts against ground truth.
fn run_job(job: &Job, out_root: &Path, cfg: &TrainConfig) -> Result<JobOutcome, CliError> {
    let summary = run_one(&job.lr_path, out_root, cfg)?;
    let hr = ImageGrid::load_png(&job.hr_path)?;
    let sr = ImageGrid::load_png(&summary.dir.join("sr.png"))?;
    let metrics = evaluate_pair(&sr, &hr)?;
    let estimate = Kernel::read_csv(&summary.dir.join("kernel.csv"))?;
    let truth = Kernel::read_csv(&job.kernel_path)?;
    let support = estimate.size().max(truth.size());
    let estimate = embed_kernel(&estimate, support)?;
    let truth = embed_kernel(&truth, support)?;
    let rows = vec![
        EvalRow {
            image: job.image.clone(),
            scale: cfg.scale,
            method: "hacbsr".into(),
            psnr: metrics.psnr,
            ssim: metrics.ssim,
        },
        EvalRow {
            image: job.image.clone(),
            scale: cfg.scale,
            method: "kernel".into(),
            psnr: kernel_psnr(&estimate, &truth)?,
            ssim: kernel_ssim(&estimate, &truth)?,
        },
    ];
    Ok(JobOutcome { run_id: summary.run_id, rows, diverged: summary.diverged })
}

/// Center-embeds a kernel into a larger odd support so estimates trained at
/// one size can be scored against references of another; the zero border
/// leaves the mass unchanged.
fn embed_kernel(k: &Kernel, size: usize) -> Result<Kernel, CliError> {
    if k.size() == size {
        return Ok(k.clone());
    }
    let pad = (size - k.size()) / 2;
    let mut values = ndarray::Array2::zeros((size, size));
    values.slice_mut(ndarray::s![pad..pad + k.size(), pad..pad + k.size()]).assign(k.values());
    Ok(Kernel::from_values(values)?)
}

/// Structural similarity between kernel tables, on the same window and data
/// range the sampler's similarity score uses.
pub fn kernel_ssim(a: &Kernel, b: &Kernel) -> Result<f64, CliError> {
    let window = a.size().min(7) | 1;
    let range = a
        .values()
        .iter()
        .chain(b.values().iter())
        .cloned()
        .fold(f64::MIN, f64::max)
        .max(1e-12);
    Ok(hacbsr_core::metrics::ssim_with(a.values(), b.values(), window, 1.5, range)?)
}
