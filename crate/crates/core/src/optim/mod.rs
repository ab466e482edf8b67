//! Alternating single-image training.
//!
//! Each outer iteration first regresses the kernel generator toward a fresh
//! contrastively sampled batch (one adaptive-moment step), then runs several
//! image-estimator steps against the observation with the generated kernel
//! held fixed, and finally feeds the collected inner-step losses back into
//! the kernel generator through a loss-weighted meta step. A slowly moving
//! copy of the image estimator (momentum set by the current loss) anchors
//! the contrastive penalty that keeps successive reconstructions from
//! drifting apart.

pub mod adam;
pub mod weights;

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::degradation::{degrade_clean, grad_input, grad_kernel, DownsampleMode};
use crate::image_grid::ImageGrid;
use crate::kernel::{default_kernel_size, default_sigma_range, Kernel, DEFAULT_RHO_RANGE};
use crate::networks::{
    Checkpoint, EncoderKind, FeatureEncoder, ImageEstimator, ImageNetConfig, KernelGenerator,
    KernelNetConfig, NoiseSeeds,
};
use crate::sampling::{sample_batch, KernelHistory, SamplingConfig};
use crate::{CoreError, Result};

pub use adam::AdamState;
pub use weights::{adaptive_alpha, ema_update, meta_weights, AlphaSchedule};

/// Full hyperparameter set of one run. Flat so the on-disk config file is a
/// plain key-value table; every field has a default, so a config only names
/// what it overrides.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub scale: usize,
    /// Outer iterations (one kernel regression + one inner loop each).
    pub n_outer: usize,
    /// Image-estimator steps per outer iteration.
    pub p_inner: usize,
    /// Kernels sampled per regression step.
    pub regression_batch: usize,
    pub lr_image: f64,
    /// First-moment decay of the image optimizer. Short runs benefit from a
    /// value below the usual 0.9: stale momentum otherwise eats a visible
    /// share of the small step budget.
    pub image_momentum: f64,
    pub lr_kernel_regression: f64,
    pub lr_kernel_meta: f64,
    /// Weight of the history-contrast penalty.
    pub theta_history: f64,
    /// Inner steps between moving-average refreshes of the history copy.
    pub history_update_period: usize,
    pub history_capacity: usize,
    pub n_proposals: usize,
    /// Ablation switch: `false` falls back to single-draw random sampling.
    pub contrastive_sampling: bool,
    /// Ablation switch: `false` drops the history-contrast penalty.
    pub history_contrast: bool,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub loss_min: f64,
    pub loss_max: f64,
    /// Defaults to the scale-dependent size when absent.
    pub kernel_size: Option<usize>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub rho_min: f64,
    pub rho_max: f64,
    pub unet_depth: usize,
    pub unet_width: usize,
    pub code_dim: usize,
    pub hidden_dim: usize,
    pub encoder: EncoderKind,
    /// Row count of the random projection encoder.
    pub feature_dim: usize,
    /// Loss magnitude beyond which training aborts as diverged.
    pub divergence_limit: f64,
    /// Outer iterations between kernel snapshots in the report.
    pub snapshot_period: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scale: 2,
            n_outer: 300,
            p_inner: 5,
            regression_batch: 5,
            lr_image: 0.005,
            image_momentum: 0.9,
            lr_kernel_regression: 0.5,
            lr_kernel_meta: 0.5,
            theta_history: 0.4,
            history_update_period: 10,
            history_capacity: 20,
            n_proposals: 16,
            contrastive_sampling: true,
            history_contrast: true,
            alpha_min: 0.8,
            alpha_max: 0.99,
            loss_min: 1e-6,
            loss_max: 1e-2,
            kernel_size: None,
            sigma_min: None,
            sigma_max: None,
            rho_min: DEFAULT_RHO_RANGE.0,
            rho_max: DEFAULT_RHO_RANGE.1,
            unet_depth: 3,
            unet_width: 32,
            code_dim: 64,
            hidden_dim: 1000,
            encoder: EncoderKind::LinearRandom,
            feature_dim: 512,
            divergence_limit: 1e6,
            snapshot_period: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(CoreError::InvalidArgument("scale must be positive".into()));
        }
        for (name, v) in [
            ("n_outer", self.n_outer),
            ("p_inner", self.p_inner),
            ("regression_batch", self.regression_batch),
            ("history_update_period", self.history_update_period),
            ("history_capacity", self.history_capacity),
            ("n_proposals", self.n_proposals),
            ("snapshot_period", self.snapshot_period),
            ("feature_dim", self.feature_dim),
            ("code_dim", self.code_dim),
            ("hidden_dim", self.hidden_dim),
            ("unet_width", self.unet_width),
        ] {
            if v == 0 {
                return Err(CoreError::InvalidArgument(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("lr_image", self.lr_image),
            ("lr_kernel_regression", self.lr_kernel_regression),
            ("lr_kernel_meta", self.lr_kernel_meta),
            ("divergence_limit", self.divergence_limit),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CoreError::InvalidArgument(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if !(self.image_momentum.is_finite()
            && (0.0..1.0).contains(&self.image_momentum))
        {
            return Err(CoreError::InvalidArgument(format!(
                "image_momentum must lie in [0, 1), got {}",
                self.image_momentum
            )));
        }
        if !(self.theta_history.is_finite() && self.theta_history >= 0.0) {
            return Err(CoreError::InvalidArgument(
                "theta_history must be finite and non-negative".into(),
            ));
        }
        if self.unet_depth < 2 {
            return Err(CoreError::InvalidArgument("unet_depth must be at least 2".into()));
        }
        self.alpha_schedule().validate()?;
        self.sampling_config().validate()?;
        Ok(())
    }

    pub fn alpha_schedule(&self) -> AlphaSchedule {
        AlphaSchedule {
            loss_min: self.loss_min,
            loss_max: self.loss_max,
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
        }
    }

    pub fn resolved_kernel_size(&self) -> usize {
        self.kernel_size.unwrap_or_else(|| default_kernel_size(self.scale))
    }

    pub fn sampling_config(&self) -> SamplingConfig {
        let defaults = default_sigma_range(self.scale);
        let mut cfg = SamplingConfig::for_scale(self.scale);
        cfg.kernel_size = self.resolved_kernel_size();
        cfg.sigma_range = (
            self.sigma_min.unwrap_or(defaults.0),
            self.sigma_max.unwrap_or(defaults.1),
        );
        cfg.rho_range = (self.rho_min, self.rho_max);
        cfg.n_proposals = if self.contrastive_sampling { self.n_proposals } else { 1 };
        cfg.history_capacity = self.history_capacity;
        cfg
    }

    pub fn load_toml(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let cfg: TrainConfig =
            toml::from_str(&body).map_err(|e| CoreError::malformed(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-outer-iteration trace stored in the run report.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    /// Kernel-regression loss over the sampled batch.
    pub regression_loss: f64,
    /// Selection score of each sampled kernel (0 when unconditional).
    pub selection_scores: Vec<f64>,
    /// Observation-fit part of each inner-step loss.
    pub core_losses: Vec<f64>,
    /// Full inner-step losses including the history penalty.
    pub total_losses: Vec<f64>,
    /// Momentum coefficient computed after each inner step.
    pub alphas: Vec<f64>,
    /// Meta weights derived from the core losses.
    pub omegas: Vec<f64>,
    pub meta_loss: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelSnapshot {
    pub iteration: usize,
    pub size: usize,
    /// Row-major kernel values.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DivergenceInfo {
    pub iteration: usize,
    pub stage: String,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub iterations: Vec<IterationRecord>,
    pub kernel_snapshots: Vec<KernelSnapshot>,
    pub final_core_loss: Option<f64>,
    pub final_meta_loss: Option<f64>,
    pub total_inner_steps: usize,
    pub wall_ms: u64,
    pub diverged: Option<DivergenceInfo>,
}

impl RunReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).map_err(|e| CoreError::io(path, e))?;
        std::fs::write(path, body + "\n").map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        serde_json::from_str(&body).map_err(|e| CoreError::malformed(path, e.to_string()))
    }
}

/// Whether a run finished its schedule or hit the divergence guard.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed,
    Diverged(DivergenceInfo),
}

pub struct RunOutput {
    pub image: ImageGrid,
    pub kernel: Kernel,
    pub report: RunReport,
    pub outcome: RunOutcome,
}

/// One inner step retained for the kernel meta-update.
struct MetaSnapshot {
    sr: ImageGrid,
    degraded: Array2<f64>,
    core_loss: f64,
    contrast_loss: f64,
}

/// Losses and gradients of one reconstruction step.
struct StepTerms {
    core: f64,
    contrast: f64,
    total: f64,
    image_grad: Array2<f64>,
    degraded: Array2<f64>,
}

struct RegressionOutcome {
    loss: f64,
    selection_scores: Vec<f64>,
}

/// Mutable state of one training run on one observation.
pub struct TrainState {
    cfg: TrainConfig,
    observation: ImageGrid,
    estimator: ImageEstimator,
    history_net: ImageEstimator,
    history_params: Vec<f64>,
    history_image_cache: Option<Array2<f64>>,
    generator: KernelGenerator,
    encoder: FeatureEncoder,
    seeds: NoiseSeeds,
    kernel_history: KernelHistory,
    adam_image: AdamState,
    adam_kernel_regression: AdamState,
    adam_kernel_meta: AdamState,
    rng: ChaCha8Rng,
    outer_iter: usize,
    inner_steps: usize,
    meta_cache: Vec<MetaSnapshot>,
}

impl TrainState {
    pub fn new(observation: &ImageGrid, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let sr_shape = (observation.height() * cfg.scale, observation.width() * cfg.scale);
        let divisor = 1usize << (cfg.unet_depth - 1);
        if !sr_shape.0.is_multiple_of(divisor) || !sr_shape.1.is_multiple_of(divisor) {
            return Err(CoreError::Shape(format!(
                "target size {}x{} must be divisible by {divisor} for a depth-{} estimator",
                sr_shape.0, sr_shape.1, cfg.unet_depth
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let seeds = NoiseSeeds::draw(&mut rng, sr_shape, cfg.code_dim);
        let estimator = ImageEstimator::new(
            ImageNetConfig { depth: cfg.unet_depth, base_width: cfg.unet_width },
            &mut rng,
        )?;
        let generator = KernelGenerator::new(
            KernelNetConfig {
                code_dim: cfg.code_dim,
                hidden_dim: cfg.hidden_dim,
                kernel_size: cfg.resolved_kernel_size(),
            },
            &mut rng,
        )?;
        let encoder = match cfg.encoder {
            EncoderKind::LinearRandom => {
                FeatureEncoder::linear_random(sr_shape, cfg.feature_dim, &mut rng)?
            }
            EncoderKind::Identity => FeatureEncoder::identity(sr_shape)?,
            EncoderKind::External => {
                return Err(CoreError::InvalidArgument(
                    "external encoder needs an explicit matrix; use new_with_encoder".into(),
                ))
            }
        };
        Self::assemble(observation, cfg, rng, seeds, estimator, generator, encoder)
    }

    /// Same as [`TrainState::new`] but with a caller-supplied feature
    /// encoder (the `external` kind).
    pub fn new_with_encoder(
        observation: &ImageGrid,
        cfg: TrainConfig,
        encoder: FeatureEncoder,
    ) -> Result<Self> {
        cfg.validate()?;
        let sr_shape = (observation.height() * cfg.scale, observation.width() * cfg.scale);
        if encoder.input_shape() != sr_shape {
            return Err(CoreError::Shape(format!(
                "encoder input {:?} does not match target {:?}",
                encoder.input_shape(),
                sr_shape
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let seeds = NoiseSeeds::draw(&mut rng, sr_shape, cfg.code_dim);
        let estimator = ImageEstimator::new(
            ImageNetConfig { depth: cfg.unet_depth, base_width: cfg.unet_width },
            &mut rng,
        )?;
        let generator = KernelGenerator::new(
            KernelNetConfig {
                code_dim: cfg.code_dim,
                hidden_dim: cfg.hidden_dim,
                kernel_size: cfg.resolved_kernel_size(),
            },
            &mut rng,
        )?;
        Self::assemble(observation, cfg, rng, seeds, estimator, generator, encoder)
    }

    fn assemble(
        observation: &ImageGrid,
        cfg: TrainConfig,
        rng: ChaCha8Rng,
        seeds: NoiseSeeds,
        estimator: ImageEstimator,
        generator: KernelGenerator,
        encoder: FeatureEncoder,
    ) -> Result<Self> {
        let kernel_size = cfg.resolved_kernel_size();
        let sr_h = observation.height() * cfg.scale;
        let sr_w = observation.width() * cfg.scale;
        if kernel_size / 2 + 1 > sr_h || kernel_size / 2 + 1 > sr_w {
            return Err(CoreError::Shape(format!(
                "kernel size {kernel_size} too large for {sr_h}x{sr_w} reconstruction"
            )));
        }
        let history_params = estimator.params();
        let history_net = estimator.clone();
        let mut adam_image = AdamState::new(estimator.param_len());
        adam_image.beta1 = cfg.image_momentum;
        let adam_kernel_regression = AdamState::new(generator.param_len());
        let adam_kernel_meta = AdamState::new(generator.param_len());
        let kernel_history = KernelHistory::new(cfg.history_capacity);
        Ok(TrainState {
            cfg,
            observation: observation.clone(),
            estimator,
            history_net,
            history_params,
            history_image_cache: None,
            generator,
            encoder,
            seeds,
            kernel_history,
            adam_image,
            adam_kernel_regression,
            adam_kernel_meta,
            rng,
            outer_iter: 0,
            inner_steps: 0,
            meta_cache: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn inner_steps(&self) -> usize {
        self.inner_steps
    }

    fn history_active(&self) -> bool {
        self.cfg.history_contrast && self.cfg.theta_history > 0.0
    }

    fn check_finite(&self, loss: f64, stage: &str) -> Result<()> {
        if !loss.is_finite() || loss > self.cfg.divergence_limit {
            return Err(CoreError::Divergence {
                iteration: self.outer_iter,
                stage: stage.to_string(),
                loss,
            });
        }
        Ok(())
    }

    fn history_image(&mut self) -> Result<Array2<f64>> {
        if self.history_image_cache.is_none() {
            let (img, _) = self.history_net.forward(&self.seeds.image_seed)?;
            self.history_image_cache = Some(img);
        }
        Ok(self.history_image_cache.as_ref().expect("cache filled above").clone())
    }

    /// One kernel-generator regression step toward a freshly sampled batch.
    fn regression_step(&mut self) -> Result<RegressionOutcome> {
        let scfg = self.cfg.sampling_config();
        let selections = sample_batch(
            &mut self.kernel_history,
            &mut self.rng,
            &scfg,
            self.cfg.regression_batch,
        )?;
        let (table, cache) = self.generator.forward(&self.seeds.kernel_code)?;
        // Mean over batch and cells, so the logged scale is batch-invariant.
        let norm = (selections.len() * table.len()) as f64;
        let mut loss = 0.0;
        let mut grad = Array2::zeros(table.dim());
        for sel in &selections {
            for ((g, &t), &k) in
                grad.iter_mut().zip(table.iter()).zip(sel.kernel.values().iter())
            {
                let d = t - k;
                loss += d * d / norm;
                *g += 2.0 * d / norm;
            }
        }
        let grads = self.generator.backward(&cache, &grad)?;
        let mut params = self.generator.params();
        self.adam_kernel_regression.step(&mut params, &grads, self.cfg.lr_kernel_regression)?;
        self.generator.set_params(&params)?;
        self.check_finite(loss, "kernel regression")?;
        Ok(RegressionOutcome {
            loss,
            selection_scores: selections.iter().map(|s| s.score).collect(),
        })
    }

    /// Loss and image-space gradient of one reconstruction step at the given
    /// estimate, including the history penalty when active.
    fn reconstruction_terms(&mut self, sr: &Array2<f64>, kernel: &Kernel) -> Result<StepTerms> {
        let sr_grid = ImageGrid::new(sr.clone());
        let degraded = degrade_clean(&sr_grid, kernel, self.cfg.scale, DownsampleMode::Strided)?;
        // Mean reductions keep the loss in the range the adaptive momentum
        // schedule was calibrated for, independent of image size.
        let n_obs = self.observation.data().len() as f64;
        let mut core = 0.0;
        let residual_grad = ndarray::Zip::from(self.observation.data())
            .and(degraded.data())
            .map_collect(|&y, &d| {
                let r = y - d;
                core += r * r / n_obs;
                -2.0 * r / n_obs
            });
        let mut g_img = grad_input(&residual_grad, kernel, self.cfg.scale, sr.dim())?;
        let mut contrast = 0.0;
        if self.history_active() {
            let xh = self.history_image()?;
            let f = self.encoder.encode(sr)?;
            let fh = self.encoder.encode(&xh)?;
            let df = &f - &fh;
            let n_feat = df.len() as f64;
            contrast = df.iter().map(|v| v * v).sum::<f64>() / n_feat;
            let adj = self.encoder.adjoint(&df)?;
            let theta = self.cfg.theta_history;
            g_img.zip_mut_with(&adj, |g, &a| *g += 2.0 * theta * a / n_feat);
        }
        let total = core + self.cfg.theta_history * contrast;
        Ok(StepTerms { core, contrast, total, image_grad: g_img, degraded: degraded.into_data() })
    }

    /// Inner image loop plus the kernel meta-update.
    fn contrastive_stage(&mut self, record: &mut IterationRecord) -> Result<()> {
        let (k_table, k_cache) = self.generator.forward(&self.seeds.kernel_code)?;
        let kernel = Kernel::from_values(k_table)?;
        self.meta_cache.clear();
        let schedule = self.cfg.alpha_schedule();
        for _ in 0..self.cfg.p_inner {
            let (sr, cache) = self.estimator.forward(&self.seeds.image_seed)?;
            let terms = self.reconstruction_terms(&sr, &kernel)?;
            let (grads, _) = self.estimator.backward(&cache, &terms.image_grad)?;
            let mut params = self.estimator.params();
            self.adam_image.step(&mut params, &grads, self.cfg.lr_image)?;
            self.estimator.set_params(&params)?;
            self.inner_steps += 1;

            let alpha = adaptive_alpha(terms.total, &schedule);
            if self.history_active()
                && self.inner_steps.is_multiple_of(self.cfg.history_update_period)
            {
                ema_update(&mut self.history_params, &params, alpha)?;
                self.history_net.set_params(&self.history_params)?;
                self.history_image_cache = None;
            }
            record.core_losses.push(terms.core);
            record.total_losses.push(terms.total);
            record.alphas.push(alpha);
            self.meta_cache.push(MetaSnapshot {
                sr: ImageGrid::new(sr),
                degraded: terms.degraded,
                core_loss: terms.core,
                contrast_loss: terms.contrast,
            });
            self.check_finite(terms.total, "image reconstruction")?;
        }

        // Kernel meta-update with frozen weights.
        let omegas = meta_weights(&record.core_losses)?;
        let ksize = kernel.size();
        let p = self.cfg.p_inner as f64;
        let n_obs = self.observation.data().len() as f64;
        let mut g_k = Array2::zeros((ksize, ksize));
        let mut meta_loss = 0.0;
        for (snap, &w) in self.meta_cache.iter().zip(&omegas) {
            let residual_grad = ndarray::Zip::from(self.observation.data())
                .and(&snap.degraded)
                .map_collect(|&y, &d| -2.0 * (y - d) / n_obs);
            let gk_p = grad_kernel(&residual_grad, &snap.sr, self.cfg.scale, ksize)?;
            g_k.zip_mut_with(&gk_p, |acc, &g| *acc += (w / p) * g);
            let term = snap.core_loss + self.cfg.theta_history * snap.contrast_loss;
            meta_loss += w * term / p;
        }
        let kgrads = self.generator.backward(&k_cache, &g_k)?;
        let mut kparams = self.generator.params();
        self.adam_kernel_meta.step(&mut kparams, &kgrads, self.cfg.lr_kernel_meta)?;
        self.generator.set_params(&kparams)?;
        self.check_finite(meta_loss, "kernel meta-update")?;
        record.omegas = omegas;
        record.meta_loss = meta_loss;
        Ok(())
    }

    pub fn outer_iteration(&mut self) -> Result<IterationRecord> {
        let mut record = IterationRecord {
            index: self.outer_iter,
            regression_loss: 0.0,
            selection_scores: Vec::new(),
            core_losses: Vec::new(),
            total_losses: Vec::new(),
            alphas: Vec::new(),
            omegas: Vec::new(),
            meta_loss: 0.0,
        };
        let regression = self.regression_step()?;
        record.regression_loss = regression.loss;
        record.selection_scores = regression.selection_scores;
        self.contrastive_stage(&mut record)?;
        Ok(record)
    }

    /// Current kernel estimate from the generator.
    pub fn current_kernel(&self) -> Result<Kernel> {
        let (table, _) = self.generator.forward(&self.seeds.kernel_code)?;
        Kernel::from_values(table)
    }

    /// Current image estimate.
    pub fn current_image(&self) -> Result<ImageGrid> {
        let (sr, _) = self.estimator.forward(&self.seeds.image_seed)?;
        Ok(ImageGrid::new(sr))
    }

    /// Runs the full schedule. Divergence is reported in the outcome with a
    /// partial report rather than as a hard error, so callers can persist
    /// what was learned up to the abort.
    pub fn run(&mut self) -> Result<RunOutput> {
        let start = Instant::now();
        let mut iterations = Vec::with_capacity(self.cfg.n_outer);
        let mut snapshots = Vec::new();
        let mut diverged = None;
        for i in 0..self.cfg.n_outer {
            self.outer_iter = i;
            match self.outer_iteration() {
                Ok(record) => {
                    iterations.push(record);
                    if i % self.cfg.snapshot_period == 0 {
                        let k = self.current_kernel()?;
                        snapshots.push(KernelSnapshot {
                            iteration: i,
                            size: k.size(),
                            values: k.values().iter().copied().collect(),
                        });
                    }
                }
                Err(CoreError::Divergence { iteration, stage, loss }) => {
                    diverged = Some(DivergenceInfo { iteration, stage, loss });
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let image = self.current_image()?;
        let kernel = self.current_kernel()?;
        snapshots.push(KernelSnapshot {
            iteration: iterations.len(),
            size: kernel.size(),
            values: kernel.values().iter().copied().collect(),
        });
        let report = RunReport {
            config: self.cfg.clone(),
            final_core_loss: iterations
                .last()
                .and_then(|r| r.core_losses.last())
                .copied(),
            final_meta_loss: iterations.last().map(|r| r.meta_loss),
            total_inner_steps: self.inner_steps,
            wall_ms: start.elapsed().as_millis() as u64,
            diverged: diverged.clone(),
            iterations,
            kernel_snapshots: snapshots,
        };
        let outcome = match diverged {
            Some(info) => RunOutcome::Diverged(info),
            None => RunOutcome::Completed,
        };
        Ok(RunOutput { image, kernel, report, outcome })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            seed: self.cfg.seed,
            scale: self.cfg.scale as u32,
            outer_iter: self.outer_iter as u64,
            inner_steps: self.inner_steps as u64,
            image_params: self.estimator.params(),
            history_params: self.history_params.clone(),
            kernel_params: self.generator.params(),
            image_seed: self.seeds.image_seed.clone(),
            kernel_code: self.seeds.kernel_code.to_vec(),
        }
    }

    // Verification hooks. These recompute the training objectives as pure
    // functions of a parameter vector so tests can difference them against
    // the analytic gradients used by the update steps.

    /// Reconstruction loss and its analytic parameter gradient at the
    /// current image estimator, with the kernel and history fixed.
    pub fn reconstruction_probe(&mut self) -> Result<(f64, Vec<f64>)> {
        let kernel = self.current_kernel()?;
        let (sr, cache) = self.estimator.forward(&self.seeds.image_seed)?;
        let terms = self.reconstruction_terms(&sr, &kernel)?;
        let (grads, _) = self.estimator.backward(&cache, &terms.image_grad)?;
        Ok((terms.total, grads))
    }

    /// Reconstruction loss at an arbitrary image-estimator parameter vector.
    pub fn reconstruction_objective(&mut self, image_params: &[f64]) -> Result<f64> {
        let kernel = self.current_kernel()?;
        let mut probe = self.estimator.clone();
        probe.set_params(image_params)?;
        let (sr, _) = probe.forward(&self.seeds.image_seed)?;
        Ok(self.reconstruction_terms(&sr, &kernel)?.total)
    }

    /// Meta objective at an arbitrary kernel-generator parameter vector,
    /// using the inner-step snapshots of the last contrastive stage and the
    /// frozen weights derived from them.
    pub fn meta_objective(&self, kernel_params: &[f64]) -> Result<f64> {
        if self.meta_cache.is_empty() {
            return Err(CoreError::InvalidArgument(
                "no cached inner steps; run an outer iteration first".into(),
            ));
        }
        let mut gen = self.generator.clone();
        gen.set_params(kernel_params)?;
        let (table, _) = gen.forward(&self.seeds.kernel_code)?;
        let kernel = Kernel::from_values(table)?;
        let core_losses: Vec<f64> = self.meta_cache.iter().map(|s| s.core_loss).collect();
        let omegas = meta_weights(&core_losses)?;
        let p = self.meta_cache.len() as f64;
        let n_obs = self.observation.data().len() as f64;
        let mut total = 0.0;
        for (snap, &w) in self.meta_cache.iter().zip(&omegas) {
            let degraded =
                degrade_clean(&snap.sr, &kernel, self.cfg.scale, DownsampleMode::Strided)?;
            let core: f64 = self
                .observation
                .data()
                .iter()
                .zip(degraded.data().iter())
                .map(|(&y, &d)| (y - d) * (y - d) / n_obs)
                .sum();
            let term = core + self.cfg.theta_history * snap.contrast_loss;
            total += w * term / p;
        }
        Ok(total)
    }

    /// Analytic meta gradient at the current kernel generator, matching
    /// [`TrainState::meta_objective`].
    pub fn meta_probe(&self) -> Result<(f64, Vec<f64>)> {
        if self.meta_cache.is_empty() {
            return Err(CoreError::InvalidArgument(
                "no cached inner steps; run an outer iteration first".into(),
            ));
        }
        let params = self.generator.params();
        let loss = self.meta_objective(&params)?;
        let (table, cache) = self.generator.forward(&self.seeds.kernel_code)?;
        let kernel = Kernel::from_values(table)?;
        let core_losses: Vec<f64> = self.meta_cache.iter().map(|s| s.core_loss).collect();
        let omegas = meta_weights(&core_losses)?;
        let p = self.meta_cache.len() as f64;
        let n_obs = self.observation.data().len() as f64;
        let ksize = kernel.size();
        let mut g_k = Array2::zeros((ksize, ksize));
        for (snap, &w) in self.meta_cache.iter().zip(&omegas) {
            let degraded =
                degrade_clean(&snap.sr, &kernel, self.cfg.scale, DownsampleMode::Strided)?;
            let residual_grad = ndarray::Zip::from(self.observation.data())
                .and(degraded.data())
                .map_collect(|&y, &d| -2.0 * (y - d) / n_obs);
            let gk_p = grad_kernel(&residual_grad, &snap.sr, self.cfg.scale, ksize)?;
            g_k.zip_mut_with(&gk_p, |acc, &g| *acc += (w / p) * g);
        }
        let grads = self.generator.backward(&cache, &g_k)?;
        Ok((loss, grads))
    }

    /// History parameters, exposed for update-rule tests.
    pub fn history_snapshot(&self) -> &[f64] {
        &self.history_params
    }

    /// Live image-estimator parameters.
    pub fn image_params(&self) -> Vec<f64> {
        self.estimator.params()
    }
}

/// Convenience wrapper: build a state and run the full schedule.
pub fn run_training(observation: &ImageGrid, cfg: TrainConfig) -> Result<RunOutput> {
    TrainState::new(observation, cfg)?.run()
}
