//! Contrastive kernel proposal against a bounded history.
//!
//! Candidate kernels are drawn from the covariance prior; each is scored by
//! how similar it is to the kernels already used (blend of Pearson
//! correlation, structural similarity, and a moment-descriptor match) and the
//! candidate whose similarity profile best balances "novel but plausible"
//! wins: average similarity near a target, maximum below a redundancy
//! ceiling, minimum above an outlier floor. With a single proposal the
//! machinery degrades to plain random sampling, which is the ablation case.

use std::collections::VecDeque;

use rand::Rng;

use crate::kernel::{
    default_kernel_size, default_sigma_range, gaussian_kernel, sample_covariance,
    CovarianceSpec, Kernel, DEFAULT_RHO_RANGE,
};
use crate::metrics::ssim_with;
use crate::{CoreError, Result};

/// Blend weights for the three similarity components; must be non-negative
/// and sum to one so the blend stays in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimilarityWeights {
    pub pearson: f64,
    pub ssim: f64,
    pub feature: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights { pearson: 0.5, ssim: 0.2, feature: 0.3 }
    }
}

impl SimilarityWeights {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.pearson, self.ssim, self.feature];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CoreError::InvalidArgument(
                "similarity weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = vals.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CoreError::InvalidArgument(format!(
                "similarity weights must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Target band for the similarity profile of an accepted candidate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreThresholds {
    /// Preferred average similarity to the history.
    pub target: f64,
    /// Floor on the minimum similarity; below this a candidate looks like an
    /// outlier.
    pub floor: f64,
    /// Ceiling on the maximum similarity; above this a candidate is
    /// redundant.
    pub ceiling: f64,
}

impl Default for ScoreThresholds {
    fn default() -> Self {
        ScoreThresholds { target: 0.3, floor: 0.3, ceiling: 0.8 }
    }
}

impl ScoreThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target)
            || !(0.0..=1.0).contains(&self.floor)
            || !(0.0..=1.0).contains(&self.ceiling)
            || self.floor > self.ceiling
        {
            return Err(CoreError::InvalidArgument(format!(
                "thresholds must satisfy 0 <= floor <= ceiling <= 1 and target in [0, 1], \
                 got target {} floor {} ceiling {}",
                self.target, self.floor, self.ceiling
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SamplingConfig {
    pub kernel_size: usize,
    pub sigma_range: (f64, f64),
    pub rho_range: (f64, f64),
    pub weights: SimilarityWeights,
    pub thresholds: ScoreThresholds,
    /// Candidates per selection; 1 disables the contrastive comparison.
    pub n_proposals: usize,
    pub history_capacity: usize,
}

impl SamplingConfig {
    pub fn for_scale(scale: usize) -> Self {
        SamplingConfig {
            kernel_size: default_kernel_size(scale),
            sigma_range: default_sigma_range(scale),
            rho_range: DEFAULT_RHO_RANGE,
            weights: SimilarityWeights::default(),
            thresholds: ScoreThresholds::default(),
            n_proposals: 16,
            history_capacity: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.thresholds.validate()?;
        if self.n_proposals == 0 {
            return Err(CoreError::InvalidArgument("n_proposals must be positive".into()));
        }
        if self.history_capacity == 0 {
            return Err(CoreError::InvalidArgument(
                "history capacity must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HistoryEntry {
    pub kernel: Kernel,
    pub covariance: CovarianceSpec,
    /// Selection score at admission; zero for unconditionally admitted
    /// kernels (empty history or single-proposal mode).
    pub score: f64,
}

/// FIFO of recently used kernels with a hard capacity.
#[derive(Debug, Clone)]
pub struct KernelHistory {
    entries: VecDeque<HistoryEntry>,
    capacity: usize,
}

impl KernelHistory {
    pub fn new(capacity: usize) -> Self {
        KernelHistory { entries: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, entry: HistoryEntry) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter()
    }
}

/// Moment descriptor with every component in [0, 1]: normalized entropy,
/// per-axis spread, tilt, peak height, and support fraction.
pub fn kernel_descriptor(kernel: &Kernel) -> [f64; 6] {
    let k = kernel.size();
    let kv = kernel.values();
    let mut entropy = 0.0;
    let mut peak = 0.0f64;
    for &v in kv {
        if v > 0.0 {
            entropy -= v * v.ln();
        }
        peak = peak.max(v);
    }
    let (mr, mc) = kernel.center_of_mass();
    let (mut vr, mut vc, mut cov) = (0.0, 0.0, 0.0);
    for ((i, j), &v) in kv.indexed_iter() {
        let (di, dj) = (i as f64 - mr, j as f64 - mc);
        vr += v * di * di;
        vc += v * dj * dj;
        cov += v * di * dj;
    }
    let (sr, sc) = (vr.sqrt(), vc.sqrt());
    let corr = if sr > 1e-12 && sc > 1e-12 { cov / (sr * sc) } else { 0.0 };
    let support = kv.iter().filter(|&&v| v > peak * (-2.0f64).exp()).count() as f64
        / (k * k) as f64;
    [
        entropy / ((k * k) as f64).ln(),
        (sr / (k as f64 / 2.0)).min(1.0),
        (sc / (k as f64 / 2.0)).min(1.0),
        (corr + 1.0) / 2.0,
        peak,
        support,
    ]
}

fn pearson(a: &Kernel, b: &Kernel) -> f64 {
    let n = (a.size() * a.size()) as f64;
    let ma = a.values().sum() / n;
    let mb = b.values().sum() / n;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.values().iter().zip(b.values().iter()) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    if saa < 1e-30 || sbb < 1e-30 {
        // A flat kernel correlates with nothing but another flat kernel.
        return if saa < 1e-30 && sbb < 1e-30 { 1.0 } else { 0.0 };
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

/// Blended similarity of two equally sized kernels; 1 for identical inputs.
pub fn similarity(a: &Kernel, b: &Kernel, weights: &SimilarityWeights) -> Result<f64> {
    if a.size() != b.size() {
        return Err(CoreError::Shape(format!(
            "kernel sizes differ: {} vs {}",
            a.size(),
            b.size()
        )));
    }
    let window = a.size().min(7) | 1;
    let range = a
        .values()
        .iter()
        .chain(b.values().iter())
        .cloned()
        .fold(f64::MIN, f64::max)
        .max(1e-12);
    let structural = ssim_with(a.values(), b.values(), window, 1.5, range)?;
    let (da, db) = (kernel_descriptor(a), kernel_descriptor(b));
    let dist: f64 = da
        .iter()
        .zip(db.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let feature = 1.0 - dist / (da.len() as f64).sqrt();
    Ok(weights.pearson * pearson(a, b) + weights.ssim * structural + weights.feature * feature)
}

/// Similarity profile of one candidate against the whole history.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimilarityStats {
    pub avg: f64,
    pub max: f64,
    pub min: f64,
}

pub fn similarity_stats(
    candidate: &Kernel,
    history: &KernelHistory,
    weights: &SimilarityWeights,
) -> Result<Option<SimilarityStats>> {
    if history.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for entry in history.iter() {
        let s = similarity(candidate, &entry.kernel, weights)?;
        sum += s;
        max = max.max(s);
        min = min.min(s);
    }
    Ok(Some(SimilarityStats { avg: sum / history.len() as f64, max, min }))
}

/// Candidate score: higher is better. Penalizes drift of the average from
/// the target, excess of the maximum over the redundancy ceiling, and
/// shortfall of the minimum under the outlier floor. The last two terms are
/// signed, so comfortable margins are rewarded.
pub fn selection_score(stats: &SimilarityStats, thresholds: &ScoreThresholds) -> f64 {
    -(stats.avg - thresholds.target).abs() - (stats.max - thresholds.ceiling)
        - (thresholds.floor - stats.min)
}

/// Outcome of one proposal round.
#[derive(Debug, Clone)]
pub struct Selection {
    pub kernel: Kernel,
    pub covariance: CovarianceSpec,
    /// Score of the winning candidate; zero when no comparison happened.
    pub score: f64,
    pub stats: Option<SimilarityStats>,
}

/// Picks the candidate with the highest selection score; ties and an empty
/// history both resolve to the earliest candidate.
pub fn select_best(
    candidates: Vec<(Kernel, CovarianceSpec)>,
    history: &KernelHistory,
    cfg: &SamplingConfig,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(CoreError::InvalidArgument("no candidates to select from".into()));
    }
    let mut best: Option<(f64, usize, SimilarityStats)> = None;
    if !history.is_empty() {
        for (idx, (kernel, _)) in candidates.iter().enumerate() {
            let stats = similarity_stats(kernel, history, &cfg.weights)?
                .expect("nonempty history yields stats");
            let score = selection_score(&stats, &cfg.thresholds);
            let better = match &best {
                None => true,
                Some((best_score, _, _)) => score > *best_score,
            };
            if better {
                best = Some((score, idx, stats));
            }
        }
    }
    match best {
        Some((score, idx, stats)) => {
            let (kernel, covariance) = candidates.into_iter().nth(idx).expect("index in range");
            Ok(Selection { kernel, covariance, score, stats: Some(stats) })
        }
        None => {
            let (kernel, covariance) = candidates.into_iter().next().expect("nonempty");
            Ok(Selection { kernel, covariance, score: 0.0, stats: None })
        }
    }
}

/// Draws `n_proposals` candidates, selects one, and admits it to the history.
pub fn propose_kernel<R: Rng + ?Sized>(
    history: &mut KernelHistory,
    rng: &mut R,
    cfg: &SamplingConfig,
) -> Result<Selection> {
    cfg.validate()?;
    let mut candidates = Vec::with_capacity(cfg.n_proposals);
    for _ in 0..cfg.n_proposals {
        let cov = sample_covariance(rng, cfg.sigma_range, cfg.rho_range)?;
        candidates.push((gaussian_kernel(cfg.kernel_size, &cov)?, cov));
    }
    let selection = select_best(candidates, history, cfg)?;
    history.push(HistoryEntry {
        kernel: selection.kernel.clone(),
        covariance: selection.covariance,
        score: selection.score,
    });
    Ok(selection)
}

/// Runs `count` proposal rounds; the regression targets for one kernel
/// generator update.
pub fn sample_batch<R: Rng + ?Sized>(
    history: &mut KernelHistory,
    rng: &mut R,
    cfg: &SamplingConfig,
    count: usize,
) -> Result<Vec<Selection>> {
    (0..count).map(|_| propose_kernel(history, rng, cfg)).collect()
}
