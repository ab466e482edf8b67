//! Loss-driven schedules: the history momentum coefficient and the per-step
//! weights of the kernel meta-update.

use crate::{CoreError, Result};

/// Maps the current reconstruction loss to an exponential-moving-average
/// coefficient: small losses pin the history (coefficient near the maximum),
/// large losses let it track the live parameters faster.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AlphaSchedule {
    pub loss_min: f64,
    pub loss_max: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule { loss_min: 1e-6, loss_max: 1e-2, alpha_min: 0.8, alpha_max: 0.99 }
    }
}

impl AlphaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.loss_min.is_finite() && self.loss_max.is_finite() && self.loss_min > 0.0)
            || self.loss_min >= self.loss_max
        {
            return Err(CoreError::InvalidArgument(format!(
                "loss clamp must satisfy 0 < min < max, got [{}, {}]",
                self.loss_min, self.loss_max
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha_min)
            || !(0.0..=1.0).contains(&self.alpha_max)
            || self.alpha_min > self.alpha_max
        {
            return Err(CoreError::InvalidArgument(format!(
                "alpha range must satisfy 0 <= min <= max <= 1, got [{}, {}]",
                self.alpha_min, self.alpha_max
            )));
        }
        Ok(())
    }
}

/// Piecewise-linear interpolation with exact saturation at both ends. A
/// non-finite loss is treated as maximal, giving the fastest history update.
pub fn adaptive_alpha(loss: f64, s: &AlphaSchedule) -> f64 {
    if !loss.is_finite() || loss >= s.loss_max {
        return s.alpha_min;
    }
    if loss <= s.loss_min {
        return s.alpha_max;
    }
    let frac = (loss - s.loss_min) / (s.loss_max - s.loss_min);
    s.alpha_max - frac * (s.alpha_max - s.alpha_min)
}

/// In-place exponential moving average: `h <- alpha h + (1 - alpha) c`.
pub fn ema_update(history: &mut [f64], current: &[f64], alpha: f64) -> Result<()> {
    if history.len() != current.len() {
        return Err(CoreError::Shape(format!(
            "moving-average operands differ in length: {} vs {}",
            history.len(),
            current.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    for (h, &c) in history.iter_mut().zip(current) {
        *h = alpha * *h + (1.0 - alpha) * c;
    }
    Ok(())
}

/// Offset applied inside the logarithm so a zero share stays finite.
pub const WEIGHT_LOG_OFFSET: f64 = 1e-3;

/// Focal-style weights from per-step reconstruction losses.
///
/// Each loss is reduced by the batch minimum and normalized into a share
/// `pi`; the weight `-(1 - pi)^2 ln(pi + 1e-3)` then emphasizes the steps
/// that contributed least error mass. Shares near one can push the raw
/// formula a hair below zero, so weights clamp at zero. A degenerate batch
/// (all losses equal) gets uniform unit weights.
pub fn meta_weights(core_losses: &[f64]) -> Result<Vec<f64>> {
    if core_losses.is_empty() {
        return Err(CoreError::InvalidArgument("no losses to weight".into()));
    }
    if core_losses.iter().any(|l| !l.is_finite()) {
        return Err(CoreError::InvalidArgument("losses must be finite".into()));
    }
    let min = core_losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let devs: Vec<f64> = core_losses.iter().map(|l| l - min).collect();
    let sum: f64 = devs.iter().sum();
    if sum < 1e-12 {
        return Ok(vec![1.0; core_losses.len()]);
    }
    Ok(devs
        .iter()
        .map(|d| {
            let pi = d / sum;
            let w = -(1.0 - pi) * (1.0 - pi) * (pi + WEIGHT_LOG_OFFSET).ln();
            w.max(0.0)
        })
        .collect())
}
