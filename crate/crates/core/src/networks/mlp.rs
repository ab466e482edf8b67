//! Kernel generator: a fixed noise code through two fully connected layers
//! into a softmax over kernel cells. The softmax output is a distribution by
//! construction, so every generated kernel already satisfies the
//! non-negativity and unit-mass invariants.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::layers::{leaky_relu_vec, leaky_relu_vec_backward, softmax, softmax_backward, Linear};
use crate::kernel::Kernel;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct KernelNetConfig {
    pub code_dim: usize,
    pub hidden_dim: usize,
    pub kernel_size: usize,
}

impl KernelNetConfig {
    pub fn for_kernel_size(kernel_size: usize) -> Self {
        KernelNetConfig { code_dim: 64, hidden_dim: 1000, kernel_size }
    }
}

#[derive(Debug, Clone)]
pub struct KernelGenerator {
    cfg: KernelNetConfig,
    l1: Linear,
    l2: Linear,
}

pub struct KernelNetCache {
    code: Array1<f64>,
    pre1: Array1<f64>,
    act1: Array1<f64>,
    probs: Array1<f64>,
}

impl KernelGenerator {
    pub fn new<R: Rng + ?Sized>(cfg: KernelNetConfig, rng: &mut R) -> Result<Self> {
        if cfg.code_dim == 0 || cfg.hidden_dim == 0 {
            return Err(CoreError::InvalidArgument(
                "generator dimensions must be positive".into(),
            ));
        }
        if cfg.kernel_size < 3 || cfg.kernel_size.is_multiple_of(2) {
            return Err(CoreError::InvalidArgument(format!(
                "kernel side must be odd and at least 3, got {}",
                cfg.kernel_size
            )));
        }
        let out = cfg.kernel_size * cfg.kernel_size;
        let l1 = Linear::new(cfg.code_dim, cfg.hidden_dim, (1.0 / cfg.code_dim as f64).sqrt(), rng);
        // Small head weights start the softmax near uniform, a neutral kernel.
        let l2 = Linear::new(cfg.hidden_dim, out, 0.01 / (cfg.hidden_dim as f64).sqrt(), rng);
        Ok(KernelGenerator { cfg, l1, l2 })
    }

    pub fn config(&self) -> KernelNetConfig {
        self.cfg
    }

    pub fn param_len(&self) -> usize {
        self.l1.param_len() + self.l2.param_len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        self.l1.write_params(&mut out);
        self.l2.write_params(&mut out);
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_len() {
            return Err(CoreError::Shape(format!(
                "parameter vector length {} does not match model size {}",
                flat.len(),
                self.param_len()
            )));
        }
        let consumed = self.l1.read_params(flat);
        self.l2.read_params(&flat[consumed..]);
        Ok(())
    }

    /// Maps the noise code to a kernel-shaped probability table.
    pub fn forward(&self, code: &Array1<f64>) -> Result<(Array2<f64>, KernelNetCache)> {
        if code.len() != self.cfg.code_dim {
            return Err(CoreError::Shape(format!(
                "code length {} does not match generator input {}",
                code.len(),
                self.cfg.code_dim
            )));
        }
        let pre1 = self.l1.forward(code)?;
        let act1 = leaky_relu_vec(&pre1);
        let pre2 = self.l2.forward(&act1)?;
        let probs = softmax(&pre2);
        let k = self.cfg.kernel_size;
        let table = Array2::from_shape_vec((k, k), probs.to_vec())
            .map_err(|e| CoreError::Shape(e.to_string()))?;
        Ok((table, KernelNetCache { code: code.clone(), pre1, act1, probs }))
    }

    /// Flat parameter gradient (l1 weight, l1 bias, l2 weight, l2 bias) for a
    /// kernel-space gradient.
    pub fn backward(&self, cache: &KernelNetCache, g_kernel: &Array2<f64>) -> Result<Vec<f64>> {
        let k = self.cfg.kernel_size;
        if g_kernel.dim() != (k, k) {
            return Err(CoreError::Shape(format!(
                "kernel gradient shape {:?} does not match ({k}, {k})",
                g_kernel.dim()
            )));
        }
        let gflat = Array1::from_iter(g_kernel.iter().copied());
        let g_pre2 = softmax_backward(&cache.probs, &gflat);
        let (g_act1, gw2, gb2) = self.l2.backward(&cache.act1, &g_pre2);
        let g_pre1 = leaky_relu_vec_backward(&cache.pre1, &g_act1);
        let (_, gw1, gb1) = self.l1.backward(&cache.code, &g_pre1);
        let mut flat = Vec::with_capacity(self.param_len());
        flat.extend(gw1.iter());
        flat.extend(gb1.iter());
        flat.extend(gw2.iter());
        flat.extend(gb2.iter());
        Ok(flat)
    }

    /// Wraps generator output in the validated kernel type.
    pub fn to_kernel(table: &Array2<f64>) -> Result<Kernel> {
        Kernel::from_values(table.clone())
    }
}
