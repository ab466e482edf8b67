//! Learnable models and their fixed companions: the image estimator
//! (encoder-decoder), the kernel generator (two-layer net with softmax), a
//! frozen feature encoder for the history-contrast term, the noise seeds
//! both generators consume, and binary checkpoints tying a training state
//! together.

pub mod layers;
pub mod mlp;
pub mod unet;

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use mlp::{KernelGenerator, KernelNetCache, KernelNetConfig};
pub use unet::{ImageEstimator, ImageNetCache, ImageNetConfig};

use crate::{CoreError, Result};

/// Which feature map the history-contrast term compares images in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Frozen random linear projection; the default.
    LinearRandom,
    /// Raw pixels; the feature map is the identity.
    Identity,
    /// Caller-supplied projection matrix.
    External,
}

/// Frozen linear feature map `x -> B vec(x)` with a verified trivial null
/// space on its row side, so distinct features imply distinct images in the
/// projected subspace and the stability bounds below apply.
#[derive(Debug, Clone)]
pub struct FeatureEncoder {
    kind: EncoderKind,
    /// `None` for the identity encoder.
    matrix: Option<Array2<f64>>,
    input_shape: (usize, usize),
    min_singular: f64,
}

impl FeatureEncoder {
    /// Gaussian projection with entries scaled by `1/sqrt(pixels)`; requires
    /// `dim <= pixels` so the projection has full row rank.
    pub fn linear_random<R: Rng + ?Sized>(
        input_shape: (usize, usize),
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = input_shape.0 * input_shape.1;
        if dim == 0 || n == 0 {
            return Err(CoreError::InvalidArgument(
                "encoder dimensions must be positive".into(),
            ));
        }
        if dim > n {
            return Err(CoreError::InvalidArgument(format!(
                "feature dim {dim} exceeds pixel count {n}; projection cannot have full row rank"
            )));
        }
        let scale = (n as f64).sqrt().recip();
        let matrix = Array2::from_shape_fn((dim, n), |_| {
            let v: f64 = StandardNormal.sample(rng);
            v * scale
        });
        Self::from_matrix_kind(matrix, input_shape, EncoderKind::LinearRandom)
    }

    pub fn identity(input_shape: (usize, usize)) -> Result<Self> {
        if input_shape.0 == 0 || input_shape.1 == 0 {
            return Err(CoreError::InvalidArgument("input shape must be non-empty".into()));
        }
        Ok(FeatureEncoder {
            kind: EncoderKind::Identity,
            matrix: None,
            input_shape,
            min_singular: 1.0,
        })
    }

    /// Wraps a caller-supplied projection; validates shape and row rank.
    pub fn from_matrix(matrix: Array2<f64>, input_shape: (usize, usize)) -> Result<Self> {
        Self::from_matrix_kind(matrix, input_shape, EncoderKind::External)
    }

    fn from_matrix_kind(
        matrix: Array2<f64>,
        input_shape: (usize, usize),
        kind: EncoderKind,
    ) -> Result<Self> {
        let n = input_shape.0 * input_shape.1;
        let (d, cols) = matrix.dim();
        if cols != n || d == 0 || d > n {
            return Err(CoreError::Shape(format!(
                "projection {d}x{cols} incompatible with {n} pixels (need rows in 1..={n})"
            )));
        }
        let min_singular = smallest_singular_value(&matrix);
        if !(min_singular > 0.0) {
            return Err(CoreError::Conditioning {
                context: "feature projection is row-rank deficient".into(),
                lambda_min: min_singular * min_singular,
            });
        }
        Ok(FeatureEncoder { kind, matrix: Some(matrix), input_shape, min_singular })
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.matrix {
            Some(m) => m.nrows(),
            None => self.input_shape.0 * self.input_shape.1,
        }
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    /// Smallest singular value of the projection; strictly positive by
    /// construction.
    pub fn min_singular(&self) -> f64 {
        self.min_singular
    }

    pub fn matrix(&self) -> Option<&Array2<f64>> {
        self.matrix.as_ref()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.dim() != self.input_shape {
            return Err(CoreError::Shape(format!(
                "encoder expects {:?}, got {:?}",
                self.input_shape,
                x.dim()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_input(x)?;
        let v = Array1::from_iter(x.iter().copied());
        Ok(match &self.matrix {
            Some(m) => m.dot(&v),
            None => v,
        })
    }

    /// Adjoint of [`FeatureEncoder::encode`]: maps a feature-space gradient
    /// back to image space.
    pub fn adjoint(&self, g: &Array1<f64>) -> Result<Array2<f64>> {
        if g.len() != self.dim() {
            return Err(CoreError::Shape(format!(
                "feature gradient length {} does not match encoder dim {}",
                g.len(),
                self.dim()
            )));
        }
        let flat = match &self.matrix {
            Some(m) => m.t().dot(g),
            None => g.clone(),
        };
        Array2::from_shape_vec(self.input_shape, flat.to_vec())
            .map_err(|e| CoreError::Shape(e.to_string()))
    }
}

/// Smallest singular value of a wide matrix via the spectrum of `B B^T`.
fn smallest_singular_value(b: &Array2<f64>) -> f64 {
    let d = b.nrows();
    let gram = b.dot(&b.t());
    let mut m = nalgebra::DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = gram[[i, j]];
        }
    }
    let eig = m.symmetric_eigen();
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    lambda_min.max(0.0).sqrt()
}

/// Fixed stochastic inputs of the two generators, drawn once per run.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSeeds {
    /// One-channel field at target resolution, entries uniform in [0, 0.1).
    pub image_seed: Array3<f64>,
    /// Code vector for the kernel generator, entries uniform in [0, 1).
    pub kernel_code: Array1<f64>,
}

impl NoiseSeeds {
    pub fn draw<R: Rng + ?Sized>(
        rng: &mut R,
        target_shape: (usize, usize),
        code_dim: usize,
    ) -> NoiseSeeds {
        let image_seed =
            Array3::from_shape_fn((1, target_shape.0, target_shape.1), |_| {
                rng.random_range(0.0..0.1)
            });
        let kernel_code = Array1::from_shape_fn(code_dim, |_| rng.random_range(0.0..1.0));
        NoiseSeeds { image_seed, kernel_code }
    }
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HACB";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable training state: enough to resume or to reproduce the final
/// artifacts (given the run configuration, which lives in the run report).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub scale: u32,
    pub outer_iter: u64,
    pub inner_steps: u64,
    pub image_params: Vec<f64>,
    pub history_params: Vec<f64>,
    pub kernel_params: Vec<f64>,
    pub image_seed: Array3<f64>,
    pub kernel_code: Vec<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        let werr = |e: std::io::Error| CoreError::io(path, e);
        buf.write_all(&CHECKPOINT_MAGIC).map_err(werr)?;
        buf.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(werr)?;
        buf.write_u64::<LittleEndian>(self.seed).map_err(werr)?;
        buf.write_u32::<LittleEndian>(self.scale).map_err(werr)?;
        buf.write_u64::<LittleEndian>(self.outer_iter).map_err(werr)?;
        buf.write_u64::<LittleEndian>(self.inner_steps).map_err(werr)?;
        for block in [&self.image_params, &self.history_params, &self.kernel_params] {
            buf.write_u64::<LittleEndian>(block.len() as u64).map_err(werr)?;
            for &v in block.iter() {
                buf.write_f64::<LittleEndian>(v).map_err(werr)?;
            }
        }
        let (c, h, w) = self.image_seed.dim();
        for dim in [c, h, w] {
            buf.write_u32::<LittleEndian>(dim as u32).map_err(werr)?;
        }
        for &v in self.image_seed.iter() {
            buf.write_f64::<LittleEndian>(v).map_err(werr)?;
        }
        buf.write_u64::<LittleEndian>(self.kernel_code.len() as u64).map_err(werr)?;
        for &v in &self.kernel_code {
            buf.write_f64::<LittleEndian>(v).map_err(werr)?;
        }
        std::fs::write(path, buf).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
        let mut r = std::io::Cursor::new(&bytes);
        let rerr = |_: std::io::Error| CoreError::malformed(path, "truncated checkpoint");
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(rerr)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(CoreError::malformed(path, "bad magic; not a checkpoint"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(rerr)?;
        if version != CHECKPOINT_VERSION {
            return Err(CoreError::malformed(
                path,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let seed = r.read_u64::<LittleEndian>().map_err(rerr)?;
        let scale = r.read_u32::<LittleEndian>().map_err(rerr)?;
        let outer_iter = r.read_u64::<LittleEndian>().map_err(rerr)?;
        let inner_steps = r.read_u64::<LittleEndian>().map_err(rerr)?;
        let read_block = |r: &mut std::io::Cursor<&Vec<u8>>| -> Result<Vec<f64>> {
            let len = r.read_u64::<LittleEndian>().map_err(rerr)? as usize;
            // Guard against absurd lengths from corrupt headers.
            if len > bytes.len() / 8 + 1 {
                return Err(CoreError::malformed(path, "block length exceeds file size"));
            }
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                out.push(r.read_f64::<LittleEndian>().map_err(rerr)?);
            }
            Ok(out)
        };
        let image_params = read_block(&mut r)?;
        let history_params = read_block(&mut r)?;
        let kernel_params = read_block(&mut r)?;
        let c = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
        let h = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
        let w = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
        if c * h * w > bytes.len() / 8 + 1 {
            return Err(CoreError::malformed(path, "seed shape exceeds file size"));
        }
        let mut seed_data = Vec::with_capacity(c * h * w);
        for _ in 0..c * h * w {
            seed_data.push(r.read_f64::<LittleEndian>().map_err(rerr)?);
        }
        let image_seed = Array3::from_shape_vec((c, h, w), seed_data)
            .map_err(|e| CoreError::malformed(path, e.to_string()))?;
        let kernel_code = read_block(&mut r)?;
        if (r.position() as usize) != bytes.len() {
            return Err(CoreError::malformed(path, "trailing bytes after checkpoint"));
        }
        Ok(Checkpoint {
            seed,
            scale,
            outer_iter,
            inner_steps,
            image_params,
            history_params,
            kernel_params,
            image_seed,
            kernel_code,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_encoder_flattens() {
        let enc = FeatureEncoder::identity((3, 4)).unwrap();
        assert_eq!(enc.dim(), 12);
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        let f = enc.encode(&x).unwrap();
        assert_eq!(f.len(), 12);
        assert_eq!(f[5], 5.0);
        let back = enc.adjoint(&f).unwrap();
        assert_eq!(back, x);
        assert_abs_diff_eq!(enc.min_singular(), 1.0, epsilon = 0.0);
    }

    #[test]
    fn random_projection_has_full_row_rank_and_valid_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let enc = FeatureEncoder::linear_random((8, 8), 16, &mut rng).unwrap();
        assert_eq!(enc.dim(), 16);
        assert!(enc.min_singular() > 0.0);
        let x = Array2::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
        let g = Array1::from_shape_fn(16, |_| rng.random_range(-1.0..1.0));
        let lhs: f64 = enc.encode(&x).unwrap().iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        let back = enc.adjoint(&g).unwrap();
        let rhs: f64 = x.iter().zip(back.iter()).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
        // Same seed, same projection.
        let mut rng2 = ChaCha8Rng::seed_from_u64(30);
        let enc2 = FeatureEncoder::linear_random((8, 8), 16, &mut rng2).unwrap();
        assert_eq!(enc.matrix().unwrap(), enc2.matrix().unwrap());
    }

    #[test]
    fn rank_deficient_projection_is_rejected() {
        let mut m = Array2::zeros((2, 4));
        for j in 0..4 {
            m[[0, j]] = (j + 1) as f64;
            m[[1, j]] = 2.0 * (j + 1) as f64; // linearly dependent rows
        }
        match FeatureEncoder::from_matrix(m, (2, 2)) {
            Err(CoreError::Conditioning { .. }) => {}
            other => panic!("expected Conditioning error, got {other:?}"),
        }
        // Too many rows for the pixel count.
        let wide = Array2::from_elem((5, 4), 1.0);
        assert!(FeatureEncoder::from_matrix(wide, (2, 2)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(FeatureEncoder::linear_random((2, 2), 5, &mut rng).is_err());
    }

    #[test]
    fn encoder_rejects_wrong_shapes() {
        let enc = FeatureEncoder::identity((4, 4)).unwrap();
        assert!(enc.encode(&Array2::zeros((3, 4))).is_err());
        assert!(enc.adjoint(&Array1::zeros(7)).is_err());
    }

    #[test]
    fn noise_seeds_are_bounded_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let seeds = NoiseSeeds::draw(&mut rng, (6, 8), 64);
        assert_eq!(seeds.image_seed.dim(), (1, 6, 8));
        assert_eq!(seeds.kernel_code.len(), 64);
        assert!(seeds.image_seed.iter().all(|&v| (0.0..0.1).contains(&v)));
        assert!(seeds.kernel_code.iter().all(|&v| (0.0..1.0).contains(&v)));
        let mut rng2 = ChaCha8Rng::seed_from_u64(31);
        assert_eq!(seeds, NoiseSeeds::draw(&mut rng2, (6, 8), 64));
    }

    fn sample_checkpoint() -> Checkpoint {
        Checkpoint {
            seed: 17,
            scale: 2,
            outer_iter: 30,
            inner_steps: 90,
            image_params: vec![1.5, -2.25, 0.0],
            history_params: vec![0.5, 0.25, 0.125],
            kernel_params: vec![3.0; 5],
            image_seed: Array3::from_shape_fn((1, 2, 3), |(_, i, j)| (i + j) as f64 * 0.01),
            kernel_code: vec![0.1, 0.9],
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        let ck = sample_checkpoint();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ck, back);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        sample_checkpoint().save(&path).unwrap();
        let good = std::fs::read(&path).unwrap();

        // Bad magic.
        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CoreError::Malformed { .. })));

        // Unsupported version.
        let mut bad = good.clone();
        bad[4] = 99;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CoreError::Malformed { .. })));

        // Truncation.
        std::fs::write(&path, &good[..good.len() / 2]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CoreError::Malformed { .. })));

        // Trailing garbage.
        let mut bad = good.clone();
        bad.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CoreError::Malformed { .. })));
    }
}
