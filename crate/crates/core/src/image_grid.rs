//! Grayscale image container backed by `Array2<f64>`.
//!
//! Values nominally live in [0, 1] but intermediate results (residuals,
//! unclamped generator output) may leave that range; clamping happens only
//! when persisting to PNG. Flattening is row-major everywhere so the matrix
//! forms in [`crate::degradation`] and [`crate::stability`] agree on layout.

use std::path::Path;

use image::{ImageBuffer, Luma};
use ndarray::{Array1, Array2};

use crate::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    data: Array2<f64>,
}

/// Bit depth written by [`ImageGrid::save_png`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngDepth {
    Eight,
    Sixteen,
}

impl ImageGrid {
    pub fn new(data: Array2<f64>) -> Self {
        ImageGrid { data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ImageGrid { data: Array2::zeros((height, width)) }
    }

    pub fn from_flat(height: usize, width: usize, flat: Vec<f64>) -> Result<Self> {
        let data = Array2::from_shape_vec((height, width), flat)
            .map_err(|e| CoreError::Shape(e.to_string()))?;
        Ok(ImageGrid { data })
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Row-major flattening; inverse of [`ImageGrid::from_flat`].
    pub fn to_vec(&self) -> Array1<f64> {
        Array1::from_iter(self.data.iter().copied())
    }

    /// Decodes an 8- or 16-bit grayscale PNG into [0, 1]. Color inputs are
    /// converted to luma first.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| CoreError::io(path, e))?;
        let gray = img.to_luma16();
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        if w == 0 || h == 0 {
            return Err(CoreError::malformed(path, "zero-sized image"));
        }
        let mut data = Array2::zeros((h, w));
        for (x, y, p) in gray.enumerate_pixels() {
            data[[y as usize, x as usize]] = p.0[0] as f64 / 65535.0;
        }
        Ok(ImageGrid { data })
    }

    /// Clamps to [0, 1], quantizes at the requested depth, writes PNG.
    pub fn save_png(&self, path: &Path, depth: PngDepth) -> Result<()> {
        let (h, w) = self.data.dim();
        match depth {
            PngDepth::Eight => {
                let mut buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                    ImageBuffer::new(w as u32, h as u32);
                for (x, y, p) in buf.enumerate_pixels_mut() {
                    let v = self.data[[y as usize, x as usize]].clamp(0.0, 1.0);
                    *p = Luma([(v * 255.0).round() as u8]);
                }
                buf.save(path).map_err(|e| CoreError::io(path, e))
            }
            PngDepth::Sixteen => {
                let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                    ImageBuffer::new(w as u32, h as u32);
                for (x, y, p) in buf.enumerate_pixels_mut() {
                    let v = self.data[[y as usize, x as usize]].clamp(0.0, 1.0);
                    *p = Luma([(v * 65535.0).round() as u16]);
                }
                buf.save(path).map_err(|e| CoreError::io(path, e))
            }
        }
    }

    /// Separable Keys cubic resampling (a = -0.5) with half-pixel-centered
    /// coordinates and edge clamping. Exact on constant and linear ramps away
    /// from the borders, which the tests pin down.
    pub fn resize_bicubic(&self, out_h: usize, out_w: usize) -> Result<ImageGrid> {
        if out_h == 0 || out_w == 0 {
            return Err(CoreError::InvalidArgument(
                "resize target must be non-empty".into(),
            ));
        }
        let (h, w) = self.data.dim();
        // Horizontal pass, then vertical.
        let mut mid = Array2::zeros((h, out_w));
        let wx = resample_weights(w, out_w);
        for i in 0..h {
            for (j, taps) in wx.iter().enumerate() {
                mid[[i, j]] = taps.apply(|idx| self.data[[i, idx]]);
            }
        }
        let mut out = Array2::zeros((out_h, out_w));
        let wy = resample_weights(h, out_h);
        for (i, taps) in wy.iter().enumerate() {
            for j in 0..out_w {
                out[[i, j]] = taps.apply(|idx| mid[[idx, j]]);
            }
        }
        Ok(ImageGrid { data: out })
    }
}

/// Four clamped source indices and their cubic weights for one output sample.
struct Taps {
    idx: [usize; 4],
    w: [f64; 4],
}

impl Taps {
    fn apply(&self, mut at: impl FnMut(usize) -> f64) -> f64 {
        self.idx
            .iter()
            .zip(&self.w)
            .map(|(&i, &wt)| wt * at(i))
            .sum()
    }
}

/// Keys cubic, a = -0.5.
fn cubic(d: f64) -> f64 {
    let a = -0.5;
    let d = d.abs();
    if d <= 1.0 {
        (a + 2.0) * d * d * d - (a + 3.0) * d * d + 1.0
    } else if d < 2.0 {
        a * (d * d * d - 5.0 * d * d + 8.0 * d - 4.0)
    } else {
        0.0
    }
}

fn resample_weights(in_len: usize, out_len: usize) -> Vec<Taps> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as isize;
            let mut idx = [0usize; 4];
            let mut w = [0f64; 4];
            for k in 0..4 {
                let s = base - 1 + k as isize;
                idx[k] = s.clamp(0, in_len as isize - 1) as usize;
                w[k] = cubic(t - (k as f64 - 1.0));
            }
            Taps { idx, w }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn png_round_trip_8bit_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img8.png");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = Array2::from_shape_fn((13, 9), |_| rng.random_range(0.0..1.0));
        let img = ImageGrid::new(data);
        img.save_png(&path, PngDepth::Eight).unwrap();
        let back = ImageGrid::load_png(&path).unwrap();
        assert_eq!(back.height(), 13);
        assert_eq!(back.width(), 9);
        for (a, b) in img.data().iter().zip(back.data().iter()) {
            let quantized = (a * 255.0).round() / 255.0;
            assert_abs_diff_eq!(quantized, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn png_round_trip_16bit_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img16.png");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = Array2::from_shape_fn((7, 11), |_| rng.random_range(0.0..1.0));
        let img = ImageGrid::new(data);
        img.save_png(&path, PngDepth::Sixteen).unwrap();
        let back = ImageGrid::load_png(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data().iter()) {
            let quantized = (a * 65535.0).round() / 65535.0;
            assert_abs_diff_eq!(quantized, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn save_clamps_out_of_range_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clamp.png");
        let img = ImageGrid::from_flat(1, 3, vec![-0.5, 0.5, 1.5]).unwrap();
        img.save_png(&path, PngDepth::Eight).unwrap();
        let back = ImageGrid::load_png(&path).unwrap();
        assert_abs_diff_eq!(back.data()[[0, 0]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(back.data()[[0, 2]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bicubic_preserves_constants_exactly() {
        let img = ImageGrid::new(Array2::from_elem((8, 8), 0.37));
        let up = img.resize_bicubic(16, 16).unwrap();
        for &v in up.data() {
            assert_abs_diff_eq!(v, 0.37, epsilon = 1e-12);
        }
        let down = img.resize_bicubic(4, 4).unwrap();
        for &v in down.data() {
            assert_abs_diff_eq!(v, 0.37, epsilon = 1e-12);
        }
    }

    #[test]
    fn bicubic_reproduces_linear_ramps_in_the_interior() {
        let f = |i: f64, j: f64| 0.01 * i + 0.02 * j + 0.1;
        let img = ImageGrid::new(Array2::from_shape_fn((16, 16), |(i, j)| {
            f(i as f64, j as f64)
        }));
        let up = img.resize_bicubic(32, 32).unwrap();
        for i in 6..26 {
            for j in 6..26 {
                let si = (i as f64 + 0.5) * 0.5 - 0.5;
                let sj = (j as f64 + 0.5) * 0.5 - 0.5;
                assert_abs_diff_eq!(up.data()[[i, j]], f(si, sj), epsilon = 1e-10);
            }
        }
    }

    /// Non-separable brute-force oracle: resample with an explicit 4x4 tap
    /// grid per output pixel and compare against the two-pass implementation.
    #[test]
    fn bicubic_matches_direct_two_dimensional_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = Array2::from_shape_fn((6, 5), |_| rng.random_range(0.0..1.0));
        let img = ImageGrid::new(src.clone());
        let (oh, ow) = (9, 11);
        let up = img.resize_bicubic(oh, ow).unwrap();
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        for i in 0..oh {
            for j in 0..ow {
                let sy = (i as f64 + 0.5) * (6.0 / oh as f64) - 0.5;
                let sx = (j as f64 + 0.5) * (5.0 / ow as f64) - 0.5;
                let (by, bx) = (sy.floor(), sx.floor());
                let (ty, tx) = (sy - by, sx - bx);
                let mut acc = 0.0;
                for dy in 0..4 {
                    for dx in 0..4 {
                        let wy = cubic(ty - (dy as f64 - 1.0));
                        let wx = cubic(tx - (dx as f64 - 1.0));
                        let yy = clamp(by as isize - 1 + dy as isize, 6);
                        let xx = clamp(bx as isize - 1 + dx as isize, 5);
                        acc += wy * wx * src[[yy, xx]];
                    }
                }
                assert_abs_diff_eq!(up.data()[[i, j]], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn flatten_round_trip_and_shape_errors() {
        let img = ImageGrid::from_flat(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(img.data()[[1, 0]], 4.0);
        let v = img.to_vec();
        let back = ImageGrid::from_flat(2, 3, v.to_vec()).unwrap();
        assert_eq!(img, back);
        assert!(ImageGrid::from_flat(2, 2, vec![0.0; 5]).is_err());
        assert!(img.resize_bicubic(0, 4).is_err());
    }

    #[test]
    fn missing_file_reports_path() {
        let err = ImageGrid::load_png(Path::new("/nonexistent/x.png")).unwrap_err();
        match err {
            CoreError::Io { path, .. } => assert!(path.ends_with("x.png")),
            other => panic!("expected Io error, got {other:?}"),
        }
    }
}
