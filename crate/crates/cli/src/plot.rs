//! Quick-look raster figures: loss curves, momentum trace, and meta-weight
//! bars from a run report, the stability constant over its theta sweep, and a
//! kernel-sampling balance scatter. Everything is drawn directly onto an RGB
//! buffer so the binary stays free of plotting backends.

use std::path::{Path, PathBuf};

use clap::Args;
use hacbsr_core::optim::RunReport;
use hacbsr_core::sampling::{kernel_descriptor, propose_kernel, KernelHistory, SamplingConfig};
use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::font;
use crate::{CliError, CliResult};

/// Renders figures from whichever inputs are given; at least one of
/// `--report`, `--stability`, or `--sampling-seed` is required.
#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Training report JSON (`report.json` from a run directory); produces
    /// losses.png, alpha.png, and omegas.png.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Stability sweep CSV from verify-stability; produces stability.png.
    #[arg(long)]
    pub stability: Option<PathBuf>,
    /// Seed for the sampling balance scatter; produces sampling.png.
    #[arg(long)]
    pub sampling_seed: Option<u64>,
    /// Selection rounds per arm in the sampling scatter.
    #[arg(long, default_value_t = 200)]
    pub sampling_rounds: usize,
    /// Directory the figures are written into.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn execute(args: PlotArgs) -> CliResult {
    if args.report.is_none() && args.stability.is_none() && args.sampling_seed.is_none() {
        return Err(CliError::args(
            "nothing to plot: pass --report, --stability, or --sampling-seed",
        ));
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::io(format!("{}: {e}", args.out.display())))?;

    if let Some(report_path) = &args.report {
        let report = RunReport::load(report_path)?;
        if report.iterations.is_empty() {
            return Err(CliError::args("report has no iterations to plot"));
        }
        let losses = args.out.join("losses.png");
        plot_losses(&report, &losses)?;
        println!("wrote {} (red regression, blue core, green meta; log10 y)", losses.display());
        let alpha = args.out.join("alpha.png");
        plot_alpha(&report, &alpha)?;
        println!("wrote {} (history momentum per inner step)", alpha.display());
        let omegas = args.out.join("omegas.png");
        plot_omegas(&report, &omegas)?;
        println!("wrote {} (meta weight per inner step)", omegas.display());
    }

    if let Some(csv) = &args.stability {
        let out = args.out.join("stability.png");
        plot_stability(csv, &out)?;
        println!("wrote {} (stability constant over theta, log-log)", out.display());
    }

    if let Some(seed) = args.sampling_seed {
        let out = args.out.join("sampling.png");
        plot_sampling(seed, args.sampling_rounds, &out)?;
        println!(
            "wrote {} (blue contrastive vs red unconditional; kernel spread axes)",
            out.display()
        );
    }
    Ok(())
}

const FIG_W: u32 = 640;
const FIG_H: u32 = 420;
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const FG: Rgb<u8> = Rgb([32, 32, 32]);
const GRID: Rgb<u8> = Rgb([224, 224, 224]);
const RED: Rgb<u8> = Rgb([202, 63, 51]);
const BLUE: Rgb<u8> = Rgb([38, 104, 181]);
const GREEN: Rgb<u8> = Rgb([32, 134, 77]);

fn plot_losses(report: &RunReport, path: &Path) -> CliResult {
    let log = |v: f64| v.max(1e-12).log10();
    let mut series =
        vec![(RED, Vec::new()), (BLUE, Vec::new()), (GREEN, Vec::new())];
    for (i, rec) in report.iterations.iter().enumerate() {
        let x = (i + 1) as f64;
        series[0].1.push((x, log(rec.regression_loss)));
        if let Some(&core) = rec.core_losses.last() {
            series[1].1.push((x, log(core)));
        }
        series[2].1.push((x, log(rec.meta_loss)));
    }
    let mut chart = Chart::around(
        series.iter().flat_map(|(_, pts)| pts.iter().copied()),
        Scale::Linear,
        Scale::Log,
    )?;
    for (color, pts) in &series {
        chart.polyline(pts, *color);
        chart.scatter(pts, 1, *color);
    }
    chart.canvas.save(path)
}

fn plot_alpha(report: &RunReport, path: &Path) -> CliResult {
    let pts: Vec<(f64, f64)> = report
        .iterations
        .iter()
        .flat_map(|rec| rec.alphas.iter().copied())
        .enumerate()
        .map(|(i, a)| ((i + 1) as f64, a))
        .collect();
    if pts.is_empty() {
        return Err(CliError::args("report has no momentum trace to plot"));
    }
    let mut chart = Chart::around(pts.iter().copied(), Scale::Linear, Scale::Linear)?;
    chart.polyline(&pts, BLUE);
    chart.scatter(&pts, 1, BLUE);
    chart.canvas.save(path)
}

fn plot_omegas(report: &RunReport, path: &Path) -> CliResult {
    let values: Vec<f64> =
        report.iterations.iter().flat_map(|rec| rec.omegas.iter().copied()).collect();
    if values.is_empty() {
        return Err(CliError::args("report has no meta weights to plot"));
    }
    let top = values.iter().cloned().fold(0.0_f64, f64::max).max(1e-12);
    let frame = [(0.0, 0.0), (values.len() as f64 + 1.0, top)];
    let mut chart = Chart::around(frame.iter().copied(), Scale::Linear, Scale::Linear)?;
    chart.bars(&values, BLUE);
    chart.canvas.save(path)
}

fn plot_stability(csv: &Path, path: &Path) -> CliResult {
    let body = std::fs::read_to_string(csv)
        .map_err(|e| CliError::io(format!("{}: {e}", csv.display())))?;
    let mut lines = body.lines();
    let header = lines.next().ok_or_else(|| CliError::args("stability csv is empty"))?;
    let columns: Vec<&str> = header.split(',').collect();
    let column = |name: &str| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| CliError::args(format!("stability csv lacks a {name} column")))
    };
    let theta_col = column("theta")?;
    let constant_col = column("stability_constant")?;

    let mut pts = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let number = |col: usize| {
            fields.get(col).and_then(|f| f.parse::<f64>().ok()).ok_or_else(|| {
                CliError::args(format!("stability csv row {}: unreadable number", idx + 2))
            })
        };
        pts.push((number(theta_col)?.max(1e-300).log10(), number(constant_col)?.max(1e-12).log10()));
    }
    if pts.is_empty() {
        return Err(CliError::args("stability csv has no data rows"));
    }

    let mut chart = Chart::around(pts.iter().copied(), Scale::Log, Scale::Log)?;
    chart.polyline(&pts, BLUE);
    chart.scatter(&pts, 2, BLUE);
    chart.canvas.save(path)
}

fn plot_sampling(seed: u64, rounds: usize, path: &Path) -> CliResult {
    if rounds == 0 {
        return Err(CliError::args("sampling rounds must be positive"));
    }
    let multi_cfg = SamplingConfig { n_proposals: 16, ..SamplingConfig::for_scale(2) };
    let single_cfg = SamplingConfig { n_proposals: 1, ..multi_cfg.clone() };
    let mut multi_hist = KernelHistory::new(multi_cfg.history_capacity);
    let mut single_hist = KernelHistory::new(single_cfg.history_capacity);
    let mut multi = Vec::with_capacity(rounds);
    let mut single = Vec::with_capacity(rounds);
    for round in 0..rounds {
        // Both arms replay the same per-round stream, so the unconditional
        // pick is exactly the first candidate of the contrastive pool.
        let round_seed = seed.wrapping_add(round as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
        let pick = propose_kernel(&mut multi_hist, &mut rng, &multi_cfg)?;
        let d = kernel_descriptor(&pick.kernel);
        multi.push((d[1], d[2]));
        let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
        let pick = propose_kernel(&mut single_hist, &mut rng, &single_cfg)?;
        let d = kernel_descriptor(&pick.kernel);
        single.push((d[1], d[2]));
    }

    let mut chart = Chart::around(
        multi.iter().chain(single.iter()).copied(),
        Scale::Linear,
        Scale::Linear,
    )?;
    chart.scatter(&single, 2, RED);
    chart.scatter(&multi, 2, BLUE);
    chart.canvas.save(path)
}

#[derive(Clone, Copy, PartialEq)]
enum Scale {
    Linear,
    /// Data arrives already log10-transformed; tick labels show the
    /// original magnitudes.
    Log,
}

struct Chart {
    canvas: Canvas,
    left: f64,
    top: f64,
    right: f64,
    bottom: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Chart {
    /// Frames the given points with a small margin and draws axes, ticks,
    /// gridlines, and tick labels.
    fn around(
        points: impl Iterator<Item = (f64, f64)>,
        x_scale: Scale,
        y_scale: Scale,
    ) -> Result<Self, CliError> {
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            if !(x.is_finite() && y.is_finite()) {
                return Err(CliError::args("plot data contains a non-finite value"));
            }
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        if !x_min.is_finite() {
            return Err(CliError::args("no points to plot"));
        }
        let pad = |min: &mut f64, max: &mut f64| {
            let span = *max - *min;
            let margin = if span > 0.0 { span * 0.05 } else { 0.5 };
            *min -= margin;
            *max += margin;
        };
        pad(&mut x_min, &mut x_max);
        pad(&mut y_min, &mut y_max);

        let mut chart = Chart {
            canvas: Canvas::new(FIG_W, FIG_H),
            left: 72.0,
            top: 14.0,
            right: FIG_W as f64 - 16.0,
            bottom: FIG_H as f64 - 28.0,
            x_min,
            x_max,
            y_min,
            y_max,
        };
        chart.draw_frame(x_scale, y_scale);
        Ok(chart)
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let fx = (x - self.x_min) / (self.x_max - self.x_min);
        let fy = (y - self.y_min) / (self.y_max - self.y_min);
        (self.left + fx * (self.right - self.left), self.bottom - fy * (self.bottom - self.top))
    }

    fn draw_frame(&mut self, x_scale: Scale, y_scale: Scale) {
        for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let xv = self.x_min + frac * (self.x_max - self.x_min);
            let yv = self.y_min + frac * (self.y_max - self.y_min);
            let (px, _) = self.map(xv, self.y_min);
            let (_, py) = self.map(self.x_min, yv);
            self.canvas.line((px, self.top), (px, self.bottom), GRID);
            self.canvas.line((self.left, py), (self.right, py), GRID);
            self.canvas.line((px, self.bottom), (px, self.bottom + 4.0), FG);
            self.canvas.line((self.left - 4.0, py), (self.left, py), FG);
            let x_label = tick_label(xv, x_scale);
            let y_label = tick_label(yv, y_scale);
            self.canvas.text(
                (px - font::text_width(&x_label) as f64 / 2.0) as i64,
                (self.bottom + 7.0) as i64,
                &x_label,
                FG,
            );
            self.canvas.text(
                (self.left - 7.0 - font::text_width(&y_label) as f64) as i64,
                (py - font::GLYPH_H as f64 / 2.0) as i64,
                &y_label,
                FG,
            );
        }
        self.canvas.line((self.left, self.top), (self.left, self.bottom), FG);
        self.canvas.line((self.left, self.bottom), (self.right, self.bottom), FG);
        self.canvas.line((self.right, self.top), (self.right, self.bottom), FG);
        self.canvas.line((self.left, self.top), (self.right, self.top), FG);
    }

    fn polyline(&mut self, points: &[(f64, f64)], color: Rgb<u8>) {
        for pair in points.windows(2) {
            let a = self.map(pair[0].0, pair[0].1);
            let b = self.map(pair[1].0, pair[1].1);
            self.canvas.line(a, b, color);
        }
    }

    fn scatter(&mut self, points: &[(f64, f64)], radius: i64, color: Rgb<u8>) {
        for &(x, y) in points {
            let p = self.map(x, y);
            self.canvas.disc(p, radius, color);
        }
    }

    /// One bar per value, rising from zero (bars assume `y_min <= 0 <= y_max`
    /// framing chosen by the caller).
    fn bars(&mut self, values: &[f64], color: Rgb<u8>) {
        let n = values.len() as f64;
        for (i, &v) in values.iter().enumerate() {
            let center = i as f64 + 1.0;
            let half = (0.4 * (self.x_max - self.x_min) / (n + 1.0)).max(0.0);
            let (x0, y0) = self.map(center - half, 0.0_f64.max(self.y_min));
            let (x1, y1) = self.map(center + half, v.min(self.y_max));
            let (lo, hi) = (x0.round() as i64, x1.round() as i64);
            for px in lo..=hi {
                self.canvas.line((px as f64, y0), (px as f64, y1), color);
            }
        }
    }
}

fn tick_label(value: f64, scale: Scale) -> String {
    let v = match scale {
        Scale::Linear => value,
        Scale::Log => 10.0_f64.powf(value),
    };
    let a = v.abs();
    if v == 0.0 {
        "0".to_string()
    } else if !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// White RGB buffer with integer-pixel drawing primitives.
struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(width: u32, height: u32) -> Self {
        Canvas { img: RgbImage::from_pixel(width, height, BG) }
    }

    fn put(&mut self, x: i64, y: i64, color: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, color);
        }
    }

    fn line(&mut self, from: (f64, f64), to: (f64, f64), color: Rgb<u8>) {
        let (mut x0, mut y0) = (from.0.round() as i64, from.1.round() as i64);
        let (x1, y1) = (to.0.round() as i64, to.1.round() as i64);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, color);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let doubled = 2 * err;
            if doubled >= dy {
                err += dy;
                x0 += sx;
            }
            if doubled <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn disc(&mut self, center: (f64, f64), radius: i64, color: Rgb<u8>) {
        let (cx, cy) = (center.0.round() as i64, center.1.round() as i64);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy <= radius * radius {
                    self.put(cx + dx, cy + dy, color);
                }
            }
        }
    }

    fn text(&mut self, x: i64, y: i64, s: &str, color: Rgb<u8>) {
        let mut pen = x;
        for c in s.chars() {
            if let Some(rows) = font::glyph(c) {
                for (row, bits) in rows.iter().enumerate() {
                    for col in 0..font::GLYPH_W {
                        if bits >> (font::GLYPH_W - 1 - col) & 1 == 1 {
                            self.put(pen + col as i64, y + row as i64, color);
                        }
                    }
                }
            }
            pen += i64::from(font::ADVANCE);
        }
    }

    fn save(&self, path: &Path) -> CliResult {
        self.img.save(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
    }
}
