//! Log-log roofline charts as an ASCII grid or SVG.

use std::fmt::Write as _;

use thiserror::Error;

use crate::bench::ResultSet;
use crate::kernels::Precision;
use crate::machine::MachineModel;
use crate::roofline::TrafficModel;

pub const MIN_ASCII_WIDTH: usize = 60;
pub const MIN_ASCII_HEIGHT: usize = 20;

const SVG_WIDTH: f64 = 860.0;
const SVG_HEIGHT: f64 = 540.0;
const SVG_MARGIN_LEFT: f64 = 90.0;
const SVG_MARGIN_RIGHT: f64 = 200.0;
const SVG_MARGIN_TOP: f64 = 30.0;
const SVG_MARGIN_BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlotError {
    #[error("results were assessed against model `{results}`, not `{model}`")]
    ModelMismatch { results: String, model: String },
    #[error("result set references level `{0}` that the model lacks")]
    UnknownLevel(String),
    #[error("machine model has no assessable bandwidth level")]
    NoLevels,
    #[error("ascii chart must be at least {MIN_ASCII_WIDTH}x{MIN_ASCII_HEIGHT}, got {0}x{1}")]
    TooSmall(usize, usize),
}

/// A sloped bandwidth ceiling.
#[derive(Debug, Clone, PartialEq)]
pub struct Ceiling {
    pub level: String,
    pub bandwidth: f64,
}

/// A horizontal compute ceiling.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakLine {
    pub precision: Precision,
    pub peak: f64,
}

/// One assessment drawn as a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub label: String,
    pub precision: Precision,
    pub traffic: TrafficModel,
    pub level: String,
    pub intensity: f64,
    pub perf: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RooflineChart {
    pub title: String,
    pub ceilings: Vec<Ceiling>,
    pub peaks: Vec<PeakLine>,
    pub points: Vec<Point>,
    /// Axis ranges, whole decades.
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

/// Intensity where the sloped ceiling of bandwidth `bandwidth` meets `peak`.
pub fn ridge_point(peak: f64, bandwidth: f64) -> f64 {
    peak / bandwidth
}

impl RooflineChart {
    /// Chart of every assessment in `results` (both traffic models) under `model`.
    pub fn new(results: &ResultSet, model: &MachineModel) -> Result<Self, PlotError> {
        if results.model_name != model.name {
            return Err(PlotError::ModelMismatch {
                results: results.model_name.clone(),
                model: model.name.clone(),
            });
        }
        let ceilings: Vec<Ceiling> = model
            .assessable_levels()
            .map(|l| Ceiling {
                level: l.name.clone(),
                bandwidth: l.bandwidth_bytes_per_s,
            })
            .collect();
        if ceilings.is_empty() {
            return Err(PlotError::NoLevels);
        }
        let mut precisions: Vec<Precision> = results.results.iter().map(|r| r.precision).collect();
        if precisions.is_empty() {
            precisions = Precision::ALL.to_vec();
        }
        precisions.sort_by_key(|p| p.element_bytes());
        precisions.dedup();
        let peaks: Vec<PeakLine> = precisions
            .into_iter()
            .map(|p| PeakLine {
                precision: p,
                peak: model.peak(p),
            })
            .collect();

        let mut points = Vec::new();
        for rec in &results.results {
            if !ceilings.iter().any(|c| c.level == rec.level) {
                return Err(PlotError::UnknownLevel(rec.level.clone()));
            }
            for traffic in TrafficModel::ALL {
                points.push(Point {
                    label: format!("{}@{} n={}", rec.kernel, rec.backend, rec.n),
                    precision: rec.precision,
                    traffic,
                    level: rec.level.clone(),
                    intensity: rec.intensity(traffic),
                    perf: rec.perf_flops_per_s,
                    eta: rec.eta(traffic),
                });
            }
        }

        let mut xs: Vec<f64> = points.iter().map(|p| p.intensity).collect();
        for c in &ceilings {
            for p in &peaks {
                xs.push(ridge_point(p.peak, c.bandwidth));
            }
        }
        let (x_lo, x_hi) = decade_range(&xs);
        let mut ys: Vec<f64> = points.iter().map(|p| p.perf).collect();
        ys.extend(peaks.iter().map(|p| p.peak));
        ys.extend(ceilings.iter().map(|c| c.bandwidth * x_lo));
        let peak_max = peaks.iter().map(|p| p.peak).fold(0.0, f64::max);
        let (mut y_lo, y_hi) = decade_range(&ys);
        // keep the chart readable when the slowest ceiling starts far below everything else
        let floor = decade_floor(
            points
                .iter()
                .map(|p| p.perf)
                .fold(peak_max, f64::min)
                / 10.0,
        );
        y_lo = y_lo.max(floor.min(peak_max / 1e3));

        Ok(Self {
            title: format!("roofline: {} ({})", results.machine, model.name),
            ceilings,
            peaks,
            points,
            x_range: (x_lo, x_hi),
            y_range: (y_lo, y_hi),
        })
    }

    /// Height of level `level`'s roof at `intensity` for `precision`.
    pub fn roof(&self, level: &str, precision: Precision, intensity: f64) -> Option<f64> {
        let c = self.ceilings.iter().find(|c| c.level == level)?;
        let p = self.peaks.iter().find(|p| p.precision == precision)?;
        Some(p.peak.min(c.bandwidth * intensity))
    }

    pub fn render_ascii(&self, width: usize, height: usize) -> Result<String, PlotError> {
        if width < MIN_ASCII_WIDTH || height < MIN_ASCII_HEIGHT {
            return Err(PlotError::TooSmall(width, height));
        }
        let (lx0, lx1) = (self.x_range.0.log10(), self.x_range.1.log10());
        let (ly0, ly1) = (self.y_range.0.log10(), self.y_range.1.log10());
        let col_of = |x: f64| ((x.log10() - lx0) / (lx1 - lx0) * (width - 1) as f64).round();
        let row_of = |y: f64| ((ly1 - y.log10()) / (ly1 - ly0) * (height - 1) as f64).round();
        let x_at = |col: usize| 10f64.powf(lx0 + (lx1 - lx0) * col as f64 / (width - 1) as f64);
        let mut grid = vec![vec![' '; width]; height];
        let put = |grid: &mut Vec<Vec<char>>, col: f64, row: f64, c: char| {
            if col >= 0.0 && row >= 0.0 && (col as usize) < width && (row as usize) < height {
                grid[row as usize][col as usize] = c;
            }
        };

        let peak_max = self.peaks.iter().map(|p| p.peak).fold(0.0, f64::max);
        for (i, p) in self.peaks.iter().enumerate() {
            let mark = if i == 0 { '-' } else { '=' };
            for col in 0..width {
                put(&mut grid, col as f64, row_of(p.peak), mark);
            }
        }
        for (i, c) in self.ceilings.iter().enumerate() {
            let mark = level_mark(i);
            for col in 0..width {
                let y = c.bandwidth * x_at(col);
                if y <= peak_max {
                    put(&mut grid, col as f64, row_of(y), mark);
                }
            }
        }
        for p in &self.points {
            let mark = match p.traffic {
                TrafficModel::Realistic => '*',
                TrafficModel::Idealized => 'o',
            };
            put(&mut grid, col_of(p.intensity), row_of(p.perf), mark);
        }

        let mut out = format!("{}\n", self.title);
        let label_w = 9;
        for (r, line) in grid.iter().enumerate() {
            let y = 10f64.powf(ly1 - (ly1 - ly0) * r as f64 / (height - 1) as f64);
            let is_decade = (y.log10() - y.log10().round()).abs() < 0.5 * (ly1 - ly0) / (height - 1) as f64;
            let label = if is_decade || r == 0 || r == height - 1 {
                format!("{:>8.0e}", y)
            } else {
                String::new()
            };
            let _ = writeln!(out, "{label:>label_w$}|{}", line.iter().collect::<String>());
        }
        let _ = writeln!(out, "{:>label_w$}+{}", "", "-".repeat(width));
        let mut axis = vec![' '; width + 10];
        let decades = (lx1 - lx0).round() as i32;
        for d in 0..=decades {
            let x = 10f64.powi(lx0.round() as i32 + d);
            let col = col_of(x) as usize;
            let text = format!("{x:.0e}");
            for (k, ch) in text.chars().enumerate() {
                if col + k < axis.len() {
                    axis[col + k] = ch;
                }
            }
        }
        let _ = writeln!(out, "{:>label_w$} {}", "", axis.iter().collect::<String>().trim_end());
        let _ = writeln!(out, "{:>label_w$} arithmetic intensity (flop/byte); y: flop/s", "");
        out.push_str("legend:");
        for (i, p) in self.peaks.iter().enumerate() {
            let _ = write!(out, " {} peak {} {:.3e}", if i == 0 { '-' } else { '=' }, p.precision, p.peak);
        }
        out.push('\n');
        for (i, c) in self.ceilings.iter().enumerate() {
            let ridges: Vec<String> = self
                .peaks
                .iter()
                .map(|p| format!("{}={:.3}", p.precision.tag(), ridge_point(p.peak, c.bandwidth)))
                .collect();
            let _ = writeln!(
                out,
                "  {} {} {:.3e} B/s (ridge {})",
                level_mark(i),
                c.level,
                c.bandwidth,
                ridges.join(", ")
            );
        }
        out.push_str("  * realistic traffic  o idealized traffic\n");
        Ok(out)
    }

    pub fn render_svg(&self) -> String {
        let plot_w = SVG_WIDTH - SVG_MARGIN_LEFT - SVG_MARGIN_RIGHT;
        let plot_h = SVG_HEIGHT - SVG_MARGIN_TOP - SVG_MARGIN_BOTTOM;
        let (lx0, lx1) = (self.x_range.0.log10(), self.x_range.1.log10());
        let (ly0, ly1) = (self.y_range.0.log10(), self.y_range.1.log10());
        let px = |x: f64| SVG_MARGIN_LEFT + (x.log10() - lx0) / (lx1 - lx0) * plot_w;
        let py = |y: f64| SVG_MARGIN_TOP + (ly1 - y.log10()) / (ly1 - ly0) * plot_h;

        let mut s = String::new();
        let _ = writeln!(
            s,
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">"
        );
        let _ = writeln!(
            s,
            "  <title>{}</title>\n  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>",
            escape(&self.title)
        );
        let _ = writeln!(s, "  <g id=\"grid\" stroke=\"#e0e0e0\">");
        for d in lx0.round() as i32..=lx1.round() as i32 {
            let x = px(10f64.powi(d));
            let _ = writeln!(
                s,
                "    <line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\"/>",
                SVG_MARGIN_TOP,
                SVG_MARGIN_TOP + plot_h
            );
        }
        for d in ly0.round() as i32..=ly1.round() as i32 {
            let y = py(10f64.powi(d));
            let _ = writeln!(
                s,
                "    <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\"/>",
                SVG_MARGIN_LEFT,
                SVG_MARGIN_LEFT + plot_w
            );
        }
        s.push_str("  </g>\n  <g id=\"axes\" fill=\"black\">\n");
        let _ = writeln!(
            s,
            "    <rect x=\"{SVG_MARGIN_LEFT}\" y=\"{SVG_MARGIN_TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"black\"/>"
        );
        for d in lx0.round() as i32..=lx1.round() as i32 {
            let _ = writeln!(
                s,
                "    <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">1e{d}</text>",
                px(10f64.powi(d)),
                SVG_MARGIN_TOP + plot_h + 16.0
            );
        }
        for d in ly0.round() as i32..=ly1.round() as i32 {
            let _ = writeln!(
                s,
                "    <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">1e{d}</text>",
                SVG_MARGIN_LEFT - 6.0,
                py(10f64.powi(d)) + 4.0
            );
        }
        let _ = writeln!(
            s,
            "    <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">arithmetic intensity (flop/byte)</text>",
            SVG_MARGIN_LEFT + plot_w / 2.0,
            SVG_HEIGHT - 20.0
        );
        let _ = writeln!(
            s,
            "    <text transform=\"translate(20 {:.2}) rotate(-90)\" text-anchor=\"middle\">performance (flop/s)</text>",
            SVG_MARGIN_TOP + plot_h / 2.0
        );
        s.push_str("  </g>\n");

        let peak_max = self.peaks.iter().map(|p| p.peak).fold(0.0, f64::max);
        s.push_str("  <g id=\"ceilings\" fill=\"none\" stroke-width=\"2\">\n");
        for (i, c) in self.ceilings.iter().enumerate() {
            let x_end = ridge_point(peak_max, c.bandwidth).min(self.x_range.1);
            let x_start = self.x_range.0.max(self.y_range.0 / c.bandwidth);
            if x_start < x_end {
                let _ = writeln!(
                    s,
                    "    <line class=\"bandwidth\" data-level=\"{}\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\"><title>{} {:.3e} B/s</title></line>",
                    escape(&c.level),
                    px(x_start),
                    py(c.bandwidth * x_start),
                    px(x_end),
                    py(c.bandwidth * x_end),
                    COLORS[i % COLORS.len()],
                    escape(&c.level),
                    c.bandwidth
                );
            }
        }
        for p in &self.peaks {
            let _ = writeln!(
                s,
                "    <line class=\"peak\" data-precision=\"{}\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#d62728\" stroke-dasharray=\"{}\"><title>peak {} {:.3e} flop/s</title></line>",
                p.precision,
                SVG_MARGIN_LEFT,
                py(p.peak),
                SVG_MARGIN_LEFT + plot_w,
                py(p.peak),
                if p.precision == Precision::Single { "6 3" } else { "none" },
                p.precision,
                p.peak
            );
        }
        s.push_str("  </g>\n  <g id=\"points\">\n");
        for p in &self.points {
            let (fill, shape) = match p.traffic {
                TrafficModel::Realistic => ("#ff7f0e", "realistic"),
                TrafficModel::Idealized => ("none", "idealized"),
            };
            let _ = writeln!(
                s,
                "    <circle class=\"{shape}\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{fill}\" stroke=\"#ff7f0e\"><title>{} ({}, {}): I={:.4} perf={:.3e} eta={:.3}</title></circle>",
                px(p.intensity),
                py(p.perf),
                escape(&p.label),
                p.traffic,
                escape(&p.level),
                p.intensity,
                p.perf,
                p.eta
            );
        }
        s.push_str("  </g>\n  <g id=\"legend\">\n");
        let lx = SVG_MARGIN_LEFT + plot_w + 14.0;
        let mut ly = SVG_MARGIN_TOP + 10.0;
        for (i, c) in self.ceilings.iter().enumerate() {
            let _ = writeln!(
                s,
                "    <text x=\"{lx:.2}\" y=\"{ly:.2}\" fill=\"{}\">{} {:.2e} B/s</text>",
                COLORS[i % COLORS.len()],
                escape(&c.level),
                c.bandwidth
            );
            ly += 16.0;
        }
        for p in &self.peaks {
            let _ = writeln!(
                s,
                "    <text x=\"{lx:.2}\" y=\"{ly:.2}\" fill=\"#d62728\">peak {} {:.2e}</text>",
                p.precision, p.peak
            );
            ly += 16.0;
        }
        let _ = writeln!(
            s,
            "    <text x=\"{lx:.2}\" y=\"{ly:.2}\">filled: realistic</text>\n    <text x=\"{lx:.2}\" y=\"{:.2}\">hollow: idealized</text>",
            ly + 16.0
        );
        s.push_str("  </g>\n</svg>\n");
        s
    }
}

fn level_mark(i: usize) -> char {
    (b'a' + (i % 26) as u8) as char
}

fn decade_floor(v: f64) -> f64 {
    10f64.powf(v.log10().floor())
}

/// Smallest whole-decade interval holding all positive finite `values`.
fn decade_range(values: &[f64]) -> (f64, f64) {
    let good = values.iter().copied().filter(|v| v.is_finite() && *v > 0.0);
    let (lo, hi) = good.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi == 0.0 {
        return (0.1, 10.0);
    }
    let lo = decade_floor(lo);
    let mut hi = 10f64.powf(hi.log10().ceil());
    if hi <= lo {
        hi = lo * 10.0;
    }
    (lo, hi)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
