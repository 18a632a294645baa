//! SVG token x layer heatmaps.
//!
//! Output is plain SVG 1.1 with every number printed at a fixed precision, so
//! identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trace_io::MetricGrid;

pub type Rgb = [u8; 3];

pub const SEQ_LOW: Rgb = [247, 251, 255];
pub const SEQ_HIGH: Rgb = [8, 48, 107];
pub const DIV_NEG: Rgb = [33, 102, 172];
pub const DIV_CENTER: Rgb = [247, 247, 247];
pub const DIV_POS: Rgb = [178, 24, 43];
/// Fill for masked cells; grey, so it lies on neither ramp.
pub const MASK_FILL: Rgb = [189, 189, 189];

const TITLE_H: u32 = 22;
const AXIS_H: u32 = 16;
const PAD: u32 = 8;
const CHAR_W: u32 = 7;
const MAX_LABEL_CHARS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorMode {
    /// `[lo, hi]` onto a single-hue ramp (lo defaults to 0).
    Sequential,
    /// `[−M, +M]` onto a two-hue ramp with the center pinned at zero.
    Diverging,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSpec {
    pub title: String,
    pub color_mode: ColorMode,
    pub value_range: Option<(f64, f64)>,
    pub cell_px: u32,
    pub show_token_labels: bool,
}

impl HeatmapSpec {
    pub fn new(title: impl Into<String>, color_mode: ColorMode) -> Self {
        HeatmapSpec {
            title: title.into(),
            color_mode,
            value_range: None,
            cell_px: 14,
            show_token_labels: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_px == 0 {
            return Err(Error::InvalidArgument("cell_px must be at least 1".into()));
        }
        if let Some((lo, hi)) = self.value_range {
            if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                return Err(Error::InvalidArgument(format!(
                    "value range [{lo}, {hi}] is empty"
                )));
            }
        }
        Ok(())
    }
}

/// Resolved value-to-color mapping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorScale {
    Sequential { lo: f64, hi: f64 },
    Diverging { magnitude: f64 },
}

impl ColorScale {
    /// Scale for a set of grids: explicit range if given, else the data extent.
    pub fn fit(mode: ColorMode, range: Option<(f64, f64)>, grids: &[&MetricGrid]) -> Self {
        let values = || grids.iter().flat_map(|g| g.valid_values());
        match mode {
            ColorMode::Sequential => {
                let (lo, hi) = range.unwrap_or_else(|| {
                    let lo = values().fold(0.0f64, f64::min);
                    let hi = values().fold(lo, f64::max);
                    (lo, hi)
                });
                ColorScale::Sequential { lo, hi }
            }
            ColorMode::Diverging => {
                let magnitude = match range {
                    Some((lo, hi)) => lo.abs().max(hi.abs()),
                    None => values().fold(0.0f64, |m, v| m.max(v.abs())),
                };
                ColorScale::Diverging { magnitude }
            }
        }
    }

    pub fn color(&self, value: f64) -> Rgb {
        match *self {
            ColorScale::Sequential { lo, hi } => {
                let t = if hi > lo {
                    ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                lerp(SEQ_LOW, SEQ_HIGH, t)
            }
            ColorScale::Diverging { magnitude } => {
                let t = if magnitude > 0.0 {
                    (value / magnitude).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                if t >= 0.0 {
                    lerp(DIV_CENTER, DIV_POS, t)
                } else {
                    lerp(DIV_CENTER, DIV_NEG, -t)
                }
            }
        }
    }

    fn legend(&self) -> String {
        match *self {
            ColorScale::Sequential { lo, hi } => format!("[{}, {}]", num(lo), num(hi)),
            ColorScale::Diverging { magnitude } => format!("[-{m}, +{m}]", m = num(magnitude)),
        }
    }
}

fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    let ch = |i: usize| (f64::from(a[i]) + (f64::from(b[i]) - f64::from(a[i])) * t).round() as u8;
    [ch(0), ch(1), ch(2)]
}

pub fn hex(c: Rgb) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn num(v: f64) -> String {
    format!("{v:.4e}")
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if c.is_control() => out.push_str(&format!("\\u{{{:x}}}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

fn short_label(label: &str) -> String {
    let n = label.chars().count();
    if n <= MAX_LABEL_CHARS {
        label.to_string()
    } else {
        let mut s: String = label.chars().take(MAX_LABEL_CHARS - 1).collect();
        s.push('…');
        s
    }
}

fn check_grid(grid: &MetricGrid) -> Result<()> {
    grid.validate()?;
    if grid.num_tokens() == 0 || grid.num_layers == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid {:?} is empty",
            grid.metric_name
        )));
    }
    Ok(())
}

fn label_width(grids: &[&MetricGrid], show: bool) -> u32 {
    if !show {
        return 0;
    }
    let chars = grids
        .iter()
        .flat_map(|g| g.token_labels.iter())
        .map(|l| short_label(l).chars().count())
        .max()
        .unwrap_or(0);
    chars as u32 * CHAR_W + PAD
}

struct Panel<'a> {
    title: String,
    grid: &'a MetricGrid,
    scale: ColorScale,
}

impl Panel<'_> {
    fn height(&self, cell: u32) -> u32 {
        TITLE_H + self.grid.num_tokens() as u32 * cell + AXIS_H + PAD
    }

    fn write(&self, out: &mut String, top: u32, left: u32, cell: u32, show_labels: bool) {
        let g = self.grid;
        let _ = writeln!(out, r#"<g class="panel" transform="translate(0,{top})">"#);
        let _ = writeln!(
            out,
            r#"<text x="{PAD}" y="15" class="title">{} {}</text>"#,
            escape(&self.title),
            escape(&self.scale.legend())
        );
        for t in 0..g.num_tokens() {
            let y = TITLE_H + t as u32 * cell;
            if show_labels {
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                    left - PAD / 2,
                    y + cell / 2 + 4,
                    escape(&short_label(&g.token_labels[t]))
                );
            }
            for l in 0..g.num_layers {
                let x = left + l as u32 * cell;
                let (fill, value) = match g.get(t, l) {
                    Some(v) => (self.scale.color(v), num(v)),
                    None => (MASK_FILL, "masked".to_string()),
                };
                let _ = writeln!(
                    out,
                    r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}"><title>{} | layer {l} | {value}</title></rect>"#,
                    hex(fill),
                    escape(&g.token_labels[t]),
                );
            }
        }
        let axis_y = TITLE_H + g.num_tokens() as u32 * cell + 12;
        for l in 0..g.num_layers {
            if g.num_layers <= 40 || l % 5 == 0 {
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{axis_y}" text-anchor="middle">{l}</text>"#,
                    left + l as u32 * cell + cell / 2
                );
            }
        }
        out.push_str("</g>\n");
    }
}

fn document(title: &str, panels: &[Panel<'_>], spec: &HeatmapSpec) -> String {
    let cell = spec.cell_px;
    let grids: Vec<&MetricGrid> = panels.iter().map(|p| p.grid).collect();
    let left = PAD + label_width(&grids, spec.show_token_labels);
    let max_layers = grids.iter().map(|g| g.num_layers).max().unwrap_or(0) as u32;
    let width = (left + max_layers * cell + PAD).max(320);
    let height = TITLE_H + panels.iter().map(|p| p.height(cell)).sum::<u32>();

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    out.push_str("<style>text{font-family:monospace;font-size:10px;fill:#222222}.title{font-size:12px}</style>\n");
    let _ = writeln!(
        out,
        r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="16" class="title">{}</text>"#,
        escape(title)
    );
    let mut top = TITLE_H;
    for panel in panels {
        panel.write(&mut out, top, left, cell, spec.show_token_labels);
        top += panel.height(cell);
    }
    out.push_str("</svg>\n");
    out
}

pub fn render_heatmap_svg(grid: &MetricGrid, spec: &HeatmapSpec) -> Result<String> {
    spec.validate()?;
    check_grid(grid)?;
    let panel = Panel {
        title: grid.metric_name.clone(),
        grid,
        scale: ColorScale::fit(spec.color_mode, spec.value_range, &[grid]),
    };
    Ok(document(&spec.title, &[panel], spec))
}

pub fn render_heatmap(grid: &MetricGrid, spec: &HeatmapSpec, out_path: &Path) -> Result<()> {
    let svg = render_heatmap_svg(grid, spec)?;
    fs::write(out_path, svg).map_err(|e| Error::io(out_path, e))
}

/// Neutral, concern-shift and delta panels stacked over a shared layer axis.
///
/// The two raw panels share one scale in `spec.color_mode`; the delta panel
/// is always diverging around zero.
pub fn render_triptych_svg(
    neutral: &MetricGrid,
    cs: &MetricGrid,
    delta: &MetricGrid,
    spec: &HeatmapSpec,
) -> Result<String> {
    spec.validate()?;
    for g in [neutral, cs, delta] {
        check_grid(g)?;
    }
    if neutral.num_layers != cs.num_layers || cs.num_layers != delta.num_layers {
        return Err(Error::DimensionMismatch {
            what: "triptych layer counts",
            left: neutral.num_layers,
            right: cs.num_layers.max(delta.num_layers),
        });
    }
    let raw = ColorScale::fit(spec.color_mode, spec.value_range, &[neutral, cs]);
    let panels = [
        Panel {
            title: format!("neutral {}", neutral.metric_name),
            grid: neutral,
            scale: raw,
        },
        Panel {
            title: format!("concern-shift {}", cs.metric_name),
            grid: cs,
            scale: raw,
        },
        Panel {
            title: delta.metric_name.clone(),
            grid: delta,
            scale: ColorScale::fit(ColorMode::Diverging, None, &[delta]),
        },
    ];
    Ok(document(&spec.title, &panels, spec))
}

pub fn render_triptych(
    neutral: &MetricGrid,
    cs: &MetricGrid,
    delta: &MetricGrid,
    spec: &HeatmapSpec,
    out_path: &Path,
) -> Result<()> {
    let svg = render_triptych_svg(neutral, cs, delta, spec)?;
    fs::write(out_path, svg).map_err(|e| Error::io(out_path, e))
}

/// Fill colors of the cell rectangles in document order (test helper for
/// inspecting rendered output).
pub fn cell_fills(svg: &str) -> Vec<String> {
    svg.lines()
        .filter(|l| l.starts_with("<rect x=") && l.contains("<title>"))
        .filter_map(|l| {
            let start = l.find("fill=\"")? + 6;
            Some(l[start..start + 7].to_string())
        })
        .collect()
}
