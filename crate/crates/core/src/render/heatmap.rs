use std::fmt::Write as _;
use std::path::Path;

use crate::compare::ModelMatrix;
use crate::error::{Error, Result};
use crate::ssm::{Ssm, StandardizedSsm};

use super::{escape_xml, hex, svg_open, write_bytes, ImageFormat, Raster, RenderSpec};

#[derive(Clone, Copy, Debug)]
pub enum HeatmapInput<'a> {
    Raw(&'a Ssm),
    Standardized(&'a StandardizedSsm),
    Models(&'a ModelMatrix),
}

impl<'a> From<&'a Ssm> for HeatmapInput<'a> {
    fn from(s: &'a Ssm) -> Self {
        HeatmapInput::Raw(s)
    }
}

impl<'a> From<&'a StandardizedSsm> for HeatmapInput<'a> {
    fn from(s: &'a StandardizedSsm) -> Self {
        HeatmapInput::Standardized(s)
    }
}

impl<'a> From<&'a ModelMatrix> for HeatmapInput<'a> {
    fn from(m: &'a ModelMatrix) -> Self {
        HeatmapInput::Models(m)
    }
}

/// Square grid of display cells, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub cells: usize,
    pub values: Vec<f64>,
    pub labels: Option<Vec<String>>,
}

impl Grid {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cells + c]
    }

    fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Position of `v` in [0, 1] over the grid's range; a flat grid maps to 0.5.
    fn scale(&self) -> impl Fn(f64) -> f64 {
        let (lo, hi) = self.range();
        let span = hi - lo;
        move |v| if span > 0.0 { (v - lo) / span } else { 0.5 }
    }
}

/// Averages an `n x n` matrix into at most `max_cells` blocks per axis.
/// Block `c` covers source rows `floor(c*n/k) .. floor((c+1)*n/k)`.
pub fn block_average(n: usize, get: impl Fn(usize, usize) -> f64, max_cells: usize) -> Grid {
    let k = n.min(max_cells.max(1));
    let bounds: Vec<usize> = (0..=k).map(|c| c * n / k).collect();
    let mut values = Vec::with_capacity(k * k);
    for r in 0..k {
        for c in 0..k {
            let mut sum = 0.0;
            for i in bounds[r]..bounds[r + 1] {
                for j in bounds[c]..bounds[c + 1] {
                    sum += get(i, j);
                }
            }
            let count = (bounds[r + 1] - bounds[r]) * (bounds[c + 1] - bounds[c]);
            values.push(sum / count as f64);
        }
    }
    Grid { cells: k, values, labels: None }
}

fn grid_for(input: HeatmapInput<'_>, max_cells: usize) -> Result<Grid> {
    match input {
        HeatmapInput::Raw(s) => {
            if s.n() == 0 {
                return Err(Error::EmptyMatrix);
            }
            Ok(block_average(s.n(), |i, j| f64::from(s.get(i, j)), max_cells))
        }
        HeatmapInput::Standardized(s) => {
            if s.n() == 0 {
                return Err(Error::EmptyMatrix);
            }
            Ok(block_average(s.n(), |i, j| f64::from(s.get(i, j)), max_cells))
        }
        // model matrices are small and always shown cell for cell
        HeatmapInput::Models(m) => {
            if m.m() == 0 {
                return Err(Error::EmptyMatrix);
            }
            Ok(Grid {
                cells: m.m(),
                values: m.values.clone(),
                labels: Some(m.models.iter().map(|id| id.to_string()).collect()),
            })
        }
    }
}

const TITLE_BAND: u32 = 24;
const LABEL_BAND: u32 = 96;

pub fn heatmap_svg(grid: &Grid, spec: &RenderSpec) -> String {
    let (w, h) = (spec.width, spec.height);
    let top = if spec.title.is_empty() { 0 } else { TITLE_BAND };
    let band = if grid.labels.is_some() { LABEL_BAND.min(w / 4).min(h / 4) } else { 0 };
    let (x0, y0) = (f64::from(band), f64::from(top + band));
    let cw = f64::from(w - band) / grid.cells as f64;
    let ch = f64::from(h - top - band) / grid.cells as f64;
    let t = grid.scale();

    let mut s = svg_open(w, h);
    if !spec.title.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="17" font-size="14" text-anchor="middle">{}</text>"#,
            w / 2,
            escape_xml(&spec.title)
        );
    }
    let _ = writeln!(s, r#"<g shape-rendering="crispEdges">"#);
    for r in 0..grid.cells {
        for c in 0..grid.cells {
            let v = grid.get(r, c);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{v:.6}</title></rect>"#,
                x0 + c as f64 * cw,
                y0 + r as f64 * ch,
                cw,
                ch,
                hex(spec.palette.color(t(v)))
            );
        }
    }
    let _ = writeln!(s, "</g>");
    if let Some(labels) = &grid.labels {
        for (k, label) in labels.iter().enumerate() {
            let label = escape_xml(label);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end" dominant-baseline="middle">{label}</text>"#,
                x0 - 4.0,
                y0 + (k as f64 + 0.5) * ch
            );
            let (cx, cy) = (x0 + (k as f64 + 0.5) * cw, y0 - 4.0);
            let _ = writeln!(
                s,
                r#"<text x="{cx:.2}" y="{cy:.2}" font-size="11" transform="rotate(-45 {cx:.2} {cy:.2})">{label}</text>"#
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Raster version; fills the whole canvas with cells and carries no text.
pub fn heatmap_ppm(grid: &Grid, spec: &RenderSpec) -> Vec<u8> {
    let mut raster = Raster::new(spec.width, spec.height, [255; 3]);
    let t = grid.scale();
    let colors: Vec<[u8; 3]> = grid.values.iter().map(|&v| spec.palette.color(t(v))).collect();
    let (w, h) = (raster.width, raster.height);
    for y in 0..h {
        let r = y * grid.cells / h;
        for x in 0..w {
            let c = x * grid.cells / w;
            let k = (y * w + x) * 3;
            raster.pixels[k..k + 3].copy_from_slice(&colors[r * grid.cells + c]);
        }
    }
    raster.encode()
}

/// Writes a heatmap; the extension of `path` picks SVG or PPM.
pub fn render_heatmap<'a>(input: impl Into<HeatmapInput<'a>>, spec: &RenderSpec, path: &Path) -> Result<()> {
    spec.validate()?;
    let format = ImageFormat::from_path(path)?;
    let grid = grid_for(input.into(), spec.downsample)?;
    match format {
        ImageFormat::Svg => write_bytes(path, heatmap_svg(&grid, spec).as_bytes()),
        ImageFormat::Ppm => write_bytes(path, &heatmap_ppm(&grid, spec)),
    }
}
