//! Static figures: matrix heatmaps and stacked successive-similarity plots,
//! written as SVG 1.1 or binary PPM (P6). Output is byte-deterministic.

mod heatmap;
mod timeseries;

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use heatmap::{block_average, heatmap_ppm, heatmap_svg, render_heatmap, Grid, HeatmapInput};
pub use timeseries::{render_timeseries, timeseries_ppm, timeseries_svg};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    Grayscale,
    #[default]
    Viridis,
}

/// Eight fixed stops, dark to light; relative luminance increases along the
/// table so brighter always means larger.
const VIRIDIS: [[u8; 3]; 8] = [
    [0x44, 0x01, 0x54],
    [0x46, 0x32, 0x7e],
    [0x36, 0x5c, 0x8d],
    [0x27, 0x7f, 0x8e],
    [0x1f, 0xa1, 0x87],
    [0x4a, 0xc1, 0x6d],
    [0xa0, 0xda, 0x39],
    [0xfd, 0xe7, 0x25],
];

impl Palette {
    /// Color for `t` in [0, 1]; values outside are clamped.
    pub fn color(self, t: f64) -> [u8; 3] {
        let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
        match self {
            Palette::Grayscale => {
                let g = (t * 255.0).round() as u8;
                [g, g, g]
            }
            Palette::Viridis => {
                let pos = t * (VIRIDIS.len() - 1) as f64;
                let lo = (pos.floor() as usize).min(VIRIDIS.len() - 2);
                let f = pos - lo as f64;
                let (a, b) = (VIRIDIS[lo], VIRIDIS[lo + 1]);
                let mix = |k: usize| (f64::from(a[k]) + (f64::from(b[k]) - f64::from(a[k])) * f).round() as u8;
                [mix(0), mix(1), mix(2)]
            }
        }
    }

    /// Stroke color for line plots.
    pub(crate) fn ink(self) -> [u8; 3] {
        match self {
            Palette::Grayscale => [0, 0, 0],
            Palette::Viridis => VIRIDIS[0],
        }
    }
}

impl FromStr for Palette {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grayscale" | "gray" => Ok(Palette::Grayscale),
            "viridis" => Ok(Palette::Viridis),
            other => Err(Error::InvalidRenderSpec(format!("unknown palette {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSpec {
    pub palette: Palette,
    pub width: u32,
    pub height: u32,
    /// Maximum cells per heatmap axis; larger matrices are block-averaged.
    pub downsample: usize,
    pub title: String,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            palette: Palette::Viridis,
            width: 800,
            height: 800,
            downsample: 256,
            title: String::new(),
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 64 {
            return Err(Error::InvalidRenderSpec(format!(
                "width and height must be >= 64, got {}x{}",
                self.width, self.height
            )));
        }
        if self.downsample < 16 {
            return Err(Error::InvalidRenderSpec(format!(
                "downsample must be >= 16, got {}",
                self.downsample
            )));
        }
        Ok(())
    }

    pub fn with_title(&self, title: impl Into<String>) -> Self {
        RenderSpec {
            title: title.into(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Svg,
    Ppm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("svg") => Ok(ImageFormat::Svg),
            Some("ppm") => Ok(ImageFormat::Ppm),
            _ => Err(Error::InvalidRenderSpec(format!(
                "{} must end in .svg or .ppm",
                path.display()
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Svg => "svg",
            ImageFormat::Ppm => "ppm",
        }
    }
}

pub(crate) fn hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

pub(crate) fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

pub(crate) fn svg_open(width: u32, height: u32) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##);
    s
}

/// RGB raster with a P6 encoder.
pub(crate) struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let (w, h) = (width as usize, height as usize);
        Raster {
            width: w,
            height: h,
            pixels: fill.iter().copied().cycle().take(w * h * 3).collect(),
        }
    }

    pub fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let k = (y as usize * self.width + x as usize) * 3;
        self.pixels[k..k + 3].copy_from_slice(&c);
    }

    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::write(path, e))
}
