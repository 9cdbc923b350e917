use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ssm::TimeSeries;

use super::{escape_xml, hex, svg_open, write_bytes, ImageFormat, Raster, RenderSpec};

const TITLE_BAND: f64 = 24.0;
const RIGHT: f64 = 8.0;
const GAP: f64 = 6.0;

struct Layout {
    left: f64,
    top: f64,
    panel_h: f64,
    plot_w: f64,
    lo: f64,
    hi: f64,
    len: usize,
}

impl Layout {
    fn new(series: &[TimeSeries], spec: &RenderSpec) -> Result<Self> {
        let first = series.first().ok_or(Error::EmptyMatrix)?;
        let len = first.len();
        if len == 0 {
            return Err(Error::EmptyMatrix);
        }
        if let Some(bad) = series.iter().find(|s| s.len() != len) {
            return Err(Error::LengthMismatch(len, bad.len()));
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in series.iter().flat_map(|s| &s.values) {
            lo = lo.min(f64::from(*v));
            hi = hi.max(f64::from(*v));
        }
        // a flat range is widened symmetrically so the line sits mid-panel
        if hi - lo < 1e-12 {
            lo -= 1.0;
            hi += 1.0;
        }
        let top = if spec.title.is_empty() { GAP } else { TITLE_BAND };
        let m = series.len() as f64;
        // room for model labels without starving narrow plots
        let left = (f64::from(spec.width) * 0.12).clamp(8.0, 72.0);
        Ok(Layout {
            left,
            top,
            panel_h: ((f64::from(spec.height) - top - GAP * m) / m).max(1.0),
            plot_w: f64::from(spec.width) - left - RIGHT,
            lo,
            hi,
            len,
        })
    }

    fn panel_top(&self, p: usize) -> f64 {
        self.top + p as f64 * (self.panel_h + GAP)
    }

    fn x(&self, i: usize) -> f64 {
        if self.len == 1 {
            self.left + self.plot_w / 2.0
        } else {
            self.left + i as f64 * self.plot_w / (self.len - 1) as f64
        }
    }

    fn y(&self, p: usize, v: f64) -> f64 {
        self.panel_top(p) + (self.hi - v) / (self.hi - self.lo) * self.panel_h
    }
}

pub fn timeseries_svg(series: &[TimeSeries], spec: &RenderSpec) -> Result<String> {
    let l = Layout::new(series, spec)?;
    let ink = hex(spec.palette.ink());
    let mut s = svg_open(spec.width, spec.height);
    if !spec.title.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="17" font-size="14" text-anchor="middle">{}</text>"#,
            spec.width / 2,
            escape_xml(&spec.title)
        );
    }
    for (p, ts) in series.iter().enumerate() {
        let top = l.panel_top(p);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#999999" stroke-width="1"/>"##,
            l.left, l.plot_w, l.panel_h
        );
        if l.lo < 0.0 && l.hi > 0.0 {
            let y0 = l.y(p, 0.0);
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="#cccccc" stroke-dasharray="4 3"/>"##,
                l.left,
                l.left + l.plot_w
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            l.left - 4.0,
            top + l.panel_h / 2.0,
            escape_xml(ts.model.as_str())
        );
        let mut points = String::new();
        for (i, v) in ts.values.iter().enumerate() {
            if i > 0 {
                points.push(' ');
            }
            let _ = write!(points, "{:.2},{:.2}", l.x(i), l.y(p, f64::from(*v)));
        }
        let _ = writeln!(
            s,
            r#"<polyline points="{points}" fill="none" stroke="{ink}" stroke-width="1"/>"#
        );
    }
    let bottom = l.panel_top(series.len() - 1) + l.panel_h;
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="10">0</text>"#,
        l.left,
        (bottom + 4.0 + 10.0).min(f64::from(spec.height) - 1.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
        l.left + l.plot_w,
        (bottom + 4.0 + 10.0).min(f64::from(spec.height) - 1.0),
        l.len - 1
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn timeseries_ppm(series: &[TimeSeries], spec: &RenderSpec) -> Result<Vec<u8>> {
    let l = Layout::new(series, spec)?;
    let mut r = Raster::new(spec.width, spec.height, [255; 3]);
    let ink = spec.palette.ink();
    let frame = [0x99; 3];
    let px = |v: f64| v.round() as i64;
    for (p, ts) in series.iter().enumerate() {
        let (top, bottom) = (px(l.panel_top(p)), px(l.panel_top(p) + l.panel_h));
        let (left, right) = (px(l.left), px(l.left + l.plot_w));
        r.line((left, top), (right, top), frame);
        r.line((left, bottom), (right, bottom), frame);
        r.line((left, top), (left, bottom), frame);
        r.line((right, top), (right, bottom), frame);
        let pts: Vec<(i64, i64)> =
            ts.values.iter().enumerate().map(|(i, v)| (px(l.x(i)), px(l.y(p, f64::from(*v))))).collect();
        if pts.len() == 1 {
            r.put(pts[0].0, pts[0].1, ink);
        }
        for w in pts.windows(2) {
            r.line(w[0], w[1], ink);
        }
    }
    Ok(r.encode())
}

/// Stacked panels, one per series, sharing x (transition index) and y (z-score).
pub fn render_timeseries(series: &[TimeSeries], spec: &RenderSpec, path: &Path) -> Result<()> {
    spec.validate()?;
    match ImageFormat::from_path(path)? {
        ImageFormat::Svg => write_bytes(path, timeseries_svg(series, spec)?.as_bytes()),
        ImageFormat::Ppm => write_bytes(path, &timeseries_ppm(series, spec)?),
    }
}
