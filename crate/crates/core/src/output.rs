//! Field snapshots (legacy VTK), time series (CSV), quick SVG line plots and
//! point sampling of P1 fields.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

use thiserror::Error;

use crate::mesh::Mesh;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("invalid output: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, OutputError>;

/// Legacy ASCII VTK (version 2.0) unstructured grid with one scalar array
/// per named field. Values are printed with 17 significant digits.
pub fn vtk_string(mesh: &Mesh, fields: &[(&str, &[f64])]) -> Result<String> {
    if fields.is_empty() {
        return Err(OutputError::Invalid("no fields to write".into()));
    }
    let nv = mesh.num_vertices();
    for (name, f) in fields {
        if f.len() != nv {
            return Err(OutputError::Invalid(format!("field `{name}` has {} values for {nv} vertices", f.len())));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(OutputError::Invalid(format!("bad field name `{name}`")));
        }
    }
    let nt = mesh.num_triangles();
    let mut s = String::with_capacity(64 * (nv + nt) * (1 + fields.len()));
    s.push_str("# vtk DataFile Version 2.0\nhifu snapshot\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {nv} double");
    for v in mesh.vertices() {
        let _ = writeln!(s, "{:.16e} {:.16e} 0.0", v[0], v[1]);
    }
    let _ = writeln!(s, "CELLS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    let _ = writeln!(s, "POINT_DATA {nv}");
    for (name, f) in fields {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in f.iter() {
            let _ = writeln!(s, "{v:.16e}");
        }
    }
    Ok(s)
}

pub fn write_vtk(mesh: &Mesh, fields: &[(&str, &[f64])], path: impl AsRef<Path>) -> Result<()> {
    let s = vtk_string(mesh, fields)?;
    fs::write(path, s)?;
    Ok(())
}

/// Reads back the point scalars of a file produced by [`vtk_string`].
pub fn parse_vtk_scalars(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut lines = text.lines();
    let mut n = None;
    let mut out = Vec::new();
    while let Some(line) = lines.next() {
        if let Some(rest) = line.strip_prefix("POINT_DATA ") {
            n = Some(rest.trim().parse::<usize>().map_err(|e| OutputError::Invalid(e.to_string()))?);
        } else if let Some(rest) = line.strip_prefix("SCALARS ") {
            let count = n.ok_or_else(|| OutputError::Invalid("SCALARS before POINT_DATA".into()))?;
            let name = rest.split_whitespace().next().unwrap_or_default().to_string();
            lines.next();
            let vals = lines
                .by_ref()
                .take(count)
                .map(|l| l.trim().parse::<f64>().map_err(|e| OutputError::Invalid(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != count {
                return Err(OutputError::Invalid(format!("field `{name}` truncated")));
            }
            out.push((name, vals));
        }
    }
    Ok(out)
}

/// A scalar quantity sampled over time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeSeries {
    pub name: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl ProbeSeries {
    pub fn new(name: impl Into<String>) -> Self {
        ProbeSeries {
            name: name.into(),
            ..Default::default()
        }
    }

    /// Appends a sample; time stamps must increase strictly.
    pub fn push(&mut self, t: f64, v: f64) -> Result<()> {
        if self.times.last().is_some_and(|&last| t <= last) {
            return Err(OutputError::Invalid(format!("non-increasing time {t} in series `{}`", self.name)));
        }
        self.times.push(t);
        self.values.push(v);
        Ok(())
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }
}

fn check_series(series: &[ProbeSeries]) -> Result<()> {
    let first = series.first().ok_or_else(|| OutputError::Invalid("no series".into()))?;
    if first.times.is_empty() {
        return Err(OutputError::Invalid(format!("series `{}` is empty", first.name)));
    }
    for s in series {
        if s.times.len() != s.values.len() || s.times != first.times {
            return Err(OutputError::Invalid(format!(
                "series `{}` does not share the time stamps of `{}`",
                s.name, first.name
            )));
        }
    }
    Ok(())
}

/// Series on a common time axis as CSV with header `t,<name>...`.
pub fn csv_bytes(series: &[ProbeSeries]) -> Result<Vec<u8>> {
    check_series(series)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(series.iter().map(|s| s.name.clone()));
    w.write_record(&header)?;
    for (i, t) in series[0].times.iter().enumerate() {
        let mut rec = vec![format!("{t:.16e}")];
        rec.extend(series.iter().map(|s| format!("{:.16e}", s.values[i])));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| OutputError::Io(e.into_error()))
}

pub fn write_csv(series: &[ProbeSeries], path: impl AsRef<Path>) -> Result<()> {
    let bytes = csv_bytes(series)?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: f64,
    pub height: f64,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle {
            title: String::new(),
            x_label: "t [s]".into(),
            y_label: String::new(),
            width: 640.0,
            height: 400.0,
        }
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// SVG 1.1 line plot with linear, auto-scaled axes.
pub fn svg_lineplot(series: &[ProbeSeries], style: &PlotStyle) -> Result<String> {
    check_series(series)?;
    let (ml, mr, mt, mb) = (70.0, 20.0, 30.0, 50.0);
    let (w, h) = (style.width, style.height);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let times = &series[0].times;
    let (mut x0, mut x1) = (times[0], times[times.len() - 1]);
    let mut y0 = series.iter().flat_map(|s| s.values.iter()).fold(f64::INFINITY, |a, &b| a.min(b));
    let mut y1 = series.iter().flat_map(|s| s.values.iter()).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !(y0.is_finite() && y1.is_finite()) {
        return Err(OutputError::Invalid("non-finite values".into()));
    }
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= y0 {
        let pad = if y0 == 0.0 { 1.0 } else { 0.5 * y0.abs() };
        y0 -= pad;
        y1 += pad;
    }
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + (y1 - y) / (y1 - y0) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{xv:.3e}</text>",
            sx(xv),
            mt + ph + 15.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{yv:.3e}</text>",
            ml - 4.0,
            sy(yv) + 3.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        ml + pw / 2.0,
        h - 10.0,
        xml_escape(&style.x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
        mt + ph / 2.0,
        mt + ph / 2.0,
        xml_escape(&style.y_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"18\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
        w / 2.0,
        xml_escape(&style.title)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .times
            .iter()
            .zip(&ser.values)
            .map(|(&t, &v)| format!("{:.2},{:.2}", sx(t), sy(v)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"{color}\">{}</text>",
            ml + 8.0,
            mt + 14.0 + 14.0 * i as f64,
            xml_escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_svg_lineplot(series: &[ProbeSeries], path: impl AsRef<Path>, style: &PlotStyle) -> Result<()> {
    fs::write(path, svg_lineplot(series, style)?)?;
    Ok(())
}

/// Bucket grid over the mesh bounding box for point location.
#[derive(Debug, Clone)]
pub struct PointLocator {
    origin: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

const LOCATE_TOL: f64 = 1e-12;

fn barycentric(mesh: &Mesh, t: usize, p: [f64; 2]) -> [f64; 3] {
    let tri = mesh.triangles()[t];
    let [a, b, c] = tri.map(|i| mesh.vertices()[i]);
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

impl PointLocator {
    pub fn new(mesh: &Mesh) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in mesh.vertices() {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        let side = (mesh.num_triangles() as f64).sqrt().ceil().max(1.0) as usize;
        let dims = [side, side];
        let cell = [
            ((hi[0] - lo[0]) / side as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / side as f64).max(f64::MIN_POSITIVE),
        ];
        let mut loc = PointLocator {
            origin: lo,
            cell,
            dims,
            buckets: vec![Vec::new(); side * side],
        };
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let pts = tri.map(|i| mesh.vertices()[i]);
            let (mut a, mut b) = ([usize::MAX; 2], [0usize; 2]);
            for p in pts {
                let c = loc.cell_of(p);
                for d in 0..2 {
                    a[d] = a[d].min(c[d]);
                    b[d] = b[d].max(c[d]);
                }
            }
            for i in a[0]..=b[0] {
                for j in a[1]..=b[1] {
                    loc.buckets[j * dims[0] + i].push(t);
                }
            }
        }
        loc
    }

    fn cell_of(&self, p: [f64; 2]) -> [usize; 2] {
        let mut c = [0; 2];
        for d in 0..2 {
            let k = ((p[d] - self.origin[d]) / self.cell[d]).floor();
            c[d] = (k.max(0.0) as usize).min(self.dims[d] - 1);
        }
        c
    }

    /// Triangle containing `p` with its barycentric coordinates.
    pub fn locate(&self, mesh: &Mesh, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let span = [self.cell[0] * self.dims[0] as f64, self.cell[1] * self.dims[1] as f64];
        for d in 0..2 {
            let slack = 1e-9 * span[d].max(1e-300);
            if p[d] < self.origin[d] - slack || p[d] > self.origin[d] + span[d] + slack {
                return None;
            }
        }
        let c = self.cell_of(p);
        self.buckets[c[1] * self.dims[0] + c[0]].iter().find_map(|&t| {
            let l = barycentric(mesh, t, p);
            l.iter().all(|&x| x >= -LOCATE_TOL).then_some((t, l))
        })
    }

    pub fn interpolate(&self, mesh: &Mesh, field: &[f64], p: [f64; 2]) -> Option<f64> {
        self.locate(mesh, p).map(|(t, l)| {
            let tri = mesh.triangles()[t];
            l[0] * field[tri[0]] + l[1] * field[tri[1]] + l[2] * field[tri[2]]
        })
    }
}

/// Uniform samples (x2, value) along x1 = 0 for x2 in [y0, y1]; `None` where
/// the point lies outside the mesh.
pub fn axis_slice_range(
    mesh: &Mesh,
    locator: &PointLocator,
    field: &[f64],
    y0: f64,
    y1: f64,
    samples: usize,
) -> Result<Vec<(f64, Option<f64>)>> {
    if samples < 2 {
        return Err(OutputError::Invalid(format!("need at least 2 samples, got {samples}")));
    }
    Ok((0..samples)
        .map(|i| {
            let y = y0 + (y1 - y0) * i as f64 / (samples - 1) as f64;
            (y, locator.interpolate(mesh, field, [0.0, y]))
        })
        .collect())
}

/// Axis slice over the full vertical extent of the mesh.
pub fn axis_slice(mesh: &Mesh, field: &[f64], samples: usize) -> Result<Vec<(f64, Option<f64>)>> {
    let locator = PointLocator::new(mesh);
    let (lo, hi) = vertical_extent(mesh);
    axis_slice_range(mesh, &locator, field, lo, hi, samples)
}

pub fn vertical_extent(mesh: &Mesh) -> (f64, f64) {
    mesh.vertices()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v[1]), b.max(v[1])))
}

/// Largest present value of a slice with its position.
pub fn slice_max(slice: &[(f64, Option<f64>)]) -> Option<(f64, f64)> {
    slice
        .iter()
        .filter_map(|(y, v)| v.map(|v| (*y, v)))
        .fold(None, |best, (y, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((y, v)),
        })
}

/// Position of the local maximum with the largest x2 whose value is at least
/// `fraction` of the slice maximum, refined by a parabola through the
/// neighbouring samples.
pub fn leading_peak(slice: &[(f64, Option<f64>)], fraction: f64) -> Option<(f64, f64)> {
    let (_, vmax) = slice_max(slice)?;
    if vmax <= 0.0 {
        return None;
    }
    let vals: Vec<Option<f64>> = slice.iter().map(|(_, v)| *v).collect();
    for i in (0..slice.len()).rev() {
        let Some(v) = vals[i] else { continue };
        if v < fraction * vmax {
            continue;
        }
        let left = if i > 0 { vals[i - 1] } else { None };
        let right = vals.get(i + 1).copied().flatten();
        let is_peak = left.is_none_or(|l| v >= l) && right.is_none_or(|r| v > r);
        if !is_peak {
            continue;
        }
        if let (Some(l), Some(r)) = (left, right) {
            let h = slice[i + 1].0 - slice[i].0;
            let denom = l - 2.0 * v + r;
            if denom < 0.0 {
                let off = 0.5 * (l - r) / denom;
                let y = slice[i].0 + off * h;
                let peak = v - 0.25 * (l - r) * off;
                return Some((y, peak));
            }
        }
        return Some((slice[i].0, v));
    }
    None
}
