//! SVG figures and CSV / aligned-text tables from experiment results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{outliers, summarize};
use crate::orchestrator::{ExperimentKind, ExperimentResult};
use crate::types::{BinaryMask, MetricsReport, Raster};

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
pub const MARGIN_LEFT: f64 = 60.0;
pub const MARGIN_RIGHT: f64 = 20.0;
pub const MARGIN_TOP: f64 = 30.0;
pub const MARGIN_BOTTOM: f64 = 60.0;

pub const TP_COLOR: &str = "#ff69b4";
pub const TN_COLOR: &str = "#000000";
pub const FP_COLOR: &str = "#0000ff";
pub const FN_COLOR: &str = "#ffff00";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureKind {
    Boxplot,
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub kind: FigureKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub output: PathBuf,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Vertical data range, widened to tenths and never empty.
fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let mut lo = (lo * 10.0).floor() / 10.0;
    let mut hi = (hi * 10.0).ceil() / 10.0;
    if hi - lo < 1e-12 {
        lo -= 0.1;
        hi += 0.1;
    }
    (lo, hi)
}

struct Frame {
    lo: f64,
    hi: f64,
}

impl Frame {
    fn plot_h() -> f64 {
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    }

    fn plot_w() -> f64 {
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    }

    fn y(&self, v: f64) -> f64 {
        MARGIN_TOP + (self.hi - v) / (self.hi - self.lo) * Self::plot_h()
    }

    fn open(&self, svg: &mut String, title: &str, x_label: &str, y_label: &str) {
        let _ = writeln!(
            svg,
            r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">
<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let _ = writeln!(
            svg,
            r#"<g class="plot" data-ymin="{}" data-ymax="{}" data-top="{MARGIN_TOP}" data-height="{}">"#,
            self.lo,
            self.hi,
            Self::plot_h()
        );
        let bottom = MARGIN_TOP + Self::plot_h();
        let _ = writeln!(
            svg,
            r#"<line class="axis" x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{bottom}" stroke="black"/>
<line class="axis" x1="{MARGIN_LEFT}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="black"/>"#,
            WIDTH - MARGIN_RIGHT
        );
        for k in 0..=4 {
            let v = self.lo + (self.hi - self.lo) * k as f64 / 4.0;
            let y = self.y(v);
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{y}" x2="{MARGIN_LEFT}" y2="{y}" stroke="black"/><text x="{}" y="{}" text-anchor="end" font-size="10">{v:.2}</text>"#,
                MARGIN_LEFT - 4.0,
                MARGIN_LEFT - 6.0,
                y + 3.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>
<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
            MARGIN_LEFT + Self::plot_w() / 2.0,
            HEIGHT - 12.0,
            escape(x_label),
            MARGIN_TOP + Self::plot_h() / 2.0,
            MARGIN_TOP + Self::plot_h() / 2.0,
            escape(y_label)
        );
    }

    fn close(svg: &mut String) {
        svg.push_str("</g>\n</svg>\n");
    }
}

fn check_series(series: &[Series]) -> Result<()> {
    if series.is_empty() {
        return Err(Error::EmptyInput("figure has no series"));
    }
    if series.iter().any(|s| s.values.is_empty()) {
        return Err(Error::EmptyInput("figure series has no values"));
    }
    Ok(())
}

/// One box per series, in the given order.
pub fn boxplot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    check_series(series)?;
    let frame = {
        let (lo, hi) = y_range(series.iter().flat_map(|s| s.values.iter().copied()));
        Frame { lo, hi }
    };
    let mut svg = String::new();
    frame.open(&mut svg, title, x_label, y_label);
    let slot = Frame::plot_w() / series.len() as f64;
    let half = (slot * 0.3).min(30.0);
    for (i, s) in series.iter().enumerate() {
        let st = summarize(&s.values)?;
        let cx = MARGIN_LEFT + slot * (i as f64 + 0.5);
        let (x0, x1) = (cx - half, cx + half);
        let (yq1, yq3) = (frame.y(st.q1), frame.y(st.q3));
        let _ = writeln!(svg, r#"<g class="box" data-label="{}">"#, escape(&s.label));
        let _ = writeln!(
            svg,
            r##"<line class="whisker" x1="{cx}" y1="{}" x2="{cx}" y2="{yq1}" stroke="black"/>
<line class="whisker" x1="{cx}" y1="{yq3}" x2="{cx}" y2="{}" stroke="black"/>
<line class="whisker-low" x1="{x0}" y1="{}" x2="{x1}" y2="{}" stroke="black"/>
<line class="whisker-high" x1="{x0}" y1="{}" x2="{x1}" y2="{}" stroke="black"/>
<rect class="iqr" x="{x0}" y="{yq3}" width="{}" height="{}" fill="#cfe2f3" stroke="black"/>
<line class="median" x1="{x0}" y1="{}" x2="{x1}" y2="{}" stroke="#cc0000" stroke-width="2"/>"##,
            frame.y(st.whisker_low),
            frame.y(st.whisker_high),
            frame.y(st.whisker_low),
            frame.y(st.whisker_low),
            frame.y(st.whisker_high),
            frame.y(st.whisker_high),
            2.0 * half,
            yq1 - yq3,
            frame.y(st.median),
            frame.y(st.median),
        );
        for v in outliers(&s.values, &st) {
            let _ = writeln!(
                svg,
                r#"<circle class="outlier" cx="{cx}" cy="{}" r="2.5" fill="none" stroke="black"/>"#,
                frame.y(v)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{cx}" y="{}" text-anchor="middle" font-size="10">{}</text>
</g>"#,
            MARGIN_TOP + Frame::plot_h() + 14.0,
            escape(&s.label)
        );
    }
    Frame::close(&mut svg);
    Ok(svg)
}

/// One polyline per series over x = 0, 1, 2, ...
pub fn line_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    check_series(series)?;
    let (lo, hi) = y_range(series.iter().flat_map(|s| s.values.iter().copied()));
    let frame = Frame { lo, hi };
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(1);
    let step = if n > 1 { Frame::plot_w() / (n - 1) as f64 } else { 0.0 };
    let x = |i: usize| MARGIN_LEFT + if n > 1 { step * i as f64 } else { Frame::plot_w() / 2.0 };
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut svg = String::new();
    frame.open(&mut svg, title, x_label, y_label);
    for i in 0..n {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{i}</text>"#,
            x(i),
            MARGIN_TOP + Frame::plot_h() + 14.0
        );
    }
    for (k, s) in series.iter().enumerate() {
        let color = palette[k % palette.len()];
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{},{}", x(i), frame.y(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<g class="series" data-label="{}"><polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            escape(&s.label),
            points.join(" ")
        );
        for (i, &v) in s.values.iter().enumerate() {
            let _ = writeln!(
                svg,
                r#"<circle class="point" cx="{}" cy="{}" r="3" fill="{color}"/>"#,
                x(i),
                frame.y(v)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="10" fill="{color}">{}</text></g>"#,
            WIDTH - MARGIN_RIGHT - 120.0,
            MARGIN_TOP + 14.0 * (k as f64 + 1.0),
            escape(&s.label)
        );
    }
    Frame::close(&mut svg);
    Ok(svg)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_figure(spec: &FigureSpec) -> Result<()> {
    let svg = match spec.kind {
        FigureKind::Boxplot => boxplot_svg(&spec.title, &spec.x_label, &spec.y_label, &spec.series)?,
        FigureKind::Line => line_svg(&spec.title, &spec.x_label, &spec.y_label, &spec.series)?,
    };
    write_file(&spec.output, &svg)
}

pub fn emit_boxplot(series: &[Series], output: impl AsRef<Path>) -> Result<()> {
    let svg = boxplot_svg("Test DSC per model", "model", "DSC", series)?;
    write_file(output.as_ref(), &svg)
}

/// Per-pixel agreement of a prediction with ground truth, one rect per
/// horizontal run: TP pink, TN black, FP blue, FN yellow.
pub fn overlay_svg(pred: &BinaryMask, gt: &BinaryMask) -> Result<String> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    let (w, h) = gt.dims();
    let color = |i: usize| match (pred.bits()[i], gt.bits()[i]) {
        (1, 1) => TP_COLOR,
        (0, 0) => TN_COLOR,
        (1, 0) => FP_COLOR,
        _ => FN_COLOR,
    };
    let mut svg = format!(
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" shape-rendering="crispEdges">
"#
    );
    for y in 0..h {
        let mut x = 0;
        while x < w {
            let c = color(y * w + x);
            let start = x;
            while x < w && color(y * w + x) == c {
                x += 1;
            }
            let _ = writeln!(
                svg,
                r#"<rect x="{start}" y="{y}" width="{}" height="1" fill="{c}"/>"#,
                x - start
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_overlay(pred: &BinaryMask, gt: &BinaryMask, output: impl AsRef<Path>) -> Result<()> {
    write_file(output.as_ref(), &overlay_svg(pred, gt)?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Value(Option<f64>),
    /// Rendered with an explicit sign.
    Delta(Option<f64>),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Value(Some(v)) => format!("{v:.3}"),
            Cell::Delta(Some(v)) => {
                let r = format!("{v:+.3}");
                if r == "-0.000" { "+0.000".to_string() } else { r }
            }
            Cell::Value(None) | Cell::Delta(None) => "-".to_string(),
        }
    }

    fn numeric(&self) -> bool {
        !matches!(self, Cell::Text(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn check(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != self.headers.len() {
                return Err(Error::RaggedTable {
                    row: i,
                    expected: self.headers.len(),
                    actual: r.len(),
                });
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        self.check()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<table>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 input"))
    }

    /// Space-separated columns; text left-aligned, numbers right-aligned.
    pub fn to_text(&self) -> Result<String> {
        self.check()?;
        let rendered: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect();
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|c| {
                rendered
                    .iter()
                    .map(|r| r[c].chars().count())
                    .chain([self.headers[c].chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let numeric: Vec<bool> = (0..self.headers.len())
            .map(|c| self.rows.iter().any(|r| r[c].numeric()))
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if numeric[c] {
                        format!("{s:>w$}", w = widths[c])
                    } else {
                        format!("{s:<w$}", w = widths[c])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&self.headers);
        out.push('\n');
        for r in &rendered {
            out.push_str(&line(r));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn emit(&self, stem: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let stem = stem.as_ref();
        let csv_path = stem.with_extension("csv");
        let txt_path = stem.with_extension("txt");
        write_file(&csv_path, &self.to_csv()?)?;
        write_file(&txt_path, &self.to_text()?)?;
        Ok(vec![csv_path, txt_path])
    }
}

fn metric_row(label: String, m: &MetricsReport) -> Vec<Cell> {
    let mut row = vec![Cell::Text(label)];
    row.extend(m.values().iter().map(|&v| Cell::Value(Some(v))));
    row
}

fn pct_label(p: f64) -> String {
    let s = format!("{:.2}", p * 100.0);
    format!("{}%", s.trim_end_matches('0').trim_end_matches('.'))
}

fn metric_table(first: &str, rows: impl Iterator<Item = (String, MetricsReport)>) -> Table {
    let mut headers = vec![first];
    headers.extend(MetricsReport::NAMES);
    let mut t = Table::new(&headers);
    t.rows = rows.map(|(l, m)| metric_row(l, &m)).collect();
    t
}

/// Tables and figures for one experiment result; returns the files written.
pub fn report_experiment(result: &ExperimentResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let name = result.experiment.as_str();
    let stem = out_dir.join(name);
    let mut files = Vec::new();
    match result.experiment {
        ExperimentKind::CorruptionSweep => {
            let mut models: Vec<_> = result.models.iter().collect();
            models.sort_by(|a, b| a.missing_fraction.total_cmp(&b.missing_fraction));
            let series: Vec<Series> = models
                .iter()
                .map(|m| Series::new(pct_label(m.missing_fraction), m.images.iter().map(|r| r.metrics.dsc).collect()))
                .collect();
            let path = out_dir.join(format!("{name}_boxplot.svg"));
            write_file(
                &path,
                &boxplot_svg("Test DSC vs missing cells", "cells removed from training GT", "DSC", &series)?,
            )?;
            files.push(path);
            let t = metric_table("Missing", models.iter().map(|m| (pct_label(m.missing_fraction), m.aggregate)));
            files.extend(t.emit(&stem)?);
        }
        ExperimentKind::UnderOverSweep => {
            let t = metric_table(
                "Model",
                result.models.iter().map(|m| {
                    let label = if m.k_max == 0 {
                        format!("{} missing", pct_label(m.missing_fraction))
                    } else {
                        format!("{0}x{0}", m.k_max)
                    };
                    (label, m.aggregate)
                }),
            );
            files.extend(t.emit(&stem)?);
        }
        ExperimentKind::Transfer => {
            let mut headers = vec!["Missing"];
            headers.extend(MetricsReport::NAMES);
            let mut t = Table::new(&headers);
            let mut levels: Vec<f64> = result.transfer.iter().map(|r| r.missing_fraction).collect();
            levels.dedup();
            for p in levels {
                let mut row = vec![Cell::Text(pct_label(p))];
                for metric in MetricsReport::NAMES {
                    let d = result
                        .transfer
                        .iter()
                        .find(|r| r.missing_fraction == p && r.delta.metric_name == metric)
                        .map(|r| r.delta.delta);
                    row.push(Cell::Delta(d));
                }
                t.rows.push(row);
            }
            files.extend(t.emit(out_dir.join(format!("{name}_delta")))?);
            let models = metric_table("Model", result.models.iter().map(|m| (m.model.clone(), m.aggregate)));
            files.extend(models.emit(&stem)?);
        }
        ExperimentKind::Bootstrap => {
            let series = vec![Series::new(
                "test DSC",
                result.bootstrap.iter().map(|r| r.test_dsc).collect(),
            )];
            let path = out_dir.join(format!("{name}_line.svg"));
            write_file(&path, &line_svg("Bootstrapping", "iteration", "DSC", &series)?)?;
            files.push(path);
            let mut t = Table::new(&["Iteration", "Test DSC", "Target DSC", "Changed pixels"]);
            for r in &result.bootstrap {
                t.rows.push(vec![
                    Cell::Text(r.iteration.to_string()),
                    Cell::Value(Some(r.test_dsc)),
                    Cell::Value(Some(r.target_dsc)),
                    Cell::Text(r.changed_pixels.to_string()),
                ]);
            }
            files.extend(t.emit(&stem)?);
        }
    }
    Ok(files)
}

/// Report every `*_summary.json` found in `results_dir`.
pub fn report_directory(results_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut summaries: Vec<PathBuf> = fs::read_dir(results_dir)
        .map_err(|e| Error::io(results_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with("_summary.json"))
        .collect();
    summaries.sort();
    if summaries.is_empty() {
        return Err(Error::EmptyInput("no *_summary.json files in results directory"));
    }
    let mut files = Vec::new();
    for path in summaries {
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let result: ExperimentResult = serde_json::from_slice(&bytes)?;
        files.extend(report_experiment(&result, out_dir)?);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxes(svg: &str) -> Vec<(String, f64, f64, f64)> {
        let doc = roxmltree::Document::parse(svg).unwrap();
        let plot = doc.descendants().find(|n| n.attribute("class") == Some("plot")).unwrap();
        let lo: f64 = plot.attribute("data-ymin").unwrap().parse().unwrap();
        let hi: f64 = plot.attribute("data-ymax").unwrap().parse().unwrap();
        let top: f64 = plot.attribute("data-top").unwrap().parse().unwrap();
        let height: f64 = plot.attribute("data-height").unwrap().parse().unwrap();
        let value = |y: f64| hi - (y - top) / height * (hi - lo);
        doc.descendants()
            .filter(|n| n.attribute("class") == Some("box"))
            .map(|g| {
                let rect = g.children().find(|n| n.attribute("class") == Some("iqr")).unwrap();
                let y: f64 = rect.attribute("y").unwrap().parse().unwrap();
                let h: f64 = rect.attribute("height").unwrap().parse().unwrap();
                let med = g.children().find(|n| n.attribute("class") == Some("median")).unwrap();
                let my: f64 = med.attribute("y1").unwrap().parse().unwrap();
                (g.attribute("data-label").unwrap().to_string(), value(y + h), value(my), value(y))
            })
            .collect()
    }

    #[test]
    fn box_geometry_matches_summary() {
        let a = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        let b = vec![0.9, 0.8, 0.85, 0.7, 0.95, 0.3];
        let svg = boxplot_svg("t", "x", "y", &[Series::new("a", a.clone()), Series::new("b & c", b.clone())]).unwrap();
        let parsed = boxes(&svg);
        assert_eq!(parsed.len(), 2);
        for ((label, q1, med, q3), vals) in parsed.iter().zip([&a, &b]) {
            let s = summarize(vals).unwrap();
            assert!((q1 - s.q1).abs() < 1e-9, "{label}");
            assert!((med - s.median).abs() < 1e-9);
            assert!((q3 - s.q3).abs() < 1e-9);
        }
        assert_eq!(parsed[1].0, "b & c");
        let outlier_count = svg.matches(r#"class="outlier""#).count();
        assert_eq!(outlier_count, 1);
    }

    #[test]
    fn single_value_box_is_degenerate() {
        let svg = boxplot_svg("t", "x", "y", &[Series::new("only", vec![0.7])]).unwrap();
        let (_, q1, med, q3) = boxes(&svg)[0].clone();
        assert!((q1 - 0.7).abs() < 1e-9 && (med - 0.7).abs() < 1e-9 && (q3 - 0.7).abs() < 1e-9);
    }

    #[test]
    fn empty_figures_rejected() {
        assert!(boxplot_svg("t", "x", "y", &[]).is_err());
        assert!(line_svg("t", "x", "y", &[Series::new("s", vec![])]).is_err());
    }

    #[test]
    fn line_chart_is_well_formed() {
        let svg = line_svg("<trend>", "it", "DSC", &[Series::new("dsc", vec![0.5, 0.6, 0.62])]).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let points = doc.descendants().filter(|n| n.attribute("class") == Some("point")).count();
        assert_eq!(points, 3);
    }

    #[test]
    fn table_two_layout_and_formats() {
        let m = MetricsReport {
            counts: Default::default(),
            dsc: 0.8745,
            jaccard: 0.777,
            precision: 0.9,
            recall: 0.85,
            specificity: 0.99,
        };
        let mut t = metric_table("Model", [("3x3".to_string(), m)].into_iter());
        assert_eq!(t.headers, vec!["Model", "DSC", "Jaccard", "Precision", "Recall", "Specificity"]);
        t.rows.push(vec![
            Cell::Text("delta".into()),
            Cell::Delta(Some(-0.031)),
            Cell::Delta(Some(0.0)),
            Cell::Delta(Some(0.0271)),
            Cell::Value(None),
            Cell::Delta(None),
        ]);
        let text = t.to_text().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].contains("0.875") || lines[1].contains("0.874"));
        assert!(lines[2].contains("-0.031") && lines[2].contains("+0.000") && lines[2].contains("+0.027"));
        assert!(lines[2].contains(" -"));
        let ends: Vec<usize> = lines.iter().map(|l| l.len()).collect();
        assert!(ends.iter().all(|&e| e == ends[0]), "{text}");

        let csv_text = t.to_csv().unwrap();
        let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
        let back: Vec<Vec<String>> = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
        let rendered: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect();
        assert_eq!(back, rendered);
    }

    #[test]
    fn ragged_rows_rejected() {
        let mut t = Table::new(&["a", "b"]);
        t.rows.push(vec![Cell::Text("x".into())]);
        assert!(matches!(t.to_csv(), Err(Error::RaggedTable { row: 0, expected: 2, actual: 1 })));
    }

    #[test]
    fn overlay_colours() {
        let pred = BinaryMask::new(4, 1, vec![1, 1, 0, 0]).unwrap();
        let gt = BinaryMask::new(4, 1, vec![1, 0, 1, 0]).unwrap();
        let svg = overlay_svg(&pred, &gt).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let fills: Vec<&str> = doc.descendants().filter(|n| n.has_tag_name("rect")).map(|n| n.attribute("fill").unwrap()).collect();
        assert_eq!(fills, vec![TP_COLOR, FP_COLOR, FN_COLOR, TN_COLOR]);
    }
}
