use std::fmt::Write as _;
use std::str::FromStr;

use super::{Cell, ExperimentConfig, ExperimentReport, ReportName};
use crate::error::{Error, Result};

const CONFIG_PREFIX: &str = "# config: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::domain(format!("unknown report format {other:?}"))),
        }
    }
}

/// Formats with six significant digits, like C's `%g`.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    // Rounding can carry into the next decade (999999.5 -> 1e6).
    let rounded: f64 = format!("{:.5e}", x).parse().unwrap_or(x);
    let exp = if rounded.abs() >= 10f64.powi(exp + 1) { exp + 1 } else { exp };
    if !(-4..6).contains(&exp) {
        let s = format!("{:.5e}", x);
        let (mantissa, e) = s.split_once('e').unwrap_or((&s, "0"));
        format!("{}e{}", trim_zeros(mantissa), e)
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Int(i) => i.to_string(),
        Cell::Float(x) => fmt_sig6(*x),
        Cell::Text(s) => s.clone(),
        Cell::Empty => String::new(),
    }
}

pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Result<Vec<u8>> {
    if report.columns.is_empty() {
        return Err(Error::domain("report has no columns"));
    }
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Svg => Ok(render_svg(report).into_bytes()),
    }
}

/// CSV with `# key: value` comment lines ahead of the header. The config
/// line is compact JSON and re-parses with [`parse_report_config`].
fn render_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut out = String::new();
    writeln!(out, "# report: {}", report.name).ok();
    writeln!(out, "# seed_base: {}", report.seed_base).ok();
    writeln!(out, "{CONFIG_PREFIX}{}", serde_json::to_string(&report.config)?).ok();
    for (k, v) in &report.notes {
        writeln!(out, "# {k}: {v}").ok();
    }
    let mut w = csv::Writer::from_writer(out.into_bytes());
    w.write_record(&report.columns)?;
    for row in &report.rows {
        w.write_record(row.iter().map(cell_text))?;
    }
    w.into_inner().map_err(|e| Error::io("report", e.into_error()))
}

/// Recovers the configuration embedded in a rendered CSV report.
pub fn parse_report_config(csv: &[u8]) -> Result<ExperimentConfig> {
    let text = std::str::from_utf8(csv).map_err(|e| Error::domain(e.to_string()))?;
    let line = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix(CONFIG_PREFIX))
        .ok_or_else(|| Error::domain("report has no config line"))?;
    Ok(serde_json::from_str(line)?)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const SERIES_COLORS: [&str; 2] = ["#1f77b4", "#ff7f0e"];

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
            lo -= pad;
            hi += pad;
        }
        Axis { lo, hi }
    }

    fn map(&self, v: f64, from: f64, to: f64) -> f64 {
        from + (v - self.lo) / (self.hi - self.lo) * (to - from)
    }
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// What gets plotted for each report kind: x column, y columns, axis labels.
fn plot_layout(name: ReportName) -> (&'static str, &'static [&'static str], &'static str, &'static str) {
    match name {
        ReportName::Histogram => ("bin_low", &["count"], "final net energy (kWh)", "students"),
        ReportName::LinearPva => ("", &["actual_kwh", "predicted_kwh"], "test student", "final net energy (kWh)"),
        ReportName::BandSweep => ("band_kwh", &["test_accuracy"], "success band (kWh)", "test accuracy"),
        ReportName::Stability => ("iteration", &["test_accuracy"], "iteration", "test accuracy"),
        ReportName::PrefixSweep => ("fraction", &["test_accuracy"], "fraction of action sequence", "test accuracy"),
        ReportName::Baseline => ("band_kwh", &["majority_baseline"], "success band (kWh)", "majority baseline"),
    }
}

fn render_svg(report: &ExperimentReport) -> String {
    let (x_col, y_cols, x_label, y_label) = plot_layout(report.name);
    let xs: Vec<Option<f64>> = if x_col.is_empty() {
        (0..report.rows.len()).map(|i| Some(i as f64)).collect()
    } else {
        report.values(x_col)
    };
    let series: Vec<Vec<Option<f64>>> = y_cols.iter().map(|c| report.values(c)).collect();

    let bars = report.name == ReportName::Histogram;
    let bin_width = report.config.bin_width;
    let x_axis = if bars {
        Axis::fit(xs.iter().flatten().flat_map(|&x| [x, x + bin_width]))
    } else {
        Axis::fit(xs.iter().flatten().copied())
    };
    let mut y_values: Vec<f64> = series.iter().flatten().flatten().copied().collect();
    if bars {
        y_values.push(0.0);
    }
    let baseline: Option<f64> = report.note_value("majority_baseline").and_then(|v| v.parse().ok());
    y_values.extend(baseline);
    let y_axis = Axis::fit(y_values.into_iter());

    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = WIDTH,
        h = HEIGHT
    )
    .ok();
    writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).ok();
    writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        px(WIDTH / 2.0),
        report.name
    )
    .ok();
    writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#,
        x0 = px(x0),
        x1 = px(x1),
        y0 = px(y0),
        y1 = px(y1)
    )
    .ok();
    let font = r#"font-family="sans-serif" font-size="11""#;
    for (v, anchor) in [(x_axis.lo, "start"), (x_axis.hi, "end")] {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="{anchor}" {font}>{}</text>"#,
            px(x_axis.map(v, x0, x1)),
            px(y0 + 15.0),
            fmt_sig6(v)
        )
        .ok();
    }
    for v in [y_axis.lo, y_axis.hi] {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" {font}>{}</text>"#,
            px(x0 - 5.0),
            px(y_axis.map(v, y0, y1) + 4.0),
            fmt_sig6(v)
        )
        .ok();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}: {x_label}</text>"#,
        px((x0 + x1) / 2.0),
        px(HEIGHT - 12.0),
        report.name
    )
    .ok();
    writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {y})">{}: {y_label}</text>"#,
        report.name,
        y = px((y0 + y1) / 2.0)
    )
    .ok();

    if let Some(b) = baseline {
        let y = px(y_axis.map(b, y0, y1));
        writeln!(
            s,
            r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#888888" stroke-dasharray="4 3"/>"##,
            px(x0),
            px(x1)
        )
        .ok();
    }

    for (si, ys) in series.iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        for (x, y) in xs.iter().zip(ys) {
            let (Some(x), Some(y)) = (x, y) else { continue };
            if bars {
                let left = x_axis.map(*x, x0, x1);
                let right = x_axis.map(x + bin_width, x0, x1);
                let top = y_axis.map(*y, y0, y1);
                let base = y_axis.map(0.0, y0, y1);
                writeln!(
                    s,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" stroke="white"/>"#,
                    px(left),
                    px(top),
                    px(right - left),
                    px(base - top)
                )
                .ok();
            } else {
                writeln!(
                    s,
                    r#"<circle cx="{}" cy="{}" r="4" fill="{color}"/>"#,
                    px(x_axis.map(*x, x0, x1)),
                    px(y_axis.map(*y, y0, y1))
                )
                .ok();
            }
        }
    }
    s.push_str("</svg>\n");
    s
}
