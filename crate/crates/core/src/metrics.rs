//! Metric tables: CSV encoding of [`IterationRecord`]s, the two-panel SVG
//! curve plot and the per-phase timing summary.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::trainer::IterationRecord;

pub const METRICS_HEADER: &str =
    "step,w_estimate,l_clf,l_r,dis_pn,total,src_acc_noisy,tgt_acc,ms_critic,ms_main,ms_graph";

/// Columns holding wall-clock measurements; excluded from determinism checks.
pub const TIMING_COLUMNS: [&str; 3] = ["ms_critic", "ms_main", "ms_graph"];

pub fn record_row(r: &IterationRecord) -> String {
    format!(
        "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:.4},{:.4},{:.4}",
        r.step,
        r.w_estimate,
        r.l_clf,
        r.l_r,
        r.dis_pn,
        r.total,
        r.src_acc_noisy,
        r.tgt_acc,
        r.ms_critic,
        r.ms_main,
        r.ms_graph
    )
}

pub fn records_to_csv(records: &[IterationRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&record_row(r));
        out.push('\n');
    }
    out
}

/// A parsed metrics table: named columns over numeric rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty metrics file".into(),
        })?;
        let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let vals = line
                .split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("{t:?} is not a number"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != columns.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("{} fields, header has {}", vals.len(), columns.len()),
                });
            }
            rows.push(vals);
        }
        Ok(Self { columns, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .column_index(name)
            .ok_or_else(|| Error::Data(format!("missing column {name:?}")))?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn require_columns(&self, names: &[&str]) -> Result<()> {
        for n in names {
            if self.column_index(n).is_none() {
                return Err(Error::Data(format!("missing column {n:?}")));
            }
        }
        Ok(())
    }

    /// Text of the table with the timing columns dropped.
    pub fn without_timing(&self) -> String {
        let keep: Vec<usize> = (0..self.columns.len())
            .filter(|&j| !TIMING_COLUMNS.contains(&self.columns[j].as_str()))
            .collect();
        let mut out = String::new();
        let head: Vec<&str> = keep.iter().map(|&j| self.columns[j].as_str()).collect();
        out.push_str(&head.join(","));
        out.push('\n');
        for r in &self.rows {
            let vals: Vec<String> = keep.iter().map(|&j| format!("{:?}", r[j])).collect();
            out.push_str(&vals.join(","));
            out.push('\n');
        }
        out
    }
}

pub const PANEL_WIDTH: f64 = 800.0;
pub const PANEL_HEIGHT: f64 = 300.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn bounds(series: &[(Vec<f64>, Vec<f64>)]) -> (f64, f64, f64, f64) {
    let mut b = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for (xs, ys) in series {
        for (&x, &y) in xs.iter().zip(ys) {
            if x.is_finite() && y.is_finite() {
                b.0 = b.0.min(x);
                b.1 = b.1.max(x);
                b.2 = b.2.min(y);
                b.3 = b.3.max(y);
            }
        }
    }
    if !b.0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if b.1 <= b.0 {
        b.1 = b.0 + 1.0;
    }
    if b.3 <= b.2 {
        b.2 -= 0.5;
        b.3 += 0.5;
    }
    b
}

fn panel(
    out: &mut String,
    y_offset: f64,
    title: &str,
    y_label: &str,
    names: &[String],
    series: &[(Vec<f64>, Vec<f64>)],
) {
    let (x0, x1, y0, y1) = bounds(series);
    let pw = PANEL_WIDTH - MARGIN_L - MARGIN_R;
    let ph = PANEL_HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| y_offset + MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let _ = writeln!(out, r#"<g class="panel">"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        y_offset + 18.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN_L}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##,
        y_offset + MARGIN_T
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            sx(fx),
            y_offset + PANEL_HEIGHT - MARGIN_B + 14.0,
            tick(fx)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
            MARGIN_L - 5.0,
            sy(fy) + 3.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">step</text>"#,
        MARGIN_L + pw / 2.0,
        y_offset + PANEL_HEIGHT - 8.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        y_offset + MARGIN_T + ph / 2.0,
        y_offset + MARGIN_T + ph / 2.0,
        escape(y_label)
    );
    for (i, ((xs, ys), name)) in series.iter().zip(names).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = y_offset + MARGIN_T + 12.0 + 16.0 * i as f64;
        let lx = PANEL_WIDTH - MARGIN_R + 10.0;
        let _ = writeln!(
            out,
            r#"<g class="legend"><line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text></g>"#,
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            escape(name)
        );
    }
    let _ = writeln!(out, "</g>");
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Two stacked panels: dual estimate and target accuracy against step, one
/// polyline per table.
pub fn render_curves_svg(runs: &[(String, MetricsTable)]) -> Result<String> {
    let mut w_series = Vec::with_capacity(runs.len());
    let mut acc_series = Vec::with_capacity(runs.len());
    let mut names = Vec::with_capacity(runs.len());
    for (name, table) in runs {
        table
            .require_columns(&["step", "w_estimate", "tgt_acc"])
            .map_err(|e| Error::Data(format!("{name}: {e}")))?;
        if table.rows.is_empty() {
            return Err(Error::Data(format!("{name}: no metric rows")));
        }
        let steps = table.column("step")?;
        w_series.push((steps.clone(), table.column("w_estimate")?));
        acc_series.push((steps, table.column("tgt_acc")?));
        names.push(name.clone());
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_WIDTH}" height="{}" viewBox="0 0 {PANEL_WIDTH} {}">"#,
        2.0 * PANEL_HEIGHT,
        2.0 * PANEL_HEIGHT
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(
        &mut out,
        0.0,
        "Wasserstein estimate",
        "w_estimate",
        &names,
        &w_series,
    );
    panel(
        &mut out,
        PANEL_HEIGHT,
        "Target accuracy",
        "tgt_acc",
        &names,
        &acc_series,
    );
    out.push_str("</svg>\n");
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseSummary {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

/// Nearest-rank summary of one timing column.
pub fn summarize(values: &[f64]) -> PhaseSummary {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return PhaseSummary {
            mean: f64::NAN,
            median: f64::NAN,
            p95: f64::NAN,
        };
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let rank = |q: f64| v[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
    PhaseSummary {
        mean: v.iter().sum::<f64>() / n as f64,
        median: rank(0.5),
        p95: rank(0.95),
    }
}

/// Per-phase summaries `[critic, main, graph]` of one metrics table.
pub fn timing_summary(table: &MetricsTable) -> Result<[PhaseSummary; 3]> {
    table.require_columns(&TIMING_COLUMNS)?;
    if table.rows.is_empty() {
        return Err(Error::Data("no metric rows".into()));
    }
    Ok([
        summarize(&table.column("ms_critic")?),
        summarize(&table.column("ms_main")?),
        summarize(&table.column("ms_graph")?),
    ])
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: usize) -> IterationRecord {
        IterationRecord {
            step,
            w_estimate: 0.1 * step as f64,
            tgt_acc: 0.5,
            ms_critic: 1.0,
            ms_main: 2.0,
            ms_graph: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn csv_roundtrip() {
        let text = records_to_csv(&[rec(50), rec(100)]);
        assert!(text.starts_with(METRICS_HEADER));
        let t = MetricsTable::parse(&text).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.column("w_estimate").unwrap(), vec![5.0, 10.0]);
        assert!(!t.without_timing().contains("ms_main"));
    }

    #[test]
    fn nan_accuracy_roundtrips() {
        let mut r = rec(1);
        r.tgt_acc = f64::NAN;
        let t = MetricsTable::parse(&records_to_csv(&[r])).unwrap();
        assert!(t.column("tgt_acc").unwrap()[0].is_nan());
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let t = MetricsTable::parse(&records_to_csv(&[rec(50), rec(100)])).unwrap();
        let svg = render_curves_svg(&[("a".into(), t.clone())]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        let svg = render_curves_svg(&[
            ("a".into(), t.clone()),
            ("b".into(), t.clone()),
            ("c".into(), t),
        ])
        .unwrap();
        assert_eq!(svg.matches("<polyline").count(), 6);
        assert_eq!(svg.matches(r#"class="legend""#).count(), 6);
    }

    #[test]
    fn empty_table_is_rejected() {
        let t = MetricsTable::parse(&format!("{METRICS_HEADER}\n")).unwrap();
        assert!(render_curves_svg(&[("x".into(), t)]).is_err());
    }

    #[test]
    fn summaries() {
        let s = summarize(&(1..=20).map(f64::from).collect::<Vec<_>>());
        assert_eq!((s.mean, s.median, s.p95), (10.5, 10.0, 19.0));
        assert!((ls_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-12);
        assert_eq!(std_dev(&[1.0, 1.0]), 0.0);
    }
}
