//! Result files: metrics JSON, precision-recall CSV, training log CSV and
//! two SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sixthsense_core::evaluation::{DummyBaseline, Evaluation, PrCurve, PrPoint};
use sixthsense_core::training::EpochReport;

use crate::error::{io_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub name: String,
    /// Percent; absent when recall never reaches 80%.
    pub p80: Option<f64>,
    pub operating_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub detections: usize,
    pub ground_truth: usize,
    /// Degrees.
    pub e_o: Option<f64>,
    /// Centimeters.
    pub e_d: Option<f64>,
}

impl ModelMetrics {
    pub fn from_evaluation(name: &str, eval: &Evaluation) -> Self {
        let r = &eval.report;
        Self {
            name: name.into(),
            p80: r.p80,
            operating_threshold: r.operating_threshold,
            precision: r.operating_precision,
            recall: r.operating_recall,
            true_positives: r.true_positives,
            detections: r.detections,
            ground_truth: r.ground_truth,
            e_o: r.mean_abs_orientation_error,
            e_d: r.mean_abs_distance_error,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DummyMetrics {
    pub name: String,
    pub heading: f64,
    pub range: f64,
    pub e_o: f64,
    pub e_d: f64,
}

impl From<&DummyBaseline> for DummyMetrics {
    fn from(d: &DummyBaseline) -> Self {
        Self {
            name: "dummy".into(),
            heading: d.heading,
            range: d.range,
            e_o: d.mean_abs_orientation_error,
            e_d: d.mean_abs_distance_error,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub match_radius: f64,
    pub models: Vec<ModelMetrics>,
    pub dummy: DummyMetrics,
}

pub fn write_metrics(path: &Path, metrics: &MetricsFile) -> Result<()> {
    let mut s = serde_json::to_string_pretty(metrics)?;
    s.push('\n');
    fs::write(path, s).map_err(io_err(path))
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile> {
    let s = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&s)?)
}

/// One row per curve point: `model,threshold,precision,recall`.
pub fn write_pr_csv(path: &Path, curves: &[(&str, &PrCurve)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "threshold", "precision", "recall"])?;
    for (name, curve) in curves {
        for p in &curve.points {
            w.write_record([name.to_string(), p.threshold.to_string(), p.precision.to_string(), p.recall.to_string()])?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Reads back what [`write_pr_csv`] wrote, grouped by model in file order.
pub fn read_pr_csv(path: &Path) -> Result<Vec<(String, PrCurve)>> {
    let mut out: Vec<(String, PrCurve)> = Vec::new();
    for row in csv::Reader::from_path(path)?.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| crate::Error::Format {
                path: path.into(),
                message: format!("bad number in column {i}"),
            })
        };
        let point = PrPoint { threshold: num(1)?, precision: num(2)?, recall: num(3)? };
        let name = row.get(0).unwrap_or_default();
        match out.last_mut() {
            Some((n, c)) if n == name => c.points.push(point),
            _ => out.push((
                name.to_string(),
                PrCurve { points: vec![point], total_ground_truth: 0, recall_undefined: false },
            )),
        }
    }
    Ok(out)
}

/// One row per true positive: `model,error_deg`.
pub fn write_orientation_errors(path: &Path, errors: &[(&str, &[f64])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "error_deg"])?;
    for (name, e) in errors {
        for v in e.iter() {
            w.write_record([name.to_string(), v.to_string()])?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_orientation_errors(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for row in csv::Reader::from_path(path)?.records() {
        let row = row?;
        let v: f64 = row.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| crate::Error::Format {
            path: path.into(),
            message: "bad error value".into(),
        })?;
        let name = row.get(0).unwrap_or_default();
        match out.last_mut() {
            Some((n, e)) if n == name => e.push(v),
            _ => out.push((name.to_string(), vec![v])),
        }
    }
    Ok(out)
}

pub fn write_training_log(path: &Path, history: &[EpochReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "train_presence",
        "train_distance",
        "train_bearing",
        "train_total",
        "val_presence",
        "val_distance",
        "val_bearing",
        "val_total",
    ])?;
    for r in history {
        let mut row = vec![r.epoch.to_string()];
        for l in [&r.train, &r.val] {
            row.extend([l.presence_loss, l.distance_loss, l.bearing_loss, l.total].iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN + v / self.x_max * (W - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        H - MARGIN - v / self.y_max * (H - 2.0 * MARGIN)
    }

    fn axes(&self, s: &mut String, title: &str, x_label: &str, y_label: &str, ticks: usize) {
        let (x0, y0, x1, y1) = (self.x(0.0), self.y(0.0), self.x(self.x_max), self.y(self.y_max));
        let _ = writeln!(s, r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y0 - y1);
        for i in 0..=ticks {
            let f = i as f64 / ticks as f64;
            let (xv, yv) = (f * self.x_max, f * self.y_max);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
                self.x(xv),
                y0 + 16.0,
                trim(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"#,
                x0 - 6.0,
                self.y(yv) + 4.0,
                trim(yv)
            );
        }
        let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{title}</text>"#, W / 2.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 12.0);
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
            H / 2.0,
            H / 2.0
        );
    }

    fn legend(&self, s: &mut String, names: &[&str]) {
        for (k, name) in names.iter().enumerate() {
            let y = self.y(self.y_max) + 16.0 + 16.0 * k as f64;
            let x = self.x(self.x_max) - 110.0;
            let c = COLORS[k % COLORS.len()];
            let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="12" height="4" fill="{c}"/>"#, y - 4.0);
            let _ = writeln!(s, r#"<text x="{}" y="{y}" font-size="11">{name}</text>"#, x + 18.0);
        }
    }
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn svg_open() -> String {
    format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#) + "\n"
}

/// Precision over recall for every model, with the 80% recall line.
pub fn pr_curve_svg(curves: &[(&str, &PrCurve)]) -> String {
    let f = Frame { x_max: 1.0, y_max: 1.0 };
    let mut s = svg_open();
    f.axes(&mut s, "Precision-recall", "recall", "precision", 5);
    let _ = writeln!(
        s,
        r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#888" stroke-dasharray="4 3"/>"##,
        f.x(0.8),
        f.y(0.0),
        f.y(1.0)
    );
    for (k, (_, curve)) in curves.iter().enumerate() {
        let pts: Vec<String> =
            curve.points.iter().map(|p| format!("{:.2},{:.2}", f.x(p.recall), f.y(p.precision))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[k % COLORS.len()],
            pts.join(" ")
        );
    }
    f.legend(&mut s, &curves.iter().map(|c| c.0).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Fraction of true positives per 10° orientation-error bin, side by side
/// for every model.
pub fn orientation_hist_svg(errors: &[(&str, &[f64])]) -> String {
    const BIN: f64 = 10.0;
    let bins = (180.0 / BIN) as usize;
    let hists: Vec<Vec<f64>> = errors
        .iter()
        .map(|(_, e)| {
            let mut h = vec![0.0; bins];
            for &v in e.iter() {
                h[((v / BIN) as usize).min(bins - 1)] += 1.0;
            }
            let n = e.len().max(1) as f64;
            h.iter().map(|c| c / n).collect()
        })
        .collect();
    let top = hists.iter().flatten().cloned().fold(0.0, f64::max);
    let y_max = if top > 0.0 { (top * 10.0).ceil() / 10.0 } else { 1.0 };
    let f = Frame { x_max: 180.0, y_max };
    let mut s = svg_open();
    f.axes(&mut s, "Orientation error", "absolute error (deg)", "fraction of true positives", 6);
    let slot = (f.x(BIN) - f.x(0.0)) / hists.len().max(1) as f64;
    for (k, h) in hists.iter().enumerate() {
        for (b, &v) in h.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let x = f.x(b as f64 * BIN) + slot * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                f.y(v),
                slot * 0.9,
                f.y(0.0) - f.y(v),
                COLORS[k % COLORS.len()]
            );
        }
    }
    f.legend(&mut s, &errors.iter().map(|e| e.0).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve() -> PrCurve {
        PrCurve {
            points: vec![
                PrPoint { threshold: 0.5, precision: 0.5, recall: 1.0 },
                PrPoint { threshold: 0.9, precision: 1.0, recall: 0.25 },
            ],
            total_ground_truth: 4,
            recall_undefined: false,
        }
    }

    #[test]
    fn pr_csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pr.csv");
        let c = curve();
        write_pr_csv(&p, &[("history", &c), ("no_history", &c)]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "model,threshold,precision,recall");
        assert_eq!(lines[1], "history,0.5,0.5,1");
        assert_eq!(lines.len(), 5);
        let back = read_pr_csv(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].1.points, c.points);
    }

    #[test]
    fn orientation_errors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let a = [1.5, 170.25];
        write_orientation_errors(&p, &[("history", &a[..]), ("no_history", &[][..])]).unwrap();
        assert_eq!(read_orientation_errors(&p).unwrap(), vec![("history".to_string(), a.to_vec())]);
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.json");
        let m = MetricsFile {
            match_radius: 0.5,
            models: vec![ModelMetrics {
                name: "history".into(),
                p80: Some(71.25),
                operating_threshold: 0.42,
                precision: 0.7125,
                recall: 0.8,
                true_positives: 8,
                detections: 11,
                ground_truth: 10,
                e_o: Some(40.0),
                e_d: None,
            }],
            dummy: DummyMetrics { name: "dummy".into(), heading: 0.1, range: 3.0, e_o: 80.0, e_d: 120.0 },
        };
        write_metrics(&p, &m).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), m);
    }

    #[test]
    fn svgs_are_well_formed() {
        let c = curve();
        let s = pr_curve_svg(&[("history", &c)]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<polyline").count(), 1);
        let errs = [5.0, 15.0, 179.9, 180.0];
        let h = orientation_hist_svg(&[("history", &errs[..]), ("dummy", &[][..])]);
        // 5, 15 and the last bin, empty bins skipped
        assert_eq!(h.matches("<rect").count() - 1 - 2, 3);
    }
}
