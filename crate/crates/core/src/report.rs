//! CSV output, cross-seed aggregation and a small SVG learning-curve plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use csv::{Terminator, WriterBuilder};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::MetricsRecord;
use crate::metrics::mean_std;

/// One line of a metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub round: usize,
    pub labeled_count: usize,
    pub pixel_accuracy: f64,
    pub miou: f64,
    pub wall_time_s: f64,
}

impl From<&MetricsRecord> for MetricsRow {
    fn from(r: &MetricsRecord) -> Self {
        MetricsRow {
            seed: r.seed,
            round: r.round,
            labeled_count: r.labeled_count,
            pixel_accuracy: r.pixel_accuracy,
            miou: r.miou,
            wall_time_s: r.wall_time_s,
        }
    }
}

/// Per-round mean and sample standard deviation across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub round: usize,
    pub seeds: usize,
    pub labeled_count_mean: f64,
    pub pixel_accuracy_mean: f64,
    pub pixel_accuracy_std: f64,
    pub miou_mean: f64,
    pub miou_std: f64,
}

pub fn aggregate(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let mut by_round: BTreeMap<usize, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        by_round.entry(r.round).or_default().push(r);
    }
    by_round
        .into_iter()
        .map(|(round, rs)| {
            let col = |f: fn(&MetricsRow) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (acc, acc_sd) = mean_std(&col(|r| r.pixel_accuracy));
            let (miou, miou_sd) = mean_std(&col(|r| r.miou));
            AggregateRow {
                round,
                seeds: rs.len(),
                labeled_count_mean: mean_std(&col(|r| r.labeled_count as f64)).0,
                pixel_accuracy_mean: acc,
                pixel_accuracy_std: acc_sd,
                miou_mean: miou,
                miou_std: miou_sd,
            }
        })
        .collect()
}

/// Writes serializable rows with one header line and LF line endings.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if rows.is_empty() {
        std::fs::write(
            path,
            "seed,round,labeled_count,pixel_accuracy,miou,wall_time_s\n",
        )?;
        return Ok(());
    }
    write_csv(path, rows)
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_csv(path, rows)
}

fn read_csv<T: DeserializeOwned, R: Read>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Format(format!("bad metrics row: {e}"))))
        .collect()
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    read_csv(input)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    read_metrics(File::open(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveMetric {
    Miou,
    PixelAccuracy,
}

impl std::str::FromStr for CurveMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "miou" => Ok(CurveMetric::Miou),
            "accuracy" | "pixel_accuracy" => Ok(CurveMetric::PixelAccuracy),
            other => Err(Error::Config(format!(
                "unknown curve metric {other:?} (miou, accuracy)"
            ))),
        }
    }
}

/// Learning curve as a standalone SVG: mean line with a one-std band.
pub fn render_svg(rows: &[AggregateRow], metric: CurveMetric, title: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 56.0);
    let pick = |r: &AggregateRow| match metric {
        CurveMetric::Miou => (r.miou_mean, r.miou_std),
        CurveMetric::PixelAccuracy => (r.pixel_accuracy_mean, r.pixel_accuracy_std),
    };
    let label = match metric {
        CurveMetric::Miou => "mIoU",
        CurveMetric::PixelAccuracy => "pixel accuracy",
    };
    let r_min = rows.first().map_or(0, |r| r.round) as f64;
    let r_max = rows.last().map_or(1, |r| r.round) as f64;
    let span = (r_max - r_min).max(1.0);
    let x = |round: usize| pad + (round as f64 - r_min) / span * (w - 2.0 * pad);
    let y = |v: f64| h - pad - v.clamp(0.0, 1.0) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{pad},{} L{},{} M{pad},{} L{pad},{pad}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#,
            pad - 6.0,
            y(v) + 4.0
        );
    }
    for r in rows {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x(r.round),
            h - pad + 18.0,
            r.round
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">round</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{label}</text>"#,
        h / 2.0,
        h / 2.0
    );
    if !rows.is_empty() {
        let upper: Vec<String> = rows
            .iter()
            .map(|r| {
                let (m, sd) = pick(r);
                format!("{:.2},{:.2}", x(r.round), y(m + sd))
            })
            .collect();
        let lower: Vec<String> = rows
            .iter()
            .rev()
            .map(|r| {
                let (m, sd) = pick(r);
                format!("{:.2},{:.2}", x(r.round), y(m - sd))
            })
            .collect();
        let _ = writeln!(
            s,
            r##"<polygon points="{} {}" fill="#4a78c2" fill-opacity="0.2" stroke="none"/>"##,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.round), y(pick(r).0)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#1f4e9c" stroke-width="2"/>"##,
            line.join(" ")
        );
        for r in rows {
            let _ = writeln!(
                s,
                r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f4e9c"/>"##,
                x(r.round),
                y(pick(r).0)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, round: usize, acc: f64) -> MetricsRow {
        MetricsRow {
            seed,
            round,
            labeled_count: round,
            pixel_accuracy: acc,
            miou: acc / 2.0,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn aggregates_per_round() {
        let rows = vec![
            row(0, 1, 0.5),
            row(1, 1, 0.7),
            row(0, 2, 0.8),
            row(1, 2, 0.8),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].seeds, 2);
        assert!((agg[0].pixel_accuracy_mean - 0.6).abs() < 1e-15);
        assert!((agg[0].pixel_accuracy_std - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(agg[1].miou_std, 0.0);
    }

    #[test]
    fn csv_round_trip_with_lf() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![row(0, 1, 0.25), row(3, 2, 0.5)];
        write_metrics_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("seed,round,labeled_count,pixel_accuracy,miou,wall_time_s\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    }

    #[test]
    fn malformed_metrics_are_format_errors() {
        let bad = "seed,round,labeled_count,pixel_accuracy,miou,wall_time_s\n0,x,1,0.5,0.5,0\n";
        assert!(matches!(
            read_metrics(bad.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn svg_has_one_point_per_round() {
        let agg = aggregate(&[row(0, 1, 0.5), row(0, 2, 0.6), row(0, 3, 0.9)]);
        let svg = render_svg(&agg, CurveMetric::PixelAccuracy, "a < b");
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("a &lt; b"));
    }
}
