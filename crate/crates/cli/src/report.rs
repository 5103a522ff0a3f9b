//! CSV and JSON emission. Column order is fixed:
//!
//! * metrics: `run,seed,best_epoch,` then the metric columns, one row per
//!   run, then a `mean` row and a `std` (sample standard deviation) row;
//! * curve: `epoch,encoder_loss,downstream_loss,val_balanced_accuracy,mean_edge_homophily`;
//! * homophily sweep: `d_bar,homophily_mean,homophily_std,expected_homophily`.
//!
//! Floats print in shortest round-trip form; missing values print `NaN`
//! in CSV and `null` in JSON.

use std::fmt::Write as _;

use samgog::metrics::{mean_std, MetricsReport, METRIC_COLUMNS};
use samgog::pipeline::EpochRecord;
use serde_json::{json, Map, Value};

pub const CURVE_HEADER: &str = "epoch,encoder_loss,downstream_loss,val_balanced_accuracy,mean_edge_homophily";
pub const SWEEP_HEADER: &str = "d_bar,homophily_mean,homophily_std,expected_homophily";

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub d_bar: f64,
    pub mean: f64,
    pub std: f64,
    pub expected: f64,
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

/// Column-wise mean and sample standard deviation over runs.
pub fn summary(rows: &[RunRecord]) -> (Vec<f64>, Vec<f64>) {
    (0..METRIC_COLUMNS.len())
        .map(|c| {
            let col: Vec<f64> = rows.iter().map(|r| r.metrics.values()[c]).collect();
            mean_std(&col)
        })
        .unzip()
}

pub fn metrics_csv(rows: &[RunRecord]) -> String {
    let mut s = format!("run,seed,best_epoch,{}\n", METRIC_COLUMNS.join(","));
    for r in rows {
        let epoch = r.best_epoch.map(|e| e.to_string()).unwrap_or_default();
        let vals: Vec<String> = r.metrics.values().iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(s, "{},{},{},{}", r.run, r.seed, epoch, vals.join(","));
    }
    let (mean, std) = summary(rows);
    for (name, vals) in [("mean", mean), ("std", std)] {
        let vals: Vec<String> = vals.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(s, "{name},,,{}", vals.join(","));
    }
    s
}

fn columns_object(vals: &[f64]) -> Value {
    let mut m = Map::new();
    for (name, &v) in METRIC_COLUMNS.iter().zip(vals) {
        m.insert(name.to_string(), json!(v));
    }
    Value::Object(m)
}

pub fn metrics_json(rows: &[RunRecord]) -> Value {
    let (mean, std) = summary(rows);
    json!({
        "columns": METRIC_COLUMNS,
        "runs": rows.iter().map(|r| json!({
            "run": r.run,
            "seed": r.seed,
            "best_epoch": r.best_epoch,
            "metrics": r.metrics,
        })).collect::<Vec<_>>(),
        "summary": { "mean": columns_object(&mean), "std": columns_object(&std) },
    })
}

pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for e in curve {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            e.epoch,
            fmt_f64(e.encoder_loss),
            fmt_f64(e.downstream_loss),
            fmt_f64(e.val_balanced_accuracy),
            fmt_f64(e.mean_edge_homophily)
        );
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_f64(r.d_bar),
            fmt_f64(r.mean),
            fmt_f64(r.std),
            fmt_f64(r.expected)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(acc: f64) -> MetricsReport {
        MetricsReport {
            accuracy: acc,
            balanced_accuracy: acc,
            macro_f1: acc,
            per_class_accuracy: vec![Some(acc)],
            head_accuracy: None,
            tail_accuracy: Some(acc),
            edge_homophily_mean: None,
            edge_homophily_std: None,
        }
    }

    #[test]
    fn summary_rows_follow_runs() {
        let rows: Vec<RunRecord> = [0.5, 0.75, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &a)| RunRecord {
                run: i,
                seed: 10 + i as u64,
                best_epoch: Some(3),
                metrics: report(a),
            })
            .collect();
        let csv = metrics_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("run,seed,best_epoch,accuracy,balanced_accuracy"));
        assert!(lines[1].starts_with("0,10,3,0.5,0.5,0.5,NaN,0.5,"));
        assert!(lines[4].starts_with("mean,,,0.75,"));
        assert!(lines[5].starts_with("std,,,0.25,"));
        let j = metrics_json(&rows);
        assert_eq!(j["summary"]["mean"]["accuracy"], json!(0.75));
        assert_eq!(j["summary"]["mean"]["head_accuracy"], Value::Null);
        assert_eq!(j["runs"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 12345.678] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }
}
