//! CSV tables and the JSON summary.
//!
//! Rows are written in sorted key order, so files depend only on the config
//! and seed. Wall times sit in the last CSV column and in a separate
//! `timing` object of the JSON summary.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::runner::RunRecord;

pub const VERSION: &str = concat!("convsplit-", env!("CARGO_PKG_VERSION"));

/// Name of the column excluded from reproducibility comparisons.
pub const WALL_TIME_COLUMN: &str = "wall_time";

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per (problem, size, algorithm, criterion) averages over seeds.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Aggregate {
    pub problem: &'static str,
    pub size: usize,
    pub algorithm: String,
    pub criterion: String,
    pub runs: usize,
    pub failed: usize,
    pub mean_iterations: f64,
    pub median_iterations: f64,
    pub mean_final_energy: f64,
    pub mean_quality: Option<f64>,
    pub mean_sparsity: Option<f64>,
    pub violations: usize,
    pub mean_wall_time: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Groups successful rows by key; failed rows only count toward `failed`.
pub fn aggregate(rows: &[RunRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(&str, usize, &str, &str), Vec<&RunRecord>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.problem, r.size, r.algorithm.as_str(), r.criterion.as_str()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((problem, size, algorithm, criterion), rs)| {
            let ok: Vec<&&RunRecord> = rs.iter().filter(|r| r.ok()).collect();
            let mut iters: Vec<f64> = ok.iter().map(|r| r.iterations as f64).collect();
            Aggregate {
                problem,
                size,
                algorithm: algorithm.to_string(),
                criterion: criterion.to_string(),
                runs: rs.len(),
                failed: rs.len() - ok.len(),
                mean_iterations: mean(iters.iter().cloned()).unwrap_or(f64::NAN),
                median_iterations: median(&mut iters),
                mean_final_energy: mean(ok.iter().map(|r| r.final_energy)).unwrap_or(f64::NAN),
                mean_quality: mean(ok.iter().filter_map(|r| r.quality)),
                mean_sparsity: mean(ok.iter().filter_map(|r| r.sparsity.map(|s| s as f64))),
                violations: ok.iter().map(|r| r.violations).sum(),
                mean_wall_time: mean(ok.iter().map(|r| r.wall_time)).unwrap_or(f64::NAN),
            }
        })
        .collect()
}

/// Moves every `wall_time`-like field of the serialized rows into a
/// separate list keyed by row index.
fn split_timing(mut rows: Value) -> (Value, Value) {
    let mut timing = Vec::new();
    if let Value::Array(items) = &mut rows {
        for (i, item) in items.iter_mut().enumerate() {
            if let Value::Object(map) = item {
                let t: BTreeMap<String, Value> = map
                    .keys()
                    .filter(|k| k.contains(WALL_TIME_COLUMN))
                    .cloned()
                    .collect::<Vec<_>>()
                    .into_iter()
                    .filter_map(|k| map.remove(&k).map(|v| (k, v)))
                    .collect();
                timing.push(json!({ "row": i, "times": t }));
            }
        }
    }
    (rows, Value::Array(timing))
}

/// Summary JSON for one command. `extra` holds command-specific sections.
pub fn summary_json(
    command: &str,
    cfg: &RunConfig,
    rows: &[RunRecord],
    aggregates: &[Aggregate],
    extra: Value,
) -> anyhow::Result<Value> {
    let (runs, run_timing) = split_timing(serde_json::to_value(rows)?);
    let (aggs, agg_timing) = split_timing(serde_json::to_value(aggregates)?);
    Ok(json!({
        "version": VERSION,
        "command": command,
        "config_hash": cfg.hash(),
        "config": cfg.report_value(),
        "runs": runs,
        "aggregates": aggs,
        "details": extra,
        "timing": { "runs": run_timing, "aggregates": agg_timing },
    }))
}

pub fn write_json(path: &Path, value: &Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Drops timing from a summary so two summaries can be compared.
pub fn without_timing(mut summary: Value) -> Value {
    if let Value::Object(map) = &mut summary {
        map.remove("timing");
    }
    summary
}

/// Drops every column whose header mentions wall time.
pub fn csv_without_timing(text: &str) -> anyhow::Result<String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let keep: Vec<usize> = (0..headers.len())
        .filter(|&i| !headers[i].contains(WALL_TIME_COLUMN))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(keep.iter().map(|&i| &headers[i]))?;
    for rec in reader.records() {
        let rec = rec?;
        w.write_record(keep.iter().map(|&i| &rec[i]))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(alg: &str, seed: u64, iters: usize, wall: f64) -> RunRecord {
        RunRecord {
            problem: "scad",
            size: 1,
            seed,
            algorithm: alg.into(),
            criterion: "rel".into(),
            dim: 4,
            status: "ok".into(),
            iterations: iters,
            stop_reason: "RelIncrement".into(),
            initial_energy: 1.0,
            final_energy: 0.5,
            grad_norm: 1e-9,
            quality: None,
            sparsity: Some(2),
            ls_fallbacks: 0,
            violations: 0,
            failing: String::new(),
            bound_warnings: 0,
            wall_time: wall,
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn aggregates_are_sorted_and_skip_failures() {
        let mut failed = row("dca", 2, 0, 0.0);
        failed.status = "error: diverged".into();
        let rows = vec![
            row("dca", 0, 10, 0.1),
            row("bdca", 0, 4, 0.2),
            row("dca", 1, 20, 0.3),
            failed,
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].algorithm, "bdca");
        assert_eq!((agg[1].runs, agg[1].failed), (3, 1));
        assert_eq!(agg[1].median_iterations, 15.0);
        assert_eq!(agg[1].mean_sparsity, Some(2.0));
    }

    #[test]
    fn timing_is_isolated() {
        let cfg = RunConfig::default();
        let a = summary_json("t", &cfg, &[row("dca", 0, 1, 0.1)], &[], json!({})).unwrap();
        let b = summary_json("t", &cfg, &[row("dca", 0, 1, 9.0)], &[], json!({})).unwrap();
        assert_ne!(a, b);
        assert_eq!(without_timing(a.clone()), without_timing(b));
        assert!(a["runs"][0].get("wall_time").is_none());

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_csv(&p1, &[row("dca", 0, 1, 0.1)]).unwrap();
        write_csv(&p2, &[row("dca", 0, 1, 7.0)]).unwrap();
        let t1 = fs::read_to_string(p1).unwrap();
        let t2 = fs::read_to_string(p2).unwrap();
        assert_ne!(t1, t2);
        assert_eq!(csv_without_timing(&t1).unwrap(), csv_without_timing(&t2).unwrap());
    }
}
