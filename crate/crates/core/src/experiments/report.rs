use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::baselines::MethodId;
use crate::error::Result;

/// One long-format result value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: MethodId,
    pub metric: String,
    pub repetition: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: MethodId,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(count)`; 0 for a single row.
    pub std_err: f64,
    pub count: usize,
}

/// Per-iteration network l2 error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub method: MethodId,
    pub repetition: usize,
    pub iteration: usize,
    pub l2_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: Option<MethodId>,
    pub repetition: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub method: MethodId,
    pub repetition: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub version: String,
    /// `(data, topology, outlier)` seeds per repetition.
    pub seeds: Vec<(u64, u64, u64)>,
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<Aggregate>,
    #[serde(skip)]
    pub traces: Vec<TraceRow>,
    pub failures: Vec<Failure>,
    pub timings: Vec<Timing>,
}

/// Mean and standard error per `(method, metric)`, ordered by method then
/// metric name. Non-finite values are excluded.
pub fn aggregate(rows: &[MetricRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(MethodId, &str), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.value.is_finite()) {
        groups.entry((r.method, r.metric.as_str())).or_default().push(r.value);
    }
    groups
        .into_iter()
        .map(|((method, metric), vals)| {
            let k = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / k;
            let std_err = if vals.len() > 1 {
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            } else {
                0.0
            };
            Aggregate {
                method,
                metric: metric.to_string(),
                mean,
                std_err,
                count: vals.len(),
            }
        })
        .collect()
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig) -> Self {
        ExperimentReport {
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: Vec::new(),
            rows: Vec::new(),
            aggregates: Vec::new(),
            traces: Vec::new(),
            failures: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn finalize(&mut self) {
        self.aggregates = aggregate(&self.rows);
    }

    pub fn mean(&self, method: MethodId, metric: &str) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.metric == metric)
            .map(|a| a.mean)
    }

    /// Mean trace over repetitions, indexed by iteration.
    pub fn mean_trace(&self, method: MethodId) -> Vec<f64> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for t in self.traces.iter().filter(|t| t.method == method) {
            let e = sums.entry(t.iteration).or_default();
            e.0 += t.l2_error;
            e.1 += 1;
        }
        sums.values().map(|(s, k)| s / *k as f64).collect()
    }

    pub fn write_rows_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_trace_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.traces {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `report.csv`, `report.json` and `trace.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_rows_csv(fs::File::create(dir.join("report.csv"))?)?;
        self.write_trace_csv(fs::File::create(dir.join("trace.csv"))?)?;
        let json = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("report.json"), json)?;
        Ok(())
    }

    /// Plain-text summary table of the aggregates.
    pub fn summary(&self) -> String {
        let mut s = format!("{:<10} {:<18} {:>12} {:>10} {:>5}\n", "method", "metric", "mean", "se", "n");
        for a in &self.aggregates {
            s.push_str(&format!(
                "{:<10} {:<18} {:>12.4} {:>10.4} {:>5}\n",
                a.method.as_str(),
                a.metric,
                a.mean,
                a.std_err,
                a.count
            ));
        }
        s
    }
}
