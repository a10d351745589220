//! CSV ingestion for real datasets.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::{stream_rng, NetworkDataset, NodeDataset};
use crate::error::{Error, Result};

const MISSING_TOKENS: [&str; 5] = ["", "?", "NA", "NaN", "nan"];

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub response_column: String,
    pub group_column: String,
    /// Columns ignored entirely (identifiers, alternative responses).
    pub exclude_columns: Vec<String>,
    /// Predictor columns whose missing fraction exceeds this are dropped
    /// before row filtering.
    pub max_missing_fraction: Option<f64>,
    /// Drop rows that still contain a missing value. When false a missing
    /// value is an error.
    pub drop_missing: bool,
    /// Standardize predictors and response with training-split statistics.
    pub standardize: bool,
    /// Maps raw group values to 0-based node indices. Rows whose group is
    /// not in the map are dropped with a warning. When `None`, distinct
    /// group values in sorted order become nodes.
    pub group_map: Option<HashMap<String, usize>>,
    pub test_fraction: f64,
    pub seed: u64,
}

impl CsvOptions {
    pub fn new(response_column: impl Into<String>, group_column: impl Into<String>) -> Self {
        CsvOptions {
            response_column: response_column.into(),
            group_column: group_column.into(),
            exclude_columns: Vec::new(),
            max_missing_fraction: None,
            drop_missing: true,
            standardize: true,
            group_map: None,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub data: NetworkDataset,
    pub feature_names: Vec<String>,
    /// Raw group value(s) assigned to each node.
    pub node_labels: Vec<Vec<String>>,
    /// Rows kept after missing-value filtering.
    pub rows_kept: usize,
}

fn data_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn is_missing(s: &str) -> bool {
    MISSING_TOKENS.contains(&s.trim())
}

/// Reads a two-column `key,node` CSV (header required, node 1-based).
pub fn read_group_map(path: &Path) -> Result<HashMap<String, usize>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut map = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let key = rec.get(0).ok_or_else(|| data_err(path, "missing key column"))?;
        let node: usize = rec
            .get(rec.len() - 1)
            .and_then(|s| s.trim().parse().ok())
            .filter(|&v: &usize| v >= 1)
            .ok_or_else(|| data_err(path, format!("bad node index in record {rec:?}")))?;
        map.insert(key.trim().to_string(), node - 1);
    }
    Ok(map)
}

/// Loads a CSV with a header row into a network dataset, one node per group,
/// with a seeded train/test split inside every node.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<LoadedCsv> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_err(path, format!("column {name:?} not found")))
    };
    let resp_idx = find(&opts.response_column)?;
    let group_idx = find(&opts.group_column)?;
    for ex in &opts.exclude_columns {
        find(ex)?;
    }

    let records: Vec<Vec<String>> = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(data_err(path, "no data rows"));
    }

    let mut predictors: Vec<usize> = (0..header.len())
        .filter(|&c| c != resp_idx && c != group_idx && !opts.exclude_columns.contains(&header[c]))
        .collect();

    if let Some(limit) = opts.max_missing_fraction {
        predictors.retain(|&c| {
            let missing = records.iter().filter(|r| is_missing(&r[c])).count();
            let frac = missing as f64 / records.len() as f64;
            if frac > limit {
                warn!("dropping column {:?}: {:.1}% missing", header[c], 100.0 * frac);
                false
            } else {
                true
            }
        });
    }

    let used: Vec<usize> = predictors
        .iter()
        .copied()
        .chain([resp_idx, group_idx])
        .collect();
    let mut kept = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if used.iter().any(|&c| is_missing(&r[c])) {
            if opts.drop_missing {
                continue;
            }
            return Err(data_err(path, format!("missing value in data row {}", i + 1)));
        }
        kept.push(r);
    }
    let rows_kept = kept.len();

    // Group assignment.
    let mut node_of_row = Vec::with_capacity(kept.len());
    let mut labels: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let auto: BTreeMap<String, usize> = match &opts.group_map {
        Some(_) => BTreeMap::new(),
        None => {
            let mut keys: Vec<String> = kept.iter().map(|r| r[group_idx].trim().to_string()).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter().enumerate().map(|(i, k)| (k, i)).collect()
        }
    };
    let node_count = match &opts.group_map {
        Some(map) => map.values().max().map_or(0, |&v| v + 1),
        None => auto.len(),
    };
    let mut rows = Vec::with_capacity(kept.len());
    for r in &kept {
        let key = r[group_idx].trim();
        let node = match &opts.group_map {
            Some(map) => map.get(key).copied(),
            None => auto.get(key).copied(),
        };
        match node {
            Some(j) => {
                let entry = labels.entry(j).or_default();
                if !entry.iter().any(|k| k == key) {
                    entry.push(key.to_string());
                }
                node_of_row.push(j);
                rows.push(*r);
            }
            None => warn!("dropping row with unmapped group {key:?}"),
        }
    }

    let parse = |r: &Vec<String>, c: usize| -> Result<f64> {
        r[c].trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| data_err(path, format!("non-numeric value {:?} in column {:?}", r[c], header[c])))
    };
    let mut x = DMatrix::zeros(rows.len(), predictors.len());
    let mut y = DVector::zeros(rows.len());
    for (i, r) in rows.iter().enumerate() {
        for (k, &c) in predictors.iter().enumerate() {
            x[(i, k)] = parse(r, c)?;
        }
        y[i] = parse(r, resp_idx)?;
    }

    // Per-node seeded train/test split.
    let mut node_rows: Vec<Vec<usize>> = vec![Vec::new(); node_count];
    for (i, &j) in node_of_row.iter().enumerate() {
        node_rows[j].push(i);
    }
    let mut train_rows = Vec::with_capacity(node_count);
    let mut test_rows = Vec::with_capacity(node_count);
    for (j, idx) in node_rows.iter_mut().enumerate() {
        if idx.is_empty() {
            return Err(data_err(path, format!("node {} received no rows", j + 1)));
        }
        idx.shuffle(&mut stream_rng(opts.seed, j as u64));
        let n_test = (idx.len() as f64 * opts.test_fraction).round() as usize;
        let n_test = n_test.min(idx.len() - 1);
        test_rows.push(idx[..n_test].to_vec());
        train_rows.push(idx[n_test..].to_vec());
    }

    let mut feature_names: Vec<String> = predictors.iter().map(|&c| header[c].clone()).collect();
    let mut x = x;
    let mut y = y;
    if opts.standardize {
        let all_train: Vec<usize> = train_rows.iter().flatten().copied().collect();
        let mut keep_cols = Vec::with_capacity(x.ncols());
        for k in 0..x.ncols() {
            let (mean, sd) = moments(all_train.iter().map(|&i| x[(i, k)]));
            if sd <= 1e-12 * (1.0 + mean.abs()) {
                warn!("dropping zero-variance column {:?}", feature_names[k]);
                continue;
            }
            keep_cols.push(k);
            for v in x.column_mut(k).iter_mut() {
                *v = (*v - mean) / sd;
            }
        }
        if keep_cols.len() != x.ncols() {
            x = x.select_columns(&keep_cols);
            feature_names = keep_cols.iter().map(|&k| feature_names[k].clone()).collect();
        }
        let (mean, sd) = moments(all_train.iter().map(|&i| y[i]));
        if sd > 0.0 {
            y.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }
    if x.ncols() == 0 {
        return Err(data_err(path, "no usable predictor columns"));
    }

    let mut nodes = Vec::with_capacity(node_count);
    for (train, test) in train_rows.iter().zip(&test_rows) {
        let (xt, yt) = if test.is_empty() {
            (None, None)
        } else {
            (Some(x.select_rows(test)), Some(y.select_rows(test)))
        };
        nodes.push(NodeDataset::with_test(x.select_rows(train), y.select_rows(train), xt, yt)?);
    }
    Ok(LoadedCsv {
        data: NetworkDataset::new(nodes, None)?,
        feature_names,
        node_labels: (0..node_count).map(|j| labels.remove(&j).unwrap_or_default()).collect(),
        rows_kept,
    })
}

/// Mean and population standard deviation.
fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
