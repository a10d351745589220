//! Dataset directories: one CSV per node plus `manifest.json`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{NetworkDataset, NodeDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub m: usize,
    pub n: Vec<usize>,
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn node_file(j: usize, test: bool) -> String {
    if test {
        format!("node_{:03}_test.csv", j + 1)
    } else {
        format!("node_{:03}.csv", j + 1)
    }
}

fn write_block(path: &Path, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=x.ncols()).map(|k| format!("x{k}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..x.nrows() {
        let row = x
            .row(i)
            .iter()
            .chain(std::iter::once(&y[i]))
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_block(path: &Path, p: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != p + 1 {
            return Err(Error::Data {
                path: path.to_path_buf(),
                message: format!("expected {} fields, found {}", p + 1, rec.len()),
            });
        }
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Data {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        xs.extend_from_slice(&vals[..p]);
        ys.push(vals[p]);
    }
    let n = ys.len();
    Ok((DMatrix::from_row_slice(n, p, &xs), DVector::from_vec(ys)))
}

/// Writes `data` under `dir` (created if needed).
pub fn write_dataset_dir(data: &NetworkDataset, dir: &Path, seed: Option<u64>) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    for (j, node) in data.nodes.iter().enumerate() {
        write_block(&dir.join(node_file(j, false)), &node.x, &node.y)?;
        if let (Some(xt), Some(yt)) = (&node.x_test, &node.y_test) {
            write_block(&dir.join(node_file(j, true)), xt, yt)?;
        }
    }
    let manifest = Manifest {
        m: data.m(),
        n: data.nodes.iter().map(NodeDataset::n).collect(),
        p: data.p(),
        beta_star: data.beta_star.as_ref().map(|b| b.iter().copied().collect()),
        seed,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_dataset_dir(dir: &Path) -> Result<(NetworkDataset, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut nodes = Vec::with_capacity(manifest.m);
    for j in 0..manifest.m {
        let (x, y) = read_block(&dir.join(node_file(j, false)), manifest.p)?;
        let test_path = dir.join(node_file(j, true));
        let (xt, yt) = if test_path.exists() {
            let (a, b) = read_block(&test_path, manifest.p)?;
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        nodes.push(NodeDataset::with_test(x, y, xt, yt)?);
    }
    let beta = manifest.beta_star.clone().map(DVector::from_vec);
    Ok((NetworkDataset::new(nodes, beta)?, manifest))
}
