use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{stream_rng, NetworkDataset, NodeDataset};
use crate::error::Result;
use crate::netsim::Topology;

/// Response value carried by every injected outlier row.
pub const OUTLIER_RESPONSE: f64 = 12.0;

/// Contamination models. Outlier covariates are i.i.d. `N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum OutlierScenario {
    /// Appends `ceil(n_j * fraction)` outlier rows to every node's training
    /// data.
    Balanced { fraction: f64, response: f64 },
    /// Adds one node, connected to every existing node, holding
    /// `ceil(N_train * ratio)` outlier rows and nothing else.
    AttackerNode { ratio: f64, response: f64 },
}

impl OutlierScenario {
    pub fn balanced() -> Self {
        OutlierScenario::Balanced {
            fraction: 1.0 / 9.0,
            response: OUTLIER_RESPONSE,
        }
    }

    pub fn attacker_node() -> Self {
        OutlierScenario::AttackerNode {
            ratio: 1.0 / 9.0,
            response: OUTLIER_RESPONSE,
        }
    }
}

fn outlier_block(rows: usize, p: usize, response: f64, seed: u64, stream: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = stream_rng(seed, stream);
    let x = DMatrix::<f64>::from_fn(rows, p, |_, _| StandardNormal.sample(&mut rng));
    (x, DVector::from_element(rows, response))
}

fn outlier_count(base: usize, fraction: f64) -> usize {
    // Guard against 20.000000000000004 rounding up to 21.
    let raw = base as f64 * fraction;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Returns a contaminated copy of `data` together with the (possibly
/// augmented) topology. The input is never modified; original training rows
/// come first in every node.
pub fn inject_outliers(
    data: &NetworkDataset,
    topo: &Topology,
    scenario: &OutlierScenario,
    seed: u64,
) -> Result<(NetworkDataset, Topology)> {
    let p = data.p();
    match *scenario {
        OutlierScenario::Balanced { fraction, response } => {
            let mut nodes = Vec::with_capacity(data.m());
            for (j, node) in data.nodes.iter().enumerate() {
                let extra = outlier_count(node.n(), fraction);
                if extra == 0 {
                    nodes.push(node.clone());
                    continue;
                }
                let (xo, yo) = outlier_block(extra, p, response, seed, j as u64);
                let n = node.n();
                let mut x = node.x.clone().resize_vertically(n + extra, 0.0);
                x.rows_mut(n, extra).copy_from(&xo);
                let mut y = node.y.clone().resize_vertically(n + extra, 0.0);
                y.rows_mut(n, extra).copy_from(&yo);
                nodes.push(NodeDataset::with_test(x, y, node.x_test.clone(), node.y_test.clone())?);
            }
            Ok((NetworkDataset::new(nodes, data.beta_star.clone())?, topo.clone()))
        }
        OutlierScenario::AttackerNode { ratio, response } => {
            let rows = outlier_count(data.total_n(), ratio);
            if rows == 0 {
                return Ok((data.clone(), topo.clone()));
            }
            let (x, y) = outlier_block(rows, p, response, seed, data.m() as u64);
            let mut nodes = data.nodes.clone();
            nodes.push(NodeDataset::new(x, y)?);
            Ok((NetworkDataset::new(nodes, data.beta_star.clone())?, topo.with_hub_node()))
        }
    }
}
