//! Reference estimators compared against the surrogate method.

use std::fmt;
use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{default_rho, local_quadratics, run_inner, AdmmConfig, DivergenceGuard, UpdateForm};
use crate::datagen::NetworkDataset;
use crate::error::{Error, Result};
use crate::experiments::bic::bic_lasso;
use crate::experiments::bic_lad;
use crate::lad::{LadOptions, LadSolver};
use crate::lasso::GramLasso;
use crate::netsim::{metropolis_weights, run_rounds, Topology};
use crate::surrogate::{local_lad_fits, BicSampleSize, LambdaRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    Desmr,
    Delr,
    DSubgd,
    PooledMr,
    LocalMr,
    AvgMr,
}

impl MethodId {
    pub const ALL: [MethodId; 6] = [
        MethodId::Desmr,
        MethodId::Delr,
        MethodId::DSubgd,
        MethodId::PooledMr,
        MethodId::LocalMr,
        MethodId::AvgMr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Desmr => "desmr",
            MethodId::Delr => "delr",
            MethodId::DSubgd => "d_subgd",
            MethodId::PooledMr => "pooled_mr",
            MethodId::LocalMr => "local_mr",
            MethodId::AvgMr => "avg_mr",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MethodId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(serde::de::Error::custom("ragged coefficient rows"));
        }
        Ok(DMatrix::from_fn(rows.len(), p, |i, k| rows[i][k]))
    }
}

/// Per-node estimates from one method. Global methods replicate their
/// estimate on every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: MethodId,
    #[serde(with = "rows")]
    pub per_node_beta: DMatrix<f64>,
    /// Seconds.
    pub wall_time: f64,
    /// Solver rounds (consensus or subgradient), 0 for one-shot fits.
    pub iterations: usize,
    /// Penalties actually used; one per node for local fits.
    pub lambdas: Vec<f64>,
    pub failed_nodes: Vec<usize>,
    /// Network l2 error per round, when the truth is known and the method is
    /// iterative.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

impl MethodResult {
    fn new(method: MethodId, per_node_beta: DMatrix<f64>, started: Instant) -> Self {
        MethodResult {
            method,
            per_node_beta,
            wall_time: started.elapsed().as_secs_f64(),
            iterations: 0,
            lambdas: Vec::new(),
            failed_nodes: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn node_beta(&self, j: usize) -> DVector<f64> {
        self.per_node_beta.row(j).transpose()
    }
}

fn replicate(beta: &DVector<f64>, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, beta.len(), |_, k| beta[k])
}

/// LAD-lasso on all rows stacked together.
pub fn pooled_mr(data: &NetworkDataset, rule: &LambdaRule, opts: LadOptions, zero_tol: f64) -> Result<MethodResult> {
    let started = Instant::now();
    let (x, y) = data.pooled();
    let (beta, lambda) = match *rule {
        LambdaRule::Fixed { value } => (LadSolver::new(&x, &y, opts)?.solve(value)?.beta_vector(), value),
        LambdaRule::Bic { grid_size } => {
            let sel = bic_lad(&x, &y, grid_size, opts, zero_tol)?;
            (sel.beta, sel.lambda)
        }
    };
    let mut res = MethodResult::new(MethodId::PooledMr, replicate(&beta, data.m()), started);
    res.lambdas = vec![lambda];
    Ok(res)
}

/// Independent LAD-lasso per node. Failed nodes keep a zero row.
pub fn local_mr(data: &NetworkDataset, rule: &LambdaRule, opts: LadOptions, zero_tol: f64) -> Result<MethodResult> {
    let started = Instant::now();
    let fits = local_lad_fits(data, rule, opts, zero_tol);
    if fits.failed.len() == data.m() {
        return Err(Error::AllFitsFailed);
    }
    let mut res = MethodResult::new(MethodId::LocalMr, fits.beta, started);
    res.lambdas = fits.lambdas;
    res.failed_nodes = fits.failed;
    Ok(res)
}

/// Replaces every row by the mean of the rows.
pub fn avg_mr(local: &MethodResult) -> MethodResult {
    let started = Instant::now();
    let m = local.per_node_beta.nrows();
    let mean = local.per_node_beta.row_mean().transpose();
    let mut res = MethodResult::new(MethodId::AvgMr, replicate(&mean, m), started);
    res.wall_time += local.wall_time;
    res.lambdas = local.lambdas.clone();
    res.failed_nodes = local.failed_nodes.clone();
    res
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubgradientConfig {
    pub rounds: usize,
    /// `eta_t = eta0 / sqrt(t)`.
    pub eta0: f64,
    pub lambda: f64,
}

impl Default for SubgradientConfig {
    fn default() -> Self {
        SubgradientConfig {
            rounds: 500,
            eta0: 0.1,
            lambda: 0.0,
        }
    }
}

/// Decentralized subgradient descent on `(1/n_j)|y_j - X_j b|_1 + lambda |b|_1`
/// with Metropolis mixing.
pub fn d_subgd(
    data: &NetworkDataset,
    topo: &Topology,
    init: &DMatrix<f64>,
    cfg: &SubgradientConfig,
) -> Result<MethodResult> {
    let started = Instant::now();
    let (m, p) = (data.m(), data.p());
    if topo.node_count() != m || init.shape() != (m, p) {
        return Err(Error::invalid("d_subgd: topology, data and init disagree on shape"));
    }
    if !(cfg.eta0 >= 0.0) || !(cfg.lambda >= 0.0) {
        return Err(Error::invalid("d_subgd: eta0 and lambda must be nonnegative"));
    }
    let w = metropolis_weights(topo);
    let mut states: Vec<DVector<f64>> = (0..m).map(|j| init.row(j).transpose()).collect();
    let mut trace = Vec::new();
    let l2 = |s: &[DVector<f64>]| {
        data.beta_star
            .as_ref()
            .map(|b| s.iter().map(|x| (x - b).norm_squared()).sum::<f64>())
    };
    if let Some(e) = l2(&states) {
        trace.push(e);
    }
    let mut guard = DivergenceGuard::default();
    for t in 1..=cfg.rounds {
        let eta = cfg.eta0 / (t as f64).sqrt();
        let next = run_rounds(
            topo,
            states.clone(),
            |j, me: &DVector<f64>, nbrs: &[(usize, &DVector<f64>)]| {
                let node = &data.nodes[j];
                let mut mixed = me * w[(j, j)];
                for (k, other) in nbrs {
                    mixed += *other * w[(j, *k)];
                }
                let resid = &node.y - &node.x * me;
                let mut g = node.x.tr_mul(&resid.map(sign0)) * (-1.0 / node.n() as f64);
                g += me.map(sign0) * cfg.lambda;
                mixed - g * eta
            },
            1,
        );
        let step: f64 = next.iter().zip(&states).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        states = next;
        if guard.observe(step) {
            return Err(Error::Divergence(format!("d_subgd step grew to {step:e} at round {t}")));
        }
        if let Some(e) = l2(&states) {
            trace.push(e);
        }
    }
    let beta = DMatrix::from_fn(m, p, |j, k| states[j][k]);
    let mut res = MethodResult::new(MethodId::DSubgd, beta, started);
    res.iterations = cfg.rounds;
    res.lambdas = vec![cfg.lambda];
    res.trace = trace;
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelrConfig {
    pub rounds: usize,
    pub tau: f64,
    pub rho_margin: f64,
    pub lambda: LambdaRule,
    pub lasso_grid_ratio: f64,
    pub bic_sample_size: BicSampleSize,
    pub zero_tol: f64,
    pub form: UpdateForm,
}

impl Default for DelrConfig {
    fn default() -> Self {
        DelrConfig {
            rounds: 500,
            tau: crate::surrogate::NETWORK_TAU,
            rho_margin: crate::admm::RHO_MARGIN,
            lambda: LambdaRule::Bic { grid_size: 50 },
            lasso_grid_ratio: 1e-3,
            bic_sample_size: BicSampleSize::Pooled,
            zero_tol: crate::experiments::ZERO_TOL,
            form: UpdateForm::Derived,
        }
    }
}

/// Decentralized least-squares lasso: the consensus ADMM on raw responses,
/// started from zero.
pub fn delr(data: &NetworkDataset, topo: &Topology, cfg: &DelrConfig) -> Result<MethodResult> {
    let started = Instant::now();
    let (m, p) = (data.m(), data.p());
    let blocks: Vec<_> = data.nodes.iter().map(|d| (&d.x, &d.y)).collect();
    let locals = local_quadratics(&blocks);
    let lambda = match cfg.lambda {
        LambdaRule::Fixed { value } => value,
        LambdaRule::Bic { grid_size } => {
            let gram = GramLasso::from_blocks(blocks.iter().copied());
            let grid = gram.lambda_grid(grid_size, cfg.lasso_grid_ratio);
            bic_lasso(&gram, cfg.bic_sample_size.resolve(data), &grid, cfg.zero_tol)?.lambda
        }
    };
    let designs: Vec<_> = data.nodes.iter().map(|d| &d.x).collect();
    let admm = AdmmConfig {
        tau: cfg.tau,
        rho: default_rho(&designs, cfg.rho_margin)?,
        lambda,
        rounds: cfg.rounds,
        track_convergence: false,
        reference_factor: 1,
        form: cfg.form,
    };
    let inner = run_inner(&locals, topo, DMatrix::zeros(m, p), &admm)?;
    if inner.state.beta.iter().any(|v| !v.is_finite()) {
        warn!("deLR produced non-finite coefficients");
        return Err(Error::NonFinite("deLR coefficients"));
    }
    let mut res = MethodResult::new(MethodId::Delr, inner.state.beta, started);
    res.iterations = cfg.rounds;
    res.lambdas = vec![lambda];
    Ok(res)
}
