//! Generalized consensus ADMM for the network lasso
//! `min (1/(2N)) sum_j |y_j - X_j b|^2 + lambda |b|_1` with one copy of `b`
//! per node and equality constraints along the edges.
//!
//! Each node linearizes its own quadratic around the current iterate and adds
//! a proximal term `rho_j / 2 |b - b_t|^2`, so the per-node update is a single
//! soft-thresholding step. The edge multipliers are folded into one
//! accumulated dual `p_j` per node.
//!
//! Fixed point. With `omega_j = 1 / (rho_j + 2 tau |N_j|)` and per-node
//! penalty `theta = lambda / m`, a consensus fixed point `b_j = b` satisfies
//! `0 in g_j(b) + p_j + theta d|b|_1` at every node. The duals sum to zero, so
//! summing over nodes gives the optimality condition of the pooled problem.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lad::soft_threshold_scalar;
use crate::netsim::{run_rounds_ordered, Topology};

/// Proximal map of a separable penalty, `argmin_u t * pen(u) + (u - v)^2 / 2`.
pub trait Proximal {
    fn prox(&self, v: f64, t: f64) -> f64;
}

/// The l1 penalty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct L1;

impl Proximal for L1 {
    #[inline]
    fn prox(&self, v: f64, t: f64) -> f64 {
        soft_threshold_scalar(v, t)
    }
}

/// Largest eigenvalue of `X^T X / n` by power iteration with Rayleigh
/// quotients. Falls back to the trace (an upper bound) if the iteration does
/// not settle.
pub fn max_eigenvalue(x: &DMatrix<f64>, tol: f64) -> Result<f64> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return Err(Error::invalid("max_eigenvalue of an empty matrix"));
    }
    let gram = x.tr_mul(x) / n as f64;
    gram_max_eigenvalue(&gram, tol)
}

pub(crate) fn gram_max_eigenvalue(gram: &DMatrix<f64>, tol: f64) -> Result<f64> {
    const CAP: usize = 100_000;
    let p = gram.nrows();
    if !gram.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("Gram matrix"));
    }
    let trace = gram.trace();
    if trace <= 0.0 {
        return Err(Error::invalid("max_eigenvalue of a zero matrix"));
    }
    // A slightly uneven start avoids being orthogonal to the top eigenvector
    // for structured inputs.
    let mut v = DVector::from_fn(p, |i, _| 1.0 + 0.01 * (i as f64 + 1.0).sqrt());
    v /= v.norm();
    let mut lambda = v.dot(&(gram * &v));
    for _ in 0..CAP {
        let w = gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            // Start vector in the null space; restart on a coordinate.
            v = DVector::zeros(p);
            v[gram.diagonal().imax()] = 1.0;
            continue;
        }
        v = w / norm;
        let next = v.dot(&(gram * &v));
        if (next - lambda).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return Ok(next);
        }
        lambda = next;
    }
    warn!("power iteration did not settle; using trace {trace} as eigenvalue bound");
    Ok(trace)
}

/// Per-node least-squares statistics `X_j^T X_j / N` and `X_j^T y_j / N`,
/// where `N` is the network-wide sample size.
#[derive(Debug, Clone)]
pub struct LocalQuadratic {
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
}

impl LocalQuadratic {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>, total_n: usize) -> Self {
        let scale = total_n as f64;
        LocalQuadratic {
            gram: x.tr_mul(x) / scale,
            xty: x.tr_mul(y) / scale,
        }
    }

    /// Same design, new response.
    pub fn with_response(&self, x: &DMatrix<f64>, y: &DVector<f64>, total_n: usize) -> Self {
        LocalQuadratic {
            gram: self.gram.clone(),
            xty: x.tr_mul(y) / total_n as f64,
        }
    }

    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.gram * beta - &self.xty
    }
}

/// Builds one [`LocalQuadratic`] per node.
pub fn local_quadratics(blocks: &[(&DMatrix<f64>, &DVector<f64>)]) -> Vec<LocalQuadratic> {
    let total: usize = blocks.iter().map(|(_, y)| y.len()).sum();
    blocks.iter().map(|(x, y)| LocalQuadratic::new(x, y, total)).collect()
}

/// Which algebraic form of the node update to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateForm {
    /// `omega = 1/(rho + 2 tau |N|)`, threshold `lambda omega / m`. Converges
    /// to the pooled lasso.
    #[default]
    Derived,
    /// `omega = 1/(rho + tau |N|)`, threshold `2 lambda omega`, as commonly
    /// printed. Kept for comparison; its fixed point is generally not the
    /// pooled lasso.
    Printed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub tau: f64,
    pub rho: Vec<f64>,
    pub lambda: f64,
    pub rounds: usize,
    pub track_convergence: bool,
    /// Extra rounds for the reference solution, as a multiple of `rounds`.
    pub reference_factor: usize,
    pub form: UpdateForm,
}

/// Margin over the eigenvalue bound used for the default step lengths.
pub const RHO_MARGIN: f64 = 1.05;

impl AdmmConfig {
    /// Default config: `tau = 1`, `rho_j = 1.05 * lambda_max(X_j^T X_j / n_j)`.
    pub fn with_default_rho(designs: &[&DMatrix<f64>], lambda: f64, rounds: usize) -> Result<Self> {
        Ok(AdmmConfig {
            tau: 1.0,
            rho: default_rho(designs, RHO_MARGIN)?,
            lambda,
            rounds,
            track_convergence: false,
            reference_factor: 20,
            form: UpdateForm::Derived,
        })
    }

    fn validate(&self, m: usize) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if self.rho.len() != m {
            return Err(Error::invalid(format!("{} step lengths for {m} nodes", self.rho.len())));
        }
        if self.rho.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("step lengths must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// `margin * lambda_max(X_j^T X_j / n_j)` for every node.
pub fn default_rho(designs: &[&DMatrix<f64>], margin: f64) -> Result<Vec<f64>> {
    designs.iter().map(|x| Ok(margin * max_eigenvalue(x, 1e-10)?)).collect()
}

/// Rows are nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub beta: DMatrix<f64>,
    pub p_dual: DMatrix<f64>,
    pub t: usize,
}

impl ConsensusState {
    /// Starts from `init` with zero duals.
    pub fn new(init: DMatrix<f64>) -> Self {
        let p_dual = DMatrix::zeros(init.nrows(), init.ncols());
        ConsensusState { beta: init, p_dual, t: 0 }
    }

    pub fn node_beta(&self, j: usize) -> DVector<f64> {
        self.beta.row(j).transpose()
    }

    /// `|sum_j p_j|_inf`; zero up to rounding on an undirected graph.
    pub fn dual_sum_norm(&self) -> f64 {
        self.p_dual.row_sum().amax()
    }

    /// Largest `|b_j - b_k|_inf` over edges.
    pub fn max_consensus_gap(&self, topo: &Topology) -> f64 {
        topo.edges()
            .into_iter()
            .map(|(j, k)| (self.beta.row(j) - self.beta.row(k)).amax())
            .fold(0.0, f64::max)
    }

    fn into_nodes(self) -> Vec<NodeIterate> {
        (0..self.beta.nrows())
            .map(|j| NodeIterate {
                beta: self.beta.row(j).transpose(),
                p: self.p_dual.row(j).transpose(),
            })
            .collect()
    }

    fn from_nodes(nodes: &[NodeIterate], t: usize) -> Self {
        let m = nodes.len();
        let p = nodes.first().map_or(0, |n| n.beta.len());
        ConsensusState {
            beta: DMatrix::from_fn(m, p, |j, k| nodes[j].beta[k]),
            p_dual: DMatrix::from_fn(m, p, |j, k| nodes[j].p[k]),
            t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct NodeIterate {
    beta: DVector<f64>,
    p: DVector<f64>,
}

/// Dual update for every node: `p_j += tau * sum_{k in N(j)} (b_j - b_k)`.
pub fn admm_step_p(state: &ConsensusState, topo: &Topology, tau: f64) -> DMatrix<f64> {
    let mut out = state.p_dual.clone();
    for j in 0..topo.node_count() {
        for &k in topo.neighbors(j) {
            let diff = (state.beta.row(j) - state.beta.row(k)) * tau;
            let mut row = out.row_mut(j);
            row += diff;
        }
    }
    out
}

/// Primal update for node `j` given its already updated dual `p_new`.
#[allow(clippy::too_many_arguments)]
pub fn admm_step_beta(
    beta_j: &DVector<f64>,
    p_new: &DVector<f64>,
    neighbor_betas: &[&DVector<f64>],
    local: &LocalQuadratic,
    rho_j: f64,
    cfg: &AdmmConfig,
    m: usize,
    prox: &dyn Proximal,
) -> Result<DVector<f64>> {
    let deg = neighbor_betas.len() as f64;
    let (omega, threshold) = match cfg.form {
        UpdateForm::Derived => {
            let omega = 1.0 / (rho_j + 2.0 * cfg.tau * deg);
            (omega, cfg.lambda * omega / m as f64)
        }
        UpdateForm::Printed => {
            let omega = 1.0 / (rho_j + cfg.tau * deg);
            (omega, 2.0 * cfg.lambda * omega)
        }
    };
    let mut v = beta_j * (rho_j + cfg.tau * deg) - local.gradient(beta_j) - p_new;
    for b in neighbor_betas {
        v.axpy(cfg.tau, b, 1.0);
    }
    let out = v.map(|e| prox.prox(omega * e, threshold));
    if !out.iter().all(|e| e.is_finite()) {
        return Err(Error::NonFinite("consensus ADMM update"));
    }
    Ok(out)
}

/// Distance of every round's iterate to a reference solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// `|B_t - B_ref|_F` for `t = 0..=T`.
    pub distances: Vec<f64>,
    /// Largest edge-wise `|b_j - b_k|_inf` for `t = 0..=T`.
    pub consensus_gaps: Vec<f64>,
    /// `exp(slope)` of the log-distance fit.
    pub gamma_hat: f64,
    pub r_squared: f64,
    /// Rounds `[start, end]` used for the fit.
    pub fit_window: (usize, usize),
}

/// R^2 a fit must reach before [`ConvergenceTrace::rate`] reports it.
pub const RATE_FIT_R2: f64 = 0.95;

impl ConvergenceTrace {
    /// Fits `log d_t = a + t log gamma` over `[start, end]`. Rounds where the
    /// distance has already hit rounding level are left out.
    pub fn fit(distances: &[f64], consensus_gaps: Vec<f64>, start: usize, end: usize) -> Self {
        let end = end.min(distances.len().saturating_sub(1));
        let floor = distances.first().copied().unwrap_or(0.0).max(1.0) * 1e-13;
        let pts: Vec<(f64, f64)> = (start..=end)
            .filter(|&t| distances[t] > floor)
            .map(|t| (t as f64, distances[t].ln()))
            .collect();
        let (slope, r2) = log_linear_fit(&pts);
        ConvergenceTrace {
            distances: distances.to_vec(),
            consensus_gaps,
            gamma_hat: slope.exp(),
            r_squared: r2,
            fit_window: (start, end),
        }
    }

    /// Fitted rate when the fit is good enough to mean something.
    pub fn rate(&self) -> Option<f64> {
        (self.r_squared >= RATE_FIT_R2 && self.gamma_hat > 0.0 && self.gamma_hat < 1.0).then_some(self.gamma_hat)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["round", "frobenius_distance", "max_pairwise_consensus_gap"])?;
        for (t, (d, g)) in self.distances.iter().zip(&self.consensus_gaps).enumerate() {
            out.write_record([t.to_string(), d.to_string(), g.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn log_linear_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    if pts.len() < 2 {
        return (f64::NAN, 0.0);
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}

/// Rounds of growth after which an iteration is declared divergent.
pub const DIVERGENCE_WINDOW: usize = 10;

/// Watches a sequence of step sizes for sustained growth.
#[derive(Debug, Clone, Default)]
pub struct DivergenceGuard {
    last: Option<f64>,
    streak: usize,
    streak_start: f64,
}

impl DivergenceGuard {
    /// Returns true once the value has grown for [`DIVERGENCE_WINDOW`]
    /// consecutive observations and ended at least tenfold above where the
    /// streak began.
    pub fn observe(&mut self, value: f64) -> bool {
        if !value.is_finite() {
            return true;
        }
        match self.last {
            Some(prev) if value > prev => {
                if self.streak == 0 {
                    self.streak_start = prev;
                }
                self.streak += 1;
            }
            _ => self.streak = 0,
        }
        self.last = Some(value);
        self.streak >= DIVERGENCE_WINDOW && value > 10.0 * self.streak_start
    }
}

fn check_inputs(locals: &[LocalQuadratic], topo: &Topology, state: &ConsensusState, cfg: &AdmmConfig) -> Result<()> {
    let m = topo.node_count();
    if locals.len() != m || state.beta.nrows() != m || state.p_dual.nrows() != m {
        return Err(Error::invalid(format!(
            "{} local problems and {} state rows for {m} nodes",
            locals.len(),
            state.beta.nrows()
        )));
    }
    let p = state.beta.ncols();
    if locals.iter().any(|l| l.xty.len() != p) || state.p_dual.ncols() != p {
        return Err(Error::invalid("coefficient dimension mismatch"));
    }
    cfg.validate(m)
}

/// Advances `state` by `rounds` bulk-synchronous rounds. Calls `observe`
/// after every round.
pub fn advance(
    locals: &[LocalQuadratic],
    topo: &Topology,
    state: ConsensusState,
    cfg: &AdmmConfig,
    rounds: usize,
    prox: &dyn Proximal,
    mut observe: impl FnMut(&ConsensusState) -> Result<()>,
) -> Result<ConsensusState> {
    check_inputs(locals, topo, &state, cfg)?;
    let order: Vec<usize> = (0..topo.node_count()).collect();
    advance_ordered(locals, topo, state, cfg, rounds, prox, &order, &mut observe)
}

#[allow(clippy::too_many_arguments)]
fn advance_ordered(
    locals: &[LocalQuadratic],
    topo: &Topology,
    state: ConsensusState,
    cfg: &AdmmConfig,
    rounds: usize,
    prox: &dyn Proximal,
    order: &[usize],
    observe: &mut dyn FnMut(&ConsensusState) -> Result<()>,
) -> Result<ConsensusState> {
    let m = topo.node_count();
    let mut t = state.t;
    let mut nodes = state.into_nodes();
    for _ in 0..rounds {
        let failure = std::cell::Cell::new(None);
        let update = |j: usize, me: &NodeIterate, nbrs: &[(usize, &NodeIterate)]| {
            let mut p = me.p.clone();
            for (_, other) in nbrs {
                p += (&me.beta - &other.beta) * cfg.tau;
            }
            let nb: Vec<&DVector<f64>> = nbrs.iter().map(|(_, o)| &o.beta).collect();
            match admm_step_beta(&me.beta, &p, &nb, &locals[j], cfg.rho[j], cfg, m, prox) {
                Ok(beta) => NodeIterate { beta, p },
                Err(e) => {
                    failure.set(Some(e));
                    me.clone()
                }
            }
        };
        nodes = run_rounds_ordered(topo, nodes, update, 1, order);
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        t += 1;
        observe(&ConsensusState::from_nodes(&nodes, t))?;
    }
    Ok(ConsensusState::from_nodes(&nodes, t))
}

/// Output of [`run_inner`].
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub state: ConsensusState,
    pub trace: Option<ConvergenceTrace>,
}

/// Runs `cfg.rounds` rounds from `init` with zero duals.
///
/// With `track_convergence`, a reference solution is obtained by running
/// `reference_factor * rounds` further rounds, and the per-round distance to
/// it is recorded. Without tracking, divergence is judged on the size of
/// successive steps.
pub fn run_inner(
    locals: &[LocalQuadratic],
    topo: &Topology,
    init: DMatrix<f64>,
    cfg: &AdmmConfig,
) -> Result<InnerResult> {
    run_inner_with(locals, topo, init, cfg, &L1)
}

pub fn run_inner_with(
    locals: &[LocalQuadratic],
    topo: &Topology,
    init: DMatrix<f64>,
    cfg: &AdmmConfig,
    prox: &dyn Proximal,
) -> Result<InnerResult> {
    let start = ConsensusState::new(init);
    let mut history: Vec<DMatrix<f64>> = Vec::new();
    let mut gaps = Vec::new();
    if cfg.track_convergence {
        history.push(start.beta.clone());
        gaps.push(start.max_consensus_gap(topo));
    }
    let mut guard = DivergenceGuard::default();
    let mut prev = start.beta.clone();
    let tracking = cfg.track_convergence;
    let state = advance(locals, topo, start, cfg, cfg.rounds, prox, |s| {
        let step = (&s.beta - &prev).norm();
        prev.copy_from(&s.beta);
        if guard.observe(step) {
            return Err(Error::Divergence(format!(
                "consensus ADMM step grew for {DIVERGENCE_WINDOW} rounds (round {}, step {step:e})",
                s.t
            )));
        }
        if tracking {
            history.push(s.beta.clone());
            gaps.push(s.max_consensus_gap(topo));
        }
        Ok(())
    })?;
    if !tracking {
        return Ok(InnerResult { state, trace: None });
    }

    let extra = cfg.reference_factor.max(1) * cfg.rounds.max(1);
    let reference = advance(locals, topo, state.clone(), cfg, extra, prox, |_| Ok(()))?.beta;
    let distances: Vec<f64> = history.iter().map(|b| (b - &reference).norm()).collect();
    let mut guard = DivergenceGuard::default();
    for (t, d) in distances.iter().enumerate() {
        if guard.observe(*d) {
            return Err(Error::Divergence(format!(
                "distance to reference grew for {DIVERGENCE_WINDOW} rounds (round {t}, distance {d:e})"
            )));
        }
    }
    let start = if cfg.rounds >= 20 { 10 } else { 0 };
    let trace = ConvergenceTrace::fit(&distances, gaps, start, cfg.rounds);
    Ok(InnerResult { state, trace: Some(trace) })
}

/// [`advance`] with an explicit node evaluation order; results do not depend
/// on it.
pub fn advance_in_order(
    locals: &[LocalQuadratic],
    topo: &Topology,
    state: ConsensusState,
    cfg: &AdmmConfig,
    rounds: usize,
    order: &[usize],
) -> Result<ConsensusState> {
    check_inputs(locals, topo, &state, cfg)?;
    advance_ordered(locals, topo, state, cfg, rounds, &L1, order, &mut |_| Ok(()))
}
