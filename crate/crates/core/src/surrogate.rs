//! Outer loop: kernel density estimate of the residual density at zero,
//! pseudo-responses, bandwidth schedule, and the driver that alternates them
//! with consensus ADMM.

use std::io::Write;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{default_rho, local_quadratics, run_inner, AdmmConfig, ConsensusState, ConvergenceTrace, UpdateForm};
use crate::datagen::NetworkDataset;
use crate::error::{Error, Result};
use crate::experiments::bic::{bic_lad, bic_lasso};
use crate::lad::{LadOptions, LadSolver};
use crate::lasso::GramLasso;
use crate::netsim::Topology;

/// A kernel supported on `[-radius, radius]`.
pub trait KernelFn {
    fn evaluate(&self, u: f64) -> f64;
    fn support_radius(&self) -> f64 {
        1.0
    }
}

/// Fourth-order bi-weight kernel `(105/64)(1 - u^2)^2 (1 - 3u^2)` in
/// expanded form, zero outside `(-1, 1)`.
pub fn biweight_kernel(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let u2 = u * u;
    (-315.0 * u2 * u2 * u2 + 735.0 * u2 * u2 - 525.0 * u2 + 105.0) / 64.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Biweight;

impl KernelFn for Biweight {
    fn evaluate(&self, u: f64) -> f64 {
        biweight_kernel(u)
    }
}

/// Lower clamp for density estimates.
pub const DENSITY_FLOOR: f64 = 1e-3;

/// `(1/(n h)) sum_i K(r_i / h)` without clamping.
pub fn raw_density(residuals: &DVector<f64>, h: f64, kernel: &dyn KernelFn) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
    }
    if residuals.is_empty() {
        return Err(Error::invalid("density estimate needs at least one residual"));
    }
    let sum: f64 = residuals.iter().map(|&r| kernel.evaluate(r / h)).sum();
    Ok(sum / (residuals.len() as f64 * h))
}

/// Kernel density estimate at zero, clamped below at [`DENSITY_FLOOR`].
pub fn estimate_density(residuals: &DVector<f64>, h: f64, kernel: &dyn KernelFn) -> Result<f64> {
    let f = raw_density(residuals, h, kernel)?;
    if f <= DENSITY_FLOOR {
        warn!("density estimate {f:e} clamped to {DENSITY_FLOOR}");
        return Ok(DENSITY_FLOOR);
    }
    Ok(f)
}

/// `x_i^T b0 - (1[y_i <= x_i^T b0] - 1/2) / f0`.
pub fn pseudo_response(x: &DMatrix<f64>, y: &DVector<f64>, beta0: &DVector<f64>, f0: f64) -> Result<DVector<f64>> {
    if !(f0 > 0.0 && f0.is_finite()) {
        return Err(Error::invalid(format!("density must be positive, got {f0}")));
    }
    if x.nrows() != y.len() || x.ncols() != beta0.len() {
        return Err(Error::invalid("pseudo_response shape mismatch"));
    }
    let fit = x * beta0;
    Ok(DVector::from_fn(y.len(), |i, _| {
        let ind = if y[i] <= fit[i] { 1.0 } else { 0.0 };
        fit[i] - (ind - 0.5) / f0
    }))
}

/// Default stabilizing constant of the bandwidth schedule.
pub const C0: f64 = 0.013;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSchedule {
    pub s_hat: f64,
    pub c0: f64,
    pub n: usize,
    pub m: usize,
}

impl BandwidthSchedule {
    /// `c0 s^2 ln n / m`; the schedule shrinks with `v` only below 1.
    pub fn ratio(&self) -> f64 {
        self.c0 * self.s_hat * self.s_hat * (self.n as f64).ln() / self.m as f64
    }
}

/// `h_v = sqrt(s ln n / n) + s^{-1/2} (c0 s^2 ln n / m)^{(v+1)/2}`.
pub fn bandwidth(v: usize, sched: &BandwidthSchedule) -> Result<f64> {
    if sched.n < 1 || sched.m < 1 || !(sched.s_hat >= 1.0) || !(sched.c0 > 0.0) {
        return Err(Error::invalid(format!("invalid bandwidth schedule {sched:?}")));
    }
    let (s, n) = (sched.s_hat, sched.n as f64);
    let h = (s * n.ln() / n).sqrt() + s.powf(-0.5) * sched.ratio().powf((v as f64 + 1.0) / 2.0);
    if !(h > 0.0 && h.is_finite()) {
        // n = 1 makes the first term vanish; keep the contract h > 0.
        return Err(Error::invalid(format!("bandwidth {h} for {sched:?}")));
    }
    Ok(h)
}

/// How the sparsity level in the bandwidth schedule is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SparsityRule {
    /// Support size of each node's current estimate, at least 1.
    #[default]
    Estimated,
    /// Support size of the true coefficient when the data carry one,
    /// otherwise as `Estimated`.
    Oracle,
    Fixed { s: usize },
}

/// Sample size `n` in the BIC `n log(mean loss) + df log n` for
/// network-wide fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BicSampleSize {
    /// Mean per-node sample size.
    Node,
    /// Total sample size `N`.
    #[default]
    Pooled,
    Fixed { n: usize },
}

impl BicSampleSize {
    pub fn resolve(self, data: &NetworkDataset) -> usize {
        match self {
            BicSampleSize::Node => (data.total_n() as f64 / data.m() as f64).round().max(1.0) as usize,
            BicSampleSize::Pooled => data.total_n(),
            BicSampleSize::Fixed { n } => n.max(1),
        }
    }
}

/// How a penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LambdaRule {
    Fixed { value: f64 },
    /// BIC over a log-spaced grid of `grid_size` values.
    Bic { grid_size: usize },
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::Bic { grid_size: 20 }
    }
}

/// Consensus penalty for network fits. The local losses are scaled by
/// `1/N`, so their curvature is about `1/m` of the per-node Gram bound; a
/// penalty of that order lets 50 rounds make real progress.
pub const NETWORK_TAU: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    /// Outer iterations `V`.
    pub outer_iterations: usize,
    /// Inner consensus rounds `T` per outer iteration.
    pub inner_rounds: usize,
    pub tau: f64,
    /// `rho_j = rho_margin * lambda_max(X_j^T X_j / n_j)`.
    pub rho_margin: f64,
    pub c0: f64,
    pub s_hat: SparsityRule,
    /// Penalty for the local LAD initializers.
    pub init_lambda: LambdaRule,
    /// Network-wide penalty at every outer iteration.
    pub lambda: LambdaRule,
    /// Smallest grid value relative to the grid head for the least-squares
    /// BIC grid.
    pub lasso_grid_ratio: f64,
    pub bic_sample_size: BicSampleSize,
    pub lad: LadOptions,
    pub zero_tol: f64,
    pub form: UpdateForm,
    pub track_convergence: bool,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            outer_iterations: 10,
            inner_rounds: 50,
            tau: NETWORK_TAU,
            rho_margin: crate::admm::RHO_MARGIN,
            c0: C0,
            s_hat: SparsityRule::Estimated,
            init_lambda: LambdaRule::Bic { grid_size: 20 },
            lambda: LambdaRule::Bic { grid_size: 50 },
            lasso_grid_ratio: 1e-3,
            bic_sample_size: BicSampleSize::Pooled,
            lad: LadOptions {
                tol: 1e-3,
                ..LadOptions::default()
            },
            zero_tol: crate::experiments::ZERO_TOL,
            form: UpdateForm::Derived,
            track_convergence: false,
        }
    }
}

/// Local LAD-lasso fits, one per node.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFits {
    pub beta: DMatrix<f64>,
    pub lambdas: Vec<f64>,
    /// Nodes whose fit failed; their row is zero.
    pub failed: Vec<usize>,
}

/// Per-node LAD-lasso with the penalty from `rule`.
pub fn local_lad_fits(data: &NetworkDataset, rule: &LambdaRule, opts: LadOptions, zero_tol: f64) -> LocalFits {
    let (m, p) = (data.m(), data.p());
    let mut beta = DMatrix::zeros(m, p);
    let mut lambdas = vec![f64::NAN; m];
    let mut failed = Vec::new();
    for (j, node) in data.nodes.iter().enumerate() {
        let fit = match *rule {
            LambdaRule::Fixed { value } => LadSolver::new(&node.x, &node.y, opts)
                .and_then(|s| s.solve(value))
                .map(|r| (r.beta_vector(), value)),
            LambdaRule::Bic { grid_size } => {
                bic_lad(&node.x, &node.y, grid_size, opts, zero_tol).map(|sel| (sel.beta, sel.lambda))
            }
        };
        match fit {
            Ok((b, lambda)) => {
                beta.set_row(j, &b.transpose());
                lambdas[j] = lambda;
            }
            Err(e) => {
                warn!("local LAD fit failed on node {}: {e}", j + 1);
                failed.push(j);
            }
        }
    }
    LocalFits { beta, lambdas, failed }
}

/// One row of the outer-loop trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterTraceRow {
    pub v: usize,
    pub node: usize,
    pub l2_error: f64,
    pub f_hat: f64,
    pub h_v: f64,
    pub lambda_selected: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterState {
    /// Completed outer iterations.
    pub v: usize,
    pub beta_hat: DMatrix<f64>,
    pub f_hat: Vec<f64>,
    pub trace: Vec<OuterTraceRow>,
}

impl OuterState {
    /// Network `l2` error after each outer iteration, `v = 0..=V`.
    pub fn l2_by_iteration(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.v + 1];
        for row in &self.trace {
            out[row.v] += row.l2_error;
        }
        out
    }

    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.trace {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OuterResult {
    pub state: OuterState,
    pub consensus: ConsensusState,
    /// Inner-loop convergence traces when tracking is on.
    pub inner_traces: Vec<ConvergenceTrace>,
    pub init_lambdas: Vec<f64>,
}

fn check_config(cfg: &SurrogateConfig) -> Result<()> {
    if cfg.inner_rounds == 0 && cfg.outer_iterations > 0 {
        return Err(Error::invalid("inner_rounds must be >= 1"));
    }
    if !(cfg.c0 > 0.0) || !(cfg.tau > 0.0) || !(cfg.rho_margin > 0.0) {
        return Err(Error::invalid("c0, tau and rho_margin must be positive"));
    }
    if let LambdaRule::Bic { grid_size } = cfg.lambda {
        if grid_size < 2 {
            return Err(Error::invalid("BIC grid needs at least 2 values"));
        }
    }
    Ok(())
}

/// Local LAD initializers followed by `V` outer iterations.
pub fn run_outer_loop(data: &NetworkDataset, topo: &Topology, cfg: &SurrogateConfig) -> Result<OuterResult> {
    check_config(cfg)?;
    let init = local_lad_fits(data, &cfg.init_lambda, cfg.lad, cfg.zero_tol);
    if init.failed.len() == data.m() {
        return Err(Error::AllFitsFailed);
    }
    let lambdas = init.lambdas.clone();
    let mut res = run_outer_loop_from(data, topo, cfg, init.beta, &Biweight)?;
    for row in res.state.trace.iter_mut().filter(|r| r.v == 0) {
        row.lambda_selected = lambdas[row.node - 1];
    }
    res.init_lambdas = lambdas;
    Ok(res)
}

/// Outer iterations from given initial estimates (rows are nodes).
pub fn run_outer_loop_from(
    data: &NetworkDataset,
    topo: &Topology,
    cfg: &SurrogateConfig,
    init: DMatrix<f64>,
    kernel: &dyn KernelFn,
) -> Result<OuterResult> {
    check_config(cfg)?;
    let (m, p) = (data.m(), data.p());
    if topo.node_count() != m {
        return Err(Error::invalid(format!("topology has {} nodes, data {m}", topo.node_count())));
    }
    if init.shape() != (m, p) {
        return Err(Error::invalid(format!("initial estimate is {:?}, expected ({m}, {p})", init.shape())));
    }
    let total_n = data.total_n();
    let node_l2 = |beta: &DMatrix<f64>, j: usize| match &data.beta_star {
        Some(b) => (beta.row(j).transpose() - b).norm_squared(),
        None => f64::NAN,
    };

    let mut trace: Vec<OuterTraceRow> = (0..m)
        .map(|j| OuterTraceRow {
            v: 0,
            node: j + 1,
            l2_error: node_l2(&init, j),
            f_hat: f64::NAN,
            h_v: f64::NAN,
            lambda_selected: f64::NAN,
        })
        .collect();

    let blocks: Vec<(&DMatrix<f64>, &DVector<f64>)> = data.nodes.iter().map(|d| (&d.x, &d.y)).collect();
    let base = local_quadratics(&blocks);
    let pooled_gram: DMatrix<f64> = base.iter().fold(DMatrix::zeros(p, p), |acc, l| acc + &l.gram);
    let designs: Vec<&DMatrix<f64>> = data.nodes.iter().map(|d| &d.x).collect();
    let rho = if cfg.outer_iterations > 0 {
        default_rho(&designs, cfg.rho_margin)?
    } else {
        Vec::new()
    };
    let oracle_s = data
        .beta_star
        .as_ref()
        .map(|b| b.iter().filter(|v| **v != 0.0).count().max(1));

    let mut beta_hat = init;
    let mut f_hat = vec![f64::NAN; m];
    let mut consensus = ConsensusState::new(beta_hat.clone());
    let mut inner_traces = Vec::new();
    let mut warned_ratio = false;

    for v in 0..cfg.outer_iterations {
        let mut ytilde = Vec::with_capacity(m);
        let mut h = vec![0.0; m];
        let mut clamped = 0;
        for (j, node) in data.nodes.iter().enumerate() {
            let b = beta_hat.row(j).transpose();
            let s_hat = match (cfg.s_hat, oracle_s) {
                (SparsityRule::Fixed { s }, _) => s.max(1),
                (SparsityRule::Oracle, Some(s)) => s,
                _ => b.iter().filter(|x| x.abs() > cfg.zero_tol).count().max(1),
            };
            let sched = BandwidthSchedule {
                s_hat: s_hat as f64,
                c0: cfg.c0,
                n: node.n(),
                m,
            };
            if sched.ratio() >= 1.0 && !warned_ratio {
                warn!(
                    "bandwidth ratio c0 s^2 ln n / m = {:.3} >= 1 on node {}; h_v grows with v",
                    sched.ratio(),
                    j + 1
                );
                warned_ratio = true;
            }
            h[j] = bandwidth(v, &sched)?;
            let resid = &node.y - &node.x * &b;
            let raw = raw_density(&resid, h[j], kernel)?;
            if raw <= DENSITY_FLOOR {
                clamped += 1;
            }
            f_hat[j] = estimate_density(&resid, h[j], kernel)?;
            ytilde.push(pseudo_response(&node.x, &node.y, &b, f_hat[j])?);
        }
        if 2 * clamped > m {
            return Err(Error::DegenerateDensity { clamped, nodes: m });
        }

        let locals: Vec<_> = base
            .iter()
            .zip(&data.nodes)
            .zip(&ytilde)
            .map(|((l, d), yt)| l.with_response(&d.x, yt, total_n))
            .collect();
        let lambda = match cfg.lambda {
            LambdaRule::Fixed { value } => value,
            LambdaRule::Bic { grid_size } => {
                let xty = locals.iter().fold(DVector::zeros(p), |acc, l| acc + &l.xty);
                let yty = ytilde.iter().map(|y| y.norm_squared()).sum::<f64>() / total_n as f64;
                let gram = GramLasso::from_stats(pooled_gram.clone(), xty, yty);
                let grid = gram.lambda_grid(grid_size, cfg.lasso_grid_ratio);
                bic_lasso(&gram, cfg.bic_sample_size.resolve(data), &grid, cfg.zero_tol)?.lambda
            }
        };
        let admm = AdmmConfig {
            tau: cfg.tau,
            rho: rho.clone(),
            lambda,
            rounds: cfg.inner_rounds,
            track_convergence: cfg.track_convergence,
            reference_factor: 20,
            form: cfg.form,
        };
        let inner = run_inner(&locals, topo, beta_hat.clone(), &admm)?;
        if let Some(t) = inner.trace {
            inner_traces.push(t);
        }
        beta_hat = inner.state.beta.clone();
        consensus = inner.state;
        debug!("outer iteration {} lambda {lambda:e}", v + 1);
        for j in 0..m {
            trace.push(OuterTraceRow {
                v: v + 1,
                node: j + 1,
                l2_error: node_l2(&beta_hat, j),
                f_hat: f_hat[j],
                h_v: h[j],
                lambda_selected: lambda,
            });
        }
    }

    Ok(OuterResult {
        state: OuterState {
            v: cfg.outer_iterations,
            beta_hat,
            f_hat,
            trace,
        },
        consensus,
        inner_traces,
        init_lambdas: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_values() {
        assert_eq!(biweight_kernel(0.0), 105.0 / 64.0);
        assert_eq!(biweight_kernel(1.0), 0.0);
        assert_eq!(biweight_kernel(-1.0), 0.0);
        assert_eq!(biweight_kernel(3.0), 0.0);
        // The polynomial itself vanishes at the boundary.
        let poly = (-315.0 + 735.0 - 525.0 + 105.0) / 64.0;
        assert_eq!(poly, 0.0);
    }

    #[test]
    fn bandwidth_example() {
        let s = BandwidthSchedule {
            s_hat: 10.0,
            c0: C0,
            n: 200,
            m: 10,
        };
        let h = bandwidth(1, &s).unwrap();
        let direct = (10.0 * 200f64.ln() / 200.0).sqrt() + 10f64.powf(-0.5) * (0.013 * 100.0 * 200f64.ln() / 10.0);
        assert!((h - direct).abs() < 1e-12);
        assert!((h - 0.7325).abs() < 5e-4, "{h}");
        let far = bandwidth(200, &s).unwrap();
        assert!((far - (10.0 * 200f64.ln() / 200.0).sqrt()).abs() < 1e-12);
        let hs: Vec<f64> = (0..20).map(|v| bandwidth(v, &s).unwrap()).collect();
        assert!(hs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn density_examples() {
        let zeros = DVector::zeros(5);
        assert_eq!(estimate_density(&zeros, 1.0, &Biweight).unwrap(), 105.0 / 64.0);
        let far = DVector::from_vec(vec![1.0, -2.0, 5.0]);
        assert_eq!(raw_density(&far, 1.0, &Biweight).unwrap(), 0.0);
        assert_eq!(estimate_density(&far, 1.0, &Biweight).unwrap(), DENSITY_FLOOR);
        assert!(estimate_density(&far, 0.0, &Biweight).is_err());
    }

    #[test]
    fn pseudo_response_examples() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let y = DVector::from_vec(vec![3.0, 1.0]);
        let yt = pseudo_response(&x, &y, &b, 0.5).unwrap();
        assert_eq!(yt, DVector::from_vec(vec![3.0, 1.0]));
        // y equal to the fit counts as below.
        let yt = pseudo_response(&x, &DVector::from_vec(vec![2.0, 2.0]), &b, 0.5).unwrap();
        assert_eq!(yt, DVector::from_vec(vec![1.0, 1.0]));
        assert!(pseudo_response(&x, &y, &b, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn pseudo_response_distance(
            rows in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -20.0f64..20.0), 1..30),
            b0 in -3.0f64..3.0, b1 in -3.0f64..3.0, f0 in 0.01f64..5.0,
        ) {
            let x = DMatrix::from_fn(rows.len(), 2, |i, k| if k == 0 { rows[i].0 } else { rows[i].1 });
            let y = DVector::from_fn(rows.len(), |i, _| rows[i].2);
            let b = DVector::from_vec(vec![b0, b1]);
            let yt = pseudo_response(&x, &y, &b, f0).unwrap();
            let fit = &x * &b;
            for i in 0..rows.len() {
                prop_assert!(((yt[i] - fit[i]).abs() - 0.5 / f0).abs() < 1e-9 * (1.0 + fit[i].abs()));
            }
        }

        #[test]
        fn density_scale_consistency(
            r in prop::collection::vec(-3.0f64..3.0, 1..40),
            h in 0.05f64..4.0, c in 0.1f64..10.0,
        ) {
            let r = DVector::from_vec(r);
            let a = raw_density(&r, h, &Biweight).unwrap();
            let b = raw_density(&(&r * c), h * c, &Biweight).unwrap();
            prop_assert!((b - a / c).abs() <= 1e-9 * (1.0 + a / c));
        }
    }
}
