//! l1-penalized least-absolute-deviation (median) regression.
//!
//! Solves `min (1/n) |y - X b|_1 + lambda |b|_1` by ADMM on the splitting
//! `X b + r = y`, `b = z`. The `b`-step is a ridge-type linear solve whose
//! matrix does not depend on the penalty or the ADMM step, so one Cholesky
//! factorization serves a whole lambda path.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate-wise soft-thresholding `sign(v) * max(|v| - t, 0)`.
pub fn soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    v.map(|x| soft_threshold_scalar(x, t))
}

#[inline]
pub fn soft_threshold_scalar(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct LadLassoProblem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub lambda: f64,
}

impl LadLassoProblem {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, lambda: f64) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::invalid("X rows and y length differ"));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("empty LAD problem"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(LadLassoProblem { x, y, lambda })
    }

    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        lad_objective(&self.x, &self.y, beta, self.lambda)
    }
}

/// `(1/n) |y - X b|_1 + lambda |b|_1`.
pub fn lad_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let n = y.len() as f64;
    (y - x * beta).lp_norm(1) / n + lambda * beta.lp_norm(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    pub objective: f64,
}

impl SolverReport {
    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial ADMM step, relative to `1/n`.
    pub step: f64,
    /// Residual-balancing adaptation of the step.
    pub adaptive: bool,
    /// Over-relaxation factor in (0, 2).
    pub relaxation: f64,
    /// Snap the final iterate to the vertex its active set identifies.
    pub polish: bool,
}

impl Default for LadOptions {
    fn default() -> Self {
        LadOptions {
            tol: 1e-6,
            max_iter: 5000,
            step: 1.0,
            adaptive: true,
            relaxation: 1.6,
            polish: true,
        }
    }
}

enum Factor {
    /// `X^T X + I` (p <= n).
    Primal(Cholesky<f64, Dyn>),
    /// `X X^T + I`, applied through the Woodbury identity (p > n).
    Dual(Cholesky<f64, Dyn>),
}

/// ADMM iterate, kept so successive solves along a lambda path can warm
/// start.
#[derive(Debug, Clone)]
pub struct LadState {
    beta: DVector<f64>,
    r: DVector<f64>,
    z: DVector<f64>,
    u: DVector<f64>,
    w: DVector<f64>,
    sigma: f64,
}

/// LAD-lasso solver bound to one data set.
pub struct LadSolver<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    factor: Factor,
    // Weight on the `b = z` block; the mean squared column norm keeps both
    // constraint blocks on the same scale.
    kappa: f64,
    opts: LadOptions,
}

impl<'a> LadSolver<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>, opts: LadOptions) -> Result<Self> {
        if x.nrows() != y.len() || x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("LAD solver needs a non-empty design matching y"));
        }
        if !(opts.tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        let (n, p) = x.shape();
        let kappa = (x.norm_squared() / p as f64).max(1e-12);
        let factor = if p <= n {
            let mut g = x.tr_mul(x);
            for i in 0..p {
                g[(i, i)] += kappa;
            }
            Factor::Primal(g.cholesky().ok_or(Error::NonFinite("LAD factorization"))?)
        } else {
            let mut g = x * x.transpose();
            for i in 0..n {
                g[(i, i)] += kappa;
            }
            Factor::Dual(g.cholesky().ok_or(Error::NonFinite("LAD factorization"))?)
        };
        Ok(LadSolver { x, y, factor, kappa, opts })
    }

    fn solve_system(&self, q: DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Primal(c) => c.solve(&q),
            // (X^T X + k I)^-1 = (I - X^T (X X^T + k I)^-1 X) / k
            Factor::Dual(c) => {
                let t = c.solve(&(self.x * &q));
                (q - self.x.tr_mul(&t)) / self.kappa
            }
        }
    }

    pub fn cold_state(&self) -> LadState {
        let (n, p) = self.x.shape();
        LadState {
            beta: DVector::zeros(p),
            r: self.y.clone(),
            z: DVector::zeros(p),
            u: DVector::zeros(n),
            w: DVector::zeros(p),
            sigma: self.opts.step / n as f64,
        }
    }

    pub fn solve(&self, lambda: f64) -> Result<SolverReport> {
        let mut state = self.cold_state();
        self.solve_from(lambda, &mut state)
    }

    /// Runs ADMM from `state`, leaving the final iterate there.
    pub fn solve_from(&self, lambda: f64, state: &mut LadState) -> Result<SolverReport> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let (n, p) = self.x.shape();
        let inv_n = 1.0 / n as f64;
        let x = self.x;
        let y = self.y;
        // Residuals carry the units of y; heavy-tailed responses would
        // otherwise make an absolute tolerance unreachable.
        let tol = self.opts.tol * (y.norm() / (n as f64).sqrt()).max(1.0);
        let zero = DVector::zeros(p);
        let zero_obj = lad_objective(x, y, &zero, lambda);

        let mut best = (state.z.clone(), lad_objective(x, y, &state.z, lambda));
        let mut primal = f64::INFINITY;
        let mut dual = f64::INFINITY;
        let mut converged = false;
        let mut iterations = 0;
        let s = state;

        for it in 1..=self.opts.max_iter {
            iterations = it;
            let kappa = self.kappa;
            let q = x.tr_mul(&(y - &s.r - &s.u)) + (&s.z - &s.w) * kappa;
            s.beta = self.solve_system(q);
            let xb = x * &s.beta;

            // Over-relaxed copies of the constraint terms.
            let alpha = self.opts.relaxation;
            let xb_hat = &xb * alpha + (y - &s.r) * (1.0 - alpha);
            let b_hat = &s.beta * alpha + &s.z * (1.0 - alpha);

            let v = y - &xb_hat - &s.u;
            let r_old = std::mem::replace(&mut s.r, soft_threshold(&v, inv_n / s.sigma));
            let z_old = std::mem::replace(&mut s.z, soft_threshold(&(&b_hat + &s.w), lambda / (s.sigma * kappa)));

            s.u += &xb_hat + &s.r - y;
            s.w += &b_hat - &s.z;
            let res_fit = &xb + &s.r - y;
            let res_eq = &s.beta - &s.z;

            primal = (res_fit.norm_squared() + kappa * res_eq.norm_squared()).sqrt() / ((n + p) as f64).sqrt();
            let dr = &s.r - &r_old;
            let dz = &s.z - &z_old;
            // Dual residual relative to the natural 1/n scale of the
            // multipliers, so the tolerance is independent of n.
            dual = s.sigma * n as f64 * (x.tr_mul(&dr) - dz * kappa).norm() / (p as f64).sqrt();

            if !primal.is_finite() || !dual.is_finite() {
                return Err(Error::NonFinite("LAD solver iterate"));
            }
            if primal < tol && dual < tol {
                converged = true;
                break;
            }

            if it % 10 == 0 {
                let obj = lad_objective(x, y, &s.z, lambda);
                if obj < best.1 {
                    best = (s.z.clone(), obj);
                }
                if self.opts.adaptive {
                    if primal > 10.0 * dual {
                        s.sigma *= 2.0;
                        s.u /= 2.0;
                        s.w /= 2.0;
                    } else if dual > 10.0 * primal {
                        s.sigma /= 2.0;
                        s.u *= 2.0;
                        s.w *= 2.0;
                    }
                }
            }
        }

        let final_obj = lad_objective(x, y, &s.z, lambda);
        let (mut beta, mut objective) = if converged || final_obj <= best.1 {
            (s.z.clone(), final_obj)
        } else {
            best
        };
        if self.opts.polish {
            if let Some((b, obj)) = polish_vertex(x, y, &beta, lambda) {
                if obj < objective {
                    beta = b;
                    objective = obj;
                }
            }
        }
        if zero_obj < objective {
            beta = zero;
            objective = zero_obj;
        }
        Ok(SolverReport {
            beta: beta.iter().copied().collect(),
            iterations,
            primal_residual: primal,
            dual_residual: dual,
            converged,
            objective,
        })
    }
}

/// The LAD-lasso optimum sits on a vertex: with support `A`, exactly `|A|`
/// residuals vanish. Takes the `|A|` smallest residuals of `beta` and solves
/// for the coefficients that zero them.
fn polish_vertex(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    lambda: f64,
) -> Option<(DVector<f64>, f64)> {
    let active: Vec<usize> = (0..beta.len()).filter(|&k| beta[k] != 0.0).collect();
    let a = active.len();
    if a == 0 || a > y.len() {
        return None;
    }
    let resid = y - x * beta;
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&i, &j| resid[i].abs().total_cmp(&resid[j].abs()));
    let rows = &order[..a];
    let sys = DMatrix::from_fn(a, a, |r, c| x[(rows[r], active[c])]);
    let rhs = DVector::from_fn(a, |r, _| y[rows[r]]);
    let sol = sys.lu().solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mut out = DVector::zeros(beta.len());
    for (c, &k) in active.iter().enumerate() {
        out[k] = sol[c];
    }
    let obj = lad_objective(x, y, &out, lambda);
    Some((out, obj))
}

/// One-shot solve with default step settings.
pub fn solve_lad_lasso(prob: &LadLassoProblem, tol: f64, max_iter: usize) -> Result<SolverReport> {
    let opts = LadOptions {
        tol,
        max_iter,
        ..LadOptions::default()
    };
    LadSolver::new(&prob.x, &prob.y, opts)?.solve(prob.lambda)
}

/// `k` log-spaced penalties from `2 * lambda_max` down to
/// `2e-3 * lambda_max`, where `lambda_max = |X^T sign(y)|_inf / n` is the
/// smallest penalty at which `b = 0` is optimal. At `lambda_max` itself the
/// optimum can be non-unique, hence the factor 2 at the head.
pub fn lambda_grid(x: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::invalid(format!("lambda grid needs k >= 2, got {k}")));
    }
    let n = y.len() as f64;
    let signs = y.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 });
    let lambda_max = x.tr_mul(&signs).amax() / n;
    if !(lambda_max > 0.0) {
        return Err(Error::invalid("degenerate data: X^T sign(y) vanishes"));
    }
    Ok(log_grid(2.0 * lambda_max, 1e-3, k))
}

/// `k` values from `head` down to `head * ratio`, evenly spaced in log scale.
pub fn log_grid(head: f64, ratio: f64, k: usize) -> Vec<f64> {
    let step = ratio.ln() / (k - 1) as f64;
    (0..k)
        .map(|i| {
            if i == 0 {
                head
            } else if i == k - 1 {
                head * ratio
            } else {
                head * (step * i as f64).exp()
            }
        })
        .collect()
}
