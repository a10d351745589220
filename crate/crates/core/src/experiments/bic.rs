//! Penalty selection by the Bayesian information criterion
//! `N log(mean loss) + df log N`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lad::{lambda_grid, LadOptions, LadSolver};
use crate::lasso::GramLasso;

/// One fitted grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFit {
    pub beta: DVector<f64>,
    /// Mean loss over the `n` observations.
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicScore {
    pub lambda: f64,
    pub df: usize,
    pub mean_loss: f64,
    /// `None` if the fit failed.
    pub bic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicSelection {
    pub lambda: f64,
    pub index: usize,
    pub beta: DVector<f64>,
    pub scores: Vec<BicScore>,
}

/// `n log(mean_loss) + df log n`. A perfect fit scores `-inf` unless it
/// uses more parameters than observations.
pub fn bic_value(n: usize, mean_loss: f64, df: usize) -> f64 {
    let nf = n as f64;
    nf * mean_loss.max(f64::MIN_POSITIVE).ln() + df as f64 * nf.ln()
}

/// Fits every grid value in order and returns the BIC minimizer. Ties go to
/// the larger penalty; `grid` is expected in decreasing order but any order
/// works.
pub fn bic_select(
    grid: &[f64],
    n: usize,
    zero_tol: f64,
    mut fit: impl FnMut(f64) -> Result<GridFit>,
) -> Result<BicSelection> {
    if grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64, DVector<f64>)> = None;
    for (i, &lambda) in grid.iter().enumerate() {
        match fit(lambda) {
            Ok(g) => {
                let df = g.beta.iter().filter(|b| b.abs() > zero_tol).count();
                let bic = bic_value(n, g.mean_loss, df);
                scores.push(BicScore {
                    lambda,
                    df,
                    mean_loss: g.mean_loss,
                    bic: Some(bic),
                });
                let better = match &best {
                    None => true,
                    Some((bi, bb, _)) => bic < *bb || (bic == *bb && lambda > grid[*bi]),
                };
                if better && !bic.is_nan() {
                    best = Some((i, bic, g.beta));
                }
            }
            Err(e) => {
                warn!("fit at lambda {lambda} failed: {e}");
                scores.push(BicScore {
                    lambda,
                    df: 0,
                    mean_loss: f64::NAN,
                    bic: None,
                });
            }
        }
    }
    let (index, _, beta) = best.ok_or(Error::AllFitsFailed)?;
    Ok(BicSelection {
        lambda: grid[index],
        index,
        beta,
        scores,
    })
}

/// Least-squares lasso on the stacked blocks, squared loss.
pub fn bic_lasso(gram: &GramLasso, n: usize, grid: &[f64], zero_tol: f64) -> Result<BicSelection> {
    let mut warm = DVector::zeros(gram.p());
    bic_select(grid, n, zero_tol, |lambda| {
        gram.fit_from(lambda, &mut warm);
        Ok(GridFit {
            beta: warm.clone(),
            mean_loss: gram.mean_squared_residual(&warm),
        })
    })
}

/// LAD lasso on one data set, absolute loss, warm-started along the default
/// grid of size `k`.
pub fn bic_lad(x: &DMatrix<f64>, y: &DVector<f64>, k: usize, opts: LadOptions, zero_tol: f64) -> Result<BicSelection> {
    let grid = lambda_grid(x, y, k)?;
    let solver = LadSolver::new(x, y, opts)?;
    let mut state = solver.cold_state();
    let n = y.len();
    bic_select(&grid, n, zero_tol, |lambda| {
        let rep = solver.solve_from(lambda, &mut state)?;
        let beta = rep.beta_vector();
        let mean_loss = (y - x * &beta).lp_norm(1) / n as f64;
        Ok(GridFit { beta, mean_loss })
    })
}
