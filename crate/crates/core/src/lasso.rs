//! Centralized lasso `min (1/(2n)) |y - X b|^2 + lambda |b|_1` by cyclic
//! coordinate descent on the Gram matrix.
//!
//! Used for penalty selection on pooled data, for the least-squares
//! initializer of the sensitivity study, and as a reference solution.

use nalgebra::{DMatrix, DVector};

use crate::lad::{log_grid, soft_threshold_scalar};

/// Sufficient statistics `X^T X / n`, `X^T y / n`, `y^T y / n`.
#[derive(Debug, Clone)]
pub struct GramLasso {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl GramLasso {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let n = y.len() as f64;
        GramLasso {
            gram: x.tr_mul(x) / n,
            xty: x.tr_mul(y) / n,
            yty: y.norm_squared() / n,
            tol: 1e-10,
            max_sweeps: 100_000,
        }
    }

    /// Builds the statistics for several blocks stacked on top of each
    /// other without materializing the stack.
    pub fn from_blocks<'a>(blocks: impl IntoIterator<Item = (&'a DMatrix<f64>, &'a DVector<f64>)>) -> Self {
        let mut gram: Option<DMatrix<f64>> = None;
        let mut xty: Option<DVector<f64>> = None;
        let mut yty = 0.0;
        let mut n = 0usize;
        for (x, y) in blocks {
            let g = x.tr_mul(x);
            let c = x.tr_mul(y);
            gram = Some(match gram {
                Some(acc) => acc + g,
                None => g,
            });
            xty = Some(match xty {
                Some(acc) => acc + c,
                None => c,
            });
            yty += y.norm_squared();
            n += y.len();
        }
        let n = n as f64;
        GramLasso {
            gram: gram.expect("at least one block") / n,
            xty: xty.expect("at least one block") / n,
            yty: yty / n,
            tol: 1e-10,
            max_sweeps: 100_000,
        }
    }

    /// From precomputed `X^T X / n`, `X^T y / n`, `y^T y / n`.
    pub fn from_stats(gram: DMatrix<f64>, xty: DVector<f64>, yty: f64) -> Self {
        assert_eq!(gram.nrows(), xty.len(), "Gram and X^T y sizes differ");
        GramLasso {
            gram,
            xty,
            yty,
            tol: 1e-10,
            max_sweeps: 100_000,
        }
    }

    pub fn p(&self) -> usize {
        self.xty.len()
    }

    /// Smallest penalty with an all-zero solution.
    pub fn lambda_max(&self) -> f64 {
        self.xty.amax()
    }

    /// `k` log-spaced penalties from `lambda_max` down to `ratio * lambda_max`.
    pub fn lambda_grid(&self, k: usize, ratio: f64) -> Vec<f64> {
        log_grid(self.lambda_max().max(f64::MIN_POSITIVE), ratio, k.max(2))
    }

    /// Mean squared residual `(1/n) |y - X b|^2`.
    pub fn mean_squared_residual(&self, beta: &DVector<f64>) -> f64 {
        (self.yty - 2.0 * self.xty.dot(beta) + beta.dot(&(&self.gram * beta))).max(0.0)
    }

    pub fn objective(&self, beta: &DVector<f64>, lambda: f64) -> f64 {
        0.5 * self.mean_squared_residual(beta) + lambda * beta.lp_norm(1)
    }

    /// Coordinate descent from `beta` (warm start). Returns the sweep count.
    pub fn fit_from(&self, lambda: f64, beta: &mut DVector<f64>) -> usize {
        let p = self.p();
        // grad = G b - c, maintained incrementally.
        let mut gb = &self.gram * &*beta;
        for sweep in 1..=self.max_sweeps {
            let mut max_delta: f64 = 0.0;
            for k in 0..p {
                let gkk = self.gram[(k, k)];
                if gkk <= 0.0 {
                    beta[k] = 0.0;
                    continue;
                }
                let old = beta[k];
                let partial = self.xty[k] - (gb[k] - gkk * old);
                let new = soft_threshold_scalar(partial, lambda) / gkk;
                let delta = new - old;
                if delta != 0.0 {
                    beta[k] = new;
                    gb.axpy(delta, &self.gram.column(k), 1.0);
                    max_delta = max_delta.max(delta.abs() * gkk.sqrt());
                }
            }
            if max_delta < self.tol {
                return sweep;
            }
        }
        self.max_sweeps
    }

    pub fn fit(&self, lambda: f64) -> DVector<f64> {
        let mut beta = DVector::zeros(self.p());
        self.fit_from(lambda, &mut beta);
        beta
    }

    /// Solutions along `grid`, each warm-started from the previous one.
    pub fn path(&self, grid: &[f64]) -> Vec<DVector<f64>> {
        let mut beta = DVector::zeros(self.p());
        grid.iter()
            .map(|&lambda| {
                self.fit_from(lambda, &mut beta);
                beta.clone()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(50, 6, |i, j| (((i + 1) * (j + 2)) as f64 * 0.37).sin());
        let y = DVector::from_fn(50, |i, _| 3.0 * x[(i, 0)] - 2.0 * x[(i, 3)] + 0.1 * ((i % 5) as f64 - 2.0));
        (x, y)
    }

    #[test]
    fn kkt_conditions_hold() {
        let (x, y) = instance();
        let g = GramLasso::new(&x, &y);
        for lambda in [0.0, 0.01, 0.2] {
            let b = g.fit(lambda);
            let grad = x.tr_mul(&(&x * &b - &y)) / 50.0;
            for k in 0..6 {
                if b[k] != 0.0 {
                    assert!((grad[k] + lambda * b[k].signum()).abs() < 1e-8);
                } else {
                    assert!(grad[k].abs() <= lambda + 1e-8);
                }
            }
        }
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let (x, y) = instance();
        let g = GramLasso::new(&x, &y);
        assert!(g.fit(g.lambda_max()).iter().all(|&b| b == 0.0));
        assert!(g.fit(0.9 * g.lambda_max()).iter().any(|&b| b != 0.0));
    }

    #[test]
    fn blocks_match_stacked() {
        let (x, y) = instance();
        let a = GramLasso::new(&x, &y);
        let (x1, x2) = (x.rows(0, 20).into_owned(), x.rows(20, 30).into_owned());
        let (y1, y2) = (y.rows(0, 20).into_owned(), y.rows(20, 30).into_owned());
        let b = GramLasso::from_blocks([(&x1, &y1), (&x2, &y2)]);
        assert!((a.gram.clone() - b.gram.clone()).amax() < 1e-12);
        let beta = DVector::from_fn(6, |i, _| i as f64 - 2.0);
        let direct = (&y - &x * &beta).norm_squared() / 50.0;
        assert!((b.mean_squared_residual(&beta) - direct).abs() < 1e-9);
    }

    #[test]
    fn path_is_warm_started_and_sparse_at_head() {
        let (x, y) = instance();
        let g = GramLasso::new(&x, &y);
        let grid = g.lambda_grid(8, 1e-3);
        let path = g.path(&grid);
        assert!(path[0].iter().all(|&b| b == 0.0));
        let cold = g.fit(grid[5]);
        assert!((&path[5] - cold).amax() < 1e-8);
    }
}
