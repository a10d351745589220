use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default absolute threshold below which a coefficient counts as zero.
pub const ZERO_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportScores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Support recovery of `beta_hat` against `beta_star`.
pub fn support_metrics(beta_hat: &DVector<f64>, beta_star: &DVector<f64>, zero_tol: f64) -> SupportScores {
    assert_eq!(beta_hat.len(), beta_star.len(), "coefficient lengths differ");
    let est = |i: usize| beta_hat[i].abs() > zero_tol;
    let truth = |i: usize| beta_star[i] != 0.0;
    let p = beta_hat.len();
    let hits = (0..p).filter(|&i| est(i) && truth(i)).count() as f64;
    let n_est = (0..p).filter(|&i| est(i)).count() as f64;
    let n_true = (0..p).filter(|&i| truth(i)).count() as f64;
    let recall = if n_true == 0.0 { 1.0 } else { hits / n_true };
    let precision = match (n_est == 0.0, n_true == 0.0) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => hits / n_est,
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    SupportScores { recall, precision, f1 }
}

/// Support scores averaged over the rows of a per-node estimate.
pub fn mean_support_metrics(per_node: &DMatrix<f64>, beta_star: &DVector<f64>, zero_tol: f64) -> SupportScores {
    let m = per_node.nrows() as f64;
    let mut acc = SupportScores { recall: 0.0, precision: 0.0, f1: 0.0 };
    for row in per_node.row_iter() {
        let s = support_metrics(&row.transpose(), beta_star, zero_tol);
        acc.recall += s.recall / m;
        acc.precision += s.precision / m;
        acc.f1 += s.f1 / m;
    }
    acc
}

/// `sum_j |b_j - b*|_2^2` over the rows of `per_node_beta`.
pub fn l2_error(per_node_beta: &DMatrix<f64>, beta_star: &DVector<f64>) -> f64 {
    assert_eq!(per_node_beta.ncols(), beta_star.len(), "coefficient lengths differ");
    per_node_beta
        .row_iter()
        .map(|r| (r.transpose() - beta_star).norm_squared())
        .sum()
}

/// `(rmse, mae)` of `y_test - X_test b`.
pub fn prediction_metrics(beta: &DVector<f64>, x_test: &DMatrix<f64>, y_test: &DVector<f64>) -> (f64, f64) {
    assert!(!y_test.is_empty(), "empty test set");
    let r = y_test - x_test * beta;
    let n = r.len() as f64;
    ((r.norm_squared() / n).sqrt(), r.lp_norm(1) / n)
}
