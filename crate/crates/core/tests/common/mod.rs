//! Reference solvers that share no code with the library paths they check.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Minimizes `(1/n)|y - X b|_1 + lambda |b|_1` by enumerating every vertex
/// of the hyperplane arrangement `{x_i^T b = y_i} U {b_k = 0}`. A convex
/// piecewise-linear function with a bounded minimizer set attains its
/// minimum at one of these vertices.
pub fn lad_vertex_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> (DVector<f64>, f64) {
    let (n, p) = x.shape();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .map(|i| (x.row(i).iter().copied().collect(), y[i]))
        .chain((0..p).map(|k| {
            let mut e = vec![0.0; p];
            e[k] = 1.0;
            (e, 0.0)
        }))
        .collect();
    let objective = |b: &DVector<f64>| (y - x * b).lp_norm(1) / n as f64 + lambda * b.lp_norm(1);
    let mut best = (DVector::zeros(p), objective(&DVector::zeros(p)));
    let mut combo: Vec<usize> = (0..p).collect();
    let total = rows.len();
    loop {
        let a = DMatrix::from_fn(p, p, |r, c| rows[combo[r]].0[c]);
        let rhs = DVector::from_fn(p, |r, _| rows[combo[r]].1);
        if let Some(lu) = Some(a.lu()) {
            if let Some(b) = lu.solve(&rhs) {
                if b.iter().all(|v| v.is_finite()) {
                    let f = objective(&b);
                    if f < best.1 {
                        best = (b, f);
                    }
                }
            }
        }
        // next combination
        let mut i = p;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if combo[i] < total - p + i {
                combo[i] += 1;
                for j in i + 1..p {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Plain cyclic coordinate descent on `(1/(2n))|y - X b|^2 + lambda |b|_1`,
/// recomputing residuals from scratch.
pub fn lasso_cd_oracle(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let (n, p) = x.shape();
    let nf = n as f64;
    let mut b = DVector::zeros(p);
    let mut r = y.clone();
    for _ in 0..200_000 {
        let mut change: f64 = 0.0;
        for k in 0..p {
            let col = x.column(k);
            let norm2 = col.norm_squared() / nf;
            let rho = col.dot(&r) / nf + norm2 * b[k];
            let new = if rho > lambda {
                (rho - lambda) / norm2
            } else if rho < -lambda {
                (rho + lambda) / norm2
            } else {
                0.0
            };
            let d = new - b[k];
            if d != 0.0 {
                r -= col * d;
                b[k] = new;
                change = change.max(d.abs());
            }
        }
        if change < 1e-14 {
            break;
        }
    }
    b
}

/// Cyclic Jacobi eigenvalue algorithm for a symmetric matrix.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut a = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Deterministic pseudo-random design for small oracle instances.
pub fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    DMatrix::from_fn(rows, cols, |_, _| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// Least-squares linear fit `y = a + b t`; returns `(slope, r_squared)`.
pub fn linear_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let sxx: f64 = t.iter().map(|a| (a - mt) * (a - mt)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    (slope, sxy * sxy / (sxx * syy))
}
