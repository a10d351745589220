//! Synthetic and real datasets partitioned across network nodes.

mod io;
mod outliers;
mod tabular;

pub use io::{read_dataset_dir, write_dataset_dir, Manifest};
pub use outliers::{inject_outliers, OutlierScenario, OUTLIER_RESPONSE};
pub use tabular::{load_csv, read_group_map, CsvOptions, LoadedCsv};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One node's local data. Rows of `x` are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub x_test: Option<DMatrix<f64>>,
    pub y_test: Option<DVector<f64>>,
}

impl NodeDataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        Self::with_test(x, y, None, None)
    }

    pub fn with_test(
        x: DMatrix<f64>,
        y: DVector<f64>,
        x_test: Option<DMatrix<f64>>,
        y_test: Option<DVector<f64>>,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::invalid(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        match (&x_test, &y_test) {
            (Some(xt), Some(yt)) => {
                if xt.nrows() != yt.len() || xt.ncols() != x.ncols() {
                    return Err(Error::invalid("test split shape does not match training data"));
                }
            }
            (None, None) => {}
            _ => return Err(Error::invalid("test split needs both X_test and y_test")),
        }
        let finite = x.iter().chain(y.iter()).all(|v| v.is_finite())
            && x_test.iter().flat_map(|m| m.iter()).all(|v| v.is_finite())
            && y_test.iter().flat_map(|v| v.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("node dataset"));
        }
        Ok(NodeDataset {
            x,
            y,
            x_test,
            y_test,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Data for every node, plus the ground truth when it is known.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDataset {
    pub nodes: Vec<NodeDataset>,
    pub beta_star: Option<DVector<f64>>,
    pub support: Option<Vec<usize>>,
}

impl NetworkDataset {
    pub fn new(nodes: Vec<NodeDataset>, beta_star: Option<DVector<f64>>) -> Result<Self> {
        let Some(first) = nodes.first() else {
            return Err(Error::invalid("network dataset needs at least one node"));
        };
        let p = first.p();
        if nodes.iter().any(|d| d.p() != p) {
            return Err(Error::invalid("all nodes must share the covariate dimension"));
        }
        if let Some(b) = &beta_star {
            if b.len() != p {
                return Err(Error::invalid(format!(
                    "beta_star has length {} but p = {p}",
                    b.len()
                )));
            }
        }
        let support = beta_star.as_ref().map(support_of);
        Ok(NetworkDataset {
            nodes,
            beta_star,
            support,
        })
    }

    pub fn m(&self) -> usize {
        self.nodes.len()
    }

    pub fn p(&self) -> usize {
        self.nodes[0].p()
    }

    /// Total training sample count across nodes.
    pub fn total_n(&self) -> usize {
        self.nodes.iter().map(NodeDataset::n).sum()
    }

    /// Stacks every node's training rows.
    pub fn pooled(&self) -> (DMatrix<f64>, DVector<f64>) {
        let total = self.total_n();
        let p = self.p();
        let mut x = DMatrix::zeros(total, p);
        let mut y = DVector::zeros(total);
        let mut row = 0;
        for d in &self.nodes {
            x.rows_mut(row, d.n()).copy_from(&d.x);
            y.rows_mut(row, d.n()).copy_from(&d.y);
            row += d.n();
        }
        (x, y)
    }
}

/// Indices of the nonzero entries.
pub fn support_of(beta: &DVector<f64>) -> Vec<usize> {
    beta.iter()
        .enumerate()
        .filter(|(_, &b)| b != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// `(1, 2, ..., s, 0, ..., 0)` of length `p`.
pub fn staircase_beta(p: usize, s: usize) -> DVector<f64> {
    DVector::from_fn(p, |i, _| if i < s { (i + 1) as f64 } else { 0.0 })
}

/// AR(1) covariance `sigma2 * rho^|i-j|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovSpec {
    pub sigma2: f64,
    pub rho: f64,
}

impl Default for CovSpec {
    fn default() -> Self {
        CovSpec {
            sigma2: 1.0,
            rho: 0.1,
        }
    }
}

impl CovSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::invalid(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::invalid(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        Ok(())
    }

    pub fn matrix(&self, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(p, p, |i, j| {
            self.sigma2 * self.rho.powi((i as i32 - j as i32).abs())
        })
    }
}

/// Noise distribution for the measurement error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseSpec {
    Normal { mean: f64, sd: f64 },
    Exponential { rate: f64 },
    Cauchy { loc: f64, scale: f64 },
    StudentT { df: f64 },
    /// Degenerate noise, always zero.
    Zero,
}

impl NoiseSpec {
    pub const STANDARD_NORMAL: NoiseSpec = NoiseSpec::Normal { mean: 0.0, sd: 1.0 };
    pub const EXP1: NoiseSpec = NoiseSpec::Exponential { rate: 1.0 };
    pub const CAUCHY: NoiseSpec = NoiseSpec::Cauchy {
        loc: 0.0,
        scale: 1.0,
    };
    pub const T1: NoiseSpec = NoiseSpec::StudentT { df: 1.0 };

    /// The four families mixed across nodes under noise heterogeneity.
    pub const HETEROGENEOUS: [NoiseSpec; 4] =
        [Self::STANDARD_NORMAL, Self::EXP1, Self::CAUCHY, Self::T1];

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseSpec::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            NoiseSpec::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            NoiseSpec::Cauchy { loc, scale } => loc.is_finite() && scale > 0.0 && scale.is_finite(),
            NoiseSpec::StudentT { df } => df > 0.0 && df.is_finite(),
            NoiseSpec::Zero => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("illegal noise parameters: {self:?}")))
        }
    }

    /// Draws one value.
    ///
    /// Cauchy uses the inverse CDF `loc + scale * tan(pi * (u - 1/2))`;
    /// Student t uses the ratio `Z / sqrt(V / df)` with `Z ~ N(0,1)` and
    /// `V ~ chi^2(df)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            NoiseSpec::Exponential { rate } => Exp::new(rate).expect("validated").sample(rng),
            NoiseSpec::Cauchy { loc, scale } => {
                // u in (0, 1) open so tan stays finite.
                let u: f64 = loop {
                    let u = rng.random::<f64>();
                    if u > 0.0 {
                        break u;
                    }
                };
                loc + scale * (std::f64::consts::PI * (u - 0.5)).tan()
            }
            NoiseSpec::StudentT { df } => {
                let z: f64 = StandardNormal.sample(rng);
                let v: f64 = ChiSquared::new(df).expect("validated").sample(rng);
                z / (v / df).sqrt()
            }
            NoiseSpec::Zero => 0.0,
        }
    }
}

/// How covariance parameters are assigned to nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CovMode {
    Homogeneous(CovSpec),
    /// Each node independently draws `sigma2` from {1, 3} and `rho` from
    /// {0.1, 0.3}, uniformly.
    PerNodeRandom,
}

/// How noise distributions are assigned to nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NoiseMode {
    Homogeneous { noise: NoiseSpec },
    /// Each node picks one of [`NoiseSpec::HETEROGENEOUS`] uniformly.
    PerNodeRandom,
}

pub const HETERO_SIGMA2: [f64; 2] = [1.0, 3.0];
pub const HETERO_RHO: [f64; 2] = [0.1, 0.3];

/// Independent RNG stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `n` rows i.i.d. from `N(0, Sigma)` via the Cholesky factor of Sigma.
pub fn gen_covariates(n: usize, p: usize, cov: &CovSpec, seed: u64) -> Result<DMatrix<f64>> {
    gen_covariates_with(n, p, cov, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gen_covariates_with<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    cov: &CovSpec,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if n == 0 || p == 0 {
        return Err(Error::invalid("covariate matrix needs n, p >= 1"));
    }
    cov.validate()?;
    let chol = cov
        .matrix(p)
        .cholesky()
        .ok_or_else(|| Error::Factorization(format!("{cov:?} is not positive definite")))?;
    let l = chol.l();
    // Z is n x p standard normal; rows of Z * L^T are N(0, L L^T).
    let z = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    Ok(z * l.transpose())
}

pub fn sample_noise(spec: &NoiseSpec, n: usize, seed: u64) -> Result<DVector<f64>> {
    sample_noise_with(spec, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_noise_with<R: Rng + ?Sized>(
    spec: &NoiseSpec,
    n: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if n == 0 {
        return Err(Error::invalid("noise sample needs n >= 1"));
    }
    spec.validate()?;
    Ok(DVector::from_fn(n, |_, _| spec.sample(rng)))
}

/// Per-node generation settings actually used, for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeDraw {
    pub cov: CovSpec,
    pub noise: NoiseSpec,
}

/// Synthetic linear-model data `y = X beta* + eps` on `m` nodes of `n`
/// samples each. Node `j` uses RNG stream `j` under `seed`.
pub fn gen_network_data(
    m: usize,
    n: usize,
    p: usize,
    beta_star: &DVector<f64>,
    cov_mode: &CovMode,
    noise_mode: &NoiseMode,
    seed: u64,
) -> Result<NetworkDataset> {
    gen_network_data_with_draws(m, n, p, beta_star, cov_mode, noise_mode, seed).map(|(d, _)| d)
}

pub fn gen_network_data_with_draws(
    m: usize,
    n: usize,
    p: usize,
    beta_star: &DVector<f64>,
    cov_mode: &CovMode,
    noise_mode: &NoiseMode,
    seed: u64,
) -> Result<(NetworkDataset, Vec<NodeDraw>)> {
    if m == 0 {
        return Err(Error::invalid("need at least one node"));
    }
    if beta_star.len() != p {
        return Err(Error::invalid(format!(
            "beta_star has length {} but p = {p}",
            beta_star.len()
        )));
    }
    let mut nodes = Vec::with_capacity(m);
    let mut draws = Vec::with_capacity(m);
    for j in 0..m {
        let mut rng = stream_rng(seed, j as u64);
        let cov = match cov_mode {
            CovMode::Homogeneous(c) => *c,
            CovMode::PerNodeRandom => CovSpec {
                sigma2: HETERO_SIGMA2[rng.random_range(0..2)],
                rho: HETERO_RHO[rng.random_range(0..2)],
            },
        };
        let noise = match noise_mode {
            NoiseMode::Homogeneous { noise } => *noise,
            NoiseMode::PerNodeRandom => NoiseSpec::HETEROGENEOUS[rng.random_range(0..4)],
        };
        let x = gen_covariates_with(n, p, &cov, &mut rng)?;
        let eps = sample_noise_with(&noise, n, &mut rng)?;
        let y = &x * beta_star + eps;
        nodes.push(NodeDataset::new(x, y)?);
        draws.push(NodeDraw { cov, noise });
    }
    Ok((NetworkDataset::new(nodes, Some(beta_star.clone()))?, draws))
}

/// Pools all rows and redistributes them to `m` nodes by a seeded shuffle.
/// Node sizes differ by at most one.
pub fn random_split(data: &NetworkDataset, m: usize, seed: u64) -> Result<NetworkDataset> {
    use rand::seq::SliceRandom;
    let (x, y) = data.pooled();
    let total = y.len();
    if m == 0 || m > total {
        return Err(Error::invalid(format!("cannot split {total} rows into {m} nodes")));
    }
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut nodes = Vec::with_capacity(m);
    let mut start = 0;
    for j in 0..m {
        let len = total / m + usize::from(j < total % m);
        let rows = &idx[start..start + len];
        nodes.push(NodeDataset::new(x.select_rows(rows), y.select_rows(rows))?);
        start += len;
    }
    NetworkDataset::new(nodes, data.beta_star.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn median(v: &mut [f64]) -> f64 {
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    fn quantile(sorted: &[f64], q: f64) -> f64 {
        sorted[((sorted.len() - 1) as f64 * q).round() as usize]
    }

    #[test]
    fn univariate_variance() {
        let n = 20_000;
        let x = gen_covariates(n, 1, &CovSpec { sigma2: 1.0, rho: 0.0 }, 3).unwrap();
        let var = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn independent_columns() {
        let n = 20_000;
        let x = gen_covariates(n, 3, &CovSpec { sigma2: 2.0, rho: 0.0 }, 4).unwrap();
        let c = x.transpose() * &x / n as f64;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let corr = c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt();
                    assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
                }
            }
        }
    }

    #[test]
    fn ar1_lag_one_covariance() {
        let n = 100_000;
        let x = gen_covariates(n, 100, &CovSpec::default(), 5).unwrap();
        let c12 = x.column(0).dot(&x.column(1)) / n as f64;
        assert!((c12 - 0.1).abs() < 0.02, "{c12}");
    }

    #[test]
    fn invalid_covariance_rejected() {
        assert!(gen_covariates(5, 3, &CovSpec { sigma2: 1.0, rho: 1.0 }, 0).is_err());
        assert!(gen_covariates(5, 3, &CovSpec { sigma2: -1.0, rho: 0.1 }, 0).is_err());
        assert!(gen_covariates(0, 3, &CovSpec::default(), 0).is_err());
    }

    #[test]
    fn noise_location_and_scale() {
        let n = 40_000;
        let tol = 3.0 / (n as f64).sqrt();
        let mut v: Vec<f64> = sample_noise(&NoiseSpec::STANDARD_NORMAL, n, 1).unwrap().as_slice().to_vec();
        assert!(median(&mut v).abs() < tol);
        let e = sample_noise(&NoiseSpec::EXP1, n, 2).unwrap();
        assert!((e.mean() - 1.0).abs() < tol);
        let mut c: Vec<f64> = sample_noise(&NoiseSpec::CAUCHY, n, 3).unwrap().as_slice().to_vec();
        assert!(median(&mut c).abs() < tol);
        let iqr = quantile(&c, 0.75) - quantile(&c, 0.25);
        assert!((iqr - 2.0).abs() < 0.2, "iqr {iqr}");
        // t(1) is standard Cauchy.
        let mut t: Vec<f64> = sample_noise(&NoiseSpec::T1, n, 4).unwrap().as_slice().to_vec();
        t.sort_by(|a, b| a.total_cmp(b));
        let iqr = quantile(&t, 0.75) - quantile(&t, 0.25);
        assert!((iqr - 2.0).abs() < 0.2, "iqr {iqr}");
        assert!(sample_noise(&NoiseSpec::StudentT { df: 0.0 }, 3, 0).is_err());
    }

    #[test]
    fn noiseless_data_is_exact() {
        let beta = staircase_beta(20, 5);
        let mode = NoiseMode::Homogeneous {
            noise: NoiseSpec::Zero,
        };
        let d = gen_network_data(3, 15, 20, &beta, &CovMode::Homogeneous(CovSpec::default()), &mode, 9)
            .unwrap();
        for node in &d.nodes {
            assert_eq!(node.y, &node.x * &beta);
        }
    }

    #[test]
    fn heterogeneous_draws_use_the_two_point_sets() {
        let beta = staircase_beta(10, 3);
        let (_, draws) = gen_network_data_with_draws(
            40,
            5,
            10,
            &beta,
            &CovMode::PerNodeRandom,
            &NoiseMode::PerNodeRandom,
            21,
        )
        .unwrap();
        for d in &draws {
            assert!(HETERO_SIGMA2.contains(&d.cov.sigma2));
            assert!(HETERO_RHO.contains(&d.cov.rho));
            assert!(NoiseSpec::HETEROGENEOUS.contains(&d.noise));
        }
        let distinct_noise = NoiseSpec::HETEROGENEOUS
            .iter()
            .filter(|s| draws.iter().any(|d| d.noise == **s))
            .count();
        assert_eq!(distinct_noise, 4);
        assert!(draws.iter().any(|d| d.cov.sigma2 == 3.0));
        assert!(draws.iter().any(|d| d.cov.rho == 0.3));
    }

    #[test]
    fn staircase_support() {
        let beta = staircase_beta(100, 10);
        let d = NetworkDataset::new(
            vec![NodeDataset::new(DMatrix::zeros(1, 100), DVector::zeros(1)).unwrap()],
            Some(beta),
        )
        .unwrap();
        assert_eq!(d.support.unwrap(), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn generation_is_deterministic() {
        let beta = staircase_beta(12, 3);
        let gen = |seed| {
            gen_network_data(
                4,
                10,
                12,
                &beta,
                &CovMode::PerNodeRandom,
                &NoiseMode::PerNodeRandom,
                seed,
            )
            .unwrap()
        };
        assert_eq!(gen(5), gen(5));
        assert_ne!(gen(5), gen(6));
    }

    #[test]
    fn homogeneous_normal_residual_mean() {
        let beta = staircase_beta(8, 2);
        let sd = 2.0;
        let (m, n) = (6, 500);
        let mode = NoiseMode::Homogeneous {
            noise: NoiseSpec::Normal { mean: 0.0, sd },
        };
        let d = gen_network_data(m, n, 8, &beta, &CovMode::Homogeneous(CovSpec::default()), &mode, 2)
            .unwrap();
        let total: f64 = d.nodes.iter().map(|nd| (&nd.y - &nd.x * &beta).sum()).sum();
        let mean = total / (m * n) as f64;
        assert!(mean.abs() < 4.0 * sd / ((m * n) as f64).sqrt());
    }

    #[test]
    fn node_dataset_validation() {
        assert!(NodeDataset::new(DMatrix::zeros(3, 2), DVector::zeros(2)).is_err());
        let mut x = DMatrix::zeros(2, 2);
        x[(0, 0)] = f64::NAN;
        assert!(matches!(
            NodeDataset::new(x, DVector::zeros(2)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn random_split_preserves_rows() {
        let beta = staircase_beta(4, 2);
        let d = gen_network_data(
            1,
            103,
            4,
            &beta,
            &CovMode::Homogeneous(CovSpec::default()),
            &NoiseMode::Homogeneous {
                noise: NoiseSpec::STANDARD_NORMAL,
            },
            0,
        )
        .unwrap();
        let split = random_split(&d, 5, 1).unwrap();
        assert_eq!(split.m(), 5);
        assert_eq!(split.total_n(), 103);
        assert!(split.nodes.iter().all(|n| n.n() == 20 || n.n() == 21));
        let orig: f64 = d.nodes[0].y.iter().sum();
        let got: f64 = split.nodes.iter().map(|n| n.y.sum()).sum();
        assert!((orig - got).abs() < 1e-9);
    }
}
