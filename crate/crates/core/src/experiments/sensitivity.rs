//! Dependence of the surrogate method on its starting point, measured after
//! a single outer iteration.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::bic::bic_lasso;
use super::config::{repetition_seeds, ExperimentConfig};
use super::metrics::l2_error;
use super::runner::repetition_data;
use crate::datagen::{stream_rng, NetworkDataset};
use crate::error::{Error, Result};
use crate::lasso::GramLasso;
use crate::surrogate::{local_lad_fits, run_outer_loop_from, Biweight, LambdaRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitMode {
    /// Local least-squares lasso, BIC penalty.
    LassoL2,
    /// Local LAD lasso, BIC penalty (the default initializer).
    LassoMedian,
    /// `beta*` plus i.i.d. `N(0, sd^2)` perturbations.
    TruthPlusNoise { sd: f64 },
}

impl InitMode {
    /// The four starting points compared by default.
    pub const STANDARD: [InitMode; 4] = [
        InitMode::LassoL2,
        InitMode::LassoMedian,
        InitMode::TruthPlusNoise { sd: 0.1 },
        InitMode::TruthPlusNoise { sd: 0.5 },
    ];

    pub fn label(&self) -> String {
        match self {
            InitMode::LassoL2 => "lasso_l2".into(),
            InitMode::LassoMedian => "lasso_median".into(),
            InitMode::TruthPlusNoise { sd } => format!("truth_noise_{sd}"),
        }
    }
}

pub fn initial_estimate(data: &NetworkDataset, mode: InitMode, cfg: &ExperimentConfig, seed: u64) -> Result<DMatrix<f64>> {
    let (m, p) = (data.m(), data.p());
    let grid_size = match cfg.surrogate.init_lambda {
        LambdaRule::Bic { grid_size } => grid_size,
        LambdaRule::Fixed { .. } => 20,
    };
    match mode {
        InitMode::LassoMedian => Ok(local_lad_fits(data, &cfg.surrogate.init_lambda, cfg.surrogate.lad, cfg.surrogate.zero_tol).beta),
        InitMode::LassoL2 => {
            let mut out = DMatrix::zeros(m, p);
            for (j, node) in data.nodes.iter().enumerate() {
                let gram = GramLasso::new(&node.x, &node.y);
                let beta = match cfg.surrogate.init_lambda {
                    LambdaRule::Fixed { value } => gram.fit(value),
                    LambdaRule::Bic { .. } => {
                        let grid = gram.lambda_grid(grid_size, cfg.surrogate.lasso_grid_ratio);
                        bic_lasso(&gram, node.n(), &grid, cfg.surrogate.zero_tol)?.beta
                    }
                };
                out.set_row(j, &beta.transpose());
            }
            Ok(out)
        }
        InitMode::TruthPlusNoise { sd } => {
            let b = data
                .beta_star
                .as_ref()
                .ok_or_else(|| Error::invalid("truth-based initialization needs beta*"))?;
            let normal = Normal::new(0.0, sd).map_err(|e| Error::invalid(e.to_string()))?;
            let mut rng = stream_rng(seed, 0);
            Ok(DMatrix::from_fn(m, p, |_, k| b[k] + normal.sample(&mut rng)))
        }
    }
}

/// One row per `(repetition, mode)`: l2 error of the start and after one
/// outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub repetition: usize,
    pub mode: String,
    pub l2_initial: f64,
    pub l2_after: f64,
}

pub fn run_init_sensitivity(cfg: &ExperimentConfig, modes: &[InitMode]) -> Result<Vec<SensitivityRow>> {
    cfg.validate()?;
    let mut sur = cfg.surrogate.clone();
    sur.outer_iterations = 1;
    let mut rows = Vec::new();
    for rep in 0..cfg.repetitions {
        let (data, topo) = repetition_data(cfg, rep)?;
        let b = data.beta_star.clone().ok_or_else(|| Error::invalid("sensitivity needs synthetic data"))?;
        let noise_seed = repetition_seeds(cfg.seed, rep).2 ^ 0x5eed;
        for &mode in modes {
            let init = initial_estimate(&data, mode, cfg, noise_seed)?;
            let l2_initial = l2_error(&init, &b);
            let out = run_outer_loop_from(&data, &topo, &sur, init, &Biweight)?;
            rows.push(SensitivityRow {
                repetition: rep,
                mode: mode.label(),
                l2_initial,
                l2_after: l2_error(&out.state.beta_hat, &b),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::runner::tests_support::tiny;

    #[test]
    fn four_modes_one_outer_iteration() {
        let cfg = ExperimentConfig {
            repetitions: 1,
            ..tiny()
        };
        let rows = run_init_sensitivity(&cfg, &InitMode::STANDARD).unwrap();
        assert_eq!(rows.len(), 4);
        let labels: Vec<_> = rows.iter().map(|r| r.mode.as_str()).collect();
        assert_eq!(labels, ["lasso_l2", "lasso_median", "truth_noise_0.1", "truth_noise_0.5"]);
        for r in &rows {
            assert!(r.l2_after.is_finite());
        }
        // The small perturbation starts closer than the large one.
        assert!(rows[2].l2_initial < rows[3].l2_initial);
    }
}
