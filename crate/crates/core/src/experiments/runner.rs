use log::{info, warn};
use nalgebra::DVector;

use super::config::{repetition_seeds, ExperimentConfig};
use super::metrics::{l2_error, mean_support_metrics};
use super::report::{ExperimentReport, Failure, MetricRow, Timing, TraceRow};
use crate::baselines::{avg_mr, d_subgd, delr, local_mr, pooled_mr, DelrConfig, MethodId, MethodResult, SubgradientConfig};
use crate::datagen::{gen_network_data, inject_outliers, NetworkDataset};
use crate::error::{Error, Result};
use crate::netsim::Topology;
use crate::surrogate::{run_outer_loop_from, Biweight};

/// Everything one repetition produced.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub results: Vec<MethodResult>,
    pub failures: Vec<(MethodId, String)>,
    /// deSMR network l2 error after each outer iteration.
    pub desmr_trace: Vec<f64>,
}

impl RunOutput {
    pub fn get(&self, method: MethodId) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }
}

fn wants(cfg: &ExperimentConfig, m: MethodId) -> bool {
    cfg.methods.contains(&m)
}

/// Runs every configured method on one data set. Methods share the local
/// LAD fits (deSMR initializer, Local MR, Avg. MR, D-subGD start) and the
/// pooled LAD fit (Pooled MR, D-subGD penalty).
pub fn run_methods(cfg: &ExperimentConfig, data: &NetworkDataset, topo: &Topology) -> RunOutput {
    let mut out = RunOutput::default();
    let sur = &cfg.surrogate;
    let need_local = [MethodId::Desmr, MethodId::LocalMr, MethodId::AvgMr, MethodId::DSubgd]
        .iter()
        .any(|&m| wants(cfg, m));
    let need_pooled = wants(cfg, MethodId::PooledMr) || wants(cfg, MethodId::DSubgd);

    let local = if need_local {
        match local_mr(data, &sur.init_lambda, sur.lad, sur.zero_tol) {
            Ok(r) => Some(r),
            Err(e) => {
                out.failures.push((MethodId::LocalMr, e.to_string()));
                None
            }
        }
    } else {
        None
    };
    let pooled = if need_pooled {
        match pooled_mr(data, &cfg.baselines.pooled_lambda, sur.lad, sur.zero_tol) {
            Ok(r) => Some(r),
            Err(e) => {
                out.failures.push((MethodId::PooledMr, e.to_string()));
                None
            }
        }
    } else {
        None
    };

    for &method in &cfg.methods {
        let res: Result<MethodResult> = match method {
            MethodId::LocalMr => local.clone().ok_or(Error::AllFitsFailed),
            MethodId::AvgMr => local.as_ref().map(avg_mr).ok_or(Error::AllFitsFailed),
            MethodId::PooledMr => pooled.clone().ok_or(Error::AllFitsFailed),
            MethodId::Desmr => match &local {
                None => Err(Error::AllFitsFailed),
                Some(init) => {
                    let started = std::time::Instant::now();
                    run_outer_loop_from(data, topo, sur, init.per_node_beta.clone(), &Biweight).map(|o| {
                        if data.beta_star.is_some() {
                            out.desmr_trace = o.state.l2_by_iteration();
                        }
                        MethodResult {
                            method: MethodId::Desmr,
                            per_node_beta: o.state.beta_hat,
                            wall_time: started.elapsed().as_secs_f64() + init.wall_time,
                            iterations: sur.outer_iterations * sur.inner_rounds,
                            lambdas: o.state.trace.iter().filter(|r| r.v > 0 && r.node == 1).map(|r| r.lambda_selected).collect(),
                            failed_nodes: init.failed_nodes.clone(),
                            trace: Vec::new(),
                        }
                    })
                }
            },
            MethodId::DSubgd => match (&local, &pooled) {
                (Some(init), Some(pool)) => {
                    let sg = SubgradientConfig {
                        rounds: cfg.baseline_rounds(),
                        eta0: cfg.baselines.subgradient_eta0,
                        lambda: pool.lambdas[0],
                    };
                    d_subgd(data, topo, &init.per_node_beta, &sg)
                }
                _ => Err(Error::AllFitsFailed),
            },
            MethodId::Delr => {
                let dc = DelrConfig {
                    rounds: cfg.baseline_rounds(),
                    tau: sur.tau,
                    rho_margin: sur.rho_margin,
                    lambda: cfg.baselines.delr_lambda.unwrap_or(sur.lambda),
                    lasso_grid_ratio: sur.lasso_grid_ratio,
                    bic_sample_size: sur.bic_sample_size,
                    zero_tol: sur.zero_tol,
                    form: sur.form,
                };
                delr(data, topo, &dc)
            }
        };
        match res {
            Ok(r) => out.results.push(r),
            Err(e) => {
                warn!("{method} failed: {e}");
                out.failures.push((method, e.to_string()));
            }
        }
    }
    out
}

/// Metric rows for one method: l2 error and support scores when the truth
/// is known, prediction errors when test splits exist.
pub fn method_metrics(res: &MethodResult, data: &NetworkDataset, zero_tol: f64) -> Vec<(String, f64)> {
    let mut rows = Vec::new();
    let beta = &res.per_node_beta;
    if let Some(b) = &data.beta_star {
        // Only nodes that carry data from the model under study count.
        let rows_used = beta.rows(0, beta.nrows().min(data.m()));
        let est = rows_used.into_owned();
        rows.push(("l2_error".to_string(), l2_error(&est, b)));
        let s = mean_support_metrics(&est, b, zero_tol);
        rows.push(("recall".to_string(), s.recall));
        rows.push(("precision".to_string(), s.precision));
        rows.push(("f1".to_string(), s.f1));
    }
    if let Some((rmse, mae)) = pooled_prediction(res, data) {
        rows.push(("rmse".to_string(), rmse));
        rows.push(("mae".to_string(), mae));
    }
    rows
}

/// RMSE and MAE over the union of node test sets, each node predicted by
/// its own estimate.
pub fn pooled_prediction(res: &MethodResult, data: &NetworkDataset) -> Option<(f64, f64)> {
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut count = 0usize;
    for (j, node) in data.nodes.iter().enumerate() {
        if let (Some(x), Some(y)) = (&node.x_test, &node.y_test) {
            if j >= res.per_node_beta.nrows() {
                continue;
            }
            let b: DVector<f64> = res.node_beta(j);
            let r = y - x * b;
            sq += r.norm_squared();
            abs += r.lp_norm(1);
            count += r.len();
        }
    }
    (count > 0).then(|| ((sq / count as f64).sqrt(), abs / count as f64))
}

/// Generates repetition `rep`'s data and topology.
pub fn repetition_data(cfg: &ExperimentConfig, rep: usize) -> Result<(NetworkDataset, Topology)> {
    let (data_seed, topo_seed, outlier_seed) = repetition_seeds(cfg.seed, rep);
    let d = &cfg.data;
    let data = gen_network_data(d.m, d.n, d.p, &cfg.beta_star(), &d.cov, &d.noise, data_seed)?;
    let topo = cfg.topology.build(d.m, topo_seed)?;
    match &cfg.outliers {
        Some(sc) => inject_outliers(&data, &topo, sc, outlier_seed),
        None => Ok((data, topo)),
    }
}

/// Runs all repetitions and, if `cfg.output` is set, writes the report
/// files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::new(cfg.clone());
    for rep in 0..cfg.repetitions {
        report.seeds.push(repetition_seeds(cfg.seed, rep));
        let (data, topo) = match repetition_data(cfg, rep) {
            Ok(x) => x,
            Err(e) => {
                warn!("repetition {rep}: data generation failed: {e}");
                report.failures.push(Failure {
                    method: None,
                    repetition: rep,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let out = run_methods(cfg, &data, &topo);
        record(&mut report, cfg, rep, &data, &out);
        info!("repetition {}/{} done", rep + 1, cfg.repetitions);
    }
    report.finalize();
    if let Some(dir) = &cfg.output {
        report.write(dir)?;
    }
    Ok(report)
}

pub(crate) fn record(report: &mut ExperimentReport, cfg: &ExperimentConfig, rep: usize, data: &NetworkDataset, out: &RunOutput) {
    for res in &out.results {
        for (metric, value) in method_metrics(res, data, cfg.surrogate.zero_tol) {
            report.rows.push(MetricRow {
                method: res.method,
                metric,
                repetition: rep,
                value,
            });
        }
        report.timings.push(Timing {
            method: res.method,
            repetition: rep,
            seconds: res.wall_time,
        });
        if cfg.traces && !res.trace.is_empty() {
            report.traces.extend(res.trace.iter().enumerate().map(|(i, &l2)| TraceRow {
                method: res.method,
                repetition: rep,
                iteration: i,
                l2_error: l2,
            }));
        }
    }
    if cfg.traces {
        report.traces.extend(out.desmr_trace.iter().enumerate().map(|(v, &l2)| TraceRow {
            method: MethodId::Desmr,
            repetition: rep,
            iteration: v,
            l2_error: l2,
        }));
    }
    for (method, message) in &out.failures {
        report.failures.push(Failure {
            method: Some(*method),
            repetition: rep,
            message: message.clone(),
        });
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use crate::datagen::{CovMode, CovSpec, NoiseMode, NoiseSpec};
    use crate::experiments::config::{DataSpec, TopologySpec};
    use crate::surrogate::LambdaRule;

    pub(crate) fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            repetitions: 2,
            data: DataSpec {
                m: 3,
                n: 40,
                p: 8,
                s: 2,
                cov: CovMode::Homogeneous(CovSpec::default()),
                noise: NoiseMode::Homogeneous {
                    noise: NoiseSpec::STANDARD_NORMAL,
                },
            },
            topology: TopologySpec::Complete,
            ..ExperimentConfig::default()
        };
        cfg.surrogate.outer_iterations = 2;
        cfg.surrogate.inner_rounds = 10;
        cfg.surrogate.init_lambda = LambdaRule::Bic { grid_size: 6 };
        cfg.surrogate.lambda = LambdaRule::Bic { grid_size: 8 };
        cfg.baselines.pooled_lambda = LambdaRule::Bic { grid_size: 6 };
        cfg
    }
}
