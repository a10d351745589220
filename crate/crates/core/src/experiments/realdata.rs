//! Tabular data distributed by a grouping column, optionally contaminated,
//! scored by test-set prediction error.

use std::path::PathBuf;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{splitmix64, BaselineSettings, ExperimentConfig};
use super::report::{ExperimentReport, Failure, MetricRow, Timing};
use super::runner::{pooled_prediction, run_methods};
use crate::baselines::MethodId;
use crate::datagen::{inject_outliers, load_csv, read_group_map, CsvOptions, OutlierScenario};
use crate::error::Result;
use crate::netsim::read_edge_list;
use crate::surrogate::SurrogateConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Clean,
    /// A ninth extra rows of outliers at every node.
    Balanced,
    /// One extra node holding only outliers, linked to every node.
    Attacker,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Clean => "clean",
            Scenario::Balanced => "balanced",
            Scenario::Attacker => "attacker",
        }
    }

    fn outliers(self) -> Option<OutlierScenario> {
        match self {
            Scenario::Clean => None,
            Scenario::Balanced => Some(OutlierScenario::balanced()),
            Scenario::Attacker => Some(OutlierScenario::attacker_node()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RealDataConfig {
    pub csv: PathBuf,
    pub response_column: String,
    pub group_column: String,
    /// `key,node` file mapping group values to 1-based nodes.
    pub group_map: Option<PathBuf>,
    pub edge_list: PathBuf,
    pub exclude_columns: Vec<String>,
    pub max_missing_fraction: Option<f64>,
    pub test_fraction: f64,
    pub scenarios: Vec<Scenario>,
    pub methods: Vec<MethodId>,
    pub surrogate: SurrogateConfig,
    pub baselines: BaselineSettings,
    pub seed: u64,
    /// Independent train/test splits.
    pub repetitions: usize,
    pub output: Option<PathBuf>,
}

impl Default for RealDataConfig {
    fn default() -> Self {
        RealDataConfig {
            csv: PathBuf::from("data/communities.csv"),
            response_column: "ViolentCrimesPerPop".into(),
            group_column: "state".into(),
            group_map: Some(PathBuf::from("data/census_divisions.csv")),
            edge_list: PathBuf::from("data/division_network.txt"),
            exclude_columns: ["county", "community", "communityname", "fold"]
                .map(String::from)
                .to_vec(),
            max_missing_fraction: Some(0.5),
            test_fraction: 0.2,
            scenarios: vec![Scenario::Clean, Scenario::Balanced, Scenario::Attacker],
            methods: MethodId::ALL.to_vec(),
            surrogate: SurrogateConfig::default(),
            baselines: BaselineSettings::default(),
            seed: 20240601,
            repetitions: 5,
            output: None,
        }
    }
}

impl RealDataConfig {
    fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            name: "realdata".into(),
            seed: self.seed,
            repetitions: self.repetitions,
            methods: self.methods.clone(),
            surrogate: self.surrogate.clone(),
            baselines: self.baselines.clone(),
            traces: false,
            output: self.output.clone(),
            ..ExperimentConfig::default()
        }
    }
}

/// Runs every scenario on every split. Metric names carry the scenario as a
/// suffix (`rmse_balanced`); `rmse_change_<scenario>` is the relative change
/// against the clean fit of the same split.
pub fn run_realdata(cfg: &RealDataConfig) -> Result<ExperimentReport> {
    let exp = cfg.experiment();
    let mut report = ExperimentReport::new(exp.clone());
    let group_map = cfg.group_map.as_ref().map(|p| read_group_map(p)).transpose()?;
    for rep in 0..cfg.repetitions {
        let split_seed = splitmix64(cfg.seed ^ splitmix64(rep as u64));
        let outlier_seed = splitmix64(split_seed ^ 2);
        report.seeds.push((split_seed, 0, outlier_seed));
        let mut opts = CsvOptions::new(&cfg.response_column, &cfg.group_column);
        opts.exclude_columns = cfg.exclude_columns.clone();
        opts.max_missing_fraction = cfg.max_missing_fraction;
        opts.group_map = group_map.clone();
        opts.test_fraction = cfg.test_fraction;
        opts.seed = split_seed;
        let loaded = load_csv(&cfg.csv, &opts)?;
        let topo = read_edge_list(&cfg.edge_list, Some(loaded.data.m()))?;
        info!(
            "split {rep}: {} rows, {} predictors, {} nodes",
            loaded.rows_kept,
            loaded.data.p(),
            loaded.data.m()
        );
        let mut clean_rmse: Vec<(MethodId, f64)> = Vec::new();
        for &scenario in &cfg.scenarios {
            let (data, t) = match scenario.outliers() {
                Some(sc) => inject_outliers(&loaded.data, &topo, &sc, outlier_seed)?,
                None => (loaded.data.clone(), topo.clone()),
            };
            let out = run_methods(&exp, &data, &t);
            let tag = scenario.as_str();
            for res in &out.results {
                let Some((rmse, mae)) = pooled_prediction(res, &data) else {
                    continue;
                };
                let mut push = |metric: String, value: f64| {
                    report.rows.push(MetricRow {
                        method: res.method,
                        metric,
                        repetition: rep,
                        value,
                    })
                };
                push(format!("rmse_{tag}"), rmse);
                push(format!("mae_{tag}"), mae);
                if scenario == Scenario::Clean {
                    clean_rmse.push((res.method, rmse));
                } else if let Some((_, base)) = clean_rmse.iter().find(|(m, _)| *m == res.method) {
                    push(format!("rmse_change_{tag}"), rmse / base - 1.0);
                }
                report.timings.push(Timing {
                    method: res.method,
                    repetition: rep,
                    seconds: res.wall_time,
                });
            }
            for (method, message) in out.failures {
                report.failures.push(Failure {
                    method: Some(method),
                    repetition: rep,
                    message: format!("{tag}: {message}"),
                });
            }
        }
    }
    report.finalize();
    if let Some(dir) = &cfg.output {
        report.write(dir)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::LambdaRule;
    use std::fmt::Write as _;

    /// Three groups on a path, y = x1 - x2 + small noise, with an id column
    /// and a mostly-missing column to be dropped.
    fn write_fixture(dir: &std::path::Path) -> RealDataConfig {
        let mut csv = String::from("id,grp,x1,x2,x3,sparse,y\n");
        let mut state: u64 = 9;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for i in 0..150 {
            let g = ["a", "b", "c"][i % 3];
            let (x1, x2, x3) = (next(), next(), next());
            let sparse = if i % 10 == 0 { "1.0".to_string() } else { "?".to_string() };
            let y = x1 - x2 + 0.01 * next();
            writeln!(csv, "{i},{g},{x1},{x2},{x3},{sparse},{y}").unwrap();
        }
        std::fs::write(dir.join("d.csv"), csv).unwrap();
        std::fs::write(dir.join("map.csv"), "grp,node\na,1\nb,2\nc,3\n").unwrap();
        std::fs::write(dir.join("net.txt"), "# path\n1 2\n2 3\n").unwrap();
        let mut cfg = RealDataConfig {
            csv: dir.join("d.csv"),
            response_column: "y".into(),
            group_column: "grp".into(),
            group_map: Some(dir.join("map.csv")),
            edge_list: dir.join("net.txt"),
            exclude_columns: vec!["id".into()],
            methods: vec![MethodId::Desmr, MethodId::Delr],
            repetitions: 1,
            ..RealDataConfig::default()
        };
        cfg.surrogate.outer_iterations = 2;
        cfg.surrogate.inner_rounds = 20;
        cfg.surrogate.init_lambda = LambdaRule::Bic { grid_size: 6 };
        cfg.surrogate.lambda = LambdaRule::Bic { grid_size: 8 };
        cfg
    }

    #[test]
    fn scenarios_produce_prediction_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_fixture(dir.path());
        let report = run_realdata(&cfg).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        for m in [MethodId::Desmr, MethodId::Delr] {
            for metric in ["rmse_clean", "mae_clean", "rmse_balanced", "rmse_attacker", "rmse_change_attacker"] {
                assert!(report.mean(m, metric).is_some(), "{m} {metric}");
            }
            assert!(report.mean(m, "rmse_clean").unwrap() < 0.5);
        }
    }
}
