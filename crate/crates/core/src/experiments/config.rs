use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::MethodId;
use crate::datagen::{staircase_beta, CovMode, CovSpec, NoiseMode, NoiseSpec, OutlierScenario};
use crate::error::{Error, Result};
use crate::lad::LadOptions;
use crate::netsim::{gen_complete, gen_erdos_renyi, gen_ring, read_edge_list, Topology};
use crate::surrogate::{LambdaRule, SparsityRule, SurrogateConfig};

/// Synthetic data design. `beta*` is `(1, 2, ..., s, 0, ..., 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    pub m: usize,
    /// Training rows per node.
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub cov: CovMode,
    pub noise: NoiseMode,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            m: 10,
            n: 200,
            p: 100,
            s: 10,
            cov: CovMode::Homogeneous(CovSpec::default()),
            noise: NoiseMode::Homogeneous {
                noise: NoiseSpec::CAUCHY,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySpec {
    ErdosRenyi { p_c: f64 },
    Complete,
    Ring,
    /// Edge-list file, one `j k` pair per line, 1-based.
    EdgeList { path: PathBuf },
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::ErdosRenyi { p_c: 0.3 }
    }
}

impl TopologySpec {
    pub fn build(&self, m: usize, seed: u64) -> Result<Topology> {
        match self {
            TopologySpec::ErdosRenyi { p_c } => gen_erdos_renyi(m, *p_c, seed),
            TopologySpec::Complete => gen_complete(m),
            TopologySpec::Ring => gen_ring(m),
            TopologySpec::EdgeList { path } => read_edge_list(path, Some(m)),
        }
    }
}

/// Settings for the baselines that are not shared with the surrogate
/// method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineSettings {
    /// Round budget for deLR and D-subGD; `None` means `V * T`.
    pub rounds: Option<usize>,
    pub subgradient_eta0: f64,
    /// Penalty rule for the pooled LAD fit (also D-subGD's penalty).
    pub pooled_lambda: LambdaRule,
    /// Least-squares penalty for deLR; `None` reuses the surrogate rule.
    pub delr_lambda: Option<LambdaRule>,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        BaselineSettings {
            rounds: None,
            subgradient_eta0: 0.1,
            pooled_lambda: LambdaRule::Bic { grid_size: 20 },
            delr_lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub repetitions: usize,
    pub data: DataSpec,
    pub topology: TopologySpec,
    pub methods: Vec<MethodId>,
    pub surrogate: SurrogateConfig,
    pub baselines: BaselineSettings,
    /// Contamination applied after generation.
    pub outliers: Option<OutlierScenario>,
    /// Record per-iteration l2 traces.
    pub traces: bool,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "simulation".into(),
            seed: 20240601,
            repetitions: 20,
            data: DataSpec::default(),
            topology: TopologySpec::default(),
            methods: MethodId::ALL.to_vec(),
            surrogate: SurrogateConfig {
                s_hat: SparsityRule::Oracle,
                ..SurrogateConfig::default()
            },
            baselines: BaselineSettings::default(),
            outliers: None,
            traces: true,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be >= 1"));
        }
        if d.m == 0 || d.n == 0 || d.p == 0 || d.s > d.p {
            return Err(Error::invalid(format!("bad data design {d:?}")));
        }
        if let CovMode::Homogeneous(c) = &d.cov {
            c.validate()?;
        }
        if let NoiseMode::Homogeneous { noise } = &d.noise {
            noise.validate()?;
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods selected"));
        }
        if let TopologySpec::ErdosRenyi { p_c } = self.topology {
            if !(0.0..=1.0).contains(&p_c) {
                return Err(Error::invalid(format!("p_c = {p_c} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn beta_star(&self) -> nalgebra::DVector<f64> {
        staircase_beta(self.data.p, self.data.s)
    }

    /// Baseline round budget: `V * T` unless overridden.
    pub fn baseline_rounds(&self) -> usize {
        self.baselines
            .rounds
            .unwrap_or(self.surrogate.outer_iterations * self.surrogate.inner_rounds)
    }

    pub fn lad(&self) -> LadOptions {
        self.surrogate.lad
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

/// SplitMix64 finalizer; decorrelates consecutive seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeds for repetition `rep`: `(data, topology, outliers)`.
pub fn repetition_seeds(seed: u64, rep: usize) -> (u64, u64, u64) {
    let base = splitmix64(seed ^ splitmix64(rep as u64));
    (splitmix64(base), splitmix64(base ^ 1), splitmix64(base ^ 2))
}
