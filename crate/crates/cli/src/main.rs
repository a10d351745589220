use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;

use desmr_core::baselines::MethodId;
use desmr_core::datagen::{CovMode, CovSpec, NoiseMode, NoiseSpec, OutlierScenario};
use desmr_core::experiments::realdata::{run_realdata, RealDataConfig, Scenario};
use desmr_core::experiments::runner::repetition_data;
use desmr_core::experiments::sensitivity::{run_init_sensitivity, InitMode};
use desmr_core::experiments::{run_experiment, ExperimentConfig, TopologySpec};
use desmr_core::surrogate::{run_outer_loop, LambdaRule};

#[derive(Parser)]
#[command(name = "desmr", version, about = "Decentralized surrogate median regression experiments")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic experiments: every listed method over repeated draws.
    Simulate(SimArgs),
    /// Tabular data split by group, with outlier scenarios.
    Realdata(RealArgs),
    /// Inner and outer convergence traces for one synthetic draw.
    Trace(SimArgs),
    /// One outer iteration from four different starting points.
    Sensitivity(SimArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    Normal,
    Cauchy,
    Exponential,
    T1,
    /// Each node draws one of the four families.
    Mixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Graph {
    Er,
    Complete,
    Ring,
}

#[derive(Clone, Copy, ValueEnum)]
enum Contamination {
    Balanced,
    Attacker,
}

#[derive(Args, Clone)]
struct SimArgs {
    /// TOML file; its values override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    /// Samples per node.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Number of nonzero true coefficients.
    #[arg(long)]
    s: Option<usize>,
    #[arg(long, value_enum)]
    noise: Option<Noise>,
    /// Draw covariance parameters per node.
    #[arg(long)]
    hetero_cov: bool,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, value_enum)]
    topology: Option<Graph>,
    /// Edge probability for Erdos-Renyi graphs.
    #[arg(long)]
    p_c: Option<f64>,
    /// Edge-list file; overrides --topology.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Comma-separated: desmr,delr,d_subgd,pooled_mr,local_mr,avg_mr.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Outer iterations V.
    #[arg(long)]
    outer: Option<usize>,
    /// Inner rounds T.
    #[arg(long)]
    inner: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// Size of the BIC grid for the network penalty.
    #[arg(long)]
    lambda_grid: Option<usize>,
    /// Use this network penalty instead of BIC.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    outliers: Option<Contamination>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RealArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    group: Option<String>,
    /// `key,node` CSV mapping group values to nodes.
    #[arg(long)]
    group_map: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn parse_methods(names: &[String]) -> Result<Vec<MethodId>> {
    names.iter().map(|s| s.trim().parse::<MethodId>().map_err(Into::into)).collect()
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies a TOML file on top of a flag-built configuration.
fn overlay<T: Serialize + DeserializeOwned>(cfg: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(cfg) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut base = toml::Value::try_from(&cfg)?;
    merge(&mut base, file);
    Ok(base.try_into()?)
}

fn simulation_config(a: &SimArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let d = &mut cfg.data;
    if let Some(v) = a.m {
        d.m = v;
    }
    if let Some(v) = a.n {
        d.n = v;
    }
    if let Some(v) = a.p {
        d.p = v;
    }
    if let Some(v) = a.s {
        d.s = v;
    }
    if a.hetero_cov {
        d.cov = CovMode::PerNodeRandom;
    } else if a.sigma2.is_some() || a.rho.is_some() {
        let base = CovSpec::default();
        d.cov = CovMode::Homogeneous(CovSpec {
            sigma2: a.sigma2.unwrap_or(base.sigma2),
            rho: a.rho.unwrap_or(base.rho),
        });
    }
    if let Some(noise) = a.noise {
        d.noise = match noise {
            Noise::Normal => NoiseMode::Homogeneous {
                noise: NoiseSpec::STANDARD_NORMAL,
            },
            Noise::Cauchy => NoiseMode::Homogeneous { noise: NoiseSpec::CAUCHY },
            Noise::Exponential => NoiseMode::Homogeneous { noise: NoiseSpec::EXP1 },
            Noise::T1 => NoiseMode::Homogeneous { noise: NoiseSpec::T1 },
            Noise::Mixed => NoiseMode::PerNodeRandom,
        };
    }
    cfg.topology = match (&a.edges, a.topology) {
        (Some(path), _) => TopologySpec::EdgeList { path: path.clone() },
        (None, Some(Graph::Complete)) => TopologySpec::Complete,
        (None, Some(Graph::Ring)) => TopologySpec::Ring,
        (None, Some(Graph::Er)) | (None, None) => TopologySpec::ErdosRenyi {
            p_c: a.p_c.unwrap_or(0.3),
        },
    };
    if let Some(names) = &a.methods {
        cfg.methods = parse_methods(names)?;
    }
    let s = &mut cfg.surrogate;
    if let Some(v) = a.outer {
        s.outer_iterations = v;
    }
    if let Some(v) = a.inner {
        s.inner_rounds = v;
    }
    if let Some(v) = a.tau {
        s.tau = v;
    }
    if let Some(k) = a.lambda_grid {
        s.lambda = LambdaRule::Bic { grid_size: k };
    }
    if let Some(v) = a.lambda {
        s.lambda = LambdaRule::Fixed { value: v };
    }
    if let Some(v) = a.reps {
        cfg.repetitions = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.outliers = a.outliers.map(|o| match o {
        Contamination::Balanced => OutlierScenario::balanced(),
        Contamination::Attacker => OutlierScenario::attacker_node(),
    });
    cfg.output = a.out.clone();
    let cfg = overlay(cfg, a.config.as_deref())?;
    cfg.validate()?;
    Ok(cfg)
}

fn realdata_config(a: &RealArgs) -> Result<RealDataConfig> {
    let mut cfg = RealDataConfig::default();
    if let Some(v) = &a.csv {
        cfg.csv = v.clone();
    }
    if let Some(v) = &a.response {
        cfg.response_column = v.clone();
    }
    if let Some(v) = &a.group {
        cfg.group_column = v.clone();
    }
    if let Some(v) = &a.group_map {
        cfg.group_map = Some(v.clone());
    }
    if let Some(v) = &a.edges {
        cfg.edge_list = v.clone();
    }
    if let Some(names) = &a.methods {
        cfg.methods = parse_methods(names)?;
    }
    if let Some(v) = a.reps {
        cfg.repetitions = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.output = a.out.clone();
    overlay(cfg, a.config.as_deref())
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(a: &SimArgs) -> Result<()> {
    let cfg = simulation_config(a)?;
    info!("running {} repetitions of {:?}", cfg.repetitions, cfg.methods);
    let report = run_experiment(&cfg)?;
    print!("{}", report.summary());
    for f in &report.failures {
        eprintln!("repetition {}: {:?} failed: {}", f.repetition, f.method, f.message);
    }
    if let Some(dir) = &cfg.output {
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn realdata(a: &RealArgs) -> Result<()> {
    let cfg = realdata_config(a)?;
    if !cfg.csv.exists() {
        bail!(
            "{} not found; export the Communities and Crime table with a header row to that path or pass --csv",
            cfg.csv.display()
        );
    }
    let report = run_realdata(&cfg)?;
    print!("{}", report.summary());
    for s in [Scenario::Balanced, Scenario::Attacker] {
        for m in &cfg.methods {
            if let Some(v) = report.mean(*m, &format!("rmse_change_{}", s.as_str())) {
                println!("{m:<10} {:<9} RMSE change {:+.1}%", s.as_str(), 100.0 * v);
            }
        }
    }
    Ok(())
}

fn trace(a: &SimArgs) -> Result<()> {
    let mut cfg = simulation_config(a)?;
    cfg.surrogate.track_convergence = true;
    let (data, topo) = repetition_data(&cfg, 0)?;
    let out = run_outer_loop(&data, &topo, &cfg.surrogate)?;
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("trace_out"));
    fs::create_dir_all(&dir)?;
    out.state.write_trace_csv(fs::File::create(dir.join("outer_trace.csv"))?)?;
    for (v, t) in out.inner_traces.iter().enumerate() {
        t.write_csv(fs::File::create(dir.join(format!("inner_trace_v{:02}.csv", v + 1)))?)?;
        println!(
            "outer {:>2}: rate {:.4} (R^2 {:.3}), l2 {:.4}",
            v + 1,
            t.gamma_hat,
            t.r_squared,
            out.state.l2_by_iteration()[v + 1]
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn sensitivity(a: &SimArgs) -> Result<()> {
    let cfg = simulation_config(a)?;
    let rows = run_init_sensitivity(&cfg, &InitMode::STANDARD)?;
    for mode in InitMode::STANDARD {
        let label = mode.label();
        let sel: Vec<_> = rows.iter().filter(|r| r.mode == label).collect();
        let k = sel.len() as f64;
        println!(
            "{label:<16} start {:>10.4}  after one outer iteration {:>8.4}",
            sel.iter().map(|r| r.l2_initial).sum::<f64>() / k,
            sel.iter().map(|r| r.l2_after).sum::<f64>() / k
        );
    }
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join("sensitivity.csv"), &rows)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Realdata(a) => realdata(a),
        Command::Trace(a) => trace(a),
        Command::Sensitivity(a) => sensitivity(a),
    }
}
