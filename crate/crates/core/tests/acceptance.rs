//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,2,7` restricts the run to the listed criteria.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::{lasso_cd_oracle, linear_fit};
use desmr_core::admm::{
    advance, advance_in_order, default_rho, local_quadratics, AdmmConfig, ConsensusState, L1,
};
use desmr_core::baselines::MethodId;
use desmr_core::datagen::{gen_network_data, CovMode, CovSpec, NetworkDataset, NoiseMode, NoiseSpec};
use desmr_core::experiments::realdata::{run_realdata, RealDataConfig};
use desmr_core::experiments::{run_experiment, ExperimentConfig, ExperimentReport, TopologySpec};
use desmr_core::lad::{soft_threshold, soft_threshold_scalar};
use desmr_core::netsim::{gen_complete, gen_erdos_renyi, gen_ring, run_rounds, run_rounds_ordered, Topology};
use desmr_core::surrogate::{biweight_kernel, pseudo_response, LambdaRule};
use nalgebra::{DMatrix, DVector};

const REPS: usize = 20;

#[derive(Clone, Copy, PartialEq)]
enum Outcome {
    Pass,
    Fail,
    Skip,
}

/// Sub-checks of one criterion.
#[derive(Default)]
struct Checks {
    lines: Vec<(bool, String)>,
    skipped: Option<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        self.lines.push((ok, detail.into()));
    }

    fn outcome(&self) -> Outcome {
        if self.skipped.is_some() {
            Outcome::Skip
        } else if self.lines.iter().all(|(ok, _)| *ok) && !self.lines.is_empty() {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

// ---------------------------------------------------------------------------
// Criteria 1 and 2: consensus ADMM against a centralized lasso

struct SmallInstance {
    data: NetworkDataset,
    topo: Topology,
    lambda: f64,
    label: String,
}

fn small_instances() -> Vec<SmallInstance> {
    let mut out = Vec::new();
    let mut beta = DVector::zeros(8);
    beta[0] = 1.5;
    beta[3] = -1.0;
    for i in 0..5u64 {
        let data = gen_network_data(
            4,
            30,
            8,
            &beta,
            &CovMode::Homogeneous(CovSpec { sigma2: 1.0, rho: 0.3 }),
            &NoiseMode::Homogeneous {
                noise: NoiseSpec::STANDARD_NORMAL,
            },
            1000 + i,
        )
        .unwrap();
        let (x, y) = data.pooled();
        let lambda = 0.1 * (x.transpose() * &y).amax() / y.len() as f64;
        for (name, topo) in [("ring", gen_ring(4).unwrap()), ("complete", gen_complete(4).unwrap())] {
            out.push(SmallInstance {
                data: data.clone(),
                topo,
                lambda,
                label: format!("instance {i} {name}"),
            });
        }
    }
    out
}

fn consensus_history(inst: &SmallInstance, cfg: &AdmmConfig, rounds: usize) -> desmr_core::Result<Vec<DMatrix<f64>>> {
    let blocks: Vec<_> = inst.data.nodes.iter().map(|n| (&n.x, &n.y)).collect();
    let locals = local_quadratics(&blocks);
    let start = ConsensusState::new(DMatrix::zeros(4, 8));
    let mut hist = vec![start.beta.clone()];
    advance(&locals, &inst.topo, start, cfg, rounds, &L1, |s| {
        hist.push(s.beta.clone());
        Ok(())
    })?;
    Ok(hist)
}

fn criterion_1(c: &mut Checks) {
    let t0 = Instant::now();
    for inst in small_instances() {
        let (x, y) = inst.data.pooled();
        let oracle = lasso_cd_oracle(&x, &y, inst.lambda);
        let designs: Vec<_> = inst.data.nodes.iter().map(|n| &n.x).collect();
        let cfg = AdmmConfig::with_default_rho(&designs, inst.lambda, 3000).unwrap();
        let hist = consensus_history(&inst, &cfg, 3000).unwrap();
        let last = hist.last().unwrap();
        let worst = (0..4)
            .map(|j| (last.row(j).transpose() - &oracle).amax())
            .fold(0.0, f64::max);
        c.check(worst <= 1e-5, format!("{}: max node |b_j - oracle|_inf = {worst:.2e}", inst.label));
    }
    let secs = t0.elapsed().as_secs_f64();
    c.check(secs < 10.0, format!("runtime {secs:.2}s < 10s"));
}

fn criterion_2(c: &mut Checks) {
    for inst in small_instances() {
        let (x, y) = inst.data.pooled();
        let oracle = lasso_cd_oracle(&x, &y, inst.lambda);
        let target = DMatrix::from_fn(4, 8, |_, k| oracle[k]);
        let designs: Vec<_> = inst.data.nodes.iter().map(|n| &n.x).collect();
        let cfg = AdmmConfig::with_default_rho(&designs, inst.lambda, 60).unwrap();
        let hist = consensus_history(&inst, &cfg, 60).unwrap();
        let t: Vec<f64> = (10..=60).map(|t| t as f64).collect();
        let logd: Vec<f64> = (10..=60).map(|t| (&hist[t] - &target).norm().ln()).collect();
        let (slope, r2) = linear_fit(&t, &logd);
        c.check(
            slope < 0.0 && r2 >= 0.95,
            format!("{}: slope {slope:.4}, R^2 {r2:.4}", inst.label),
        );

        // Below the eigenvalue bound: reported only.
        let weak = AdmmConfig {
            rho: default_rho(&designs, 0.2).unwrap(),
            ..cfg.clone()
        };
        let note = match consensus_history(&inst, &weak, 60) {
            Ok(h) => {
                let logd: Vec<f64> = (10..=60).map(|t| (&h[t] - &target).norm().max(1e-300).ln()).collect();
                let (s, r) = linear_fit(&t, &logd);
                format!("slope {s:.4}, R^2 {r:.4}")
            }
            Err(e) => format!("stopped: {e}"),
        };
        println!("      (rho = 0.2 lambda_max, not asserted) {}: {note}", inst.label);
    }
}

// ---------------------------------------------------------------------------
// Criteria 3 to 6: simulation studies

fn base_config(noise: NoiseSpec, methods: Vec<MethodId>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        repetitions: REPS,
        methods,
        ..ExperimentConfig::default()
    };
    cfg.data.noise = NoiseMode::Homogeneous { noise };
    cfg
}

fn l2(r: &ExperimentReport, m: MethodId) -> f64 {
    r.mean(m, "l2_error").unwrap_or(f64::NAN)
}

fn note_failures(c: &mut Checks, label: &str, r: &ExperimentReport) {
    c.check(r.failures.is_empty(), format!("{label}: {} method failures", r.failures.len()));
}

fn criterion_3(c: &mut Checks) {
    let t0 = Instant::now();
    let cauchy = run_experiment(&base_config(NoiseSpec::CAUCHY, vec![MethodId::Desmr, MethodId::Delr])).unwrap();
    note_failures(c, "cauchy", &cauchy);
    let (d, l) = (l2(&cauchy, MethodId::Desmr), l2(&cauchy, MethodId::Delr));
    c.check((0.15..=0.9).contains(&d), format!("cauchy: deSMR l2 {d:.3} in [0.15, 0.9]"));
    let recall = cauchy.mean(MethodId::Desmr, "recall").unwrap_or(f64::NAN);
    // Stated to two decimals.
    c.check(
        (recall * 100.0).round() == 100.0,
        format!("cauchy: deSMR recall {recall:.4} = 1.00 at two decimals"),
    );
    let precision = cauchy.mean(MethodId::Desmr, "precision").unwrap_or(f64::NAN);
    c.check(precision >= 0.95, format!("cauchy: deSMR precision {precision:.3} >= 0.95"));
    c.check(l >= 5.0 * d, format!("cauchy: deLR l2 {l:.3} >= 5 x deSMR ({:.3})", 5.0 * d));

    let normal = run_experiment(&base_config(NoiseSpec::STANDARD_NORMAL, vec![MethodId::Desmr, MethodId::Delr])).unwrap();
    note_failures(c, "normal", &normal);
    let (d, l) = (l2(&normal, MethodId::Desmr), l2(&normal, MethodId::Delr));
    let ratio = d.max(l) / d.min(l);
    c.check(ratio <= 2.0, format!("normal: deSMR {d:.3}, deLR {l:.3}, ratio {ratio:.2} <= 2"));
    let secs = t0.elapsed().as_secs_f64();
    c.check(secs < 1800.0, format!("runtime {:.1} min < 30 min", secs / 60.0));
}

fn criterion_4(c: &mut Checks) {
    let mut traces = Vec::new();
    for t in [50, 100] {
        let mut cfg = base_config(NoiseSpec::CAUCHY, vec![MethodId::Desmr]);
        cfg.surrogate.outer_iterations = 50;
        cfg.surrogate.inner_rounds = t;
        let r = run_experiment(&cfg).unwrap();
        note_failures(c, &format!("T={t}"), &r);
        traces.push(r.mean_trace(MethodId::Desmr));
    }
    let (t50, t100) = (&traces[0], &traces[1]);
    let (a10, a50) = (t50[10], t50[50]);
    let gap = (a10 - a50).abs() / a50;
    c.check(gap <= 0.05, format!("T=50: l2 at v=10 {a10:.4} vs v=50 {a50:.4}, gap {:.1}% <= 5%", 100.0 * gap));
    let (worst_v, worst) = (5..=50)
        .map(|v| (v, (t50[v] - t100[v]).abs() / t100[v]))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    c.check(
        worst <= 0.10,
        format!(
            "T=50 vs T=100: largest relative gap {:.1}% at v={worst_v} ({:.4} vs {:.4}) <= 10%",
            100.0 * worst,
            t50[worst_v],
            t100[worst_v]
        ),
    );
}

fn criterion_5(c: &mut Checks) {
    for (name, noise) in [("normal", NoiseSpec::STANDARD_NORMAL), ("cauchy", NoiseSpec::CAUCHY)] {
        let mut errs = Vec::new();
        for m in [5usize, 10, 20] {
            let mut cfg = base_config(noise, vec![MethodId::Desmr, MethodId::AvgMr]);
            cfg.topology = TopologySpec::Complete;
            cfg.data.m = m;
            cfg.data.n = 4000 / m;
            let r = run_experiment(&cfg).unwrap();
            note_failures(c, &format!("{name} m={m}"), &r);
            let (d, a) = (l2(&r, MethodId::Desmr), l2(&r, MethodId::AvgMr));
            c.check(d <= 0.6 * a, format!("{name} m={m}: deSMR {d:.3} <= 0.6 x Avg MR ({:.3})", 0.6 * a));
            errs.push(d);
        }
        let mono = errs.windows(2).all(|w| w[0] <= w[1]);
        c.check(
            mono,
            format!("{name}: deSMR nondecreasing in m: {:.3} {:.3} {:.3}", errs[0], errs[1], errs[2]),
        );
    }
}

fn criterion_6(c: &mut Checks) {
    let settings = [
        ("covariate", CovMode::PerNodeRandom, NoiseMode::Homogeneous { noise: NoiseSpec::CAUCHY }),
        ("noise", CovMode::Homogeneous(CovSpec::default()), NoiseMode::PerNodeRandom),
    ];
    for (name, cov, noise) in settings {
        let mut cfg = base_config(NoiseSpec::CAUCHY, vec![MethodId::Desmr, MethodId::PooledMr, MethodId::DSubgd]);
        cfg.data.cov = cov;
        cfg.data.noise = noise;
        let r = run_experiment(&cfg).unwrap();
        note_failures(c, name, &r);
        let (d, p, s) = (l2(&r, MethodId::Desmr), l2(&r, MethodId::PooledMr), l2(&r, MethodId::DSubgd));
        c.check(d <= 1.5 * p, format!("{name}: deSMR {d:.3} <= 1.5 x Pooled MR ({:.3})", 1.5 * p));
        c.check(d <= 0.5 * s, format!("{name}: deSMR {d:.3} <= 0.5 x D-subGD ({:.3})", 0.5 * s));
    }
}

// ---------------------------------------------------------------------------
// Criterion 7: unit identities and invariants

fn criterion_7(c: &mut Checks) {
    // Soft-thresholding.
    let xs = [-3.0, -0.5, -0.1, 0.0, 0.1, 0.5, 3.0];
    let mut st_ok = true;
    for &x in &xs {
        for &t in &[0.0, 0.1, 0.5, 1.0] {
            let s = soft_threshold_scalar(x, t);
            st_ok &= s == x.signum() * (x.abs() - t).max(0.0);
            st_ok &= soft_threshold_scalar(-x, t) == -s;
            // Prox optimality: x - s lies in t * subdifferential of |s|.
            st_ok &= if s != 0.0 {
                ((x - s) - t * s.signum()).abs() < 1e-15
            } else {
                x.abs() <= t
            };
        }
        st_ok &= soft_threshold_scalar(x, 0.0) == x;
    }
    let v = DVector::from_row_slice(&xs);
    st_ok &= soft_threshold(&v, 0.5) == v.map(|e| soft_threshold_scalar(e, 0.5));
    c.check(st_ok, "soft-threshold: closed form, oddness, zero threshold, prox optimality");

    // Kernel: composite Simpson on [-1, 1] is exact up to rounding for a
    // degree-6 polynomial once the grid is fine.
    let k = 20_000;
    let h = 2.0 / k as f64;
    let integral = (0..=k)
        .map(|i| {
            let u = -1.0 + i as f64 * h;
            let w = if i == 0 || i == k {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * biweight_kernel(u)
        })
        .sum::<f64>()
        * h
        / 3.0;
    c.check((integral - 1.0).abs() <= 1e-10, format!("kernel integral {integral:.12} (|err| <= 1e-10)"));
    c.check(biweight_kernel(0.0) == 105.0 / 64.0, format!("K(0) = {} = 105/64", biweight_kernel(0.0)));
    c.check(
        biweight_kernel(1.0) == 0.0 && biweight_kernel(-1.5) == 0.0,
        "kernel vanishes outside (-1, 1)",
    );

    // Pseudo-response distance.
    let data = &small_instances()[0].data;
    let node = &data.nodes[0];
    let beta0 = DVector::from_fn(8, |k, _| 0.1 * k as f64);
    let mut pr_ok = true;
    for f0 in [0.05, 0.4, 2.0] {
        let yt = pseudo_response(&node.x, &node.y, &beta0, f0).unwrap();
        let fit = &node.x * &beta0;
        pr_ok &= (0..yt.len()).all(|i| ((yt[i] - fit[i]).abs() - 1.0 / (2.0 * f0)).abs() <= 1e-12 * (1.0 + fit[i].abs()));
    }
    c.check(pr_ok, "pseudo-response: |y~_i - x_i^T b0| = 1/(2 f0) for every row");

    // Dual zero-sum along a run on a random graph.
    let mut beta = DVector::zeros(8);
    beta[1] = 2.0;
    let data = gen_network_data(
        7,
        25,
        8,
        &beta,
        &CovMode::Homogeneous(CovSpec::default()),
        &NoiseMode::Homogeneous { noise: NoiseSpec::CAUCHY },
        77,
    )
    .unwrap();
    let topo = gen_erdos_renyi(7, 0.4, 78).unwrap();
    let blocks: Vec<_> = data.nodes.iter().map(|n| (&n.x, &n.y)).collect();
    let locals = local_quadratics(&blocks);
    let designs: Vec<_> = data.nodes.iter().map(|n| &n.x).collect();
    let cfg = AdmmConfig::with_default_rho(&designs, 0.05, 200).unwrap();
    let mut worst: f64 = 0.0;
    let init = DMatrix::from_fn(7, 8, |j, k| ((j * 8 + k) as f64).sin());
    advance(&locals, &topo, ConsensusState::new(init.clone()), &cfg, 200, &L1, |s| {
        worst = worst.max(s.dual_sum_norm() / (1e-9 * (s.t as f64 + 1.0)));
        Ok(())
    })
    .unwrap();
    c.check(worst <= 1.0, format!("dual zero-sum: max |sum_j p_j|_inf / (1e-9 (t+1)) = {worst:.3e}"));

    // Schedule independence, both for the generic round driver and for the
    // consensus update.
    let states: Vec<f64> = (0..7).map(|j| j as f64 * 0.37).collect();
    let update = |j: usize, me: &f64, nbrs: &[(usize, &f64)]| {
        me * 0.5 + nbrs.iter().map(|(k, v)| **v * (1.0 + (*k as f64) / 10.0)).sum::<f64>() / (nbrs.len() as f64 + 1.0) + j as f64
    };
    let base = run_rounds(&topo, states.clone(), update, 25);
    let reversed: Vec<usize> = (0..7).rev().collect();
    let shuffled = [3, 6, 0, 5, 1, 4, 2];
    let mut sched_ok = [reversed.as_slice(), &shuffled]
        .iter()
        .all(|o| run_rounds_ordered(&topo, states.clone(), update, 25, o) == base);
    let start = ConsensusState::new(init);
    let a = advance_in_order(&locals, &topo, start.clone(), &cfg, 40, &(0..7).collect::<Vec<_>>()).unwrap();
    for o in [reversed.as_slice(), &shuffled] {
        let b = advance_in_order(&locals, &topo, start.clone(), &cfg, 40, o).unwrap();
        sched_ok &= a.beta == b.beta && a.p_dual == b.p_dual;
    }
    c.check(sched_ok, "run_rounds and consensus ADMM bit-identical under permuted node order");

    // Determinism of a whole experiment.
    let mut cfg = ExperimentConfig {
        repetitions: 2,
        seed: 4242,
        ..ExperimentConfig::default()
    };
    cfg.data.m = 4;
    cfg.data.n = 60;
    cfg.data.p = 12;
    cfg.data.s = 3;
    cfg.surrogate.outer_iterations = 3;
    cfg.surrogate.inner_rounds = 20;
    cfg.surrogate.init_lambda = LambdaRule::Bic { grid_size: 8 };
    cfg.surrogate.lambda = LambdaRule::Bic { grid_size: 10 };
    cfg.baselines.pooled_lambda = LambdaRule::Bic { grid_size: 8 };
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        run_experiment(&ExperimentConfig {
            output: Some(out.clone()),
            ..cfg.clone()
        })
        .unwrap();
        files.push((
            std::fs::read(out.join("report.csv")).unwrap(),
            std::fs::read(out.join("trace.csv")).unwrap(),
        ));
    }
    c.check(
        files[0] == files[1] && !files[0].0.is_empty(),
        format!("run_experiment: report.csv and trace.csv byte-identical ({} bytes)", files[0].0.len()),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: real data

fn workspace_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn criterion_8(c: &mut Checks) {
    let csv = workspace_path("data/communities.csv");
    if !csv.exists() {
        c.skipped = Some(format!("{} not present", csv.display()));
        return;
    }
    let cfg = RealDataConfig {
        csv,
        group_map: Some(workspace_path("data/census_divisions.csv")),
        edge_list: workspace_path("data/division_network.txt"),
        methods: vec![MethodId::Desmr, MethodId::Delr],
        ..RealDataConfig::default()
    };
    let r = run_realdata(&cfg).unwrap();
    note_failures(c, "realdata", &r);
    for sc in ["balanced", "attacker"] {
        let metric = format!("rmse_change_{sc}");
        let d = r.mean(MethodId::Desmr, &metric).unwrap_or(f64::NAN);
        let l = r.mean(MethodId::Delr, &metric).unwrap_or(f64::NAN);
        c.check(d <= 0.15, format!("{sc}: deSMR RMSE change {:+.1}% <= 15%", 100.0 * d));
        c.check(l >= 0.25, format!("{sc}: deLR RMSE change {:+.1}% >= 25%", 100.0 * l));
    }
}

fn main() {
    let criteria: [(usize, &str, fn(&mut Checks)); 8] = [
        (1, "consensus ADMM matches centralized lasso", criterion_1),
        (2, "linear convergence of consensus ADMM", criterion_2),
        (3, "m = 10 benchmark simulation", criterion_3),
        (4, "outer-loop convergence", criterion_4),
        (5, "node-count monotonicity", criterion_5),
        (6, "heterogeneity", criterion_6),
        (7, "unit identities and invariants", criterion_7),
        (8, "real-data robustness", criterion_8),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let mut checks = Checks::default();
        run(&mut checks);
        for (ok, line) in &checks.lines {
            println!("    [{}] {line}", if *ok { "ok" } else { "xx" });
        }
        let outcome = checks.outcome();
        let tag = match outcome {
            Outcome::Pass => "PASS".to_string(),
            Outcome::Fail => "FAIL".to_string(),
            Outcome::Skip => format!("SKIP ({})", checks.skipped.as_deref().unwrap_or("")),
        };
        println!("criterion {id} ({name}): {tag} [{:.1}s]", t0.elapsed().as_secs_f64());
        if outcome == Outcome::Fail {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
