//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! nonzero status when any criterion fails.
//!
//! `PKB_ACCEPTANCE=1,2,3` restricts the run to the listed criteria.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use pkb::{
    c_index, mse, simulate, tune_and_fit, BoostConfig, ExpressionDataset, FittedModel, KernelSpec, Outcome,
    OutcomeType, SimDesign, SimModel, TuneGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// criterion 1
const DERIV_INSTANCES: usize = 50;
const DERIV_MAX_N: usize = 20;
const DERIV_TOL: f64 = 1e-5;
const DERIV_TIME: Duration = Duration::from_secs(10);
// criterion 2
const REDUCTION_INSTANCES: usize = 100;
const REDUCTION_TOL_L2: f64 = 1e-8;
const REDUCTION_TOL_L1: f64 = 1e-6;
const REDUCTION_TIME: Duration = Duration::from_secs(30);
// criterion 3
const CINDEX_INSTANCES: usize = 200;
const CINDEX_LARGE_N: usize = 2000;
const CINDEX_HALF_TOL: f64 = 0.03;
// simulation studies
const RUNS: u64 = 10;
const N_SAMPLES: usize = 300;
const N_TRAIN: usize = 200;
const N_PATHWAYS: usize = 20;
// criterion 4
const MSE_RANGE: (f64, f64) = (12.0, 24.0);
const RIDGE_RATIO: f64 = 0.6;
const RIDGE_LAMBDAS: (f64, f64, usize) = (1e-2, 1e5, 100);
const REGRESSION_TIME: Duration = Duration::from_secs(30 * 60);
// criterion 5
const MIN_CINDEX: f64 = 0.85;
const SURVIVAL_MULTIPLIERS: [f64; 3] = [1.0, 5.0, 25.0];
const SURVIVAL_LEARNING_RATE: f64 = 0.05;
const SURVIVAL_TIME: Duration = Duration::from_secs(45 * 60);
// criterion 6
const MIN_RECOVERED_RUNS: usize = 8;
// criterion 7
const MONOTONE_SLACK: f64 = 1e-12;
// criterion 8
const SMOKE_TIME: Duration = Duration::from_secs(60);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

// ----------------------------------------------------------- criteria 1-3

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = Vec::new();
    for kind in [OutcomeType::Regression, OutcomeType::Classification, OutcomeType::Survival] {
        let (mut g, mut h) = (0.0_f64, 0.0_f64);
        for _ in 0..DERIV_INSTANCES {
            let n = rng.random_range(2..=DERIV_MAX_N);
            let (eg, eh1, eh2) = oracles::derivative_errors(kind, n, &mut rng);
            g = g.max(eg);
            h = h.max(eh1).max(eh2);
        }
        worst.push((kind, g, h));
    }
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|&(_, g, h)| g < DERIV_TOL && h < DERIV_TOL) && elapsed < DERIV_TIME;
    let detail = worst
        .iter()
        .map(|(k, g, h)| format!("{}: grad {g:.1e} hess {h:.1e}", k.as_str()))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(pass, format!("{detail}; tol {DERIV_TOL:.0e}; {:.1}s", elapsed.as_secs_f64()))
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let worst = |l1: bool, rng: &mut ChaCha8Rng| {
        (0..REDUCTION_INSTANCES)
            .map(|_| oracles::reduction_gap(l1, rng).2)
            .fold(0.0_f64, f64::max)
    };
    let l2 = worst(false, &mut rng);
    let l1 = worst(true, &mut rng);
    let elapsed = start.elapsed();
    verdict(
        l2 <= REDUCTION_TOL_L2 && l1 <= REDUCTION_TOL_L1 && elapsed < REDUCTION_TIME,
        format!(
            "worst relative gap L2 {l2:.1e} (tol {REDUCTION_TOL_L2:.0e}), L1 {l1:.1e} (tol {REDUCTION_TOL_L1:.0e}); {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut compared = 0;
    while compared < CINDEX_INSTANCES {
        let n = rng.random_range(2..=15);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(1..=6) as f64).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-3..=3) as f64).collect();
        let (total, pairs) = oracles::c_index_oracle(&t, &e, &r);
        if pairs == 0 {
            continue;
        }
        compared += 1;
        let ours = c_index(&t, &e, &r).expect("permissible pairs exist");
        if ours.concordance != total || ours.permissible_pairs != pairs || ours.c_index != total / pairs as f64 {
            mismatches += 1;
        }
    }
    let t: Vec<f64> = (0..CINDEX_LARGE_N).map(|_| rng.random_range(0.01..100.0)).collect();
    let e: Vec<bool> = (0..CINDEX_LARGE_N).map(|_| rng.random_bool(0.7)).collect();
    let r: Vec<f64> = (0..CINDEX_LARGE_N).map(|_| oracles::normal(&mut rng)).collect();
    let half = c_index(&t, &e, &r).expect("pairs exist").c_index;
    verdict(
        mismatches == 0 && (half - 0.5).abs() <= CINDEX_HALF_TOL,
        format!(
            "{mismatches}/{CINDEX_INSTANCES} mismatches; uninformative risks at N={CINDEX_LARGE_N}: {half:.4} (0.5 +/- {CINDEX_HALF_TOL})"
        ),
    )
}

// ------------------------------------------------------ simulation studies

struct Run {
    seed: u64,
    model: FittedModel,
    /// test MSE or test C-index
    metric: f64,
    ridge_mse: Option<f64>,
    /// pathway ids by decreasing weight
    ranking: Vec<String>,
    best_cell: String,
}

fn split(design: &SimDesign) -> (ExpressionDataset, ExpressionDataset, pkb::PathwayCollection) {
    let sim = simulate(design).expect("simulation succeeds");
    let train: Vec<usize> = (0..N_TRAIN).collect();
    let test: Vec<usize> = (N_TRAIN..design.n_samples).collect();
    (sim.dataset.subset(&train), sim.dataset.subset(&test), sim.pathways)
}

fn ranking(model: &FittedModel) -> Vec<String> {
    let mut w = model.pathway_weights();
    w.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    w.into_iter().map(|(id, _)| id).collect()
}

/// Raw design for the ridge baseline: all genes followed by the clinical features.
fn raw_features(d: &ExpressionDataset) -> DMatrix<f64> {
    let c = &d.covariates;
    let (n, p, q) = (c.n_samples(), c.expression.ncols(), c.clinical.ncols());
    DMatrix::from_fn(n, p + q, |i, j| if j < p { c.expression[(i, j)] } else { c.clinical[(i, j - p)] })
}

fn regression_targets(d: &ExpressionDataset) -> Vec<f64> {
    match &d.outcome {
        Outcome::Regression(y) => y.clone(),
        _ => unreachable!("regression design"),
    }
}

fn cell_label(model: &FittedModel) -> String {
    format!(
        "{} lr={} pm={}",
        model.config.kernel.label(),
        model.config.learning_rate,
        model.config.penalty_multiplier
    )
}

fn regression_run(model: SimModel, seed: u64) -> Run {
    let design = SimDesign {
        n_samples: N_SAMPLES,
        n_pathways: N_PATHWAYS,
        ..SimDesign::new(model, OutcomeType::Regression).with_seed(seed)
    };
    let (train, test, pathways) = split(&design);
    let base = BoostConfig {
        seed,
        ..BoostConfig::default()
    };
    let (_, fitted) = tune_and_fit(&train, &pathways, &base, &TuneGrid::simulation()).expect("tuning succeeds");
    let y_test = regression_targets(&test);
    let pred = fitted.predict(&test.covariates).expect("prediction succeeds");
    let metric = mse(&y_test, &pred).expect("same length");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let folds: Vec<usize> = (0..N_TRAIN).map(|_| rng.random_range(0..3)).collect();
    let (lo, hi, k) = RIDGE_LAMBDAS;
    let ridge = oracles::ridge_cv(
        &raw_features(&train),
        &regression_targets(&train),
        &raw_features(&test),
        &y_test,
        &oracles::log_space(lo, hi, k),
        &folds,
    );
    Run {
        seed,
        metric,
        ridge_mse: Some(ridge.test_mse),
        ranking: ranking(&fitted),
        best_cell: cell_label(&fitted),
        model: fitted,
    }
}

fn survival_run(model: SimModel, seed: u64) -> Run {
    let design = SimDesign {
        n_samples: N_SAMPLES,
        n_pathways: N_PATHWAYS,
        ..SimDesign::new(model, OutcomeType::Survival).with_seed(seed)
    };
    let (train, test, pathways) = split(&design);
    let base = BoostConfig {
        seed,
        ..BoostConfig::default()
    };
    let grid = TuneGrid {
        kernels: vec![KernelSpec::rbf(), KernelSpec::polynomial(3)],
        learning_rates: vec![SURVIVAL_LEARNING_RATE],
        penalty_multipliers: SURVIVAL_MULTIPLIERS.to_vec(),
    };
    let (_, fitted) = tune_and_fit(&train, &pathways, &base, &grid).expect("tuning succeeds");
    let Outcome::Survival { time, event } = &test.outcome else {
        unreachable!("survival design")
    };
    let risk = fitted.predict_scores(&test.covariates).expect("prediction succeeds");
    let metric = c_index(time, event, risk.as_slice()).expect("pairs exist").c_index;
    Run {
        seed,
        metric,
        ridge_mse: None,
        ranking: ranking(&fitted),
        best_cell: cell_label(&fitted),
        model: fitted,
    }
}

/// Runs `run` for the ten seeds `1000 * model + r`, logging each.
fn study(label: &str, model: SimModel, run: fn(SimModel, u64) -> Run) -> (Vec<Run>, Duration) {
    let start = Instant::now();
    let runs = (0..RUNS)
        .map(|r| {
            let seed = 1000 * u64::from(model.number()) + r;
            let t = Instant::now();
            let res = run(model, seed);
            println!(
                "  {label} seed {seed}: metric {:.4}{} T={} [{}] top {:?} ({:.0}s)",
                res.metric,
                res.ridge_mse.map_or(String::new(), |m| format!(" ridge {m:.3}")),
                res.model.iterations,
                res.best_cell,
                &res.ranking[..3],
                t.elapsed().as_secs_f64()
            );
            res
        })
        .collect();
    (runs, start.elapsed())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn criterion_4(runs: &[Run], elapsed: Duration) -> Verdict {
    let m = mean(runs.iter().map(|r| r.metric));
    let beaten = runs
        .iter()
        .filter(|r| r.metric <= RIDGE_RATIO * r.ridge_mse.expect("regression run"))
        .count();
    let ridge = mean(runs.iter().map(|r| r.ridge_mse.expect("regression run")));
    let pass = (MSE_RANGE.0..=MSE_RANGE.1).contains(&m) && beaten == runs.len() && elapsed < REGRESSION_TIME;
    verdict(
        pass,
        format!(
            "mean test MSE {m:.2} (target [{}, {}]); ridge mean {ridge:.2}; PKB <= {RIDGE_RATIO} x ridge in {beaten}/{} runs; {:.0}s",
            MSE_RANGE.0,
            MSE_RANGE.1,
            runs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5(m3: &[Run], m1: &[Run], elapsed: Duration) -> Verdict {
    let (c3, c1) = (mean(m3.iter().map(|r| r.metric)), mean(m1.iter().map(|r| r.metric)));
    verdict(
        c3 >= MIN_CINDEX && c1 >= MIN_CINDEX && elapsed < SURVIVAL_TIME,
        format!(
            "mean test C-index Model 3 {c3:.4}, Model 1 {c1:.4} (min {MIN_CINDEX}); {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Runs whose `k` largest weights belong exactly to pathways P1..Pk.
fn recovered(runs: &[Run], k: usize) -> usize {
    let truth: BTreeSet<String> = (1..=k).map(|m| format!("P{m}")).collect();
    runs.iter()
        .filter(|r| r.ranking[..k].iter().cloned().collect::<BTreeSet<_>>() == truth)
        .count()
}

fn criterion_6(m3: &[Run], m1: &[Run], m2: &[Run]) -> Verdict {
    let (a, b, c) = (recovered(m3, 8), recovered(m1, 3), recovered(m2, 3));
    let pass = [a, b, c].iter().all(|&x| x >= MIN_RECOVERED_RUNS);
    verdict(
        pass,
        format!(
            "informative pathways ranked on top: Model 3 survival {a}/{RUNS}, Model 1 regression {b}/{RUNS}, Model 2 regression {c}/{RUNS} (need {MIN_RECOVERED_RUNS})"
        ),
    )
}

fn criterion_7(groups: &[&[Run]]) -> Verdict {
    let mut violations = Vec::new();
    let mut models = 0;
    for run in groups.iter().flat_map(|g| g.iter()) {
        models += 1;
        let mut prev = run.model.initial_loss;
        for rec in &run.model.trace {
            if rec.training_loss > prev + MONOTONE_SLACK {
                violations.push(format!("seed {} iteration {}", run.seed, rec.iteration));
            }
            prev = rec.training_loss;
        }
    }
    verdict(
        violations.is_empty(),
        format!(
            "{} increases beyond {MONOTONE_SLACK:.0e} across {models} fitted models{}",
            violations.len(),
            if violations.is_empty() { String::new() } else { format!(": {violations:?}") }
        ),
    )
}

// -------------------------------------------------------------- criterion 8

fn fixture(kind: &str, file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(kind).join(file)
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pkb"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn smoke(dir: &Path) -> Result<Vec<String>, String> {
    let p = |path: &Path| path.to_str().expect("utf-8 path").to_string();
    let mut metrics = Vec::new();
    for (kind, outcome_type, metric) in [
        ("regression", "regression", "mse"),
        ("survival", "survival", "c_index"),
        ("classification", "classification", "error_rate"),
    ] {
        let model_dir = dir.join(kind);
        let pred_dir = dir.join(format!("{kind}-pred"));
        let (expr, clin, outc, gmt) = (
            p(&fixture(kind, "expression.csv")),
            p(&fixture(kind, "clinical.csv")),
            p(&fixture(kind, "outcome.csv")),
            p(&fixture(kind, "pathways.gmt")),
        );
        run_cli(&[
            "train", "--expression", &expr, "--clinical", &clin, "--outcome", &outc, "--pathways", &gmt,
            "--outcome-type", outcome_type, "--max-iter", "300", "--out", &p(&model_dir),
        ])?;
        run_cli(&[
            "predict", "--model", &p(&model_dir.join("model.json")), "--expression", &expr, "--clinical", &clin,
            "--out", &p(&pred_dir),
        ])?;
        let out = run_cli(&[
            "eval", "--predictions", &p(&pred_dir.join("predictions.csv")), "--outcome", &outc,
            "--outcome-type", outcome_type,
        ])?;
        let line = out
            .lines()
            .find(|l| l.starts_with(metric))
            .ok_or_else(|| format!("eval printed no {metric}"))?;
        metrics.push(format!("{kind} {}", line.replace('\t', " ")));
    }
    let sim_dir = dir.join("sim");
    run_cli(&[
        "simulate", "--model", "3", "--pathways", "20", "--outcome-type", "survival", "--n", "50", "--seed", "7",
        "--out", &p(&sim_dir),
    ])?;
    let out = run_cli(&[
        "tune", "--expression", &p(&sim_dir.join("expression.csv")), "--clinical", &p(&sim_dir.join("clinical.csv")),
        "--outcome", &p(&sim_dir.join("outcome.csv")), "--pathways", &p(&sim_dir.join("pathways.gmt")),
        "--outcome-type", "survival", "--kernel", "rbf", "--learning-rate", "0.05", "--penalty-multiplier",
        "0.2,1", "--max-iter", "300", "--out", &p(&dir.join("tune")),
    ])?;
    if !out.lines().any(|l| l.starts_with("best\t")) {
        return Err("tune reported no best cell".into());
    }
    Ok(metrics)
}

fn criterion_8() -> Verdict {
    let dir = tempfile::tempdir().expect("temporary directory");
    let start = Instant::now();
    let result = smoke(dir.path());
    let elapsed = start.elapsed();
    match result {
        Ok(metrics) => verdict(
            elapsed < SMOKE_TIME,
            format!("train/predict/eval x3, simulate, tune: {}; {:.1}s", metrics.join(", "), elapsed.as_secs_f64()),
        ),
        Err(e) => verdict(false, e),
    }
}

// ------------------------------------------------------------------- main

fn selected() -> BTreeSet<u32> {
    match std::env::var("PKB_ACCEPTANCE") {
        Ok(list) => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => (1..=8).collect(),
    }
}

fn main() -> ExitCode {
    let want = selected();
    let mut verdicts: Vec<(u32, Verdict)> = Vec::new();
    let mut report = |n: u32, v: Verdict| {
        println!("  criterion {n} done");
        verdicts.push((n, v));
    };
    if want.contains(&1) {
        report(1, criterion_1());
    }
    if want.contains(&2) {
        report(2, criterion_2());
    }
    if want.contains(&3) {
        report(3, criterion_3());
    }
    if want.contains(&8) {
        report(8, criterion_8());
    }

    let need_regression = [4, 6, 7].iter().any(|c| want.contains(c));
    let need_survival = [5, 6, 7].iter().any(|c| want.contains(c));
    let (m1_reg, reg_time) = if need_regression {
        study("regression model 1", SimModel::M1, regression_run)
    } else {
        (Vec::new(), Duration::ZERO)
    };
    if want.contains(&4) {
        report(4, criterion_4(&m1_reg, reg_time));
    }
    let (m3_surv, m1_surv, surv_time) = if need_survival {
        let (a, ta) = study("survival model 3", SimModel::M3, survival_run);
        let (b, tb) = study("survival model 1", SimModel::M1, survival_run);
        (a, b, ta + tb)
    } else {
        (Vec::new(), Vec::new(), Duration::ZERO)
    };
    if want.contains(&5) {
        report(5, criterion_5(&m3_surv, &m1_surv, surv_time));
    }
    if want.contains(&6) {
        let (m2_reg, _) = study("regression model 2", SimModel::M2, regression_run);
        report(6, criterion_6(&m3_surv, &m1_reg, &m2_reg));
    }
    if want.contains(&7) {
        report(7, criterion_7(&[&m1_reg, &m3_surv, &m1_surv]));
    }

    verdicts.sort_by_key(|(n, _)| *n);
    for (n, v) in &verdicts {
        println!("criterion {n}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed: Vec<u32> = verdicts.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        verdicts.len() - failed.len(),
        verdicts.len(),
        if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
