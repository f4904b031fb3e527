mod args;
mod manifest;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use pkb::io::{self, IngestOptions, InputPaths};
use pkb::metrics::classification_error;
use pkb::{
    c_index, mse, simulate, tune_and_fit, BoostConfig, ErrorClass, FittedModel, KernelSpec, Outcome, PkbError, SimDesign, TuneGrid,
};

use args::{Cli, Command, EvalArgs, InputArgs, PredictArgs, SimulateArgs, TrainArgs, TuneArgs};
use manifest::RunManifest;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Tune(a) => tune(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => EXIT_USAGE,
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            })
        }
    }
}

/// Honors `PKB_THREADS` by sizing the global worker pool.
fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("PKB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("PKB_THREADS must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn create_dir(dir: &Path) -> pkb::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PkbError::io(dir, e))
}

fn input_files(input: &InputArgs) -> Vec<PathBuf> {
    let mut files = vec![input.expression.clone()];
    files.extend(input.clinical.clone());
    files.push(input.outcome.clone());
    files.push(input.pathways.clone());
    files.extend(input.gene_weights.clone());
    files
}

fn base_config(input: &InputArgs) -> pkb::Result<BoostConfig> {
    let mut kernel = KernelSpec::rbf();
    if let Some(path) = &input.gene_weights {
        kernel = kernel.with_gene_weights(io::read_gene_weights(path)?);
    }
    Ok(BoostConfig {
        penalty: input.penalty.into(),
        kernel,
        max_iterations: input.max_iter,
        seed: input.seed,
        ..BoostConfig::default()
    })
}

fn with_kernel(base: &BoostConfig, kernel: KernelSpec) -> KernelSpec {
    match &base.kernel.gene_weights {
        Some(w) => kernel.with_gene_weights(w.clone()),
        None => kernel,
    }
}

fn ingest(input: &InputArgs) -> pkb::Result<io::Ingested> {
    let paths = InputPaths {
        expression: &input.expression,
        clinical: input.clinical.as_deref(),
        outcome: &input.outcome,
        pathways: &input.pathways,
    };
    io::ingest(&paths, input.outcome_type.into(), IngestOptions::default())
}

/// Writes the model, its pathway weights and the manifest.
fn write_model_outputs(
    out: &Path,
    model: &FittedModel,
    mut manifest: RunManifest,
    extra: &[PathBuf],
) -> pkb::Result<()> {
    let model_path = out.join("model.json");
    model.save(&model_path)?;
    let weights_path = out.join("pathway_weights.csv");
    io::write_pathway_weights(&weights_path, &model.pathway_weights())?;
    manifest.add_outputs([model_path, weights_path].iter().chain(extra))?;
    manifest.write(out)
}

fn report_model(model: &FittedModel) {
    println!("iterations\t{}", model.iterations);
    println!("lambda\t{}", model.lambda);
    if let Some(best) = model.cv_curve.get(model.iterations) {
        println!("cv_loss\t{best}");
    }
    let mut weights = model.pathway_weights();
    weights.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (id, w) in weights.iter().filter(|(_, w)| *w > 0.0).take(10) {
        println!("weight\t{id}\t{w}");
    }
}

fn train(a: TrainArgs) -> pkb::Result<()> {
    let base = base_config(&a.input)?;
    let config = BoostConfig {
        kernel: with_kernel(&base, a.kernel.into()),
        learning_rate: a.learning_rate,
        penalty_multiplier: a.penalty_multiplier,
        ..base
    };
    config.validate()?;
    let data = ingest(&a.input)?;
    let model = pkb::fit(&data.dataset, &data.pathways, &config)?;
    create_dir(&a.input.out)?;
    let manifest = RunManifest::new("train", serde_json::to_value(&config)?, Some(config.seed), &input_files(&a.input))?
        .with_report(serde_json::to_value(&data.report)?);
    write_model_outputs(&a.input.out, &model, manifest, &[])?;
    report_model(&model);
    Ok(())
}

fn tune(a: TuneArgs) -> pkb::Result<()> {
    let base = base_config(&a.input)?;
    let grid = TuneGrid {
        kernels: a.kernels.iter().map(|&k| with_kernel(&base, k.into())).collect(),
        learning_rates: a.learning_rates.clone(),
        penalty_multipliers: a.penalty_multipliers.clone(),
    };
    for lr in &grid.learning_rates {
        BoostConfig { learning_rate: *lr, ..base.clone() }.validate()?;
    }
    for pm in &grid.penalty_multipliers {
        BoostConfig { penalty_multiplier: *pm, ..base.clone() }.validate()?;
    }
    let data = ingest(&a.input)?;
    let (report, model) = tune_and_fit(&data.dataset, &data.pathways, &base, &grid)?;
    create_dir(&a.input.out)?;
    let tune_path = a.input.out.join("tune.json");
    std::fs::write(&tune_path, serde_json::to_string_pretty(&report)?).map_err(|e| PkbError::io(&tune_path, e))?;
    let manifest = RunManifest::new("tune", serde_json::to_value(&grid)?, Some(base.seed), &input_files(&a.input))?
        .with_report(serde_json::to_value(&data.report)?);
    write_model_outputs(&a.input.out, &model, manifest, &[tune_path])?;
    for cell in &report.cells {
        println!(
            "cell\t{}\t{}\t{}\t{}\t{}",
            cell.config.kernel.label(),
            cell.config.learning_rate,
            cell.config.penalty_multiplier,
            cell.cv.best_iteration,
            cell.cv.best_loss
        );
    }
    let best = report.best_cell();
    println!(
        "best\t{}\t{}\t{}\t{}",
        best.config.kernel.label(),
        best.config.learning_rate,
        best.config.penalty_multiplier,
        best.cv.best_loss
    );
    report_model(&model);
    Ok(())
}

fn predict(a: PredictArgs) -> pkb::Result<()> {
    let model = FittedModel::load(&a.model)?;
    let cov = io::read_covariates(&a.expression, a.clinical.as_deref(), &model.clinical.names())?;
    let scores = model.predict_scores(&cov)?;
    let responses: Vec<f64> = scores.iter().map(|&s| model.response(s)).collect();
    create_dir(&a.out)?;
    let path = a.out.join("predictions.csv");
    io::write_predictions(&path, &cov.sample_ids, scores.as_slice(), &responses)?;
    let mut inputs = vec![a.model.clone(), a.expression.clone()];
    inputs.extend(a.clinical.clone());
    let mut manifest = RunManifest::new("predict", serde_json::to_value(&model.config)?, None, &inputs)?;
    manifest.add_outputs([&path])?;
    manifest.write(&a.out)?;
    println!("predicted\t{}", cov.n_samples());
    Ok(())
}

fn simulate_cmd(a: SimulateArgs) -> pkb::Result<()> {
    let design = SimDesign {
        n_pathways: a.pathways,
        n_samples: a.n,
        ..SimDesign::new(a.model.into(), a.outcome_type.into()).with_seed(a.seed)
    };
    let sim = simulate(&design)?;
    io::write_simulated(&a.out, &sim)?;
    let outputs: Vec<PathBuf> = ["expression.csv", "clinical.csv", "outcome.csv", "pathways.gmt", "truth.json"]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    let mut manifest = RunManifest::new("simulate", serde_json::to_value(&design)?, Some(a.seed), &[])?;
    manifest.add_outputs(&outputs)?;
    manifest.write(&a.out)?;
    println!("simulated\t{}\t{}", design.n_samples, design.n_pathways);
    Ok(())
}

fn eval(a: EvalArgs) -> pkb::Result<()> {
    let (ids, outcome) = io::read_outcome(&a.outcome, a.outcome_type.into())?;
    let (pred_ids, preds) = io::read_predictions(&a.predictions)?;
    let index: HashMap<&str, usize> = pred_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let aligned = ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|&i| preds[i])
                .ok_or_else(|| PkbError::Schema(format!("no prediction for sample '{id}'")))
        })
        .collect::<pkb::Result<Vec<f64>>>()?;
    match &outcome {
        Outcome::Regression(y) => println!("mse\t{}", mse(y, &aligned)?),
        Outcome::Survival { time, event } => println!("c_index\t{}", c_index(time, event, &aligned)?.c_index),
        Outcome::Classification(y) => {
            // probabilities are compared with one half
            let scores: Vec<f64> = aligned.iter().map(|p| p - 0.5).collect();
            println!("error_rate\t{}", classification_error(y, &scores)?);
        }
    }
    Ok(())
}
