//! The boosting loop: initialization, increment selection, line search with
//! shrinkage, and the three-fold cross-validation that picks the number of
//! iterations.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clinical::{independent_columns_of, ClinicalTransform};
use crate::data::{ExpressionDataset, Outcome, PathwayCollection};
use crate::error::{PkbError, Result};
use crate::increment::{auto_lambda, FixedGram, IncrementSolver, Penalty, PenaltyKind};
use crate::kernel::{KernelSpec, PathwayKernel};
use crate::loss::{derivatives, empirical_loss};
use crate::model::{FittedModel, IterationRecord, PathwayComponent};

/// Upper end of the line-search interval.
pub const STEP_MAX: f64 = 100.0;
/// Absolute tolerance of the golden-section line search.
pub const LINE_SEARCH_TOL: f64 = 1e-6;
/// Fits need at least this many samples.
pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub learning_rate: f64,
    pub penalty: PenaltyKind,
    /// Scales the automatically chosen penalty.
    pub penalty_multiplier: f64,
    /// Fixed penalty; when set, the automatic choice is skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub kernel: KernelSpec,
    pub max_iterations: usize,
    pub cv_patience: usize,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            learning_rate: 0.05,
            penalty: PenaltyKind::L2,
            penalty_multiplier: 1.0,
            lambda: None,
            kernel: KernelSpec::rbf(),
            max_iterations: 1500,
            cv_patience: 50,
            cv_folds: 3,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PkbError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return bad(format!("learning rate must be in (0, 1), got {}", self.learning_rate));
        }
        if !(self.penalty_multiplier > 0.0 && self.penalty_multiplier.is_finite()) {
            return bad(format!("penalty multiplier must be > 0, got {}", self.penalty_multiplier));
        }
        if let Some(l) = self.lambda {
            Penalty::new(self.penalty, l)?;
        }
        if self.max_iterations == 0 {
            return bad("max iterations must be >= 1".into());
        }
        if self.cv_patience == 0 {
            return bad("cv patience must be >= 1".into());
        }
        if self.cv_folds < 2 {
            return bad("need at least 2 cross-validation folds".into());
        }
        self.kernel.validate()
    }
}

/// The constant score minimizing the empirical loss.
pub fn initialize_f0(outcome: &Outcome) -> Result<f64> {
    outcome.validate()?;
    if outcome.is_empty() {
        return Err(PkbError::DegenerateOutcome("no samples".into()));
    }
    match outcome {
        Outcome::Regression(y) => Ok(y.iter().sum::<f64>() / y.len() as f64),
        Outcome::Classification(y) => {
            let pos = y.iter().filter(|&&v| v > 0.0).count();
            let neg = y.len() - pos;
            if pos == 0 || neg == 0 {
                return Err(PkbError::DegenerateOutcome("only one class present".into()));
            }
            Ok((pos as f64 / neg as f64).ln())
        }
        // the partial likelihood ignores constants
        Outcome::Survival { .. } => Ok(0.0),
    }
}

/// Step length `d` in `[0, STEP_MAX]` approximately minimizing `L(F + d f)`.
///
/// Exact for squared error; golden-section search otherwise. Never returns a
/// step that increases the loss.
pub fn line_search(outcome: &Outcome, f: &[f64], inc: &[f64]) -> Result<f64> {
    if inc.len() != f.len() {
        return Err(PkbError::Dimension(format!(
            "{} scores but increment of length {}",
            f.len(),
            inc.len()
        )));
    }
    if inc.iter().any(|v| !v.is_finite()) {
        return Err(PkbError::NonFinite("increment"));
    }
    if inc.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    if let Outcome::Regression(y) = outcome {
        let (num, den) = y
            .iter()
            .zip(f)
            .zip(inc)
            .fold((0.0, 0.0), |(n, d), ((y, f), g)| (n + (y - f) * g, d + g * g));
        return Ok((num / den).clamp(0.0, STEP_MAX));
    }
    let mut buf = vec![0.0; f.len()];
    let mut loss_at = |d: f64| -> Result<f64> {
        for ((b, fi), gi) in buf.iter_mut().zip(f).zip(inc) {
            *b = fi + d * gi;
        }
        if buf.iter().any(|v| !v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        empirical_loss(outcome, &buf)
    };
    let base = loss_at(0.0)?;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, STEP_MAX);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = loss_at(c)?;
    let mut fd = loss_at(d)?;
    while b - a > LINE_SEARCH_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = loss_at(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = loss_at(d)?;
        }
    }
    let step = 0.5 * (a + b);
    let fs = loss_at(step)?;
    Ok(if fs <= base { step } else { 0.0 })
}

/// Assigns every sample to one of `k` folds, balancing classes
/// (classification) or event indicators (survival) across folds.
pub fn assign_folds(outcome: &Outcome, k: usize, seed: u64) -> Vec<usize> {
    let n = outcome.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for i in 0..n {
        strata[outcome.stratum(i)].push(i);
    }
    let mut folds = vec![0; n];
    let mut next = 0;
    for stratum in &mut strata {
        stratum.shuffle(&mut rng);
        for &i in stratum.iter() {
            folds[i] = next % k;
            next += 1;
        }
    }
    folds
}

/// Result of cross-validating one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Iteration count with the smallest averaged held-out loss.
    pub best_iteration: usize,
    pub best_loss: f64,
    /// Averaged held-out loss after each iteration, starting at iteration 0.
    pub curve: Vec<f64>,
}

/// Held-out loss; a survival fold without events carries no information.
fn heldout_loss(outcome: &Outcome, f: &[f64]) -> Result<f64> {
    if let Outcome::Survival { event, .. } = outcome {
        if !event.iter().any(|&e| e) {
            return Ok(0.0);
        }
    }
    empirical_loss(outcome, f)
}

/// Fixed inputs of one boosting process: its training rows and, for a
/// cross-validation process, the held-out rows.
struct ProcessData {
    outcome: Outcome,
    kernels: Vec<DMatrix<f64>>,
    z: DMatrix<f64>,
    /// clinical columns (of the standardized design) used by this process
    z_cols: Vec<usize>,
    heldout: Option<HeldOut>,
    fixed: Vec<FixedGram>,
}

struct HeldOut {
    outcome: Outcome,
    /// held-out x training kernels
    cross: Vec<DMatrix<f64>>,
    z: DMatrix<f64>,
}

impl ProcessData {
    fn new(prep: &PreparedData, rows: &[usize], heldout_rows: Option<&[usize]>) -> Self {
        let z_cols = independent_columns_of(&prep.z, rows);
        let z_all = prep.z.select_columns(&z_cols);
        let kernels = prep
            .kernels
            .iter()
            .map(|k| k.select_rows(rows).select_columns(rows))
            .collect();
        let heldout = heldout_rows.map(|h| HeldOut {
            outcome: prep.outcome.subset(h),
            cross: prep
                .kernels
                .iter()
                .map(|k| k.select_rows(h).select_columns(rows))
                .collect(),
            z: z_all.select_rows(h),
        });
        ProcessData {
            outcome: prep.outcome.subset(rows),
            kernels,
            z: z_all.select_rows(rows),
            z_cols,
            heldout,
            fixed: (0..prep.kernels.len()).map(|_| FixedGram::default()).collect(),
        }
    }

    fn fixed_grams(&self) -> Option<&[FixedGram]> {
        match self.outcome {
            Outcome::Regression(_) => Some(&self.fixed),
            _ => None,
        }
    }
}

struct StepRecord {
    pathway: usize,
    step: f64,
    training_loss: f64,
    regularized_loss: f64,
}

struct Process<'a> {
    data: &'a ProcessData,
    solver: IncrementSolver,
    learning_rate: f64,
    f0: f64,
    f: DVector<f64>,
    f_heldout: Option<DVector<f64>>,
    beta: Vec<DVector<f64>>,
    gamma: DVector<f64>,
}

impl<'a> Process<'a> {
    fn start(data: &'a ProcessData, config: &BoostConfig) -> Result<Self> {
        let n = data.outcome.len();
        let f0 = initialize_f0(&data.outcome)?;
        let f = DVector::from_element(n, f0);
        let lambda = match config.lambda {
            Some(l) => l,
            None => {
                let derivs = derivatives(&data.outcome, f.as_slice())?;
                let auto = auto_lambda(&derivs, &data.z, &data.kernels)? * config.penalty_multiplier;
                if auto > 0.0 {
                    auto
                } else {
                    log::warn!("zero gradient at the initial score; using a minimal penalty");
                    f64::MIN_POSITIVE
                }
            }
        };
        let penalty = Penalty::new(config.penalty, lambda)?;
        Ok(Process {
            data,
            solver: IncrementSolver::new(penalty, data.kernels.len()),
            learning_rate: config.learning_rate,
            f0,
            f,
            f_heldout: data
                .heldout
                .as_ref()
                .map(|h| DVector::from_element(h.outcome.len(), f0)),
            beta: data.kernels.iter().map(|k| DVector::zeros(k.ncols())).collect(),
            gamma: DVector::zeros(data.z.ncols()),
        })
    }

    fn lambda(&self) -> f64 {
        self.solver.penalty().lambda
    }

    fn training_loss(&self) -> Result<f64> {
        empirical_loss(&self.data.outcome, self.f.as_slice())
    }

    fn heldout_loss(&self) -> Result<f64> {
        match (&self.data.heldout, &self.f_heldout) {
            (Some(h), Some(f)) => heldout_loss(&h.outcome, f.as_slice()),
            _ => Err(PkbError::InvalidConfig("process has no held-out fold".into())),
        }
    }

    fn step(&mut self) -> Result<StepRecord> {
        let data = self.data;
        let derivs = derivatives(&data.outcome, self.f.as_slice())?;
        let sol = self
            .solver
            .best_increment(&derivs, &data.z, &data.kernels, data.fixed_grams())?;
        let m = sol.pathway_index;
        let inc = sol.increment(&data.kernels[m], &data.z);
        let d = line_search(&data.outcome, self.f.as_slice(), inc.as_slice())?;
        let shrunk = self.learning_rate * d;
        if shrunk != 0.0 {
            self.f.axpy(shrunk, &inc, 1.0);
            self.beta[m].axpy(shrunk, &sol.beta, 1.0);
            self.gamma.axpy(shrunk, &sol.gamma, 1.0);
            if let (Some(h), Some(fh)) = (&data.heldout, &mut self.f_heldout) {
                let mut inc_h = &h.cross[m] * &sol.beta;
                if h.z.ncols() > 0 {
                    inc_h += &h.z * &sol.gamma;
                }
                fh.axpy(shrunk, &inc_h, 1.0);
            }
        }
        Ok(StepRecord {
            pathway: m,
            step: d,
            training_loss: self.training_loss()?,
            regularized_loss: sol.regularized_loss,
        })
    }
}

/// Kernels, clinical design and fold structure for one dataset and kernel
/// choice. Reusable across learning rates and penalties (see [`tune`]).
pub struct PreparedData {
    kernel: KernelSpec,
    pathways: Vec<PathwayKernel>,
    /// per pathway, samples x pathway genes
    expression: Vec<DMatrix<f64>>,
    kernels: Vec<DMatrix<f64>>,
    outcome: Outcome,
    sample_ids: Vec<String>,
    clinical: ClinicalTransform,
    z: DMatrix<f64>,
    folds: Vec<usize>,
    cv: Vec<ProcessData>,
    full: Option<ProcessData>,
}

impl PreparedData {
    /// Resolves pathways, computes every pathway kernel once and splits the
    /// samples into folds (stratified, seeded by `seed` unless `folds` is given).
    pub fn new(
        dataset: &ExpressionDataset,
        pathways: &PathwayCollection,
        kernel: &KernelSpec,
        n_folds: usize,
        seed: u64,
        folds: Option<Vec<usize>>,
    ) -> Result<Self> {
        kernel.validate()?;
        let n = dataset.n_samples();
        if n < MIN_SAMPLES {
            return Err(PkbError::DegenerateOutcome(format!(
                "need at least {MIN_SAMPLES} samples, got {n}"
            )));
        }
        dataset.outcome.validate()?;
        if let Outcome::Survival { event, .. } = &dataset.outcome {
            if !event.iter().any(|&e| e) {
                return Err(PkbError::DegenerateOutcome("no events in survival outcome".into()));
            }
        }
        initialize_f0(&dataset.outcome)?;

        let cov = &dataset.covariates;
        let mut resolved = Vec::new();
        for p in pathways.iter() {
            match PathwayKernel::new(p, cov, kernel) {
                Ok(k) => resolved.push(k),
                Err(PkbError::EmptyPathway(id)) => {
                    log::warn!("dropping pathway {id}: no genes present in the data");
                }
                Err(e) => return Err(e),
            }
        }
        if resolved.is_empty() {
            return Err(PkbError::NoPathways);
        }
        let expression: Vec<DMatrix<f64>> = resolved
            .iter()
            .map(|k| cov.gene_columns(&k.genes))
            .collect::<Result<_>>()?;
        let kernels: Vec<DMatrix<f64>> = resolved
            .par_iter()
            .zip(expression.par_iter())
            .map(|(k, x)| k.evaluate_self(x))
            .collect();

        let clinical = ClinicalTransform::fit(&cov.clinical_names, &cov.clinical)?;
        let z = clinical.apply(&cov.clinical_names, &cov.clinical)?;

        let folds = match folds {
            Some(f) => {
                if f.len() != n || f.iter().any(|&k| k >= n_folds) {
                    return Err(PkbError::InvalidConfig("fold assignment does not match data".into()));
                }
                f
            }
            None => assign_folds(&dataset.outcome, n_folds, seed),
        };

        let mut prep = PreparedData {
            kernel: kernel.clone(),
            pathways: resolved,
            expression,
            kernels,
            outcome: dataset.outcome.clone(),
            sample_ids: cov.sample_ids.clone(),
            clinical,
            z,
            folds,
            cv: Vec::new(),
            full: None,
        };
        let mut cv = Vec::with_capacity(n_folds);
        for k in 0..n_folds {
            let train: Vec<usize> = (0..n).filter(|&i| prep.folds[i] != k).collect();
            let held: Vec<usize> = (0..n).filter(|&i| prep.folds[i] == k).collect();
            if held.is_empty() {
                return Err(PkbError::InvalidConfig(format!("fold {k} is empty")));
            }
            cv.push(ProcessData::new(&prep, &train, Some(&held)));
        }
        let all: Vec<usize> = (0..n).collect();
        prep.full = Some(ProcessData::new(&prep, &all, None));
        prep.cv = cv;
        Ok(prep)
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn folds(&self) -> &[usize] {
        &self.folds
    }

    pub fn n_pathways(&self) -> usize {
        self.pathways.len()
    }

    /// Runs one boosting process per fold in lockstep and stops once the
    /// averaged held-out loss has not improved for `cv_patience` iterations.
    pub fn cross_validate(&self, config: &BoostConfig) -> Result<CvResult> {
        config.validate()?;
        let mut procs = self
            .cv
            .iter()
            .map(|d| Process::start(d, config))
            .collect::<Result<Vec<_>>>()?;
        let mean_heldout = |procs: &[Process]| -> Result<f64> {
            let mut total = 0.0;
            for p in procs {
                total += p.heldout_loss()?;
            }
            if !total.is_finite() {
                return Err(PkbError::NonFinite("cross-validated loss"));
            }
            Ok(total / procs.len() as f64)
        };
        let mut curve = vec![mean_heldout(&procs)?];
        let mut best = (0usize, curve[0]);
        for t in 1..=config.max_iterations {
            procs
                .par_iter_mut()
                .map(|p| p.step().map(|_| ()))
                .collect::<Result<Vec<()>>>()?;
            let loss = mean_heldout(&procs)?;
            curve.push(loss);
            if loss < best.1 {
                best = (t, loss);
            } else if t - best.0 >= config.cv_patience {
                break;
            }
        }
        Ok(CvResult {
            best_iteration: best.0,
            best_loss: best.1,
            curve,
        })
    }

    /// Boosts on all samples for exactly `iterations` iterations.
    pub fn refit(&self, config: &BoostConfig, iterations: usize, cv: Option<&CvResult>) -> Result<FittedModel> {
        config.validate()?;
        let data = self.full.as_ref().expect("full-data process is built in new()");
        let mut proc = Process::start(data, config)?;
        let initial_loss = proc.training_loss()?;
        if !initial_loss.is_finite() {
            return Err(PkbError::NonFinite("training loss"));
        }
        let mut trace = Vec::with_capacity(iterations);
        for t in 1..=iterations {
            let rec = proc.step()?;
            trace.push(IterationRecord {
                iteration: t,
                pathway: self.pathways[rec.pathway].pathway_id.clone(),
                step: rec.step,
                training_loss: rec.training_loss,
                regularized_loss: rec.regularized_loss,
                cv_loss: cv.and_then(|c| c.curve.get(t).copied()),
            });
        }
        if iterations == 0 {
            log::warn!("zero boosting iterations selected; the model is the constant F0");
        }

        let mut gamma = vec![0.0; self.clinical.len()];
        for (k, &j) in data.z_cols.iter().enumerate() {
            gamma[j] = proc.gamma[k];
        }
        let pathways = self
            .pathways
            .iter()
            .zip(&self.expression)
            .zip(&proc.beta)
            .map(|((pk, x), beta)| {
                let used = beta.iter().any(|&b| b != 0.0);
                PathwayComponent {
                    id: pk.pathway_id.clone(),
                    genes: pk.genes.clone(),
                    gene_weights: pk.weights.clone(),
                    beta: beta.iter().copied().collect(),
                    training_expression: if used {
                        x.row_iter().map(|r| r.iter().copied().collect()).collect()
                    } else {
                        Vec::new()
                    },
                }
            })
            .collect();
        Ok(FittedModel::new(
            self.outcome.outcome_type(),
            config.clone(),
            proc.lambda(),
            proc.f0,
            iterations,
            pathways,
            self.clinical.clone(),
            gamma,
            self.sample_ids.clone(),
            proc.f.iter().copied().collect(),
            initial_loss,
            trace,
            cv.map(|c| c.curve.clone()).unwrap_or_default(),
        ))
    }

    /// Cross-validates the iteration count, then refits on all samples.
    pub fn fit(&self, config: &BoostConfig) -> Result<FittedModel> {
        let cv = self.cross_validate(config)?;
        self.refit(config, cv.best_iteration, Some(&cv))
    }
}

/// Fits a model: chooses the iteration count by cross-validation and refits
/// on the full data.
pub fn fit(dataset: &ExpressionDataset, pathways: &PathwayCollection, config: &BoostConfig) -> Result<FittedModel> {
    config.validate()?;
    let prep = PreparedData::new(dataset, pathways, &config.kernel, config.cv_folds, config.seed, None)?;
    prep.fit(config)
}

/// Candidate values for grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub kernels: Vec<KernelSpec>,
    pub learning_rates: Vec<f64>,
    pub penalty_multipliers: Vec<f64>,
}

impl TuneGrid {
    /// Candidate values used for simulated data.
    pub fn simulation() -> Self {
        TuneGrid {
            kernels: vec![KernelSpec::rbf(), KernelSpec::polynomial(3)],
            learning_rates: vec![0.01, 0.05],
            penalty_multipliers: vec![0.04, 0.2, 1.0],
        }
    }

    /// Candidate values used for real expression data.
    pub fn application() -> Self {
        TuneGrid {
            learning_rates: vec![0.005, 0.03],
            ..TuneGrid::simulation()
        }
    }

    pub fn len(&self) -> usize {
        self.kernels.len() * self.learning_rates.len() * self.penalty_multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneCell {
    pub config: BoostConfig,
    pub cv: CvResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub cells: Vec<TuneCell>,
    /// index into `cells` of the configuration with the smallest CV loss
    pub best: usize,
}

impl TuneReport {
    pub fn best_cell(&self) -> &TuneCell {
        &self.cells[self.best]
    }
}

/// Cross-validates every grid cell on the same folds and reports the cell with
/// the smallest held-out loss (first cell on ties).
pub fn tune(
    dataset: &ExpressionDataset,
    pathways: &PathwayCollection,
    base: &BoostConfig,
    grid: &TuneGrid,
) -> Result<(TuneReport, Vec<PreparedData>)> {
    if grid.is_empty() {
        return Err(PkbError::InvalidConfig("empty tuning grid".into()));
    }
    let folds = assign_folds(&dataset.outcome, base.cv_folds, base.seed);
    let mut cells = Vec::with_capacity(grid.len());
    let mut prepared = Vec::with_capacity(grid.kernels.len());
    for kernel in &grid.kernels {
        let prep = PreparedData::new(dataset, pathways, kernel, base.cv_folds, base.seed, Some(folds.clone()))?;
        let configs: Vec<BoostConfig> = grid
            .learning_rates
            .iter()
            .flat_map(|&lr| {
                grid.penalty_multipliers.iter().map(move |&pm| BoostConfig {
                    learning_rate: lr,
                    penalty_multiplier: pm,
                    kernel: kernel.clone(),
                    ..base.clone()
                })
            })
            .collect();
        let results = configs
            .par_iter()
            .map(|c| prep.cross_validate(c))
            .collect::<Result<Vec<_>>>()?;
        cells.extend(configs.into_iter().zip(results).map(|(config, cv)| TuneCell { config, cv }));
        prepared.push(prep);
    }
    let best = cells
        .iter()
        .enumerate()
        .fold(0, |b, (i, c)| if c.cv.best_loss < cells[b].cv.best_loss { i } else { b });
    Ok((TuneReport { cells, best }, prepared))
}

/// Grid search followed by a refit of the best configuration on all samples.
pub fn tune_and_fit(
    dataset: &ExpressionDataset,
    pathways: &PathwayCollection,
    base: &BoostConfig,
    grid: &TuneGrid,
) -> Result<(TuneReport, FittedModel)> {
    let (report, prepared) = tune(dataset, pathways, base, grid)?;
    let cell = report.best_cell();
    let prep = prepared
        .iter()
        .find(|p| p.kernel() == &cell.config.kernel)
        .expect("every grid kernel is prepared");
    let model = prep.refit(&cell.config, cell.cv.best_iteration, Some(&cell.cv))?;
    Ok((report, model))
}
