//! Simulated pathway datasets with known informative pathways.

use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, ExpressionDataset, Outcome, OutcomeType, Pathway, PathwayCollection};
use crate::error::{PkbError, Result};

/// Number of simulated clinical features: two binary, three continuous.
pub const CLINICAL_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimModel {
    M1,
    M2,
    M3,
}

impl SimModel {
    /// Pathways 1..=k drive the outcome; the rest are noise.
    pub fn informative_pathways(self) -> usize {
        match self {
            SimModel::M1 | SimModel::M2 => 3,
            SimModel::M3 => 8,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            SimModel::M1 => 1,
            SimModel::M2 => 2,
            SimModel::M3 => 3,
        }
    }
}

impl FromStr for SimModel {
    type Err = PkbError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(SimModel::M1),
            "2" => Ok(SimModel::M2),
            "3" => Ok(SimModel::M3),
            other => Err(PkbError::InvalidConfig(format!("unknown simulation model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub model: SimModel,
    pub n_pathways: usize,
    pub genes_per_pathway: usize,
    pub n_samples: usize,
    pub outcome_type: OutcomeType,
    pub censor_fraction: f64,
    pub target_median: f64,
    /// Weibull shape
    pub shape: f64,
    pub seed: u64,
}

impl SimDesign {
    pub fn new(model: SimModel, outcome_type: OutcomeType) -> Self {
        SimDesign {
            model,
            n_pathways: 20,
            genes_per_pathway: 5,
            n_samples: 300,
            outcome_type,
            censor_fraction: 0.2,
            target_median: 20.0,
            shape: 1.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PkbError::InvalidConfig(m.to_string()));
        if self.n_pathways < self.model.informative_pathways() {
            return bad("fewer pathways than the model's informative pathways");
        }
        if self.genes_per_pathway < 3 {
            return bad("the simulation models need at least 3 genes per pathway");
        }
        if self.n_samples < 2 {
            return bad("need at least 2 samples");
        }
        if !(0.0..1.0).contains(&self.censor_fraction) {
            return bad("censor fraction must be in [0, 1)");
        }
        if !(self.target_median > 0.0 && self.shape > 0.0) {
            return bad("median and Weibull shape must be positive");
        }
        if self.outcome_type == OutcomeType::Classification {
            return bad("simulation supports regression and survival outcomes only");
        }
        Ok(())
    }

    pub fn gene_ids(&self) -> Vec<String> {
        (1..=self.n_pathways)
            .flat_map(|m| (1..=self.genes_per_pathway).map(move |j| format!("P{m}_G{j}")))
            .collect()
    }

    pub fn pathway_ids(&self) -> Vec<String> {
        (1..=self.n_pathways).map(|m| format!("P{m}")).collect()
    }

    pub fn pathways(&self) -> PathwayCollection {
        let genes = self.gene_ids();
        PathwayCollection::new(
            self.pathway_ids()
                .into_iter()
                .zip(genes.chunks(self.genes_per_pathway))
                .map(|(id, g)| Pathway::new(id, g.iter().cloned()))
                .collect(),
        )
    }
}

/// Standard normal expression (samples x pathways*genes) and clinical
/// features: z1, z2 Bernoulli(0.5) coded 0/1, z3..z5 standard normal.
pub fn gen_covariates<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = design.n_samples;
    let p = design.n_pathways * design.genes_per_pathway;
    let coin = Bernoulli::new(0.5).expect("valid probability");
    // filled row by row so that the draw order is sample-major
    let mut x = DMatrix::zeros(n, p);
    let mut z = DMatrix::zeros(n, CLINICAL_FEATURES);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = StandardNormal.sample(rng);
        }
        for j in 0..CLINICAL_FEATURES {
            z[(i, j)] = if j < 2 {
                f64::from(u8::from(coin.sample(rng)))
            } else {
                StandardNormal.sample(rng)
            };
        }
    }
    (x, z)
}

/// True score of one sample; `x` holds all pathways' genes consecutively,
/// `genes_per_pathway` per pathway.
pub fn score_function(model: SimModel, x: &[f64], z: &[f64], genes_per_pathway: usize) -> f64 {
    let g = |m: usize, i: usize| x[(m - 1) * genes_per_pathway + (i - 1)];
    match model {
        SimModel::M1 => {
            3.0 * z[0] - 4.0 * z[1] + 3.0 * z[2] + 2.0 * g(1, 1) + 3.0 * g(1, 2)
                + 3.0 * (0.5 * g(2, 1) + 0.5 * g(2, 2)).exp()
                + 4.0 * g(3, 1) * g(3, 2)
        }
        SimModel::M2 => {
            z[0] - 3.0 * z[1] + 3.0 * z[2] - z[3]
                + 6.0 * (0.5 * g(1, 1) + 0.5 * g(1, 2)).sin()
                + 2.0 * (g(2, 1).powi(3) - g(2, 2).powi(3)).abs().ln()
                + 2.0 * (g(3, 1).powi(2) - g(3, 2).powi(2))
        }
        SimModel::M3 => {
            let norms: f64 = (1..=8)
                .map(|m| (1..=genes_per_pathway).map(|i| g(m, i).powi(2)).sum::<f64>().sqrt())
                .sum();
            z[0] + z[2] + 2.0 * norms
        }
    }
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// `y = F + ε` with `ε ~ N(0, var(F)/5)`.
pub fn gen_regression_outcome<R: Rng + ?Sized>(f: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let var = if f.is_empty() { 0.0 } else { population_variance(f) };
    if !(var > 0.0 && var.is_finite()) {
        return Err(PkbError::DegenerateOutcome("true scores have no variance".into()));
    }
    let noise = Normal::new(0.0, (var / 5.0).sqrt()).expect("positive finite sd");
    Ok(f.iter().map(|fi| fi + noise.sample(rng)).collect())
}

/// Weibull survival time for score `f` and uniform draw `u`.
pub fn weibull_time(f: f64, kappa: f64, shape: f64, u: f64) -> f64 {
    (-u.ln() / (kappa * f.exp())).powf(1.0 / shape)
}

/// Survival times by inversion of the Weibull cumulative hazard, then a random
/// subset of `round(censor_fraction * N)` samples is censored at a uniform time
/// below its survival time.
pub fn gen_survival_outcome<R: Rng + ?Sized>(
    f: &[f64],
    kappa: f64,
    shape: f64,
    censor_fraction: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if !(kappa > 0.0 && shape > 0.0) {
        return Err(PkbError::InvalidConfig("Weibull scale and shape must be positive".into()));
    }
    let n = f.len();
    let mut time: Vec<f64> = f
        .iter()
        .map(|&fi| weibull_time(fi, kappa, shape, rng.sample(Open01)))
        .collect();
    let mut event = vec![true; n];
    let n_censor = (censor_fraction * n as f64).round() as usize;
    for i in sample(rng, n, n_censor.min(n)).into_iter() {
        let u: f64 = rng.sample(Open01);
        time[i] *= u;
        event[i] = false;
    }
    if time.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(PkbError::NonFinite("simulated survival times"));
    }
    Ok((time, event))
}

/// Weibull scale `κ` such that the survival times generated for the scores in
/// `f` (mixed with equal weight) have median `target_median`:
/// `mean_i exp(-κ e^{F_i} m^ρ) = 1/2`.
pub fn calibrate_weibull(f: &[f64], target_median: f64, shape: f64) -> Result<f64> {
    if f.is_empty() || f.iter().any(|v| !v.is_finite()) {
        return Err(PkbError::NonFinite("scores for calibration"));
    }
    if !(target_median > 0.0 && shape > 0.0) {
        return Err(PkbError::InvalidConfig("median and shape must be positive".into()));
    }
    let scale = target_median.powf(shape);
    let fmax = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // survival fraction at the target median as a function of log κ
    let surv = |log_kappa: f64| -> f64 {
        let base = (log_kappa + fmax).exp() * scale;
        f.iter().map(|&fi| (-base * (fi - fmax).exp()).exp()).sum::<f64>() / f.len() as f64
    };
    let guess = 2f64.ln().ln() - scale.ln() - fmax;
    let (mut lo, mut hi) = (guess - 1.0, guess + 1.0);
    while surv(lo) < 0.5 {
        lo -= 2.0 * (hi - lo);
    }
    while surv(hi) > 0.5 {
        hi += 2.0 * (hi - lo);
    }
    // relative precision in κ equals absolute precision in log κ
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if surv(mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// What the simulation knows but the learner does not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub design: SimDesign,
    pub informative_pathways: Vec<String>,
    pub scores: Vec<f64>,
    /// calibrated Weibull scale (survival only)
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: ExpressionDataset,
    pub pathways: PathwayCollection,
    pub truth: SimTruth,
}

/// Generates a full dataset. Covariates and outcome draw from separate
/// streams of the same seed.
pub fn simulate(design: &SimDesign) -> Result<SimulatedData> {
    design.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let (x, z) = gen_covariates(design, &mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    rng.set_stream(1);

    let n = design.n_samples;
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            let zi: Vec<f64> = z.row(i).iter().copied().collect();
            score_function(design.model, &xi, &zi, design.genes_per_pathway)
        })
        .collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(PkbError::NonFinite("simulated scores"));
    }
    let (outcome, kappa) = match design.outcome_type {
        OutcomeType::Regression => (Outcome::Regression(gen_regression_outcome(&scores, &mut rng)?), None),
        OutcomeType::Survival => {
            let kappa = calibrate_weibull(&scores, design.target_median, design.shape)?;
            let (t, d) = gen_survival_outcome(&scores, kappa, design.shape, design.censor_fraction, &mut rng)?;
            (Outcome::survival(t, d), Some(kappa))
        }
        OutcomeType::Classification => unreachable!("rejected by validate"),
    };
    let width = n.to_string().len();
    let sample_ids = (1..=n).map(|i| format!("S{i:0width$}")).collect();
    let clinical_names = (1..=CLINICAL_FEATURES).map(|j| format!("z{j}")).collect();
    let covariates = Covariates::new(sample_ids, design.gene_ids(), x, clinical_names, z)?;
    let dataset = ExpressionDataset::new(covariates, outcome)?;
    Ok(SimulatedData {
        dataset,
        pathways: design.pathways(),
        truth: SimTruth {
            design: design.clone(),
            informative_pathways: design.pathway_ids()[..design.model.informative_pathways()].to_vec(),
            scores,
            kappa,
        },
    })
}
