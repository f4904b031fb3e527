//! Fitted models: prediction, pathway weights and JSON persistence.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::boost::BoostConfig;
use crate::clinical::ClinicalTransform;
use crate::data::{Covariates, OutcomeType};
use crate::error::{PkbError, Result};
use crate::kernel::PathwayKernel;
use crate::loss::logistic;

pub const MODEL_FORMAT: &str = "pkb-model";
pub const MODEL_VERSION: u32 = 1;

/// One boosting iteration of the final fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub pathway: String,
    /// line-search step before shrinkage
    pub step: f64,
    pub training_loss: f64,
    pub regularized_loss: f64,
    /// averaged held-out loss at this iteration during cross-validation
    pub cv_loss: Option<f64>,
}

/// Accumulated dual coefficients of one pathway together with what is needed
/// to evaluate its kernel against new samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayComponent {
    pub id: String,
    pub genes: Vec<String>,
    /// normalized to sum to one
    pub gene_weights: Vec<f64>,
    pub beta: Vec<f64>,
    /// training samples x genes, row-major; empty when `beta` is all zero
    pub training_expression: Vec<Vec<f64>>,
}

impl PathwayComponent {
    pub fn weight(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum::<f64>().sqrt()
    }

    pub fn is_active(&self) -> bool {
        self.beta.iter().any(|&b| b != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format: String,
    pub version: u32,
    pub outcome_type: OutcomeType,
    pub config: BoostConfig,
    pub lambda: f64,
    pub f0: f64,
    pub iterations: usize,
    pub pathways: Vec<PathwayComponent>,
    pub clinical: ClinicalTransform,
    /// one coefficient per standardized clinical column
    pub gamma: Vec<f64>,
    pub training_sample_ids: Vec<String>,
    /// final training scores of the refit
    pub training_scores: Vec<f64>,
    pub initial_loss: f64,
    pub trace: Vec<IterationRecord>,
    /// averaged held-out loss by iteration, starting at iteration 0
    pub cv_curve: Vec<f64>,
}

impl FittedModel {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        outcome_type: OutcomeType,
        config: BoostConfig,
        lambda: f64,
        f0: f64,
        iterations: usize,
        pathways: Vec<PathwayComponent>,
        clinical: ClinicalTransform,
        gamma: Vec<f64>,
        training_sample_ids: Vec<String>,
        training_scores: Vec<f64>,
        initial_loss: f64,
        trace: Vec<IterationRecord>,
        cv_curve: Vec<f64>,
    ) -> Self {
        FittedModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            outcome_type,
            config,
            lambda,
            f0,
            iterations,
            pathways,
            clinical,
            gamma,
            training_sample_ids,
            training_scores,
            initial_loss,
            trace,
            cv_curve,
        }
    }

    /// `(pathway id, ‖β‖₂)` in the order the pathways were fitted.
    pub fn pathway_weights(&self) -> Vec<(String, f64)> {
        self.pathways.iter().map(|p| (p.id.clone(), p.weight())).collect()
    }

    /// Scores `F0 + Σ_m K_m(x, train) β_m + zᵀγ` for every sample of `data`.
    pub fn predict_scores(&self, data: &Covariates) -> Result<DVector<f64>> {
        let n = data.n_samples();
        let mut score = DVector::from_element(n, self.f0);
        for p in self.pathways.iter().filter(|p| p.is_active()) {
            let x_new = data.gene_columns(&p.genes)?;
            let n_train = p.training_expression.len();
            if n_train != p.beta.len() || p.training_expression.iter().any(|r| r.len() != p.genes.len()) {
                return Err(PkbError::Schema(format!("pathway {} has inconsistent training data", p.id)));
            }
            let x_train = DMatrix::from_fn(n_train, p.genes.len(), |i, j| p.training_expression[i][j]);
            let pk = PathwayKernel {
                pathway_id: p.id.clone(),
                genes: p.genes.clone(),
                weights: p.gene_weights.clone(),
                kind: self.config.kernel.kind,
            };
            let k = pk.evaluate(&x_new, &x_train);
            score += k * DVector::from_column_slice(&p.beta);
        }
        if !self.clinical.is_empty() {
            if self.gamma.len() != self.clinical.len() {
                return Err(PkbError::Schema("clinical coefficients do not match columns".into()));
            }
            let z = self.clinical.apply(&data.clinical_names, &data.clinical)?;
            score += z * DVector::from_column_slice(&self.gamma);
        }
        Ok(score)
    }

    /// Maps a score to the outcome scale: the prediction itself
    /// (regression), a probability (classification), or a relative risk
    /// (survival).
    pub fn response(&self, score: f64) -> f64 {
        match self.outcome_type {
            OutcomeType::Regression => score,
            OutcomeType::Classification => logistic(score),
            OutcomeType::Survival => score.exp(),
        }
    }

    pub fn predict(&self, data: &Covariates) -> Result<Vec<f64>> {
        Ok(self.predict_scores(data)?.iter().map(|&s| self.response(s)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: FittedModel = serde_json::from_str(s)?;
        if model.format != MODEL_FORMAT {
            return Err(PkbError::Schema(format!("not a model file (format '{}')", model.format)));
        }
        if model.version != MODEL_VERSION {
            return Err(PkbError::Schema(format!("unsupported model version {}", model.version)));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| PkbError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| PkbError::io(path, e))?;
        Self::from_json(&s)
    }
}
