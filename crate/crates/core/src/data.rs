//! Datasets, outcomes and pathway collections.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PkbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeType {
    Regression,
    Classification,
    Survival,
}

impl OutcomeType {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeType::Regression => "regression",
            OutcomeType::Classification => "classification",
            OutcomeType::Survival => "survival",
        }
    }
}

impl std::str::FromStr for OutcomeType {
    type Err = PkbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(OutcomeType::Regression),
            "classification" => Ok(OutcomeType::Classification),
            "survival" => Ok(OutcomeType::Survival),
            other => Err(PkbError::InvalidConfig(format!("unknown outcome type '{other}'"))),
        }
    }
}

/// Observed response for every training sample.
///
/// Classification labels are stored in the {-1, +1} coding used by the log loss.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Regression(Vec<f64>),
    Classification(Vec<f64>),
    Survival { time: Vec<f64>, event: Vec<bool> },
}

impl Outcome {
    pub fn survival(time: Vec<f64>, event: Vec<bool>) -> Self {
        Outcome::Survival { time, event }
    }

    pub fn len(&self) -> usize {
        match self {
            Outcome::Regression(y) | Outcome::Classification(y) => y.len(),
            Outcome::Survival { time, .. } => time.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn outcome_type(&self) -> OutcomeType {
        match self {
            Outcome::Regression(_) => OutcomeType::Regression,
            Outcome::Classification(_) => OutcomeType::Classification,
            Outcome::Survival { .. } => OutcomeType::Survival,
        }
    }

    /// Restrict to the given sample indices, in order.
    pub fn subset(&self, rows: &[usize]) -> Outcome {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        match self {
            Outcome::Regression(y) => Outcome::Regression(pick(y)),
            Outcome::Classification(y) => Outcome::Classification(pick(y)),
            Outcome::Survival { time, event } => Outcome::Survival {
                time: pick(time),
                event: rows.iter().map(|&i| event[i]).collect(),
            },
        }
    }

    /// Stratum label used to balance cross-validation folds.
    pub(crate) fn stratum(&self, i: usize) -> usize {
        match self {
            Outcome::Regression(_) => 0,
            Outcome::Classification(y) => usize::from(y[i] > 0.0),
            Outcome::Survival { event, .. } => usize::from(event[i]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Outcome::Regression(y) => {
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(PkbError::Schema("non-finite regression outcome".into()));
                }
            }
            Outcome::Classification(y) => {
                if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
                    return Err(PkbError::DegenerateOutcome(format!(
                        "classification label {bad} is not -1 or +1"
                    )));
                }
            }
            Outcome::Survival { time, event } => {
                if time.len() != event.len() {
                    return Err(PkbError::Dimension(format!(
                        "{} survival times but {} event indicators",
                        time.len(),
                        event.len()
                    )));
                }
                if let Some(bad) = time.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
                    return Err(PkbError::DegenerateOutcome(format!(
                        "survival time {bad} is not positive"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gene expression and clinical covariates for a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub sample_ids: Vec<String>,
    pub gene_ids: Vec<String>,
    /// samples x genes
    pub expression: DMatrix<f64>,
    pub clinical_names: Vec<String>,
    /// samples x clinical features
    pub clinical: DMatrix<f64>,
}

impl Covariates {
    pub fn new(
        sample_ids: Vec<String>,
        gene_ids: Vec<String>,
        expression: DMatrix<f64>,
        clinical_names: Vec<String>,
        clinical: DMatrix<f64>,
    ) -> Result<Self> {
        let n = sample_ids.len();
        if expression.shape() != (n, gene_ids.len()) {
            return Err(PkbError::Dimension(format!(
                "expression is {:?}, expected ({n}, {})",
                expression.shape(),
                gene_ids.len()
            )));
        }
        if clinical.shape() != (n, clinical_names.len()) {
            return Err(PkbError::Dimension(format!(
                "clinical matrix is {:?}, expected ({n}, {})",
                clinical.shape(),
                clinical_names.len()
            )));
        }
        if expression.iter().chain(clinical.iter()).any(|v| !v.is_finite()) {
            return Err(PkbError::Schema("non-finite covariate value".into()));
        }
        Ok(Covariates {
            sample_ids,
            gene_ids,
            expression,
            clinical_names,
            clinical,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn gene_index(&self) -> HashMap<&str, usize> {
        self.gene_ids
            .iter()
            .enumerate()
            .map(|(j, g)| (g.as_str(), j))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Covariates {
        Covariates {
            sample_ids: rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            gene_ids: self.gene_ids.clone(),
            expression: self.expression.select_rows(rows),
            clinical_names: self.clinical_names.clone(),
            clinical: self.clinical.select_rows(rows),
        }
    }

    /// Expression restricted to the named genes, samples x genes.
    pub fn gene_columns(&self, genes: &[String]) -> Result<DMatrix<f64>> {
        let index = self.gene_index();
        let cols = genes
            .iter()
            .map(|g| {
                index
                    .get(g.as_str())
                    .copied()
                    .ok_or_else(|| PkbError::Schema(format!("gene '{g}' missing from expression data")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.expression.select_columns(&cols))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionDataset {
    pub covariates: Covariates,
    pub outcome: Outcome,
}

impl ExpressionDataset {
    pub fn new(covariates: Covariates, outcome: Outcome) -> Result<Self> {
        if covariates.n_samples() != outcome.len() {
            return Err(PkbError::Dimension(format!(
                "{} samples but {} outcomes",
                covariates.n_samples(),
                outcome.len()
            )));
        }
        outcome.validate()?;
        Ok(ExpressionDataset { covariates, outcome })
    }

    pub fn n_samples(&self) -> usize {
        self.outcome.len()
    }

    pub fn subset(&self, rows: &[usize]) -> ExpressionDataset {
        ExpressionDataset {
            covariates: self.covariates.subset(rows),
            outcome: self.outcome.subset(rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pathway {
    pub id: String,
    pub description: String,
    pub genes: Vec<String>,
}

impl Pathway {
    /// Builds a pathway, dropping repeated genes while keeping first-seen order.
    pub fn new(id: impl Into<String>, genes: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let mut seen = HashSet::new();
        let genes = genes
            .into_iter()
            .map(Into::into)
            .filter(|g: &String| seen.insert(g.clone()))
            .collect();
        Pathway {
            id: id.into(),
            description: String::new(),
            genes,
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    /// Genes of this pathway that are present in `available`, in pathway order.
    pub fn present_genes(&self, available: &HashMap<&str, usize>) -> Vec<String> {
        self.genes
            .iter()
            .filter(|g| available.contains_key(g.as_str()))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PathwayCollection {
    pub pathways: Vec<Pathway>,
}

impl PathwayCollection {
    pub fn new(pathways: Vec<Pathway>) -> Self {
        PathwayCollection { pathways }
    }

    pub fn len(&self) -> usize {
        self.pathways.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pathways.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Pathway> {
        self.pathways.iter()
    }

    /// Intersects every pathway with the genes in `covariates`. Pathways with
    /// fewer than `min_genes` genes left are dropped with a warning; the
    /// returned list names the dropped pathways.
    pub fn restrict_to(&self, covariates: &Covariates, min_genes: usize) -> (PathwayCollection, Vec<String>) {
        let index = covariates.gene_index();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for p in &self.pathways {
            let present = p.present_genes(&index);
            if present.len() < p.genes.len() {
                log::warn!(
                    "pathway {}: {} of {} genes absent from expression data",
                    p.id,
                    p.genes.len() - present.len(),
                    p.genes.len()
                );
            }
            if present.len() < min_genes.max(1) {
                log::warn!("dropping pathway {} ({} genes present)", p.id, present.len());
                dropped.push(p.id.clone());
                continue;
            }
            kept.push(Pathway {
                id: p.id.clone(),
                description: p.description.clone(),
                genes: present,
            });
        }
        (PathwayCollection::new(kept), dropped)
    }
}
