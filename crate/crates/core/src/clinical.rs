//! Standardization and rank repair of the clinical design matrix.
//!
//! No intercept column is added; the constant `F0` plays that role.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PkbError, Result};

/// A column counts as collinear when its multiple correlation with the
/// columns kept before it exceeds this value.
pub const COLLINEARITY_THRESHOLD: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedColumn {
    pub name: String,
    pub mean: f64,
    pub scale: f64,
}

/// Clinical columns retained for the model and their standardization constants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClinicalTransform {
    pub columns: Vec<StandardizedColumn>,
}

impl ClinicalTransform {
    /// Standardizes every column, then drops constant columns and columns that
    /// are (numerically) linear combinations of earlier ones.
    pub fn fit(names: &[String], z: &DMatrix<f64>) -> Result<Self> {
        if names.len() != z.ncols() {
            return Err(PkbError::Dimension(format!(
                "{} clinical names for {} columns",
                names.len(),
                z.ncols()
            )));
        }
        let n = z.nrows() as f64;
        let mut candidates = Vec::new();
        let mut std_cols = Vec::new();
        for (j, name) in names.iter().enumerate() {
            let col = z.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let scale = var.sqrt();
            if scale.is_nan() || scale <= 0.0 || scale.is_infinite() {
                log::warn!("dropping constant clinical column {name}");
                continue;
            }
            candidates.push(StandardizedColumn {
                name: name.clone(),
                mean,
                scale,
            });
            std_cols.push(col.map(|v| (v - mean) / scale));
        }
        let keep = independent_columns(&std_cols);
        let columns = keep
            .iter()
            .map(|&k| candidates[k].clone())
            .collect::<Vec<_>>();
        for (k, c) in candidates.iter().enumerate() {
            if !keep.contains(&k) {
                log::warn!("dropping collinear clinical column {}", c.name);
            }
        }
        Ok(ClinicalTransform { columns })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Applies the transform to a matrix whose columns are named `names`.
    pub fn apply(&self, names: &[String], z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(z.nrows(), self.columns.len());
        for (k, c) in self.columns.iter().enumerate() {
            let j = names
                .iter()
                .position(|n| n == &c.name)
                .ok_or_else(|| PkbError::Schema(format!("clinical column '{}' missing", c.name)))?;
            for i in 0..z.nrows() {
                out[(i, k)] = (z[(i, j)] - c.mean) / c.scale;
            }
        }
        Ok(out)
    }
}

/// Indices of columns kept by sequential Gram-Schmidt: a column is dropped if
/// it is zero or its multiple correlation with the kept columns exceeds
/// [`COLLINEARITY_THRESHOLD`].
pub fn independent_columns(cols: &[DVector<f64>]) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for (j, col) in cols.iter().enumerate() {
        let total = col.norm_squared();
        if total.is_nan() || total <= 0.0 {
            continue;
        }
        let mut resid = col.clone();
        // two passes of modified Gram-Schmidt for stability
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&resid);
                resid.axpy(-proj, q, 1.0);
            }
        }
        let frac = (resid.norm_squared() / total).clamp(0.0, 1.0);
        let multiple_corr = (1.0 - frac).sqrt();
        if multiple_corr > COLLINEARITY_THRESHOLD {
            continue;
        }
        let norm = resid.norm();
        basis.push(resid / norm);
        keep.push(j);
    }
    keep
}

/// Independent columns of the rows of `z` listed in `rows`.
pub(crate) fn independent_columns_of(z: &DMatrix<f64>, rows: &[usize]) -> Vec<usize> {
    let cols: Vec<DVector<f64>> = (0..z.ncols())
        .map(|j| {
            let sub = DVector::from_iterator(rows.len(), rows.iter().map(|&i| z[(i, j)]));
            let mean = sub.mean();
            sub.map(|v| v - mean)
        })
        .collect();
    independent_columns(&cols)
}
