//! Pathway-restricted kernels with optional per-gene weights.
//!
//! Both kernels normalize the weights to sum to one, so the unweighted case
//! (all weights equal) uses the mean squared difference in the RBF exponent
//! and the mean coordinate product in the polynomial kernel.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Pathway};
use crate::error::{PkbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Polynomial { degree: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Per-gene weights; genes missing from the map get weight 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gene_weights: Option<BTreeMap<String, f64>>,
}

impl KernelSpec {
    pub fn rbf() -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            gene_weights: None,
        }
    }

    pub fn polynomial(degree: u32) -> Self {
        KernelSpec {
            kind: KernelKind::Polynomial { degree },
            gene_weights: None,
        }
    }

    pub fn with_gene_weights(mut self, weights: BTreeMap<String, f64>) -> Self {
        self.gene_weights = Some(weights);
        self
    }

    /// Short name used on the command line: `rbf` or `poly<d>`.
    pub fn label(&self) -> String {
        match self.kind {
            KernelKind::Rbf => "rbf".to_string(),
            KernelKind::Polynomial { degree } => format!("poly{degree}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let KernelKind::Polynomial { degree } = self.kind {
            if degree < 1 {
                return Err(PkbError::InvalidConfig("polynomial degree must be >= 1".into()));
            }
        }
        if let Some(w) = &self.gene_weights {
            if let Some((g, v)) = w.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
                return Err(PkbError::InvalidConfig(format!("gene weight for {g} is {v}")));
            }
        }
        Ok(())
    }

    /// Normalized weights (summing to one) for the given genes.
    pub fn normalized_weights(&self, pathway_id: &str, genes: &[String]) -> Result<Vec<f64>> {
        let raw: Vec<f64> = match &self.gene_weights {
            None => vec![1.0; genes.len()],
            Some(map) => genes.iter().map(|g| map.get(g).copied().unwrap_or(1.0)).collect(),
        };
        let total: f64 = raw.iter().sum();
        if genes.is_empty() {
            return Err(PkbError::EmptyPathway(pathway_id.to_string()));
        }
        if total.is_nan() || total <= 0.0 {
            return Err(PkbError::DegenerateWeights(pathway_id.to_string()));
        }
        Ok(raw.into_iter().map(|w| w / total).collect())
    }
}

impl std::str::FromStr for KernelSpec {
    type Err = PkbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(KernelSpec::rbf()),
            _ => s
                .strip_prefix("poly")
                .and_then(|d| d.parse::<u32>().ok())
                .filter(|d| *d >= 1)
                .map(KernelSpec::polynomial)
                .ok_or_else(|| PkbError::InvalidConfig(format!("unknown kernel '{s}'"))),
        }
    }
}

fn check_weights(u: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.len() != w.len() || u.is_empty() {
        return Err(PkbError::Dimension(format!(
            "kernel arguments have lengths {}, {}, {}",
            u.len(),
            v.len(),
            w.len()
        )));
    }
    let total: f64 = w.iter().sum();
    if total.is_nan() || total <= 0.0 || w.iter().any(|x| *x < 0.0) {
        return Err(PkbError::DegenerateWeights("kernel arguments".into()));
    }
    Ok(total)
}

/// Weighted RBF kernel `exp(-sum_j w_j (u_j - v_j)^2 / sum_j w_j)`.
pub fn rbf_kernel(u: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    let total = check_weights(u, v, w)?;
    let normalized: Vec<f64> = w.iter().map(|x| x / total).collect();
    Ok(rbf_normalized(u, v, &normalized))
}

/// Weighted polynomial kernel `(1 + sum_j w_j u_j v_j / sum_j w_j)^d`.
pub fn poly_kernel(u: &[f64], v: &[f64], w: &[f64], degree: u32) -> Result<f64> {
    if degree < 1 {
        return Err(PkbError::InvalidConfig("polynomial degree must be >= 1".into()));
    }
    let total = check_weights(u, v, w)?;
    let normalized: Vec<f64> = w.iter().map(|x| x / total).collect();
    Ok(poly_normalized(u, v, &normalized, degree))
}

#[inline]
fn rbf_normalized(u: &[f64], v: &[f64], w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..w.len() {
        let d = u[j] - v[j];
        acc += w[j] * d * d;
    }
    (-acc).exp()
}

#[inline]
fn poly_normalized(u: &[f64], v: &[f64], w: &[f64], degree: u32) -> f64 {
    let mut acc = 0.0;
    for j in 0..w.len() {
        acc += w[j] * (u[j] * v[j]);
    }
    (1.0 + acc).powi(degree as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub pathway_id: String,
    /// rows: evaluation samples, columns: reference samples
    pub values: DMatrix<f64>,
}

/// A pathway resolved against a gene index: the genes kept and their
/// normalized weights. Evaluates kernels between row-major sample blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PathwayKernel {
    pub pathway_id: String,
    pub genes: Vec<String>,
    pub weights: Vec<f64>,
    pub kind: KernelKind,
}

impl PathwayKernel {
    pub fn new(pathway: &Pathway, available: &Covariates, spec: &KernelSpec) -> Result<Self> {
        let index = available.gene_index();
        let genes = pathway.present_genes(&index);
        let weights = spec.normalized_weights(&pathway.id, &genes)?;
        Ok(PathwayKernel {
            pathway_id: pathway.id.clone(),
            genes,
            weights,
            kind: spec.kind,
        })
    }

    /// Kernel between the rows of `eval` and the rows of `reference`, both
    /// already restricted to this pathway's genes (samples x genes).
    pub fn evaluate(&self, eval: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.weights.len();
        debug_assert_eq!(eval.ncols(), p);
        debug_assert_eq!(reference.ncols(), p);
        // Row-major copies keep the inner loop contiguous.
        let rows = |m: &DMatrix<f64>| -> Vec<f64> { m.transpose().as_slice().to_vec() };
        let a = rows(eval);
        let b = rows(reference);
        let kind = self.kind;
        let w = &self.weights;
        DMatrix::from_fn(eval.nrows(), reference.nrows(), |i, j| {
            let u = &a[i * p..(i + 1) * p];
            let v = &b[j * p..(j + 1) * p];
            match kind {
                KernelKind::Rbf => rbf_normalized(u, v, w),
                KernelKind::Polynomial { degree } => poly_normalized(u, v, w, degree),
            }
        })
    }

    /// Symmetric self-kernel; only the upper triangle is evaluated.
    pub fn evaluate_self(&self, samples: &DMatrix<f64>) -> DMatrix<f64> {
        let n = samples.nrows();
        let p = self.weights.len();
        let a: Vec<f64> = samples.transpose().as_slice().to_vec();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            let u = &a[i * p..(i + 1) * p];
            for j in i..n {
                let v = &a[j * p..(j + 1) * p];
                let k = match self.kind {
                    KernelKind::Rbf => rbf_normalized(u, v, &self.weights),
                    KernelKind::Polynomial { degree } => poly_normalized(u, v, &self.weights, degree),
                };
                out[(i, j)] = k;
                out[(j, i)] = k;
            }
        }
        out
    }
}

/// Kernel matrix between two sample sets using only the genes of `pathway`.
///
/// Pathway genes absent from either sample set are dropped; weights are
/// renormalized over the genes that remain.
pub fn kernel_matrix(
    eval: &Covariates,
    reference: &Covariates,
    pathway: &Pathway,
    spec: &KernelSpec,
) -> Result<KernelMatrix> {
    spec.validate()?;
    let eval_index = eval.gene_index();
    let shared = Pathway {
        id: pathway.id.clone(),
        description: String::new(),
        genes: pathway.present_genes(&eval_index),
    };
    let kernel = PathwayKernel::new(&shared, reference, spec)?;
    if kernel.genes.len() < pathway.genes.len() {
        log::warn!(
            "pathway {}: using {} of {} genes",
            pathway.id,
            kernel.genes.len(),
            pathway.genes.len()
        );
    }
    let a = eval.gene_columns(&kernel.genes)?;
    let b = reference.gene_columns(&kernel.genes)?;
    Ok(KernelMatrix {
        pathway_id: pathway.id.clone(),
        values: kernel.evaluate(&a, &b),
    })
}
