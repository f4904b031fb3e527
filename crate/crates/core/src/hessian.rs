//! Loss Hessians in the three shapes that occur: a scaled identity
//! (squared error), a diagonal (log loss) and a dense symmetric matrix
//! (partial likelihood).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{PkbError, Result};

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub enum Hessian {
    ScaledIdentity { dim: usize, scale: f64 },
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::ScaledIdentity { dim, .. } => *dim,
            Hessian::Diagonal(d) => d.len(),
            Hessian::Dense(m) => m.nrows(),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            Hessian::ScaledIdentity { dim, scale } => *dim as f64 * scale,
            Hessian::Diagonal(d) => d.sum(),
            Hessian::Dense(m) => m.trace(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Hessian::ScaledIdentity { dim, scale } => DMatrix::identity(*dim, *dim) * *scale,
            Hessian::Diagonal(d) => DMatrix::from_diagonal(d),
            Hessian::Dense(m) => m.clone(),
        }
    }

    /// `H * m`
    pub fn mul_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Hessian::ScaledIdentity { scale, .. } => m * *scale,
            Hessian::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= d[i];
                }
                out
            }
            Hessian::Dense(h) => h * m,
        }
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Hessian::ScaledIdentity { scale, .. } => v * *scale,
            Hessian::Diagonal(d) => d.component_mul(v),
            Hessian::Dense(h) => h * v,
        }
    }

    /// Regularizes the Hessian so that it can be inverted.
    ///
    /// Dense matrices get `eps * trace/N * I` added, starting at `eps = 1e-8`
    /// and growing tenfold until the Cholesky factorization succeeds (at most
    /// `1e-4`). Diagonal entries below that floor are raised to it; scaled
    /// identities are used as they are.
    pub fn condition(&self) -> Result<ConditionedHessian> {
        let n = self.dim();
        let mean_diag = if n > 0 { self.trace() / n as f64 } else { 0.0 };
        let unit = if mean_diag > 0.0 { mean_diag } else { 1.0 };
        match self {
            Hessian::ScaledIdentity { scale, .. } => {
                if scale.is_nan() || *scale <= 0.0 {
                    return Err(PkbError::HessianFactorization(0.0));
                }
                Ok(ConditionedHessian {
                    hessian: self.clone(),
                    chol: None,
                    jitter: 0.0,
                })
            }
            Hessian::Diagonal(d) => {
                let floor = JITTER_START * unit;
                Ok(ConditionedHessian {
                    hessian: Hessian::Diagonal(d.map(|x| x.max(floor))),
                    chol: None,
                    jitter: 0.0,
                })
            }
            Hessian::Dense(m) => {
                let mut eps = JITTER_START;
                while eps <= JITTER_MAX * (1.0 + 1e-9) {
                    let shift = eps * unit;
                    let mut shifted = m.clone();
                    for i in 0..n {
                        shifted[(i, i)] += shift;
                    }
                    if let Some(chol) = Cholesky::new(shifted.clone()) {
                        return Ok(ConditionedHessian {
                            hessian: Hessian::Dense(shifted),
                            chol: Some(chol),
                            jitter: shift,
                        });
                    }
                    eps *= 10.0;
                }
                Err(PkbError::HessianFactorization(JITTER_MAX))
            }
        }
    }
}

/// A Hessian that has been made safely invertible (see [`Hessian::condition`]).
#[derive(Debug, Clone)]
pub struct ConditionedHessian {
    hessian: Hessian,
    chol: Option<Cholesky<f64, Dyn>>,
    jitter: f64,
}

impl ConditionedHessian {
    pub fn hessian(&self) -> &Hessian {
        &self.hessian
    }

    /// Amount added to the diagonal of a dense Hessian.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `H^{-1} v`
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match (&self.hessian, &self.chol) {
            (Hessian::ScaledIdentity { scale, .. }, _) => v / *scale,
            (Hessian::Diagonal(d), _) => v.component_div(d),
            (Hessian::Dense(_), Some(chol)) => chol.solve(v),
            (Hessian::Dense(_), None) => unreachable!("dense hessian is always factorized"),
        }
    }

    /// Symmetric square root, negative eigenvalues clamped to zero.
    pub fn sqrt(&self) -> DMatrix<f64> {
        match &self.hessian {
            Hessian::ScaledIdentity { dim, scale } => DMatrix::identity(*dim, *dim) * scale.sqrt(),
            Hessian::Diagonal(d) => DMatrix::from_diagonal(&d.map(f64::sqrt)),
            Hessian::Dense(m) => {
                let eig = SymmetricEigen::new(m.clone());
                let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
                &scaled * eig.eigenvectors.transpose()
            }
        }
    }
}
