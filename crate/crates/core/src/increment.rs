//! Second-order increment selection.
//!
//! For a pathway with kernel matrix `K` and clinical matrix `Z`, the increment
//! `f = K beta + Z gamma` minimizes
//!
//! ```text
//! 1/2 (K beta + Z gamma + H^-1 g)' H (K beta + Z gamma + H^-1 g) + lambda * Omega(beta)
//! ```
//!
//! Profiling out the unpenalized `gamma` leaves a penalized least-squares
//! problem `|eta + Kt beta|^2 + lambda * Omega(beta)` with
//! `eta = H^{1/2} U H^-1 g / sqrt 2`, `Kt = H^{1/2} U K / sqrt 2` and
//! `U = I - Z (Z'HZ)^-1 Z'H`. [`transform`], [`solve_beta`] and
//! [`recover_gamma`] implement those three steps literally.
//!
//! The boosting loop never forms `H^{1/2}`: it works with the Gram form
//! `Kt'Kt = K' P K / 2` and `Kt' eta = K' P H^-1 g / 2`, where `P = HU` is
//! symmetric and `P H^-1 g = g - HZ (Z'HZ)^-1 Z'g`.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PkbError, Result};
use crate::hessian::{ConditionedHessian, Hessian};
use crate::loss::LossDerivatives;

/// Sweeps allowed before the L1 solver gives up.
pub const LASSO_MAX_SWEEPS: usize = 10_000;
/// Coordinate-change tolerance of the L1 solver.
pub const LASSO_TOL: f64 = 1e-7;
/// Relative residual tolerance of the iterative L2 solver.
pub const CG_TOL: f64 = 1e-10;
/// Iterations allowed before the L2 preconditioner is rebuilt from a direct solve.
const PCG_MAX_ITER: usize = 8;
/// Fraction of the median per-pathway `lambda_max` used as the automatic penalty.
pub const AUTO_LAMBDA_FRACTION: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    L1,
    L2,
}

impl std::str::FromStr for PenaltyKind {
    type Err = PkbError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(PenaltyKind::L1),
            "l2" => Ok(PenaltyKind::L2),
            other => Err(PkbError::InvalidConfig(format!("unknown penalty '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    pub kind: PenaltyKind,
    pub lambda: f64,
}

impl Penalty {
    pub fn new(kind: PenaltyKind, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(PkbError::InvalidConfig(format!("penalty lambda must be > 0, got {lambda}")));
        }
        Ok(Penalty { kind, lambda })
    }

    /// `lambda * |beta|_1` or `lambda * |beta|_2^2`.
    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        self.lambda
            * match self.kind {
                PenaltyKind::L1 => beta.lp_norm(1),
                PenaltyKind::L2 => beta.norm_squared(),
            }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementSolution {
    pub pathway_index: usize,
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    /// Value of the regularized second-order loss at (beta, gamma).
    pub regularized_loss: f64,
}

impl IncrementSolution {
    /// Increment evaluated at the training samples: `K beta + Z gamma`.
    pub fn increment(&self, kernel: &DMatrix<f64>, z: &DMatrix<f64>) -> DVector<f64> {
        let mut f = kernel * &self.beta;
        if z.ncols() > 0 {
            f += z * &self.gamma;
        }
        f
    }
}

fn check_shapes(h: &Hessian, z: &DMatrix<f64>, grad: &DVector<f64>, k: &DMatrix<f64>) -> Result<()> {
    let n = h.dim();
    if grad.len() != n || z.nrows() != n || k.nrows() != n || k.ncols() != n {
        return Err(PkbError::Dimension(format!(
            "hessian {n}x{n}, gradient {}, Z {}x{}, K {}x{}",
            grad.len(),
            z.nrows(),
            z.ncols(),
            k.nrows(),
            k.ncols()
        )));
    }
    Ok(())
}

/// Clinical projection factors shared by every pathway within one iteration.
pub struct SharedReduction {
    hess: ConditionedHessian,
    /// H Z
    hz: DMatrix<f64>,
    /// Cholesky factor of Z'HZ, absent when there are no clinical columns
    zhz: Option<Cholesky<f64, Dyn>>,
    /// Z' g
    ztg: DVector<f64>,
    /// P H^-1 g = g - HZ (Z'HZ)^-1 Z'g
    ph: DVector<f64>,
    /// |eta|^2
    eta_sq: f64,
}

impl SharedReduction {
    pub fn new(derivs: &LossDerivatives, z: &DMatrix<f64>) -> Result<Self> {
        let n = derivs.gradient.len();
        if derivs.hessian.dim() != n || z.nrows() != n {
            return Err(PkbError::Dimension(format!(
                "gradient {n}, hessian {}, Z rows {}",
                derivs.hessian.dim(),
                z.nrows()
            )));
        }
        let hess = derivs.hessian.condition()?;
        let g = &derivs.gradient;
        let hinv_g = hess.solve(g);
        if z.ncols() == 0 {
            let eta_sq = 0.5 * hinv_g.dot(g);
            return Ok(SharedReduction {
                hess,
                hz: DMatrix::zeros(n, 0),
                zhz: None,
                ztg: DVector::zeros(0),
                ph: g.clone(),
                eta_sq,
            });
        }
        let hz = hess.hessian().mul_mat(z);
        let zhz = z.tr_mul(&hz);
        let chol = Cholesky::new(zhz).ok_or(PkbError::IllConditionedClinical)?;
        let ztg = z.tr_mul(g);
        let coef = chol.solve(&ztg);
        let ph = g - &hz * &coef;
        let eta_sq = 0.5 * (hinv_g.dot(g) - ztg.dot(&coef));
        Ok(SharedReduction {
            hess,
            hz,
            zhz: Some(chol),
            ztg,
            ph,
            eta_sq: eta_sq.max(0.0),
        })
    }

    /// `P m = H m - HZ (Z'HZ)^-1 (HZ)' m`
    fn project(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let hm = self.hess.hessian().mul_mat(m);
        match &self.zhz {
            None => hm,
            Some(chol) => {
                let coef = chol.solve(&self.hz.tr_mul(m));
                hm - &self.hz * coef
            }
        }
    }

    /// `P v` for a single vector.
    fn project_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let hv = self.hess.hessian().mul_vec(v);
        match &self.zhz {
            None => hv,
            Some(chol) => hv - &self.hz * chol.solve(&self.hz.tr_mul(v)),
        }
    }

    /// `K' P K v / 2` without forming the Gram matrix.
    fn gram_mul(&self, k: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = k.tr_mul(&self.project_vec(&(k * v)));
        out *= 0.5;
        out
    }

    /// Preconditioned conjugate gradients on `(G + lambda I) beta = -c`,
    /// preconditioned by a factorization of `G + lambda I` from an earlier
    /// Hessian. Returns `beta` and `G beta`, or `None` after `max_iter` steps.
    fn solve_l2_pcg(
        &self,
        k: &DMatrix<f64>,
        linear: &DVector<f64>,
        lambda: f64,
        precond: &Cholesky<f64, Dyn>,
        warm: Option<&DVector<f64>>,
        max_iter: usize,
    ) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = linear.len();
        let b = -linear;
        let tol = CG_TOL * b.norm();
        let mut x = match warm {
            Some(w) if w.len() == n => w.clone(),
            _ => DVector::zeros(n),
        };
        let mut gx = self.gram_mul(k, &x);
        let mut r = &b - &gx - &x * lambda;
        let mut zr = precond.solve(&r);
        let mut p = zr.clone();
        let mut rz = r.dot(&zr);
        for _ in 0..=max_iter {
            if r.norm() <= tol {
                return Some((x, gx));
            }
            let gp = self.gram_mul(k, &p);
            let ap = &gp + &p * lambda;
            let alpha = rz / p.dot(&ap);
            if !alpha.is_finite() {
                return None;
            }
            x.axpy(alpha, &p, 1.0);
            gx.axpy(alpha, &gp, 1.0);
            r.axpy(-alpha, &ap, 1.0);
            zr = precond.solve(&r);
            let rz_new = r.dot(&zr);
            p = &zr + &p * (rz_new / rz);
            rz = rz_new;
        }
        None
    }

    /// `Kt'Kt = K' P K / 2`
    pub fn gram(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let pk = self.project(k);
        let mut g = k.tr_mul(&pk);
        g *= 0.5;
        // symmetrize away rounding
        let n = g.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (g[(i, j)] + g[(j, i)]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// `Kt' eta = K' P H^-1 g / 2`
    pub fn linear(&self, k: &DMatrix<f64>) -> DVector<f64> {
        let mut c = k.tr_mul(&self.ph);
        c *= 0.5;
        c
    }

    /// `gamma = -(Z'HZ)^-1 (Z'H K beta + Z'g)`
    pub fn gamma(&self, k: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
        match &self.zhz {
            None => DVector::zeros(0),
            Some(chol) => {
                let kb = k * beta;
                let rhs = self.hz.tr_mul(&kb) + &self.ztg;
                -chol.solve(&rhs)
            }
        }
    }

    /// `|eta + Kt beta|^2 + lambda Omega(beta)` from the Gram form.
    pub fn regularized_loss(
        &self,
        gram: &DMatrix<f64>,
        linear: &DVector<f64>,
        beta: &DVector<f64>,
        penalty: &Penalty,
    ) -> f64 {
        let quad = beta.dot(&(gram * beta));
        (self.eta_sq + 2.0 * linear.dot(beta) + quad).max(0.0) + penalty.value(beta)
    }
}

/// `U x = x - Z (Z'HZ)^-1 Z' H x` applied column-wise.
fn apply_projector(h: &Hessian, z: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() == 0 {
        return Ok(x.clone());
    }
    let hz = h.mul_mat(z);
    let chol = Cholesky::new(z.tr_mul(&hz)).ok_or(PkbError::IllConditionedClinical)?;
    let coef = chol.solve(&hz.tr_mul(x));
    Ok(x - z * coef)
}

/// Reduces the clinical-augmented problem for one pathway to a penalized
/// least-squares problem in `beta`. Returns `(eta, Kt)`.
pub fn transform(
    h: &Hessian,
    z: &DMatrix<f64>,
    grad: &DVector<f64>,
    k: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_shapes(h, z, grad, k)?;
    let cond = h.condition()?;
    let hc = cond.hessian();
    let root = cond.sqrt() * std::f64::consts::FRAC_1_SQRT_2;
    let hinv_g = DMatrix::from_column_slice(grad.len(), 1, cond.solve(grad).as_slice());
    let eta = &root * apply_projector(hc, z, &hinv_g)?;
    let kt = &root * apply_projector(hc, z, k)?;
    Ok((eta.column(0).into_owned(), kt))
}

/// Minimizes `|eta + Kt beta|^2 + lambda Omega(beta)`.
pub fn solve_beta(eta: &DVector<f64>, kt: &DMatrix<f64>, penalty: &Penalty) -> Result<DVector<f64>> {
    if kt.nrows() != eta.len() {
        return Err(PkbError::Dimension(format!(
            "eta has {} rows, Kt has {}",
            eta.len(),
            kt.nrows()
        )));
    }
    let gram = kt.tr_mul(kt);
    let linear = kt.tr_mul(eta);
    solve_gram(&gram, &linear, penalty, None)
}

/// `gamma = -(Z'HZ)^-1 Z'H (K beta + H^-1 g)`; empty when `Z` has no columns.
pub fn recover_gamma(
    h: &Hessian,
    z: &DMatrix<f64>,
    k: &DMatrix<f64>,
    beta: &DVector<f64>,
    grad: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_shapes(h, z, grad, k)?;
    if z.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    let cond = h.condition()?;
    let hc = cond.hessian();
    let hz = hc.mul_mat(z);
    let chol = Cholesky::new(z.tr_mul(&hz)).ok_or(PkbError::IllConditionedClinical)?;
    let target = k * beta + cond.solve(grad);
    Ok(-chol.solve(&hz.tr_mul(&target)))
}

/// Solves the penalized least-squares problem given `G = Kt'Kt` and `c = Kt'eta`.
pub(crate) fn solve_gram(
    gram: &DMatrix<f64>,
    linear: &DVector<f64>,
    penalty: &Penalty,
    warm: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    match penalty.kind {
        PenaltyKind::L2 => {
            let mut a = gram.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += penalty.lambda;
            }
            let chol = Cholesky::new(a).ok_or(PkbError::HessianFactorization(penalty.lambda))?;
            Ok(-chol.solve(linear))
        }
        PenaltyKind::L1 => lasso_coordinate_descent(gram, linear, penalty.lambda, warm),
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on `2 c'beta + beta'G beta + lambda |beta|_1`.
fn lasso_coordinate_descent(
    gram: &DMatrix<f64>,
    linear: &DVector<f64>,
    lambda: f64,
    warm: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let n = linear.len();
    let mut beta = match warm {
        Some(w) if w.len() == n => w.clone(),
        _ => DVector::zeros(n),
    };
    // half the gradient of the smooth part: c + G beta
    let mut resid = linear + gram * &beta;
    let half = 0.5 * lambda;
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for j in 0..n {
            let gjj = gram[(j, j)];
            let old = beta[j];
            let new = if gjj > 0.0 {
                -soft_threshold(resid[j] - gjj * old, half) / gjj
            } else {
                0.0
            };
            if new != old {
                resid.axpy(new - old, &gram.column(j), 1.0);
                beta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
            max_abs = max_abs.max(new.abs());
        }
        if max_change <= LASSO_TOL * max_abs.max(1.0) {
            return Ok(beta);
        }
    }
    Err(PkbError::SolverConvergence(LASSO_MAX_SWEEPS))
}

/// `lambda_max` of every pathway: the smallest L1 penalty giving `beta = 0`.
pub fn lambda_max(
    derivs: &LossDerivatives,
    z: &DMatrix<f64>,
    kernels: &[DMatrix<f64>],
) -> Result<Vec<f64>> {
    let shared = SharedReduction::new(derivs, z)?;
    Ok(kernels
        .par_iter()
        .map(|k| 2.0 * shared.linear(k).amax())
        .collect())
}

/// Automatic penalty scale: a fixed fraction of the median pathway `lambda_max`.
pub fn auto_lambda(derivs: &LossDerivatives, z: &DMatrix<f64>, kernels: &[DMatrix<f64>]) -> Result<f64> {
    let mut lm = lambda_max(derivs, z, kernels)?;
    if lm.is_empty() {
        return Err(PkbError::NoPathways);
    }
    lm.sort_by(f64::total_cmp);
    let mid = lm.len() / 2;
    let median = if lm.len() % 2 == 1 {
        lm[mid]
    } else {
        0.5 * (lm[mid - 1] + lm[mid])
    };
    Ok(median * AUTO_LAMBDA_FRACTION)
}

/// Gram matrix of one pathway under a Hessian that does not change between
/// iterations (squared-error loss), with its eigendecomposition computed on
/// first use by the L2 solver.
#[derive(Debug, Default)]
pub struct FixedGram {
    gram: OnceLock<DMatrix<f64>>,
    spectrum: OnceLock<(DMatrix<f64>, DVector<f64>)>,
}

impl FixedGram {
    fn gram(&self, shared: &SharedReduction, k: &DMatrix<f64>) -> &DMatrix<f64> {
        self.gram.get_or_init(|| shared.gram(k))
    }

    fn spectrum(&self, shared: &SharedReduction, k: &DMatrix<f64>) -> &(DMatrix<f64>, DVector<f64>) {
        self.spectrum.get_or_init(|| {
            let eig = SymmetricEigen::new(self.gram(shared, k).clone());
            (eig.eigenvectors, eig.eigenvalues.map(|v| v.max(0.0)))
        })
    }
}

/// Per-pathway state carried between iterations.
#[derive(Debug, Clone, Default)]
struct PathwayState {
    /// previous solution, the starting point of iterative solvers
    warm: Option<DVector<f64>>,
    /// factor of `G + lambda I` from the last direct L2 solve
    precond: Option<Cholesky<f64, Dyn>>,
}

/// Per-boosting-process solver state: warm starts and L2 preconditioners.
///
/// When the Hessian changes between iterations the L2 subproblems are solved
/// by preconditioned conjugate gradients, using the factorization from the
/// most recent direct solve of the same pathway. A direct solve replaces it
/// whenever the iteration does not converge quickly.
#[derive(Debug, Clone)]
pub struct IncrementSolver {
    penalty: Penalty,
    state: Vec<PathwayState>,
}

impl IncrementSolver {
    pub fn new(penalty: Penalty, n_pathways: usize) -> Self {
        IncrementSolver {
            penalty,
            state: vec![PathwayState::default(); n_pathways],
        }
    }

    pub fn penalty(&self) -> &Penalty {
        &self.penalty
    }

    /// Solves every pathway's subproblem and returns the one with the smallest
    /// regularized loss (lowest index on ties).
    ///
    /// `fixed` may carry cached Gram matrices, one per pathway; it must only
    /// be passed when the Hessian is the same at every call.
    pub fn best_increment(
        &mut self,
        derivs: &LossDerivatives,
        z: &DMatrix<f64>,
        kernels: &[DMatrix<f64>],
        fixed: Option<&[FixedGram]>,
    ) -> Result<IncrementSolution> {
        if kernels.is_empty() {
            return Err(PkbError::NoPathways);
        }
        if self.state.len() != kernels.len() {
            self.state = vec![PathwayState::default(); kernels.len()];
        }
        let shared = SharedReduction::new(derivs, z)?;
        let penalty = self.penalty;
        let results: Vec<Result<IncrementSolution>> = kernels
            .par_iter()
            .zip(self.state.par_iter_mut())
            .enumerate()
            .map(|(m, (k, state))| {
                let linear = shared.linear(k);
                let cache = fixed.map(|f| &f[m]);
                let (beta, regularized_loss) = match (penalty.kind, cache) {
                    (PenaltyKind::L2, Some(c)) => {
                        let (vecs, vals) = c.spectrum(&shared, k);
                        let mut coef = vecs.tr_mul(&linear);
                        for (x, s) in coef.iter_mut().zip(vals.iter()) {
                            *x /= s + penalty.lambda;
                        }
                        let beta = -(vecs * coef);
                        let loss = shared.regularized_loss(c.gram(&shared, k), &linear, &beta, &penalty);
                        (beta, loss)
                    }
                    (PenaltyKind::L2, None) => {
                        let iterative = state.precond.as_ref().and_then(|pc| {
                            shared.solve_l2_pcg(k, &linear, penalty.lambda, pc, state.warm.as_ref(), PCG_MAX_ITER)
                        });
                        match iterative {
                            Some((beta, gbeta)) => {
                                let quad = beta.dot(&gbeta);
                                let loss = (shared.eta_sq + 2.0 * linear.dot(&beta) + quad).max(0.0)
                                    + penalty.value(&beta);
                                (beta, loss)
                            }
                            None => {
                                let gram = shared.gram(k);
                                let mut a = gram.clone();
                                for i in 0..a.nrows() {
                                    a[(i, i)] += penalty.lambda;
                                }
                                let chol = Cholesky::new(a).ok_or(PkbError::HessianFactorization(penalty.lambda))?;
                                let beta = -chol.solve(&linear);
                                let loss = shared.regularized_loss(&gram, &linear, &beta, &penalty);
                                state.precond = Some(chol);
                                (beta, loss)
                            }
                        }
                    }
                    (PenaltyKind::L1, cache) => {
                        let owned;
                        let gram = match cache {
                            Some(c) => c.gram(&shared, k),
                            None => {
                                owned = shared.gram(k);
                                &owned
                            }
                        };
                        let beta = solve_gram(gram, &linear, &penalty, state.warm.as_ref())?;
                        let loss = shared.regularized_loss(gram, &linear, &beta, &penalty);
                        (beta, loss)
                    }
                };
                state.warm = Some(beta.clone());
                let gamma = shared.gamma(k, &beta);
                Ok(IncrementSolution {
                    pathway_index: m,
                    beta,
                    gamma,
                    regularized_loss,
                })
            })
            .collect();

        let mut best: Option<IncrementSolution> = None;
        let mut first_err = None;
        for (m, r) in results.into_iter().enumerate() {
            match r {
                Ok(sol) => {
                    let better = best
                        .as_ref()
                        .is_none_or(|b| sol.regularized_loss < b.regularized_loss);
                    if better {
                        best = Some(sol);
                    }
                }
                Err(e) => {
                    log::warn!("pathway {m}: increment subproblem failed: {e}");
                    first_err.get_or_insert(e);
                }
            }
        }
        match (best, first_err) {
            (Some(b), _) => Ok(b),
            (None, Some(e)) => Err(e),
            (None, None) => Err(PkbError::NoPathways),
        }
    }
}

/// One-shot increment selection without warm starts or caching.
pub fn best_increment(
    derivs: &LossDerivatives,
    z: &DMatrix<f64>,
    kernels: &[DMatrix<f64>],
    penalty: Penalty,
) -> Result<IncrementSolution> {
    IncrementSolver::new(penalty, kernels.len()).best_increment(derivs, z, kernels, None)
}
