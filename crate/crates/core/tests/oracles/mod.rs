//! Reference implementations used as test oracles. Everything here is
//! written directly from the defining formulas, without calling into the
//! library's solvers.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pkb::loss::{derivatives, empirical_loss};
use pkb::{Outcome, OutcomeType};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `max |a - b| / max |b|` (absolute when `b` is all zero).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

// ---------------------------------------------------------------- losses

/// Random outcome of `n` samples. Survival times are drawn from a small
/// grid so that ties occur; at least one event and both classes are present.
pub fn random_outcome<R: Rng>(kind: OutcomeType, n: usize, rng: &mut R) -> Outcome {
    match kind {
        OutcomeType::Regression => Outcome::Regression((0..n).map(|_| 2.0 * normal(rng)).collect()),
        OutcomeType::Classification => {
            let mut y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            if n >= 2 {
                y[0] = 1.0;
                y[1] = -1.0;
            }
            Outcome::Classification(y)
        }
        OutcomeType::Survival => {
            let grid = (n / 2).max(2);
            let time: Vec<f64> = (0..n).map(|_| 0.5 * rng.random_range(1..=grid) as f64).collect();
            let mut event: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
            event[0] = true;
            Outcome::Survival { time, event }
        }
    }
}

/// Central differences of the empirical loss.
pub fn fd_gradient(outcome: &Outcome, f: &[f64], h: f64) -> Vec<f64> {
    (0..f.len())
        .map(|i| {
            let mut up = f.to_vec();
            let mut down = f.to_vec();
            up[i] += h;
            down[i] -= h;
            (empirical_loss(outcome, &up).unwrap() - empirical_loss(outcome, &down).unwrap()) / (2.0 * h)
        })
        .collect()
}

/// Central differences of the analytic gradient, column by column.
pub fn fd_hessian_of_gradient(outcome: &Outcome, f: &[f64], h: f64) -> DMatrix<f64> {
    let n = f.len();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut up = f.to_vec();
        let mut down = f.to_vec();
        up[j] += h;
        down[j] -= h;
        let gu = derivatives(outcome, &up).unwrap().gradient;
        let gd = derivatives(outcome, &down).unwrap().gradient;
        out.set_column(j, &((gu - gd) / (2.0 * h)));
    }
    out
}

/// Second-order central differences of the empirical loss itself.
pub fn second_difference_hessian(outcome: &Outcome, f: &[f64], h: f64) -> DMatrix<f64> {
    let n = f.len();
    let loss = |d: &[(usize, f64)]| {
        let mut x = f.to_vec();
        for &(k, s) in d {
            x[k] += s;
        }
        empirical_loss(outcome, &x).unwrap()
    };
    DMatrix::from_fn(n, n, |i, j| {
        (loss(&[(i, h), (j, h)]) - loss(&[(i, h), (j, -h)]) - loss(&[(i, -h), (j, h)]) + loss(&[(i, -h), (j, -h)]))
            / (4.0 * h * h)
    })
}

// ------------------------------------------------- second-order subproblem

/// One instance of the penalized second-order subproblem.
pub struct QuadInstance {
    pub g: DVector<f64>,
    pub h: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl QuadInstance {
    /// Random SPD Hessian, RBF-like kernel on random points, `q` clinical columns.
    pub fn random<R: Rng>(n: usize, q: usize, rng: &mut R) -> Self {
        let a = DMatrix::from_fn(n, n, |_, _| normal(rng));
        let h = (&a * a.transpose()) / n as f64 + DMatrix::identity(n, n) * 0.1;
        let pts = DMatrix::from_fn(n, 3, |_, _| normal(rng));
        let k = DMatrix::from_fn(n, n, |i, j| {
            let d2: f64 = (0..3).map(|c| (pts[(i, c)] - pts[(j, c)]).powi(2)).sum();
            (-d2 / 3.0).exp()
        });
        let z = DMatrix::from_fn(n, q, |_, _| normal(rng));
        let g = DVector::from_fn(n, |_, _| normal(rng));
        QuadInstance { g, h, k, z }
    }

    fn increment(&self, beta: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
        let mut f = &self.k * beta;
        if self.z.ncols() > 0 {
            f += &self.z * gamma;
        }
        f
    }

    /// `g'f + f'Hf/2 + g'H^-1 g/2 + penalty`, with `f = K beta + Z gamma`.
    pub fn objective(&self, beta: &DVector<f64>, gamma: &DVector<f64>, l1: bool, lambda: f64) -> f64 {
        let f = self.increment(beta, gamma);
        let hinv_g = self.h.clone().lu().solve(&self.g).unwrap();
        let penalty = if l1 { beta.lp_norm(1) } else { beta.norm_squared() };
        self.g.dot(&f) + 0.5 * f.dot(&(&self.h * &f)) + 0.5 * self.g.dot(&hinv_g) + lambda * penalty
    }

    /// Gradient of the objective with respect to `gamma`.
    pub fn gamma_gradient(&self, beta: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
        let f = self.increment(beta, gamma);
        self.z.tr_mul(&(&self.g + &self.h * f))
    }

    /// Stacked design `[K Z]`.
    fn design(&self) -> DMatrix<f64> {
        let (n, q) = (self.k.nrows(), self.z.ncols());
        let mut m = DMatrix::zeros(n, n + q);
        m.columns_mut(0, n).copy_from(&self.k);
        if q > 0 {
            m.columns_mut(n, q).copy_from(&self.z);
        }
        m
    }

    /// Exact L2 optimum from the joint normal equations in `(beta, gamma)`.
    pub fn l2_oracle(&self, lambda: f64) -> (DVector<f64>, DVector<f64>, f64) {
        let n = self.k.nrows();
        let m = self.design();
        let mut a = m.transpose() * &self.h * &m;
        for i in 0..n {
            a[(i, i)] += 2.0 * lambda;
        }
        let b = -(m.transpose() * &self.g);
        let x = a.lu().solve(&b).expect("joint system is nonsingular");
        let beta = x.rows(0, n).into_owned();
        let gamma = x.rows(n, self.z.ncols()).into_owned();
        let v = self.objective(&beta, &gamma, false, lambda);
        (beta, gamma, v)
    }

    /// L1 optimum by accelerated proximal gradient with restarts; `gamma` is
    /// unpenalized.
    pub fn l1_oracle(&self, lambda: f64, iterations: usize) -> (DVector<f64>, DVector<f64>, f64) {
        let n = self.k.nrows();
        let m = self.design();
        let q_mat = m.transpose() * &self.h * &m;
        let lin = m.transpose() * &self.g;
        let lip = q_mat.symmetric_eigenvalues().max().max(1e-12);
        let step = 1.0 / lip;
        let p = m.ncols();
        let smooth = |x: &DVector<f64>| lin.dot(x) + 0.5 * x.dot(&(&q_mat * x));
        let full = |x: &DVector<f64>| smooth(x) + lambda * x.rows(0, n).lp_norm(1);
        let prox = |v: DVector<f64>| {
            DVector::from_fn(p, |i, _| {
                if i < n {
                    let t = lambda * step;
                    v[i].signum() * (v[i].abs() - t).max(0.0)
                } else {
                    v[i]
                }
            })
        };
        let mut x = DVector::zeros(p);
        let mut y = x.clone();
        let mut t = 1.0_f64;
        let mut fx = full(&x);
        for _ in 0..iterations {
            let grad = &lin + &q_mat * &y;
            let x_new = prox(&y - grad * step);
            let f_new = full(&x_new);
            if f_new > fx {
                // restart momentum
                y = x.clone();
                t = 1.0;
                continue;
            }
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
            x = x_new;
            t = t_new;
            fx = f_new;
        }
        let beta = x.rows(0, n).into_owned();
        let gamma = x.rows(n, self.z.ncols()).into_owned();
        let v = self.objective(&beta, &gamma, true, lambda);
        (beta, gamma, v)
    }
}

/// Minimizes `|eta + Kt beta|^2 + lambda |beta|_1` over two coordinates by
/// repeated grid refinement around the best grid point.
pub fn lasso_2d_grid(eta: &DVector<f64>, kt: &DMatrix<f64>, lambda: f64) -> (DVector<f64>, f64) {
    assert_eq!(kt.ncols(), 2);
    let obj = |b: &DVector<f64>| (eta + kt * b).norm_squared() + lambda * b.lp_norm(1);
    let mut center = DVector::zeros(2);
    let mut radius = 10.0 * (1.0 + eta.norm());
    let mut best = obj(&center);
    let steps = 40;
    while radius > 1e-12 {
        let mut improved = center.clone();
        for a in -steps..=steps {
            for b in -steps..=steps {
                let cand = DVector::from_vec(vec![
                    center[0] + radius * a as f64 / steps as f64,
                    center[1] + radius * b as f64 / steps as f64,
                ]);
                // exact zeros matter for the L1 kink
                for c in [cand.clone(), DVector::from_vec(vec![0.0, cand[1]]), DVector::from_vec(vec![cand[0], 0.0])] {
                    let v = obj(&c);
                    if v < best {
                        best = v;
                        improved = c;
                    }
                }
            }
        }
        center = improved;
        radius *= 0.25;
    }
    (center, best)
}

// -------------------------------------------------------------- concordance

/// C-index by listing permissible pairs first and scoring them afterwards.
pub fn c_index_oracle(time: &[f64], event: &[bool], risk: &[f64]) -> (f64, u64) {
    let n = time.len();
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            let omit = if time[a] == time[b] {
                !event[a] && !event[b]
            } else {
                let shorter = if time[a] < time[b] { a } else { b };
                !event[shorter]
            };
            if !omit {
                pairs.push((a, b));
            }
        }
    }
    let mut total = 0.0;
    for &(a, b) in &pairs {
        total += if time[a] != time[b] {
            let (short, long) = if time[a] < time[b] { (a, b) } else { (b, a) };
            if risk[short] == risk[long] {
                0.5
            } else if risk[short] > risk[long] {
                1.0
            } else {
                0.0
            }
        } else if event[a] && event[b] {
            if risk[a] == risk[b] {
                1.0
            } else {
                0.5
            }
        } else {
            let (cens, ev) = if event[a] { (b, a) } else { (a, b) };
            if risk[cens] < risk[ev] {
                1.0
            } else {
                0.0
            }
        };
    }
    (total, pairs.len() as u64)
}

// ------------------------------------------------------------------ ridge

/// Ridge regression on standardized features with an unpenalized intercept;
/// the penalty is chosen by K-fold cross-validation on the training rows.
pub struct RidgeCv {
    pub lambda: f64,
    pub test_mse: f64,
}

fn standardize(train: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = train.nrows() as f64;
    let mean: Vec<f64> = train.column_iter().map(|c| c.sum() / n).collect();
    let sd: Vec<f64> = train
        .column_iter()
        .zip(&mean)
        .map(|(c, m)| {
            let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, sd)
}

fn ridge_fit(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> impl Fn(&DMatrix<f64>) -> Vec<f64> {
    let (mean, sd) = standardize(x);
    let p = x.ncols();
    let scale = move |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), p, |i, j| (m[(i, j)] - mean[j]) / sd[j]);
    let xs = scale(x);
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - ybar));
    let a = xs.transpose() * &xs + DMatrix::identity(p, p) * lambda;
    let w = a.lu().solve(&(xs.transpose() * yc)).expect("ridge system");
    move |m: &DMatrix<f64>| (scale(m) * &w).iter().map(|v| v + ybar).collect()
}

pub fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

pub fn ridge_cv(
    x_train: &DMatrix<f64>,
    y_train: &[f64],
    x_test: &DMatrix<f64>,
    y_test: &[f64],
    lambdas: &[f64],
    folds: &[usize],
) -> RidgeCv {
    let k = folds.iter().max().unwrap() + 1;
    let mut best = (f64::INFINITY, lambdas[0]);
    for &lambda in lambdas {
        let mut err = 0.0;
        for fold in 0..k {
            let tr: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != fold).collect();
            let te: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == fold).collect();
            let model = ridge_fit(&x_train.select_rows(&tr), &tr.iter().map(|&i| y_train[i]).collect::<Vec<_>>(), lambda);
            let pred = model(&x_train.select_rows(&te));
            err += mean_sq(&te.iter().map(|&i| y_train[i]).collect::<Vec<_>>(), &pred) * te.len() as f64;
        }
        if err < best.0 {
            best = (err, lambda);
        }
    }
    let model = ridge_fit(x_train, y_train, best.1);
    RidgeCv {
        lambda: best.1,
        test_mse: mean_sq(y_test, &model(x_test)),
    }
}

/// `n` values from `lo` to `hi`, equally spaced on a log scale.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

// ------------------------------------------------------------- one-d search

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > tol {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

// ----------------------------------------------------------- shared checks

/// Worst relative errors of one derivative instance:
/// `(gradient, Hessian via gradient differences, Hessian via loss second differences)`.
pub fn derivative_errors<R: Rng>(kind: OutcomeType, n: usize, rng: &mut R) -> (f64, f64, f64) {
    let outcome = random_outcome(kind, n, rng);
    let f: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let d = derivatives(&outcome, &f).unwrap();
    let fd = fd_gradient(&outcome, &f, 1e-5);
    let g_err = rel_err(d.gradient.as_slice(), &fd);
    let analytic = d.hessian.to_dense();
    let h1 = fd_hessian_of_gradient(&outcome, &f, 1e-5);
    let h2 = second_difference_hessian(&outcome, &f, 1e-3);
    (
        g_err,
        rel_err(analytic.as_slice(), h1.as_slice()),
        rel_err(analytic.as_slice(), h2.as_slice()),
    )
}

/// Objective gap of the transform / solve / recover pipeline against the
/// direct optimum on one random instance, relative to `max(1, |optimum|)`.
/// Returns `(ours, oracle, relative gap)`.
pub fn reduction_gap<R: Rng>(l1: bool, rng: &mut R) -> (f64, f64, f64) {
    use pkb::hessian::Hessian;
    use pkb::increment::{lambda_max, recover_gamma, solve_beta, transform, Penalty, PenaltyKind};
    use pkb::loss::LossDerivatives;

    let n = rng.random_range(3..=10);
    let q = rng.random_range(0..=3.min(n - 1));
    let inst = QuadInstance::random(n, q, rng);
    let hess = match rng.random_range(0..3) {
        0 => Hessian::Dense(inst.h.clone()),
        1 => Hessian::Diagonal(DVector::from_fn(n, |_, _| rng.random_range(0.1..2.0))),
        _ => Hessian::ScaledIdentity {
            dim: n,
            scale: rng.random_range(0.1..2.0),
        },
    };
    let inst = QuadInstance {
        h: hess.to_dense(),
        ..inst
    };
    let derivs = LossDerivatives {
        gradient: inst.g.clone(),
        hessian: hess.clone(),
    };
    let lmax = lambda_max(&derivs, &inst.z, std::slice::from_ref(&inst.k)).unwrap()[0];
    let (kind, lambda) = if l1 {
        (PenaltyKind::L1, lmax * rng.random_range(0.05..0.8))
    } else {
        (PenaltyKind::L2, lmax * 10f64.powf(rng.random_range(-3.0..0.0)))
    };
    let penalty = Penalty::new(kind, lambda).unwrap();
    let (eta, kt) = transform(&hess, &inst.z, &inst.g, &inst.k).unwrap();
    let beta = solve_beta(&eta, &kt, &penalty).unwrap();
    let gamma = recover_gamma(&hess, &inst.z, &inst.k, &beta, &inst.g).unwrap();
    let ours = inst.objective(&beta, &gamma, l1, lambda);
    let oracle = if l1 {
        inst.l1_exact(lambda)
    } else {
        inst.l2_oracle(lambda).2
    };
    (ours, oracle, (ours - oracle).abs() / oracle.abs().max(1.0))
}

impl QuadInstance {
    /// L1 optimum: proximal gradient to identify the support and signs,
    /// then the KKT system solved exactly on that support.
    pub fn l1_exact(&self, lambda: f64) -> f64 {
        let n = self.k.nrows();
        let q = self.z.ncols();
        let (beta, gamma, v_fista) = self.l1_oracle(lambda, 20_000);
        let m = self.design();
        let q_mat = m.transpose() * &self.h * &m;
        let lin = m.transpose() * &self.g;
        let scale = beta.amax().max(1e-300);
        let support: Vec<usize> = (0..n).filter(|&j| beta[j].abs() > 1e-7 * scale).chain(n..n + q).collect();
        let s = support.len();
        let a = DMatrix::from_fn(s, s, |i, j| q_mat[(support[i], support[j])]);
        let b = DVector::from_fn(s, |i, _| {
            let j = support[i];
            -lin[j] - if j < n { lambda * beta[j].signum() } else { 0.0 }
        });
        let Some(xs) = a.lu().solve(&b) else {
            return v_fista;
        };
        let mut x = DVector::zeros(n + q);
        for (i, &j) in support.iter().enumerate() {
            x[j] = xs[i];
        }
        let signs_ok = support.iter().filter(|&&j| j < n).all(|&j| x[j] * beta[j] > 0.0);
        let grad = &lin + &q_mat * &x;
        let kkt_ok = (0..n).filter(|j| !support.contains(j)).all(|j| grad[j].abs() <= lambda * (1.0 + 1e-9));
        let _ = gamma;
        if signs_ok && kkt_ok {
            let v = self.objective(&x.rows(0, n).into_owned(), &x.rows(n, q).into_owned(), true, lambda);
            v.min(v_fista)
        } else {
            v_fista
        }
    }
}
