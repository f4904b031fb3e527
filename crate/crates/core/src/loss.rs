//! Empirical losses and their derivatives with respect to the score vector.
//!
//! All three losses are averaged over samples (the `1/N` factor is applied
//! uniformly), so the loss, gradient and Hessian below are consistent with
//! each other.

use nalgebra::{DMatrix, DVector};

use crate::data::Outcome;
use crate::error::{PkbError, Result};
use crate::hessian::Hessian;

#[derive(Debug, Clone, PartialEq)]
pub struct LossDerivatives {
    pub gradient: DVector<f64>,
    pub hessian: Hessian,
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(-x))`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check(outcome: &Outcome, f: &[f64]) -> Result<()> {
    if outcome.len() != f.len() {
        return Err(PkbError::Dimension(format!(
            "{} outcomes but {} scores",
            outcome.len(),
            f.len()
        )));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(PkbError::NonFinite("score vector"));
    }
    if let Outcome::Survival { event, .. } = outcome {
        if !event.iter().any(|&e| e) {
            return Err(PkbError::DegenerateOutcome("no events in survival outcome".into()));
        }
    }
    Ok(())
}

/// Samples ordered by decreasing time, with the boundaries of tied groups.
struct RiskSets {
    /// sample indices, longest time first
    order: Vec<usize>,
    /// for every sample, exp(F_i - max F)
    w: Vec<f64>,
    /// for every sample i, log of the sum of exp(F_j) over the risk set {j : t_j >= t_i}
    log_denom: Vec<f64>,
    max_f: f64,
}

impl RiskSets {
    fn new(time: &[f64], f: &[f64]) -> Self {
        let n = time.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
        let max_f = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = f.iter().map(|v| (v - max_f).exp()).collect();
        let mut log_denom = vec![0.0; n];
        // running log-sum-exp as (max, sum of exp(F - max))
        let (mut m, mut s) = (f64::NEG_INFINITY, 0.0);
        let mut k = 0;
        while k < n {
            // a block of tied times shares one risk set
            let t = time[order[k]];
            let mut end = k;
            while end < n && time[order[end]] == t {
                let j = order[end];
                if f[j] > m {
                    s = s * (m - f[j]).exp() + 1.0;
                    m = f[j];
                } else {
                    s += (f[j] - m).exp();
                }
                end += 1;
            }
            for &i in &order[k..end] {
                log_denom[i] = m + s.ln();
            }
            k = end;
        }
        RiskSets { order, w, log_denom, max_f }
    }

    /// For every sample i, `sum_{l : t_l <= t_i} delta_l / S_l^power` with
    /// `S_l` the risk-set sum of `w`.
    fn event_sums(&self, time: &[f64], event: &[bool], power: i32) -> Vec<f64> {
        let n = time.len();
        let mut out = vec![0.0; n];
        let mut running = 0.0;
        let mut k = n;
        // walk from the shortest time upwards
        while k > 0 {
            let t = time[self.order[k - 1]];
            let mut start = k;
            while start > 0 && time[self.order[start - 1]] == t {
                let l = self.order[start - 1];
                if event[l] {
                    running += (-f64::from(power) * (self.log_denom[l] - self.max_f)).exp();
                }
                start -= 1;
            }
            for &i in &self.order[start..k] {
                out[i] = running;
            }
            k = start;
        }
        out
    }
}

/// Mean loss over samples.
pub fn empirical_loss(outcome: &Outcome, f: &[f64]) -> Result<f64> {
    check(outcome, f)?;
    let n = f.len() as f64;
    let total: f64 = match outcome {
        Outcome::Regression(y) => y.iter().zip(f).map(|(y, f)| (y - f).powi(2)).sum(),
        Outcome::Classification(y) => y.iter().zip(f).map(|(y, f)| softplus(-y * f)).sum(),
        Outcome::Survival { time, event } => {
            let rs = RiskSets::new(time, f);
            (0..f.len())
                .filter(|&i| event[i])
                .map(|i| rs.log_denom[i] - f[i])
                .sum()
        }
    };
    Ok(total / n)
}

/// Gradient and Hessian of [`empirical_loss`] at `f`.
pub fn derivatives(outcome: &Outcome, f: &[f64]) -> Result<LossDerivatives> {
    check(outcome, f)?;
    let n = f.len();
    let nf = n as f64;
    Ok(match outcome {
        Outcome::Regression(y) => LossDerivatives {
            gradient: DVector::from_iterator(n, y.iter().zip(f).map(|(y, f)| -2.0 * (y - f) / nf)),
            hessian: Hessian::ScaledIdentity {
                dim: n,
                scale: 2.0 / nf,
            },
        },
        Outcome::Classification(y) => {
            // d/dF log(1 + e^{-yF}) = -y * sigma(-yF)
            let gradient =
                DVector::from_iterator(n, y.iter().zip(f).map(|(y, f)| -y * logistic(-y * f) / nf));
            let diag = DVector::from_iterator(
                n,
                y.iter()
                    .zip(f)
                    .map(|(y, f)| logistic(y * f) * logistic(-y * f) / nf),
            );
            LossDerivatives {
                gradient,
                hessian: Hessian::Diagonal(diag),
            }
        }
        Outcome::Survival { time, event } => {
            let rs = RiskSets::new(time, f);
            let a = rs.event_sums(time, event, 1);
            let b = rs.event_sums(time, event, 2);
            let gradient = DVector::from_fn(n, |i, _| {
                let d = if event[i] { 1.0 } else { 0.0 };
                -(d - rs.w[i] * a[i]) / nf
            });
            // H_ij = [1{i=j} w_i A(t_i) - w_i w_j B(min(t_i, t_j))] / N
            let mut h = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let shorter = if time[i] <= time[j] { i } else { j };
                    let mut v = -rs.w[i] * rs.w[j] * b[shorter];
                    if i == j {
                        v += rs.w[i] * a[i];
                    }
                    h[(i, j)] = v / nf;
                    h[(j, i)] = v / nf;
                }
            }
            if gradient.iter().chain(h.iter()).any(|v| !v.is_finite()) {
                return Err(PkbError::NonFinite("survival derivatives"));
            }
            LossDerivatives {
                gradient,
                hessian: Hessian::Dense(h),
            }
        }
    })
}
