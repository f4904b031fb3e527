//! Prediction accuracy: mean squared error, classification error, log loss
//! and the concordance index.

use serde::{Deserialize, Serialize};

use crate::error::{PkbError, Result};
use crate::loss::softplus;

fn check_lengths(a: usize, b: usize, min: usize) -> Result<()> {
    if a != b {
        return Err(PkbError::Dimension(format!("lengths differ: {a} vs {b}")));
    }
    if a < min {
        return Err(PkbError::Dimension(format!("need at least {min} samples, got {a}")));
    }
    Ok(())
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y.len(), yhat.len(), 1)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Fraction of samples whose score sign disagrees with the ±1 label.
/// A score of exactly zero counts as an error.
pub fn classification_error(labels: &[f64], scores: &[f64]) -> Result<f64> {
    check_lengths(labels.len(), scores.len(), 1)?;
    let wrong = labels.iter().zip(scores).filter(|(y, f)| *y * *f <= 0.0).count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Mean `log(1 + exp(-y f))` for ±1 labels and scores on the log-odds scale.
pub fn log_loss(labels: &[f64], scores: &[f64]) -> Result<f64> {
    check_lengths(labels.len(), scores.len(), 1)?;
    Ok(labels.iter().zip(scores).map(|(y, f)| softplus(-y * f)).sum::<f64>() / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceResult {
    pub concordance: f64,
    pub permissible_pairs: u64,
    pub c_index: f64,
}

/// Concordance of a single pair, or `None` when the pair is not permissible.
fn pair_concordance(ti: f64, di: bool, fi: f64, tj: f64, dj: bool, fj: f64) -> Option<f64> {
    if ti != tj {
        let (short_event, f_short, f_long) = if ti < tj { (di, fi, fj) } else { (dj, fj, fi) };
        if !short_event {
            return None;
        }
        return Some(if f_short == f_long {
            0.5
        } else if f_short > f_long {
            1.0
        } else {
            0.0
        });
    }
    match (di, dj) {
        (false, false) => None,
        (true, true) => Some(if fi == fj { 1.0 } else { 0.5 }),
        (true, false) => Some(if fj < fi { 1.0 } else { 0.0 }),
        (false, true) => Some(if fi < fj { 1.0 } else { 0.0 }),
    }
}

/// Concordance index over all unordered pairs; higher risk should mean
/// shorter survival.
pub fn c_index(times: &[f64], events: &[bool], risks: &[f64]) -> Result<ConcordanceResult> {
    check_lengths(times.len(), risks.len(), 2)?;
    check_lengths(times.len(), events.len(), 2)?;
    if times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(PkbError::DegenerateOutcome("survival times must be positive".into()));
    }
    if risks.iter().any(|r| r.is_nan()) {
        return Err(PkbError::NonFinite("risk scores"));
    }
    let n = times.len();
    let mut concordance = 0.0;
    let mut pairs = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            if let Some(c) = pair_concordance(times[i], events[i], risks[i], times[j], events[j], risks[j]) {
                concordance += c;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(PkbError::UndefinedCIndex);
    }
    Ok(ConcordanceResult {
        concordance,
        permissible_pairs: pairs,
        c_index: concordance / pairs as f64,
    })
}
