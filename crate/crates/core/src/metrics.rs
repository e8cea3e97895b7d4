//! Evaluation helpers: population loss, recovery bounds, the minimum-norm
//! lower bound and the truncated squared loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nuclear_norm, Mat};

/// Population loss under isotropic Gaussian measurements, `||m - m_star||_F^2`.
pub fn population_loss(m: &Mat, m_star: &Mat) -> Result<f64> {
    if m.shape() != m_star.shape() {
        return Err(Error::Shape {
            expected: format!("{}x{}", m_star.rows(), m_star.cols()),
            got: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    Ok((m - m_star).frobenius_sq())
}

/// `8 delta / (1 - delta)^2 ||m_star||_*^2`.
pub fn recovery_bound(delta: f64, m_star: &Mat) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Domain(format!(
            "delta must lie in [0, 1), got {delta}"
        )));
    }
    let nuc = nuclear_norm(m_star)?;
    Ok(8.0 * delta / (1.0 - delta).powi(2) * nuc * nuc)
}

/// Expected population loss of the minimum-Frobenius interpolant from `n`
/// Gaussian measurements: `(1 - min(n, d_0 d_L) / (d_0 d_L)) ||m_star||_F^2`.
pub fn frobenius_lowerbound_expect(n: usize, d_in: usize, d_out: usize, m_star: &Mat) -> f64 {
    let dim = (d_in * d_out) as f64;
    (1.0 - (n as f64).min(dim) / dim) * m_star.frobenius_sq()
}

/// Squared loss capped smoothly at `2c^2`:
/// `t^2` for `|t| <= c`, `-t^2 + 4c|t| - 2c^2` for `c <= |t| <= 2c`,
/// `2c^2` beyond, with `t = x - y`. Requires `c > 0`.
pub fn truncated_loss(x: f64, y: f64, c: f64) -> f64 {
    assert!(c > 0.0, "truncation level must be positive, got {c}");
    let t = (x - y).abs();
    if t <= c {
        t * t
    } else if t <= 2.0 * c {
        -t * t + 4.0 * c * t - 2.0 * c * c
    } else {
        2.0 * c * c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pop_loss: f64,
    pub recovery_bound: f64,
    /// `||E(W)||_* / baseline`, absent without a min-nuclear baseline.
    pub nuclear_ratio: Option<f64>,
    pub notes: String,
}

impl EvalReport {
    /// `delta` is the caller's RIP constant for rank-2 differences
    /// (typically an estimate plus a margin).
    pub fn new(
        end_to_end: &Mat,
        m_star: &Mat,
        delta: f64,
        baseline_nuclear: Option<f64>,
        n: usize,
    ) -> Result<Self> {
        let pop_loss = population_loss(end_to_end, m_star)?;
        let recovery_bound = recovery_bound(delta, m_star)?;
        let nuclear_ratio = match baseline_nuclear {
            Some(b) => Some(nuclear_norm(end_to_end)? / b),
            None => None,
        };
        let rate = (((m_star.rows() + m_star.cols()) as f64) / n as f64).sqrt();
        let notes = format!(
            "delta={delta:.4} supplied by caller; Gaussian reference rate sqrt((d0+dL)/n)={rate:.4}; \
             pop_loss {} recovery bound",
            if pop_loss <= recovery_bound { "within" } else { "exceeds" }
        );
        Ok(EvalReport {
            pop_loss,
            recovery_bound,
            nuclear_ratio,
            notes,
        })
    }
}
