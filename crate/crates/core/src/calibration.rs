//! Platt sigmoid calibration of raw classifier confidences.
//!
//! The calibrated probability is `1 / (1 + exp(slope·s + intercept))`, so a
//! classifier whose score grows with the positive class ends up with a negative
//! slope.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-10;
const MIN_STEP: f64 = 1e-10;
const HESSIAN_RIDGE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("calibration needs both classes, got {positives} positive / {negatives} negative")]
    SingleClassSample { positives: usize, negatives: usize },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub slope: f64,
    pub intercept: f64,
}

impl PlattParams {
    pub fn new(slope: f64, intercept: f64) -> Self {
        Self { slope, intercept }
    }

    pub fn apply(&self, score: f64) -> f64 {
        apply_platt(self, score)
    }
}

/// Calibrated probability, kept strictly inside (0, 1).
pub fn apply_platt(params: &PlattParams, score: f64) -> f64 {
    let f = params.slope * score + params.intercept;
    let p = if f >= 0.0 {
        let e = (-f).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + f.exp())
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Negative log-likelihood of smoothed targets at `f = A·s + B`, in the
/// overflow-free split form.
fn objective(scores: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let f = a * s + b;
            if f >= 0.0 {
                t * f + (-f).exp().ln_1p()
            } else {
                (t - 1.0) * f + f.exp().ln_1p()
            }
        })
        .sum()
}

/// Newton's method with backtracking on Platt's regularized likelihood, using
/// the smoothed targets `(N⁺+1)/(N⁺+2)` and `1/(N⁻+2)`.
pub fn fit_platt(scores: &[f64], labels: &[bool]) -> Result<PlattParams, CalibrationError> {
    if scores.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(CalibrationError::NonFiniteScore(bad));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(CalibrationError::SingleClassSample { positives, negatives });
    }

    let hi = (positives as f64 + 1.0) / (positives as f64 + 2.0);
    let lo = 1.0 / (negatives as f64 + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();

    let mut a = 0.0;
    let mut b = ((negatives as f64 + 1.0) / (positives as f64 + 1.0)).ln();
    let mut fval = objective(scores, &targets, a, b);

    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21) = (HESSIAN_RIDGE, HESSIAN_RIDGE, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (&s, &t) in scores.iter().zip(&targets) {
            let f = a * s + b;
            // p = P(y=1), q = 1 − p
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = t - p;
            g1 += s * d1;
            g2 += d1;
        }
        if g1.abs() < GRAD_TOL && g2.abs() < GRAD_TOL {
            break;
        }

        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        let mut accepted = false;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(scores, &targets, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            log::debug!("platt line search stalled at |g| = ({g1:e}, {g2:e})");
            break;
        }
    }
    Ok(PlattParams { slope: a, intercept: b })
}
