//! Parametric distribution kernel: densities, CDFs, entropies, maximum-likelihood
//! fits and AIC-based family selection.
//!
//! Four families are supported. Every parameter set serializes as a tagged record
//! `{"family": "...", "params": [...]}` with a fixed parameter order:
//!
//! | family             | params             |
//! |--------------------|--------------------|
//! | `gaussian`         | `[mean, variance]` |
//! | `exponential`      | `[rate]`           |
//! | `gamma`            | `[shape, scale]`   |
//! | `inverse_gaussian` | `[mean, shape]`    |
//!
//! All log quantities are natural logs (nats).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{digamma, gamma_lr, ln_gamma, ln_std_normal_cdf, std_normal_cdf, trigamma, HALF_LN_2PI, TWO_PI};

/// Smallest variance a fitted Gaussian may carry.
pub const VARIANCE_FLOOR: f64 = 1e-9;

const GAMMA_NEWTON_MAX_ITER: usize = 50;
const GAMMA_NEWTON_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("empty sample")]
    EmptySample,
    #[error("{family} requires positive samples, got {value}")]
    NonPositiveSample { family: Family, value: f64 },
    #[error("non-finite sample value {0}")]
    NonFiniteSample(f64),
    #[error("degenerate sample for {0}: all values identical")]
    DegenerateSample(Family),
    #[error("no candidate family applies to the sample")]
    NoApplicableFamily,
    #[error("invalid {family} parameters: {reason}")]
    InvalidParameters { family: Family, reason: String },
}

type Result<T> = std::result::Result<T, DistributionError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Exponential,
    Gamma,
    InverseGaussian,
}

impl Family {
    /// Fixed family order, also used as the last AIC tie-break.
    pub const ALL: [Family; 4] = [
        Family::Gaussian,
        Family::Exponential,
        Family::Gamma,
        Family::InverseGaussian,
    ];

    pub fn num_params(self) -> usize {
        match self {
            Family::Exponential => 1,
            _ => 2,
        }
    }

    pub fn positive_support(self) -> bool {
        !matches!(self, Family::Gaussian)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Exponential => "exponential",
            Family::Gamma => "gamma",
            Family::InverseGaussian => "inverse_gaussian",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Common interface of the four univariate families.
pub trait ContinuousDistribution {
    fn family(&self) -> Family;

    /// Log density in nats; `-inf` outside the support.
    fn log_pdf(&self, x: f64) -> f64;

    fn cdf(&self, x: f64) -> f64;

    /// Parameters in the serialized order.
    fn params(&self) -> Vec<f64>;

    fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&x| self.log_pdf(x)).sum()
    }
}

/// Wire form of every parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedParams {
    pub family: Family,
    pub params: Vec<f64>,
}

impl TaggedParams {
    fn expect(&self, family: Family) -> Result<&[f64]> {
        if self.family != family {
            return Err(DistributionError::InvalidParameters {
                family,
                reason: format!("record is tagged {}", self.family),
            });
        }
        if self.params.len() != family.num_params() {
            return Err(DistributionError::InvalidParameters {
                family,
                reason: format!(
                    "expected {} parameters, found {}",
                    family.num_params(),
                    self.params.len()
                ),
            });
        }
        Ok(&self.params)
    }
}

fn invalid(family: Family, reason: impl Into<String>) -> DistributionError {
    DistributionError::InvalidParameters {
        family,
        reason: reason.into(),
    }
}

fn positive_finite(family: Family, name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(family, format!("{name} must be finite and > 0, got {v}")))
    }
}

fn check_samples(family: Family, samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(DistributionError::EmptySample);
    }
    for &x in samples {
        if !x.is_finite() {
            return Err(DistributionError::NonFiniteSample(x));
        }
        if family.positive_support() && x <= 0.0 {
            return Err(DistributionError::NonPositiveSample { family, value: x });
        }
    }
    Ok(())
}

fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

fn all_identical(samples: &[f64]) -> bool {
    samples.iter().all(|&x| x == samples[0])
}

// ---------------------------------------------------------------------------
// Gaussian

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TaggedParams", try_from = "TaggedParams")]
pub struct GaussianParams {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianParams {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(invalid(Family::Gaussian, format!("mean must be finite, got {mean}")));
        }
        if !(variance.is_finite() && variance >= VARIANCE_FLOOR) {
            return Err(invalid(
                Family::Gaussian,
                format!("variance must be finite and >= {VARIANCE_FLOOR}, got {variance}"),
            ));
        }
        Ok(Self { mean, variance })
    }

    /// Sample mean and biased (1/n) variance, floored at [`VARIANCE_FLOOR`].
    pub fn fit(samples: &[f64]) -> Result<Self> {
        check_samples(Family::Gaussian, samples)?;
        let m = mean(samples);
        let var = samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / samples.len() as f64;
        Ok(Self {
            mean: m,
            variance: var.max(VARIANCE_FLOOR),
        })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Differential entropy ½·ln(2πe·σ²).
    pub fn entropy(&self) -> f64 {
        gaussian_entropy(self)
    }
}

impl ContinuousDistribution for GaussianParams {
    fn family(&self) -> Family {
        Family::Gaussian
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -HALF_LN_2PI - 0.5 * self.variance.ln() - d * d / (2.0 * self.variance)
    }

    fn cdf(&self, x: f64) -> f64 {
        std_normal_cdf((x - self.mean) / self.std_dev())
    }

    fn params(&self) -> Vec<f64> {
        vec![self.mean, self.variance]
    }
}

/// ½·ln(2πe·σ²) in nats.
pub fn gaussian_entropy(params: &GaussianParams) -> f64 {
    0.5 * (TWO_PI * std::f64::consts::E * params.variance).ln()
}

// ---------------------------------------------------------------------------
// Exponential

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TaggedParams", try_from = "TaggedParams")]
pub struct ExponentialParams {
    pub rate: f64,
}

impl ExponentialParams {
    pub fn new(rate: f64) -> Result<Self> {
        positive_finite(Family::Exponential, "rate", rate)?;
        Ok(Self { rate })
    }

    pub fn fit(samples: &[f64]) -> Result<Self> {
        check_samples(Family::Exponential, samples)?;
        Self::new(1.0 / mean(samples))
    }
}

impl ContinuousDistribution for ExponentialParams {
    fn family(&self) -> Family {
        Family::Exponential
    }

    fn log_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            f64::NEG_INFINITY
        } else {
            self.rate.ln() - self.rate * x
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -(-self.rate * x).exp_m1()
        }
    }

    fn params(&self) -> Vec<f64> {
        vec![self.rate]
    }
}

// ---------------------------------------------------------------------------
// Gamma

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TaggedParams", try_from = "TaggedParams")]
pub struct GammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl GammaParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        positive_finite(Family::Gamma, "shape", shape)?;
        positive_finite(Family::Gamma, "scale", scale)?;
        Ok(Self { shape, scale })
    }

    /// Shape MLE by Newton iteration on `ln k − ψ(k) = ln(mean) − mean(ln x)`,
    /// started from the method-of-moments estimate.
    pub fn fit(samples: &[f64]) -> Result<Self> {
        check_samples(Family::Gamma, samples)?;
        if all_identical(samples) {
            return Err(DistributionError::DegenerateSample(Family::Gamma));
        }
        let n = samples.len() as f64;
        let m = mean(samples);
        let mean_ln = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
        let s = m.ln() - mean_ln;
        if !(s > 0.0) {
            // values differ only below floating-point resolution of the log
            return Err(DistributionError::DegenerateSample(Family::Gamma));
        }
        let var = samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        let mut k = m * m / var;
        if !(k.is_finite() && k > 0.0) {
            k = 0.5 / s;
        }
        for _ in 0..GAMMA_NEWTON_MAX_ITER {
            let f = k.ln() - digamma(k) - s;
            let df = 1.0 / k - trigamma(k);
            let mut next = k - f / df;
            if !(next > 0.0) || !next.is_finite() {
                next = k / 2.0;
            }
            let step = (next - k).abs();
            k = next;
            if step <= GAMMA_NEWTON_TOL * k {
                break;
            }
        }
        Self::new(k, m / k)
    }

    /// Mode `(k−1)·θ`, or `None` when the density peaks at the support edge (k ≤ 1).
    pub fn mode(&self) -> Option<f64> {
        (self.shape > 1.0).then_some((self.shape - 1.0) * self.scale)
    }

    /// Inverse CDF by bisection; `p` in (0, 1).
    pub fn quantile(&self, p: f64) -> f64 {
        debug_assert!(p > 0.0 && p < 1.0);
        let mut hi = self.shape * self.scale;
        while self.cdf(hi) < p {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

impl ContinuousDistribution for GammaParams {
    fn family(&self) -> Family {
        Family::Gamma
    }

    fn log_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        if x == 0.0 {
            return match self.shape.partial_cmp(&1.0) {
                Some(std::cmp::Ordering::Less) => f64::INFINITY,
                Some(std::cmp::Ordering::Equal) => -self.scale.ln(),
                _ => f64::NEG_INFINITY,
            };
        }
        (self.shape - 1.0) * x.ln() - x / self.scale - ln_gamma(self.shape) - self.shape * self.scale.ln()
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x.is_infinite() {
            1.0
        } else {
            gamma_lr(self.shape, x / self.scale)
        }
    }

    fn params(&self) -> Vec<f64> {
        vec![self.shape, self.scale]
    }
}

// ---------------------------------------------------------------------------
// Inverse Gaussian

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TaggedParams", try_from = "TaggedParams")]
pub struct InverseGaussianParams {
    pub mean: f64,
    /// λ, in the same units as the mean.
    pub shape: f64,
}

impl InverseGaussianParams {
    pub fn new(mean: f64, shape: f64) -> Result<Self> {
        positive_finite(Family::InverseGaussian, "mean", mean)?;
        positive_finite(Family::InverseGaussian, "shape", shape)?;
        Ok(Self { mean, shape })
    }

    /// μ̂ = x̄, λ̂ = n / Σ(1/xᵢ − 1/μ̂).
    pub fn fit(samples: &[f64]) -> Result<Self> {
        check_samples(Family::InverseGaussian, samples)?;
        if all_identical(samples) {
            return Err(DistributionError::DegenerateSample(Family::InverseGaussian));
        }
        let mu = mean(samples);
        let denom: f64 = samples.iter().map(|&x| 1.0 / x - 1.0 / mu).sum();
        if !(denom > 0.0) {
            return Err(DistributionError::DegenerateSample(Family::InverseGaussian));
        }
        Self::new(mu, samples.len() as f64 / denom)
    }
}

impl ContinuousDistribution for InverseGaussianParams {
    fn family(&self) -> Family {
        Family::InverseGaussian
    }

    fn log_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let d = x - self.mean;
        0.5 * (self.shape.ln() - TWO_PI.ln() - 3.0 * x.ln()) - self.shape * d * d / (2.0 * self.mean * self.mean * x)
    }

    /// Φ(√(λ/x)(x/μ−1)) + e^{2λ/μ}·Φ(−√(λ/x)(x/μ+1)); the second term is
    /// evaluated in log space so large λ/μ neither overflows nor yields NaN.
    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x.is_infinite() {
            return 1.0;
        }
        let r = (self.shape / x).sqrt();
        let a = r * (x / self.mean - 1.0);
        let b = r * (x / self.mean + 1.0);
        let tail = (2.0 * self.shape / self.mean + ln_std_normal_cdf(-b)).exp();
        (std_normal_cdf(a) + tail).clamp(0.0, 1.0)
    }

    fn params(&self) -> Vec<f64> {
        vec![self.mean, self.shape]
    }
}

// ---------------------------------------------------------------------------
// Serialization glue

macro_rules! tagged {
    ($ty:ident, $family:expr, |$p:ident| $ctor:expr) => {
        impl From<$ty> for TaggedParams {
            fn from(v: $ty) -> Self {
                TaggedParams {
                    family: $family,
                    params: v.params(),
                }
            }
        }

        impl TryFrom<TaggedParams> for $ty {
            type Error = DistributionError;

            fn try_from(t: TaggedParams) -> Result<Self> {
                let $p = t.expect($family)?;
                $ctor
            }
        }
    };
}

tagged!(GaussianParams, Family::Gaussian, |p| GaussianParams::new(p[0], p[1]));
tagged!(ExponentialParams, Family::Exponential, |p| ExponentialParams::new(p[0]));
tagged!(GammaParams, Family::Gamma, |p| GammaParams::new(p[0], p[1]));
tagged!(InverseGaussianParams, Family::InverseGaussian, |p| {
    InverseGaussianParams::new(p[0], p[1])
});

// ---------------------------------------------------------------------------
// Family dispatch

/// A fitted member of one of the four families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TaggedParams", try_from = "TaggedParams")]
pub enum Distribution {
    Gaussian(GaussianParams),
    Exponential(ExponentialParams),
    Gamma(GammaParams),
    InverseGaussian(InverseGaussianParams),
}

impl Distribution {
    fn inner(&self) -> &dyn ContinuousDistribution {
        match self {
            Distribution::Gaussian(p) => p,
            Distribution::Exponential(p) => p,
            Distribution::Gamma(p) => p,
            Distribution::InverseGaussian(p) => p,
        }
    }
}

impl ContinuousDistribution for Distribution {
    fn family(&self) -> Family {
        self.inner().family()
    }

    fn log_pdf(&self, x: f64) -> f64 {
        self.inner().log_pdf(x)
    }

    fn cdf(&self, x: f64) -> f64 {
        self.inner().cdf(x)
    }

    fn params(&self) -> Vec<f64> {
        self.inner().params()
    }
}

impl From<Distribution> for TaggedParams {
    fn from(d: Distribution) -> Self {
        TaggedParams {
            family: d.family(),
            params: d.params(),
        }
    }
}

impl TryFrom<TaggedParams> for Distribution {
    type Error = DistributionError;

    fn try_from(t: TaggedParams) -> Result<Self> {
        Ok(match t.family {
            Family::Gaussian => Distribution::Gaussian(t.try_into()?),
            Family::Exponential => Distribution::Exponential(t.try_into()?),
            Family::Gamma => Distribution::Gamma(t.try_into()?),
            Family::InverseGaussian => Distribution::InverseGaussian(t.try_into()?),
        })
    }
}

/// Maximum-likelihood fit of `family` to `samples`.
pub fn fit(family: Family, samples: &[f64]) -> Result<Distribution> {
    Ok(match family {
        Family::Gaussian => Distribution::Gaussian(GaussianParams::fit(samples)?),
        Family::Exponential => Distribution::Exponential(ExponentialParams::fit(samples)?),
        Family::Gamma => Distribution::Gamma(GammaParams::fit(samples)?),
        Family::InverseGaussian => Distribution::InverseGaussian(InverseGaussianParams::fit(samples)?),
    })
}

/// Akaike information criterion `2k − 2·ln L`.
pub fn aic(log_likelihood: f64, num_params: usize) -> f64 {
    2.0 * num_params as f64 - 2.0 * log_likelihood
}

/// One row of an AIC comparison. `aic` is `None` when the family could not be
/// fitted (support violation or degenerate sample); `note` says why.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AicEntry {
    pub family: Family,
    pub aic: Option<f64>,
    pub log_likelihood: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilySelection {
    pub distribution: Distribution,
    pub table: Vec<AicEntry>,
}

impl FamilySelection {
    pub fn family(&self) -> Family {
        self.distribution.family()
    }
}

/// Fits every candidate and returns the one with minimal AIC. Ties go to fewer
/// parameters, then to the order of [`Family::ALL`].
pub fn select_family(samples: &[f64], candidates: &[Family]) -> Result<FamilySelection> {
    let mut table = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, Distribution)> = None;
    for &family in candidates {
        match fit(family, samples) {
            Ok(dist) => {
                let ll = dist.log_likelihood(samples);
                let score = aic(ll, family.num_params());
                table.push(AicEntry {
                    family,
                    aic: Some(score),
                    log_likelihood: Some(ll),
                    note: None,
                });
                if !score.is_finite() {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((b, bd)) => {
                        let bf = bd.family();
                        score < *b || (score == *b && (family.num_params(), family) < (bf.num_params(), bf))
                    }
                };
                if better {
                    best = Some((score, dist));
                }
            }
            Err(e) => table.push(AicEntry {
                family,
                aic: None,
                log_likelihood: None,
                note: Some(format!("inapplicable: {e}")),
            }),
        }
    }
    best.map(|(_, distribution)| FamilySelection { distribution, table })
        .ok_or(DistributionError::NoApplicableFamily)
}
