//! Weibull toolkit used to model per-class service demand.
//!
//! The density is
//!
//! ```text
//! f(x; k, λ) = (k/λ) (x/λ)^(k-1) exp(-(x/λ)^k),   x ≥ 0
//! ```
//!
//! with shape `k > 0` and scale `λ > 0`. The unit of the scale (cycles or
//! seconds) is carried by the caller.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum Newton iterations on the likelihood shape equation.
pub const MAX_FIT_ITERATIONS: usize = 200;

/// Smallest sample accepted by [`fit`].
pub const MIN_FIT_SAMPLES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid {name}: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("probability {0} outside [0, 1)")]
    ProbabilityDomain(f64),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(&'static str),
    #[error("shape iteration did not converge after {iterations} steps (last shape {last_shape})")]
    NonConvergence { iterations: usize, last_shape: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weibull {
    shape: f64,
    scale: f64,
}

impl Weibull {
    pub fn new(shape: f64, scale: f64) -> Result<Self, DistError> {
        if !(shape.is_finite() && shape > 0.0) {
            return Err(DistError::InvalidParameter {
                name: "shape",
                value: shape,
                reason: "must be finite and positive",
            });
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(DistError::InvalidParameter {
                name: "scale",
                value: scale,
                reason: "must be finite and positive",
            });
        }
        Ok(Self { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Inverse CDF, `λ (-ln(1-p))^(1/k)`.
    pub fn quantile(&self, p: f64) -> Result<f64, DistError> {
        if !(0.0..1.0).contains(&p) {
            return Err(DistError::ProbabilityDomain(p));
        }
        // ln_1p keeps precision for small p, where 1-p rounds.
        Ok(self.scale * (-(-p).ln_1p()).powf(1.0 / self.shape))
    }

    /// CDF. Negative arguments return 0.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        -(-(x / self.scale).powf(self.shape)).exp_m1()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let z = x / self.scale;
        if x == 0.0 {
            return match self.shape {
                k if k < 1.0 => f64::INFINITY,
                1.0 => 1.0 / self.scale,
                _ => 0.0,
            };
        }
        (self.shape / self.scale) * z.powf(self.shape - 1.0) * (-z.powf(self.shape)).exp()
    }

    pub fn mean(&self) -> f64 {
        self.scale * statrs::function::gamma::gamma(1.0 + 1.0 / self.shape)
    }

    /// Inverse-transform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        // u in [0, 1), always inside the quantile domain.
        self.scale * (-(-u).ln_1p()).powf(1.0 / self.shape)
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub weibull: Weibull,
    /// RMSE between the normalized histogram and the fitted density,
    /// divided by the range of the empirical bin heights.
    pub nrmse: f64,
    pub sample_count: usize,
    pub bins: usize,
    pub iterations: usize,
}

/// Maximum-likelihood Weibull fit with a histogram goodness-of-fit report.
///
/// The shape solves
///
/// ```text
/// g(k) = Σ xᵢᵏ ln xᵢ / Σ xᵢᵏ − 1/k − mean(ln xᵢ) = 0
/// ```
///
/// by safeguarded Newton iteration; `g` is strictly increasing so a bracket is
/// maintained and bisection takes over whenever a Newton step leaves it.
pub fn fit(samples: &[f64], bins: usize) -> Result<FitReport, DistError> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(DistError::TooFewSamples {
            needed: MIN_FIT_SAMPLES,
            got: samples.len(),
        });
    }
    if bins == 0 {
        return Err(DistError::InvalidParameter {
            name: "bins",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    if samples.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(DistError::Degenerate(
            "samples must be finite and non-negative",
        ));
    }
    if samples.contains(&0.0) {
        return Err(DistError::Degenerate(
            "zero samples have no Weibull likelihood",
        ));
    }
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(DistError::Degenerate("all samples are equal"));
    }

    let n = samples.len() as f64;
    let logs: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / n;
    // Work on x / geometric mean so x^k stays representable for any k.
    let centered: Vec<f64> = logs.iter().map(|l| l - mean_log).collect();
    let var_log = centered.iter().map(|c| c * c).sum::<f64>() / n;
    // Weights are shifted by the largest log so exp() never overflows.
    let cmax = centered.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    // Profile score in centered units: mean(ln x) = 0 there.
    let score = |k: f64| -> (f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for c in &centered {
            let w = (k * (c - cmax)).exp();
            s0 += w;
            s1 += w * c;
            s2 += w * c * c;
        }
        let a = s1 / s0;
        let g = a - 1.0 / k;
        let dg = s2 / s0 - a * a + 1.0 / (k * k);
        (g, dg)
    };

    let mut k = (std::f64::consts::PI / (6.0 * var_log).sqrt()).clamp(1e-3, 1e3);
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        let (g, dg) = score(k);
        if g == 0.0 {
            converged = true;
            break;
        }
        if g > 0.0 {
            hi = hi.min(k);
        } else {
            lo = lo.max(k);
        }
        let mut next = k - g / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * k
            };
        }
        if (next - k).abs() <= 1e-13 * k {
            k = next;
            converged = true;
            break;
        }
        k = next;
    }
    if !converged {
        return Err(DistError::NonConvergence {
            iterations,
            last_shape: k,
        });
    }

    let mean_pow = centered.iter().map(|c| (k * (c - cmax)).exp()).sum::<f64>() / n;
    let scale = (mean_log + cmax).exp() * mean_pow.powf(1.0 / k);
    let weibull = Weibull::new(k, scale)?;
    let nrmse = histogram_nrmse(samples, bins, min, max, &weibull);

    Ok(FitReport {
        weibull,
        nrmse,
        sample_count: samples.len(),
        bins,
        iterations,
    })
}

/// Compares bin-averaged fitted density to the normalized histogram over
/// `[min, max]`.
fn histogram_nrmse(samples: &[f64], bins: usize, min: f64, max: f64, d: &Weibull) -> f64 {
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let i = (((x - min) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = samples.len() as f64;
    let heights: Vec<f64> = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    let sq: f64 = heights
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let a = min + i as f64 * width;
            let expected = (d.cdf(a + width) - d.cdf(a)) / width;
            (h - expected).powi(2)
        })
        .sum();
    let rmse = (sq / bins as f64).sqrt();
    let hmax = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hmin = heights.iter().copied().fold(f64::INFINITY, f64::min);
    if hmax > hmin {
        rmse / (hmax - hmin)
    } else {
        rmse
    }
}
