//! Optimal magnitude thresholds under zero-mean Laplace and Gauss weight
//! models, plus a Monte-Carlo harness to check them against the discrete
//! binarizer.
//!
//! With a threshold `t` on `|w|`, the expected cosine objective is
//! proportional to `(b + t) * exp(-t / 2b)` for Laplace(b) and to
//! `exp(-m^2) / sqrt(erfc(m))`, `m = t / (sqrt(2) sigma)`, for Gauss(sigma).
//! The fraction of weights encoded as one is `P(|w| > t)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binarize::{optimal_binarize, BinarizeError, WeightVector};

/// Search interval for the Gauss maximizer, in units of `m`.
pub const GAUSS_SEARCH_BRACKET: (f64, f64) = (0.0, 3.0);
/// Stopping width of the golden-section search.
pub const GAUSS_SEARCH_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("threshold must be nonnegative, got {0}")]
    InvalidThreshold(f64),
    #[error("all weights are zero")]
    Degenerate,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error(transparent)]
    Binarize(#[from] BinarizeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionKind {
    Laplace,
    Gauss,
}

impl DistributionKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Laplace => "laplace",
            Self::Gauss => "gauss",
        }
    }
}

impl std::str::FromStr for DistributionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "laplace" => Ok(Self::Laplace),
            "gauss" | "gaussian" | "normal" => Ok(Self::Gauss),
            other => Err(format!("unknown distribution {other:?} (expected laplace or gauss)")),
        }
    }
}

/// Zero-mean Laplace(`b`) or Gauss(`sigma`) model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionModel {
    kind: DistributionKind,
    scale: f64,
}

impl DistributionModel {
    pub fn new(kind: DistributionKind, scale: f64) -> Result<Self, DistError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(DistError::InvalidScale(scale));
        }
        Ok(Self { kind, scale })
    }

    pub fn laplace(b: f64) -> Result<Self, DistError> {
        Self::new(DistributionKind::Laplace, b)
    }

    pub fn gauss(sigma: f64) -> Result<Self, DistError> {
        Self::new(DistributionKind::Gauss, sigma)
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub t_star: f64,
    pub p_plus: f64,
    pub objective_at_t: f64,
}

/// Complementary error function.
///
/// Abramowitz & Stegun 7.1.26 rational approximation on `x >= 0`
/// (absolute error below 1.5e-7) with `erfc(-x) = 2 - erfc(x)`.
pub fn erfc(x: f64) -> f64 {
    const P: f64 = 0.327_591_1;
    const A: [f64; 5] = [0.254_829_592, -0.284_496_736, 1.421_413_741, -1.453_152_027, 1.061_405_429];
    if x.is_nan() {
        return f64::NAN;
    }
    let z = x.abs();
    let t = 1.0 / (1.0 + P * z);
    let poly = t * (A[0] + t * (A[1] + t * (A[2] + t * (A[3] + t * A[4]))));
    let tail = poly * (-z * z).exp();
    if x >= 0.0 {
        tail
    } else {
        2.0 - tail
    }
}

/// `(b + t) * exp(-t / (2b))`.
pub fn laplace_objective(t: f64, b: f64) -> Result<f64, DistError> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(DistError::InvalidScale(b));
    }
    if t.is_nan() || t < 0.0 {
        return Err(DistError::InvalidThreshold(t));
    }
    Ok((b + t) * (-t / (2.0 * b)).exp())
}

/// Analytic `d/dt` of [`laplace_objective`]: `exp(-t/2b) (b - t) / 2b`.
pub fn laplace_objective_slope(t: f64, b: f64) -> f64 {
    (-t / (2.0 * b)).exp() * (b - t) / (2.0 * b)
}

/// Maximizes [`laplace_objective`] numerically by bisecting on the sign of
/// its slope over `[0, 20 b]`. Used to cross-check the closed form `t = b`.
pub fn laplace_numeric_maximizer(b: f64) -> Result<f64, DistError> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(DistError::InvalidScale(b));
    }
    let (mut lo, mut hi) = (0.0, 20.0 * b);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if laplace_objective_slope(mid, b) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `exp(-m^2) / sqrt(erfc(m))`, the Gauss objective without its constant
/// prefactor.
pub fn gauss_objective(m: f64) -> f64 {
    (-m * m).exp() / erfc(m).sqrt()
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Optimal threshold and resulting fraction of ones for `model`.
pub fn optimal_threshold(model: &DistributionModel) -> ThresholdResult {
    match model.kind {
        DistributionKind::Laplace => {
            let b = model.scale;
            ThresholdResult {
                t_star: b,
                p_plus: (-1.0f64).exp(),
                objective_at_t: 2.0 * b * (-0.5f64).exp(),
            }
        }
        DistributionKind::Gauss => {
            let (lo, hi) = GAUSS_SEARCH_BRACKET;
            let m = golden_section_max(gauss_objective, lo, hi, GAUSS_SEARCH_TOL);
            ThresholdResult {
                t_star: m * std::f64::consts::SQRT_2 * model.scale,
                p_plus: erfc(m),
                objective_at_t: gauss_objective(m),
            }
        }
    }
}

/// `n` i.i.d. draws from `model`, reproducible per `seed`.
///
/// The generator is ChaCha8 seeded through `SeedableRng::seed_from_u64`.
/// Laplace draws use the inverse CDF on a uniform in `[-1/2, 1/2)`; Gauss
/// draws use the standard-normal ziggurat sampler scaled by `sigma`.
pub fn sample_weights(model: &DistributionModel, n: usize, seed: u64) -> Result<WeightVector, DistError> {
    if n == 0 {
        return Err(DistError::TooFewSamples { need: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = model.scale;
    let values: Vec<f64> = match model.kind {
        DistributionKind::Laplace => (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
            })
            .collect(),
        DistributionKind::Gauss => (0..n)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    Ok(WeightVector::new(values)?)
}

/// Fraction of ones in the optimal code of `w`.
pub fn empirical_plus_fraction(w: &WeightVector) -> Result<f64, DistError> {
    Ok(optimal_binarize(w)?.plus_fraction())
}

/// Moment fit of a zero-mean model: `b = mean|w|` or `sigma = rms(w)`.
pub fn fit_scale(kind: DistributionKind, w: &WeightVector) -> Result<DistributionModel, DistError> {
    if w.len() < 2 {
        return Err(DistError::TooFewSamples { need: 2, got: w.len() });
    }
    let n = w.len() as f64;
    let scale = match kind {
        DistributionKind::Laplace => w.iter().map(|v| v.abs()).sum::<f64>() / n,
        DistributionKind::Gauss => (w.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
    };
    if scale == 0.0 {
        return Err(DistError::Degenerate);
    }
    DistributionModel::new(kind, scale)
}
