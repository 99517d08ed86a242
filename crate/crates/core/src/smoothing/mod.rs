//! Feature-space Gaussian sampling, smoothing reductions, and certified
//! percentile bounds from binomial order statistics.

mod stats;

pub use stats::{
    binomial_cdf, binomial_cdf_table, binomial_pmf, gaussian_cdf, gaussian_pdf, gaussian_quantile, ln_gamma,
    regularized_incomplete_beta,
};

use serde::{Deserialize, Serialize};

use crate::diffcore::DifferentiableMap;
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Default sample count.
pub const DEFAULT_SAMPLES: usize = 2000;
/// Default confidence level.
pub const DEFAULT_ALPHA: f64 = 0.999;

/// Parameters of one smoothing run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Standard deviation of the feature-space noise.
    pub sigma_f: f64,
    pub n_samples: usize,
    /// Confidence of the certified bounds, in (0.5, 1).
    pub alpha: f64,
    pub seed: u64,
}

impl SmoothingConfig {
    pub fn new(sigma_f: f64, n_samples: usize, alpha: f64, seed: u64) -> Result<Self> {
        let cfg = Self { sigma_f, n_samples, alpha, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_sigma(sigma_f: f64, seed: u64) -> Result<Self> {
        Self::new(sigma_f, DEFAULT_SAMPLES, DEFAULT_ALPHA, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_f > 0.0 && self.sigma_f.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma_f must be positive, got {}", self.sigma_f)));
        }
        if self.n_samples < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 samples, got {}", self.n_samples)));
        }
        if !(self.alpha > 0.5 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0.5, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Scorer outputs on noised features, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSamples {
    values: Vec<f64>,
    source_seed: u64,
}

impl ScoreSamples {
    /// Sorts `values` into canonical order. Values must be finite.
    pub fn from_unsorted(mut values: Vec<f64>, source_seed: u64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("no samples".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite score sample".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values, source_seed })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn source_seed(&self) -> u64 {
        self.source_seed
    }
}

/// Stream index used when a sample has to be redrawn.
const RETRY_STREAM: u64 = 1 << 63;

/// Evaluates the scorer on `n_samples` copies of `f_norm + e_i`,
/// `e_i ~ N(0, σ_f² I)`. Noise for sample `i` depends only on `(seed, i)`.
///
/// A non-finite output is redrawn once from a separate stream; a second
/// failure is an error.
pub fn sample_noised_scores(scorer: &DifferentiableMap, f_norm: &Tensor, cfg: &SmoothingConfig) -> Result<ScoreSamples> {
    cfg.validate()?;
    f_norm.expect_shape(scorer.input_shape())?;
    if scorer.output_len() != 1 {
        return Err(Error::InvalidArgument(format!("scorer must be scalar-valued, has {} outputs", scorer.output_len())));
    }
    let rng = CounterRng::new(cfg.seed);
    let base = f_norm.data();
    let mut noised = vec![0.0; base.len()];
    let mut values = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples as u64 {
        let mut value = f64::NAN;
        for stream in [i, i | RETRY_STREAM] {
            rng.fill_normal(stream, &mut noised);
            for (n, b) in noised.iter_mut().zip(base) {
                *n = b + cfg.sigma_f * *n;
            }
            value = scorer.forward_slice(&noised)[0];
            if value.is_finite() {
                break;
            }
        }
        if !value.is_finite() {
            return Err(Error::Numeric(format!("scorer output non-finite twice for sample {i}")));
        }
        values.push(value);
    }
    ScoreSamples::from_unsorted(values, cfg.seed)
}

/// Arithmetic mean of the samples.
pub fn mean_smooth(samples: &ScoreSamples) -> f64 {
    samples.values.iter().sum::<f64>() / samples.len() as f64
}

/// Drops the lowest and highest `⌊alpha_trim · N⌋` samples and averages the rest.
pub fn trimmed_smooth(samples: &ScoreSamples, alpha_trim: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&alpha_trim) {
        return Err(Error::InvalidArgument(format!("trim fraction must lie in [0, 0.5), got {alpha_trim}")));
    }
    let n = samples.len();
    let cut = (alpha_trim * n as f64).floor() as usize;
    let kept = &samples.values[cut..n - cut];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Middle order statistic, or the mean of the two middle values for even `N`.
pub fn median_smooth(samples: &ScoreSamples) -> f64 {
    median_sorted(&samples.values)
}

pub(crate) fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median of an unsorted buffer via selection; reorders `buf`.
pub(crate) fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (lower, upper, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

/// `(Φ(-ε_f/σ_f), Φ(ε_f/σ_f))`.
pub fn percentile_pair(sigma_f: f64, eps_f: f64) -> Result<(f64, f64)> {
    if !(sigma_f > 0.0) || !(eps_f >= 0.0) {
        return Err(Error::InvalidArgument(format!("need sigma_f > 0 and eps_f >= 0, got {sigma_f}, {eps_f}")));
    }
    let r = eps_f / sigma_f;
    Ok((gaussian_cdf(-r), gaussian_cdf(r)))
}

/// Certified lower/upper percentile bounds of the smoothed scorer.
///
/// A side that the sample size cannot certify carries an infinite sentinel
/// and no index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifiedBounds {
    pub s_lower: f64,
    pub s_upper: f64,
    pub q_lower: f64,
    pub q_upper: f64,
    /// 1-based order-statistic index of `s_lower`.
    pub k_lower: Option<usize>,
    /// 1-based order-statistic index of `s_upper`.
    pub k_upper: Option<usize>,
    pub confidence: f64,
}

impl CertifiedBounds {
    pub fn width(&self) -> f64 {
        self.s_upper - self.s_lower
    }

    pub fn is_finite(&self) -> bool {
        self.s_lower.is_finite() && self.s_upper.is_finite()
    }
}

/// Order-statistic indices `(k_lower, k_upper)` (1-based) for a sample of
/// size `n`.
///
/// The confidence `alpha` is split evenly between the two sides:
/// `k_lower` is the largest `k` with `F(k-1; n, q_lower) <= (1-alpha)/2` and
/// `k_upper` the smallest `k` with `F(k-1; n, q_upper) >= 1 - (1-alpha)/2`.
pub fn order_statistic_indices(n: usize, q_lower: f64, q_upper: f64, alpha: f64) -> Result<(Option<usize>, Option<usize>)> {
    if !(q_lower > 0.0 && q_lower <= q_upper && q_upper < 1.0) {
        return Err(Error::InvalidArgument(format!("need 0 < q_lower <= q_upper < 1, got {q_lower}, {q_upper}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let tail = (1.0 - alpha) / 2.0;
    let n64 = n as u64;
    let lower_cdf = binomial_cdf_table(n64, q_lower)?;
    // F(k-1) for k = 1..=n is lower_cdf[k-1]; nondecreasing in k
    let k_lower = (1..=n).rev().find(|&k| lower_cdf[k - 1] <= tail);
    let upper_cdf = binomial_cdf_table(n64, q_upper)?;
    let k_upper = (1..=n).find(|&k| upper_cdf[k - 1] >= 1.0 - tail);
    Ok((k_lower, k_upper))
}

/// Median-smoothing certificate from sorted samples: with probability at
/// least `alpha` over the draw, `s_lower` lies below the true `q_lower`
/// quantile and `s_upper` above the true `q_upper` quantile.
pub fn order_statistic_bounds(samples: &ScoreSamples, q_lower: f64, q_upper: f64, alpha: f64) -> Result<CertifiedBounds> {
    let (k_lower, k_upper) = order_statistic_indices(samples.len(), q_lower, q_upper, alpha)?;
    let v = samples.values();
    Ok(CertifiedBounds {
        s_lower: k_lower.map_or(f64::NEG_INFINITY, |k| v[k - 1]),
        s_upper: k_upper.map_or(f64::INFINITY, |k| v[k - 1]),
        q_lower,
        q_upper,
        k_lower,
        k_upper,
        confidence: alpha,
    })
}

/// Randomized-smoothing classification radius `σ/2 (Φ⁻¹(p_a) − Φ⁻¹(p_b))`.
pub fn rs_classification_radius(p_a: f64, p_b: f64, sigma: f64) -> Result<f64> {
    if !(0.0 < p_b && p_b <= p_a && p_a < 1.0) {
        return Err(Error::InvalidArgument(format!("need 0 < p_b <= p_a < 1, got p_a={p_a}, p_b={p_b}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(0.5 * sigma * (gaussian_quantile(p_a)? - gaussian_quantile(p_b)?))
}
