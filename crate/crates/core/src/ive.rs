//! Input variation estimation.
//!
//! Converts a feature-space noise level σ_f into an input-space radius
//! `ε_x = σ_f / ‖J(x)‖₂`, where `‖J(x)‖₂` is the largest singular value of
//! the feature map's Jacobian, estimated matrix-free by power iteration on
//! `JᵀJ`. When the norm falls below the threshold τ the estimator abstains.
//!
//! The radius comes from a first-order expansion of the map, so it bounds
//! the feature deviation exactly only for linear maps.

use serde::{Deserialize, Serialize};

use crate::diffcore::DifferentiableMap;
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::{norm, Tensor};

/// Default abstention threshold on the Jacobian norm.
pub const DEFAULT_TAU: f64 = 0.001;

const MAX_RESTARTS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Relative change between successive estimates that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 500, seed: 0 }
    }
}

impl SpectralOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }
}

/// Power-iteration estimate of `‖J(x)‖₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    /// Relative change between the last two estimates.
    pub residual: f64,
    pub converged: bool,
    /// Final unit-norm iterate: the estimated top right-singular vector.
    pub direction: Tensor,
    /// Number of JVP plus VJP evaluations performed.
    pub linearization_calls: usize,
}

/// Largest singular value of `J(x)` by power iteration `u ← JᵀJ u`, started
/// from a seeded random unit vector.
pub fn spectral_norm(map: &DifferentiableMap, x: &Tensor, opts: &SpectralOptions) -> Result<SpectralEstimate> {
    x.expect_shape(map.input_shape())?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let xs = x.data();
    let n = map.input_len();
    let rng = CounterRng::new(opts.seed);
    let mut calls = 0;

    let mut start = None;
    let mut last_probe = vec![0.0; n];
    for attempt in 0..=MAX_RESTARTS {
        let mut u = vec![0.0; n];
        rng.fill_normal(attempt, &mut u);
        normalize(&mut u);
        let w = map.jvp_slice(xs, &u);
        calls += 1;
        ensure_finite(&w, "initial JVP")?;
        if norm(&w) > 0.0 {
            start = Some((u, w));
            break;
        }
        last_probe = u;
    }
    let Some((mut v, mut w)) = start else {
        return Ok(SpectralEstimate {
            value: 0.0,
            iterations: 0,
            residual: 0.0,
            converged: true,
            direction: Tensor::from_parts(map.input_shape().to_vec(), last_probe),
            linearization_calls: calls,
        });
    };

    let mut estimate = norm(&w);
    let mut previous = estimate;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut step_size = f64::INFINITY;
    let mut two_back = v.clone();
    let mut return_dist = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut z = map.vjp_slice(xs, &w);
        ensure_finite(&z, "VJP")?;
        let nz = normalize(&mut z);
        if nz == 0.0 {
            break;
        }
        step_size = distance(&z, &v);
        return_dist = distance(&z, &two_back);
        two_back = std::mem::replace(&mut v, z);
        w = map.jvp_slice(xs, &v);
        calls += 2;
        ensure_finite(&w, "JVP")?;
        previous = estimate;
        estimate = norm(&w);
        residual = if estimate > 0.0 { (estimate - previous).abs() / estimate } else { 0.0 };
        if residual <= opts.tol {
            converged = true;
            break;
        }
    }
    // Iterates alternating between two vectors while the value has settled:
    // the top singular pair is degenerate, report the mean of the last two.
    let oscillating = step_size > opts.tol.sqrt() && return_dist < opts.tol.sqrt();
    let value = if converged && oscillating { 0.5 * (estimate + previous) } else { estimate };
    Ok(SpectralEstimate {
        value,
        iterations,
        residual,
        converged,
        direction: Tensor::from_parts(map.input_shape().to_vec(), v),
        linearization_calls: calls,
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn ensure_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite value in {what} during power iteration")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IveOutcome {
    Radius(f64),
    Abstain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IveResult {
    pub outcome: IveOutcome,
    pub spectral: SpectralEstimate,
    pub sigma_f: f64,
    pub tau: f64,
}

impl IveResult {
    pub fn epsilon_x(&self) -> Option<f64> {
        match self.outcome {
            IveOutcome::Radius(e) => Some(e),
            IveOutcome::Abstain => None,
        }
    }
}

/// `ε_x = σ_f / ‖J(x)‖₂`, or abstain when `‖J(x)‖₂ < τ`.
pub fn input_variation(
    map: &DifferentiableMap,
    x: &Tensor,
    sigma_f: f64,
    tau: f64,
    opts: &SpectralOptions,
) -> Result<IveResult> {
    if !(sigma_f > 0.0 && sigma_f.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma_f must be positive, got {sigma_f}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let spectral = spectral_norm(map, x, opts)?;
    let outcome = if spectral.value < tau { IveOutcome::Abstain } else { IveOutcome::Radius(sigma_f / spectral.value) };
    Ok(IveResult { outcome, spectral, sigma_f, tau })
}

/// Largest observed `‖B(x+u) − B(x)‖₂` over probes with `‖u‖₂ = ε_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub max_deviation: f64,
    /// Deviation along `±` the top singular direction.
    pub top_direction_deviation: f64,
    /// `max_deviation / σ_f`.
    pub ratio: f64,
    pub trials: usize,
}

/// Probes `trials` random directions on the radius-`ε_x` sphere plus both
/// signs of the top singular direction.
pub fn feature_deviation_check(
    map: &DifferentiableMap,
    x: &Tensor,
    epsilon_x: f64,
    sigma_f: f64,
    trials: usize,
    seed: u64,
    opts: &SpectralOptions,
) -> Result<DeviationReport> {
    x.expect_shape(map.input_shape())?;
    let base = map.forward_slice(x.data());
    let deviation = |dir: &[f64]| -> f64 {
        let probe: Vec<f64> = x.data().iter().zip(dir).map(|(a, d)| a + epsilon_x * d).collect();
        let y = map.forward_slice(&probe);
        y.iter().zip(&base).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let top = spectral_norm(map, x, opts)?.direction;
    let neg: Vec<f64> = top.data().iter().map(|v| -v).collect();
    let top_dev = deviation(top.data()).max(deviation(&neg));
    let rng = CounterRng::new(seed);
    let mut max_dev = top_dev;
    let mut dir = vec![0.0; map.input_len()];
    for t in 0..trials as u64 {
        rng.fill_normal(t, &mut dir);
        if normalize(&mut dir) == 0.0 {
            continue;
        }
        max_dev = max_dev.max(deviation(&dir));
    }
    Ok(DeviationReport { max_deviation: max_dev, top_direction_deviation: top_dev, ratio: max_dev / sigma_f, trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn diagonal_norm() {
        let map = DifferentiableMap::diagonal(&[2.0, 1.0]).unwrap();
        let est = spectral_norm(&map, &vec_t(&[0.3, -0.2]), &SpectralOptions::default()).unwrap();
        assert!((est.value - 2.0).abs() < 1e-9, "{}", est.value);
        assert!(est.converged);
        assert!(est.residual <= 1e-9);
    }

    #[test]
    fn identity_norm_and_radius() {
        let map = DifferentiableMap::identity(5).unwrap();
        let x = Tensor::zeros(&[5]);
        let r = input_variation(&map, &x, 0.1, DEFAULT_TAU, &SpectralOptions::default()).unwrap();
        assert!((r.spectral.value - 1.0).abs() < 1e-9);
        assert!((r.epsilon_x().unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn diagonal_radius() {
        let map = DifferentiableMap::diagonal(&[2.0, 1.0]).unwrap();
        let r = input_variation(&map, &vec_t(&[1.0, 1.0]), 0.1, DEFAULT_TAU, &SpectralOptions::default()).unwrap();
        assert!((r.epsilon_x().unwrap() - 0.05).abs() < 1e-10);
    }

    #[test]
    fn constant_map_abstains() {
        let map = DifferentiableMap::constant(vec![3], Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let r = input_variation(&map, &vec_t(&[1.0, 2.0, 3.0]), 0.1, 0.001, &SpectralOptions::default()).unwrap();
        assert_eq!(r.outcome, IveOutcome::Abstain);
        assert_eq!(r.spectral.value, 0.0);
        assert!(r.spectral.converged);
    }

    #[test]
    fn rejects_bad_parameters() {
        let map = DifferentiableMap::identity(2).unwrap();
        let x = Tensor::zeros(&[2]);
        let opts = SpectralOptions::default();
        assert!(input_variation(&map, &x, 0.0, 0.001, &opts).is_err());
        assert!(input_variation(&map, &x, 0.1, 0.0, &opts).is_err());
        assert!(spectral_norm(&map, &x, &SpectralOptions { tol: 0.0, ..opts }).is_err());
        assert!(spectral_norm(&map, &Tensor::zeros(&[3]), &opts).is_err());
    }

    #[test]
    fn repeated_singular_value() {
        let map = DifferentiableMap::diagonal(&[3.0, 3.0, 1.0]).unwrap();
        let est = spectral_norm(&map, &Tensor::zeros(&[3]), &SpectralOptions::default()).unwrap();
        assert!((est.value - 3.0).abs() < 1e-9);
    }

    #[test]
    fn linear_deviation_hits_sigma() {
        let map = DifferentiableMap::linear(2, 3, vec![1.0, 2.0, 0.0, -1.0, 0.5, 3.0]).unwrap();
        let x = vec_t(&[0.1, 0.2, 0.3]);
        let opts = SpectralOptions::default();
        let r = input_variation(&map, &x, 0.1, DEFAULT_TAU, &opts).unwrap();
        let dev = feature_deviation_check(&map, &x, r.epsilon_x().unwrap(), 0.1, 200, 5, &opts).unwrap();
        assert!((dev.top_direction_deviation - 0.1).abs() < 1e-9);
        assert!(dev.max_deviation <= 0.1 + 1e-9);
    }

    #[test]
    fn constant_deviation_is_zero() {
        let map = DifferentiableMap::constant(vec![2], Tensor::scalar(4.0)).unwrap();
        let dev =
            feature_deviation_check(&map, &vec_t(&[1.0, 1.0]), 0.7, 0.1, 50, 1, &SpectralOptions::default()).unwrap();
        assert_eq!(dev.max_deviation, 0.0);
    }
}
