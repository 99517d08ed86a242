mod common;

use certsmooth::diffcore::{compose, DifferentiableMap};
use certsmooth::ive::{feature_deviation_check, input_variation, spectral_norm, IveOutcome, SpectralOptions};
use certsmooth::rng::CounterRng;
use certsmooth::Tensor;
use common::{random_tensor, random_vec, singular_values};
use proptest::prelude::*;

fn opts() -> SpectralOptions {
    SpectralOptions::with_seed(17)
}

#[test]
fn jacobi_oracle_on_diagonal_cases() {
    assert_eq!(singular_values(&[2.0, 0.0, 0.0, 1.0], 2, 2), vec![2.0, 1.0]);
    let sv = singular_values(&[3.0, 4.0], 1, 2);
    assert!((sv[0] - 5.0).abs() < 1e-15 && sv[1].abs() < 1e-15);
}

#[test]
fn diagonal_and_identity_norms() {
    let x = Tensor::zeros(&[2]);
    let est = spectral_norm(&DifferentiableMap::diagonal(&[2.0, 1.0]).unwrap(), &x, &opts()).unwrap();
    assert!((est.value - 2.0).abs() <= 1e-9 && est.converged);
    let est = spectral_norm(&DifferentiableMap::identity(16).unwrap(), &Tensor::zeros(&[16]), &opts()).unwrap();
    assert!((est.value - 1.0).abs() <= 1e-9);
}

#[test]
fn random_linear_maps_match_dense_svd() {
    let mut s = CounterRng::new(2024).stream(0);
    for trial in 0..30u64 {
        let m = 1 + s.next_below(64);
        let n = 1 + s.next_below(64);
        let a = random_vec(1000 + trial, m * n, 1.0);
        let map = DifferentiableMap::linear(m, n, a.clone()).unwrap();
        let est = spectral_norm(&map, &Tensor::zeros(&[n]), &SpectralOptions::with_seed(trial)).unwrap();
        let truth = singular_values(&a, m, n)[0];
        assert!((est.value - truth).abs() <= 1e-6 * truth, "{m}x{n}: {} vs {truth}", est.value);
    }
}

#[test]
fn radius_and_abstain() {
    let id = DifferentiableMap::identity(3).unwrap();
    let r = input_variation(&id, &Tensor::zeros(&[3]), 0.1, 1e-3, &opts()).unwrap();
    assert!((r.epsilon_x().unwrap() - 0.1).abs() < 1e-12);
    let d = DifferentiableMap::diagonal(&[2.0, 1.0]).unwrap();
    let r = input_variation(&d, &Tensor::zeros(&[2]), 0.1, 1e-3, &opts()).unwrap();
    assert!((r.epsilon_x().unwrap() - 0.05).abs() < 1e-11);
    let c = DifferentiableMap::constant(vec![4], Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
    let r = input_variation(&c, &Tensor::zeros(&[4]), 0.1, 1e-3, &opts()).unwrap();
    assert_eq!(r.outcome, IveOutcome::Abstain);
    assert_eq!(r.spectral.value, 0.0);
    for sigma in [0.1, 0.25, 0.5] {
        assert!(input_variation(&id, &Tensor::zeros(&[3]), sigma, 1e-3, &opts()).is_ok());
    }
}

#[test]
fn linear_feature_deviation_reaches_sigma_exactly() {
    let map = DifferentiableMap::seeded_linear(vec![12], vec![5], 3).unwrap();
    let x = random_tensor(1, &[12], 1.0);
    let r = input_variation(&map, &x, 0.25, 1e-3, &opts()).unwrap();
    let dev = feature_deviation_check(&map, &x, r.epsilon_x().unwrap(), 0.25, 2000, 5, &opts()).unwrap();
    assert!((dev.top_direction_deviation - 0.25).abs() < 1e-9);
    assert!(dev.max_deviation <= 0.25 + 1e-9);
}

#[test]
fn toy_pipeline_deviation_ratio() {
    let backbone = DifferentiableMap::toy_backbone([3, 8, 8], 8, 64, 42).unwrap();
    let pipe = compose(DifferentiableMap::affine_sigmoid(64, 16, 1).unwrap(), backbone).unwrap();
    let x = random_tensor(8, &[3, 8, 8], 0.5);
    let r = input_variation(&pipe, &x, 0.1, 1e-3, &opts()).unwrap();
    let dev = feature_deviation_check(&pipe, &x, r.epsilon_x().unwrap(), 0.1, 10_000, 9, &opts()).unwrap();
    assert!(dev.ratio <= 1.05, "ratio {}", dev.ratio);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn norm_scales_with_the_map(seed in 0u64..1_000_000, c in -5.0f64..5.0) {
        prop_assume!(c.abs() > 1e-3);
        let a = random_vec(seed, 6 * 4, 1.0);
        let base = spectral_norm(&DifferentiableMap::linear(6, 4, a.clone()).unwrap(), &Tensor::zeros(&[4]), &opts()).unwrap();
        let scaled_a: Vec<f64> = a.iter().map(|v| c * v).collect();
        let scaled = spectral_norm(&DifferentiableMap::linear(6, 4, scaled_a).unwrap(), &Tensor::zeros(&[4]), &opts()).unwrap();
        prop_assert!((scaled.value - c.abs() * base.value).abs() <= 1e-8 * scaled.value);
    }

    #[test]
    fn doubling_sigma_doubles_radius(seed in 0u64..1_000_000, sigma in 0.01f64..1.0) {
        let map = DifferentiableMap::mlp_scorer(5, &[4], seed).unwrap();
        let x = random_tensor(seed, &[5], 1.0);
        let a = input_variation(&map, &x, sigma, 1e-6, &opts()).unwrap();
        let b = input_variation(&map, &x, 2.0 * sigma, 1e-6, &opts()).unwrap();
        if let (Some(ea), Some(eb)) = (a.epsilon_x(), b.epsilon_x()) {
            prop_assert_eq!(eb, 2.0 * ea);
        }
        prop_assert_eq!(a.spectral, spectral_norm(&map, &x, &opts()).unwrap());
    }
}
