mod common;

use certsmooth::bench::dataset::{distort, synth_dataset, Distortion};
use certsmooth::diffcore::{dense_jacobian, DifferentiableMap};
use certsmooth::pipeline::*;
use certsmooth::rng::CounterRng;
use certsmooth::smoothing::SmoothingConfig;
use certsmooth::Tensor;
use common::{linear_model, random_tensor, random_vec, singular_values, spearman_oracle};

fn cfg(sigma: f64, n: usize, seed: u64) -> SmoothingConfig {
    SmoothingConfig::new(sigma, n, 0.999, seed).unwrap()
}

#[test]
fn ftn_stays_in_unit_interval() {
    let ftn = DifferentiableMap::affine_sigmoid(10, 6, 3).unwrap();
    for scale in [1e-3, 1.0, 10.0] {
        let y = ftn.forward(&random_tensor(4, &[10], scale)).unwrap();
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0), "scale {scale}");
    }
    for scale in [1e3, 1e8] {
        let y = ftn.forward(&random_tensor(4, &[10], scale)).unwrap();
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn vanishing_noise_recovers_the_plain_score() {
    let model = FsIqaModel::toy(Mode::Nr, [3, 8, 8], 8, 2).unwrap();
    let x = QualityInput::Single(random_tensor(1, &[3, 8, 8], 0.5));
    let plain = model.plain_score(&x).unwrap();
    let smooth = model.predict(&x, &cfg(1e-12, 101, 0)).unwrap();
    assert!((plain - smooth).abs() < 1e-9);
}

#[test]
fn call_counts_and_agreement() {
    let model = FsIqaModel::toy(Mode::Nr, [3, 8, 8], 8, 2).unwrap();
    let x = QualityInput::Single(random_tensor(2, &[3, 8, 8], 0.5));
    let c = cfg(0.25, 500, 9);
    let before = model.counters().snapshot();
    let s = model.predict(&x, &c).unwrap();
    let p = model.counters().snapshot().since(&before);
    assert_eq!((p.backbone_forward, p.scorer_forward, p.linearization), (1, 500, 0));

    let before = model.counters().snapshot();
    let out = model.certify(&x, &c, 1e-3).unwrap();
    let q = model.counters().snapshot().since(&before);
    assert_eq!((q.backbone_forward, q.scorer_forward), (1, 500));
    assert!(q.linearization > 0);
    assert_eq!(out.score(), Some(s));
    let (lo, hi) = (out.s_lower().unwrap(), out.s_upper().unwrap());
    assert!(lo <= s && s <= hi);
    assert_eq!(model.certify(&x, &c, 1e-3).unwrap(), out);
}

#[test]
fn bank_prediction_matches_predict() {
    let model = FsIqaModel::toy(Mode::Nr, [3, 8, 8], 8, 4).unwrap();
    let c = cfg(0.3, 301, 17);
    let bank = model.noise_bank(&c).unwrap();
    for t in 0..5 {
        let x = QualityInput::Single(random_tensor(t, &[3, 8, 8], 0.5));
        assert_eq!(model.predict_with_bank(&x, &bank).unwrap(), model.predict(&x, &c).unwrap());
    }
}

#[test]
fn linear_gaussian_case() {
    let (d, m, k) = (24, 10, 6);
    let model = linear_model(d, m, k, 31);
    let x = QualityInput::Single(random_tensor(8, &[d], 1.0));
    // product of the two weight matrices, then its top singular value
    let a = dense_jacobian(&certsmooth::diffcore::compose(model.ftn().clone(), model.backbone().clone()).unwrap(), x.distorted(), 10_000).unwrap();
    let flat: Vec<f64> = (0..k).flat_map(|i| a.row(i).to_vec()).collect();
    let top = singular_values(&flat, k, d)[0];
    let w = model.scorer().parameters();
    let w_norm = w[..k].iter().map(|v| v * v).sum::<f64>().sqrt();
    let center = model.plain_score(&x).unwrap();

    let sigma = 0.2;
    let out = model.certify(&x, &cfg(sigma, 4000, 5), 1e-3).unwrap();
    let eps = out.epsilon_x().unwrap();
    assert!((eps - sigma / top).abs() < 1e-6 * eps);
    let spread = sigma * w_norm;
    let s = out.score().unwrap();
    assert!((s - center).abs() < 4.0 * 1.2533 * spread / 4000f64.sqrt());
    let (lo, hi) = (out.s_lower().unwrap(), out.s_upper().unwrap());
    assert!(lo <= center - spread + 0.02 * spread && lo > center - 1.3 * spread);
    assert!(hi >= center + spread - 0.02 * spread && hi < center + 1.3 * spread);
}

#[test]
fn constant_scorer_collapses_bounds() {
    let backbone = DifferentiableMap::seeded_linear(vec![12], vec![5], 1).unwrap();
    let ftn = DifferentiableMap::affine_sigmoid(5, 4, 2).unwrap();
    let scorer = DifferentiableMap::constant(vec![4], Tensor::vector(vec![0.42]).unwrap()).unwrap();
    let model = FsIqaModel::new(backbone, ftn, scorer, Mode::Nr).unwrap();
    let out = model.certify(&QualityInput::Single(random_tensor(3, &[12], 1.0)), &cfg(0.5, 200, 1), 1e-3).unwrap();
    assert_eq!((out.score(), out.s_lower(), out.s_upper()), (Some(0.42), Some(0.42), Some(0.42)));
}

#[test]
fn flat_feature_map_abstains() {
    let backbone = DifferentiableMap::constant(vec![12], Tensor::vector(vec![0.1; 5]).unwrap()).unwrap();
    let ftn = DifferentiableMap::affine_sigmoid(5, 4, 2).unwrap();
    let scorer = DifferentiableMap::mlp_scorer(4, &[8], 3).unwrap();
    let model = FsIqaModel::new(backbone, ftn, scorer, Mode::Nr).unwrap();
    let before = model.counters().snapshot();
    let out = model.certify(&QualityInput::Single(random_tensor(3, &[12], 1.0)), &cfg(0.5, 200, 1), 1e-3).unwrap();
    assert!(out.is_abstain() && out.epsilon_x().is_none());
    assert_eq!(model.counters().snapshot().since(&before).scorer_forward, 0);
}

#[test]
fn full_reference_ignoring_the_reference_equals_no_reference() {
    let (d, f, k) = (48, 7, 5);
    let backbone = DifferentiableMap::seeded_linear(vec![d], vec![f], 4).unwrap();
    let a = random_vec(9, k * f, 0.8);
    let bias = random_vec(10, k, 0.1);
    let mut padded = Vec::new();
    for row in a.chunks(f) {
        padded.extend(std::iter::repeat_n(0.0, f));
        padded.extend_from_slice(row);
    }
    let sig = |inp: usize, w: Vec<f64>| {
        let mut m = DifferentiableMap::affine_sigmoid_zeros(inp, k).unwrap();
        let mut p = w;
        p.extend_from_slice(&bias);
        m.set_parameters(&p).unwrap();
        m
    };
    let scorer = DifferentiableMap::mlp_scorer(k, &[8], 5).unwrap();
    let nr = FsIqaModel::new(backbone.clone(), sig(f, a), scorer.clone(), Mode::Nr).unwrap();
    let fr = FsIqaModel::new(backbone, sig(2 * f, padded), scorer, Mode::Fr).unwrap();
    let dist = random_tensor(1, &[d], 1.0);
    let pair = QualityInput::pair(random_tensor(2, &[d], 1.0), dist.clone()).unwrap();
    let c = cfg(0.25, 400, 3);
    let a = nr.certify(&QualityInput::Single(dist), &c, 1e-3).unwrap();
    let b = fr.certify(&pair, &c, 1e-3).unwrap();
    assert!((a.epsilon_x().unwrap() - b.epsilon_x().unwrap()).abs() < 1e-12 * a.epsilon_x().unwrap());
    assert_eq!(a.score(), b.score());
}

#[test]
fn full_reference_end_to_end() {
    let model = FsIqaModel::toy(Mode::Fr, [3, 8, 8], 8, 12).unwrap();
    let reference = random_tensor(5, &[3, 8, 8], 0.5);
    let distorted = reference.add_scaled(1.0, &random_tensor(6, &[3, 8, 8], 0.05)).unwrap();
    let input = QualityInput::pair(reference, distorted).unwrap();
    let out = model.certify(&input, &cfg(0.25, 500, 2), 1e-3).unwrap();
    let c = out.certified().unwrap();
    assert!(c.bounds.s_lower <= c.score && c.score <= c.bounds.s_upper);
    // the radius concerns the distorted image only
    let f_init = model.backbone_features(&input).unwrap();
    let fm = model.feature_map(&f_init).unwrap();
    let j = dense_jacobian(&fm, input.distorted(), 100_000).unwrap();
    let flat: Vec<f64> = (0..8).flat_map(|i| j.row(i).to_vec()).collect();
    let top = singular_values(&flat, 8, 192)[0];
    assert!((c.epsilon_x - 0.25 / top).abs() < 1e-6 * c.epsilon_x);
    assert!(model.certify(&QualityInput::Single(random_tensor(1, &[3, 8, 8], 0.5)), &cfg(0.25, 10, 0), 1e-3).is_err());
}

#[test]
fn trained_model_tracks_blur_severity() {
    let ds = synth_dataset(3, 160, Mode::Nr).unwrap();
    let mut model = FsIqaModel::toy(Mode::Nr, [3, 8, 8], 16, 5).unwrap();
    let tc = TrainConfig { epochs: 60, seed: 2, ..TrainConfig::default() };
    let report = train(&mut model, &ds.records, &tc).unwrap();
    assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);

    let base = match &synth_dataset(99, 10, Mode::Fr).unwrap().records[0].input {
        QualityInput::Pair { reference, .. } => reference.clone(),
        _ => unreachable!(),
    };
    let mut stream = CounterRng::new(0).stream(0);
    let sev: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
    let scores: Vec<f64> = sev
        .iter()
        .map(|&s| {
            let x = QualityInput::Single(distort(&base, Distortion::Blur, s, &mut stream));
            model.predict(&x, &cfg(0.25, 1000, 7)).unwrap()
        })
        .collect();
    let neg: Vec<f64> = sev.iter().map(|s| -s).collect();
    assert!(spearman_oracle(&scores, &neg) >= 0.9, "{scores:?}");
}

#[test]
fn bundle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = FsIqaModel::toy(Mode::Fr, [3, 8, 8], 8, 21).unwrap();
    save_bundle(&model, dir.path(), 21, "abc").unwrap();
    let (back, manifest) = load_bundle(dir.path()).unwrap();
    assert_eq!(manifest.dataset_fingerprint, "abc");
    let r = random_tensor(1, &[3, 8, 8], 0.5);
    let input = QualityInput::pair(r.clone(), r).unwrap();
    let c = cfg(0.25, 300, 4);
    assert_eq!(model.certify(&input, &c, 1e-3).unwrap(), back.certify(&input, &c, 1e-3).unwrap());
}
