mod common;

use std::fs;

use certsmooth::bench::dataset::rescale_mos;
use certsmooth::bench::*;
use certsmooth::diffcore::DifferentiableMap;
use certsmooth::pipeline::{FsIqaModel, InputRecord, Mode, QualityInput};
use certsmooth::smoothing::SmoothingConfig;
use certsmooth::{Error, Tensor};
use common::{brute_ranks, linear_model, pearson, random_tensor, spearman_oracle};
use proptest::prelude::*;

fn cfg(sigma: f64, n: usize, seed: u64) -> SmoothingConfig {
    SmoothingConfig::new(sigma, n, 0.999, seed).unwrap()
}

fn small_model() -> FsIqaModel {
    FsIqaModel::toy(Mode::Nr, [3, 8, 8], 8, 3).unwrap()
}

#[test]
fn correlation_examples() {
    assert!((srcc(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap() - 0.75f64.sqrt()).abs() < 1e-15);
    assert!((srcc(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!((srcc(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
    assert!(matches!(srcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
    assert!(plcc(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    assert!((plcc(&[1.0, 2.0, 4.0], &[1.0, 3.0, 2.0]).unwrap() - pearson(&[1.0, 2.0, 4.0], &[1.0, 3.0, 2.0])).abs() < 1e-15);
}

proptest! {
    #[test]
    fn srcc_matches_brute_ranks(a in prop::collection::vec(0i32..6, 3..30), seed in 0u64..1000) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b = common::random_vec(seed, a.len(), 1.0);
        let oracle = if brute_ranks(&a).windows(2).all(|w| w[0] == w[1]) { None } else { Some(spearman_oracle(&a, &b)) };
        match (srcc(&a, &b), oracle) {
            (Ok(v), Some(o)) => prop_assert!((v - o).abs() < 1e-12),
            (Err(_), None) => {}
            (got, want) => prop_assert!(false, "{got:?} vs {want:?}"),
        }
    }

    #[test]
    fn correlations_are_symmetric_and_rank_invariant(seed in 0u64..1000, n in 3usize..40) {
        let a = common::random_vec(seed, n, 2.0);
        let b = common::random_vec(seed + 7, n, 2.0);
        prop_assert_eq!(srcc(&a, &b).unwrap(), srcc(&b, &a).unwrap());
        prop_assert!((plcc(&a, &b).unwrap() - plcc(&b, &a).unwrap()).abs() < 1e-15);
        let warped: Vec<f64> = a.iter().map(|v| v.powi(3) + 5.0 * v).collect();
        prop_assert!((srcc(&warped, &b).unwrap() - srcc(&a, &b).unwrap()).abs() < 1e-12);
        let r = plcc(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
    }
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [Mode::Nr, Mode::Fr] {
        let ds = synth_dataset(4, 20, mode).unwrap();
        let sub = dir.path().join(mode.to_string());
        let csv = write_dataset(&ds, &sub).unwrap();
        let back = load_dataset(&csv).unwrap();
        assert_eq!(back.records, ds.records);
        assert_eq!(back.mode, mode);
        assert_eq!(back.fingerprint(), ds.fingerprint());
    }
    let t = random_tensor(1, &[2, 3, 4], 1.0);
    let p = dir.path().join("t.qtns");
    write_tensor(&t, &p).unwrap();
    assert_eq!(read_tensor(&p).unwrap(), t);
}

#[test]
fn malformed_rows_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_tensor(&Tensor::zeros(&[3, 8, 8]), &dir.path().join("a.qtns")).unwrap();
    write_tensor(&Tensor::zeros(&[3, 4, 4]), &dir.path().join("small.qtns")).unwrap();
    fs::write(dir.path().join("junk.qtns"), b"not a tensor").unwrap();
    let csv = dir.path().join("d.csv");
    fs::write(&csv, "path,mos\na.qtns,0.5\na.qtns,abc\nmissing.qtns,0.1\na.qtns,0.2,9\nsmall.qtns,0.3\njunk.qtns,0.4\n").unwrap();
    match load_dataset(&csv) {
        Err(Error::Ingest(issues)) => {
            let lines: Vec<usize> = issues.iter().map(|i| i.line).collect();
            assert_eq!(lines, vec![3, 4, 5, 6, 7]);
        }
        other => panic!("{other:?}"),
    }
    fs::write(&csv, "image,score\na.qtns,1\n").unwrap();
    assert!(matches!(load_dataset(&csv), Err(Error::Ingest(_))));
}

#[test]
fn mos_rescaling() {
    assert_eq!(rescale_mos(&[1.0, 3.0, 5.0], Some((1.0, 5.0))).unwrap(), vec![0.0, 0.5, 1.0]);
    assert_eq!(rescale_mos(&[2.0, 4.0, 3.0], None).unwrap(), vec![0.0, 1.0, 0.5]);
    assert_eq!(rescale_mos(&[0.2, 0.9], None).unwrap(), vec![0.2, 0.9]);
    assert!(rescale_mos(&[3.0, 3.0], None).is_err());

    let dir = tempfile::tempdir().unwrap();
    write_tensor(&Tensor::zeros(&[1, 2, 2]), &dir.path().join("a.qtns")).unwrap();
    let csv = dir.path().join("d.csv");
    fs::write(&csv, "path,mos\na.qtns,1\na.qtns,5\na.qtns,2\n").unwrap();
    let opts = LoadOptions { mos_range: Some((1.0, 5.0)), ..LoadOptions::default() };
    let ds = load_dataset_with(&csv, &opts).unwrap();
    assert_eq!(ds.records.iter().map(|r| r.mos).collect::<Vec<_>>(), vec![0.0, 1.0, 0.25]);
}

#[test]
fn curve_bins_match_sort_and_slice() {
    let model = small_model();
    let certs: Vec<_> = (0..37)
        .map(|i| {
            let x = QualityInput::Single(random_tensor(i, &[3, 8, 8], 0.2 + 0.02 * i as f64));
            model.certify(&x, &cfg(0.25, 200, i), 1e-3).unwrap()
        })
        .collect();
    let curve = bound_width_curve(&certs).unwrap();
    assert_eq!(curve.len(), CURVE_BINS);
    let mut pts: Vec<(f64, f64)> = certs
        .iter()
        .map(|c| (c.epsilon_x().unwrap(), c.s_upper().unwrap() - c.s_lower().unwrap()))
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut start = 0;
    for (b, bin) in curve.iter().enumerate() {
        let end = (b + 1) * pts.len() / CURVE_BINS;
        let g = &pts[start..end];
        assert_eq!(bin.count, g.len());
        let me = g.iter().map(|p| p.0).sum::<f64>() / g.len() as f64;
        let mw = g.iter().map(|p| p.1).sum::<f64>() / g.len() as f64;
        assert!((bin.mean_epsilon_x - me).abs() < 1e-15 * me.abs().max(1.0));
        assert!((bin.mean_width - mw).abs() < 1e-14);
        start = end;
    }
    assert!(bound_width_curve(&certs[..5]).is_err());
    let csv = curves_csv(&[("a".into(), curve)]);
    assert_eq!(csv.lines().count(), 1 + CURVE_BINS);
}

#[test]
fn identical_certificates_give_one_point() {
    let model = small_model();
    let x = QualityInput::Single(random_tensor(3, &[3, 8, 8], 0.5));
    let c = model.certify(&x, &cfg(0.25, 200, 1), 1e-3).unwrap();
    let curve = bound_width_curve(&vec![c.clone(); 20]).unwrap();
    assert!(curve.iter().all(|b| b.count == 2 && b.mean_epsilon_x == c.epsilon_x().unwrap()));
    assert!(curve.windows(2).all(|w| w[0].mean_width == w[1].mean_width));
}

#[test]
fn abstain_rate_and_jsonl() {
    let flat = FsIqaModel::new(
        DifferentiableMap::constant(vec![12], Tensor::vector(vec![0.3; 4]).unwrap()).unwrap(),
        DifferentiableMap::affine_sigmoid(4, 3, 1).unwrap(),
        DifferentiableMap::mlp_scorer(3, &[4], 2).unwrap(),
        Mode::Nr,
    )
    .unwrap();
    let live = linear_model(12, 4, 3, 5);
    let recs: Vec<(usize, InputRecord)> = (0..8)
        .map(|i| (i, InputRecord { input: QualityInput::Single(random_tensor(i as u64, &[12], 1.0)), mos: i as f64 / 8.0 }))
        .collect();
    let c = cfg(0.25, 200, 4);
    let mut lines = certify_records(&flat, &recs[..3], &c, 1e-3);
    lines.extend(certify_records(&live, &recs[3..], &c, 1e-3));
    let text = to_jsonl(&lines).unwrap();
    assert_eq!(from_jsonl(&text).unwrap(), lines);
    assert!(text.lines().next().unwrap().contains("\"abstain\""));
    let mos: Vec<f64> = recs.iter().map(|r| r.1.mos).collect();
    let s = summarize(&lines, &mos);
    assert_eq!((s.abstains, s.errors), (3, 0));
    assert!((s.abstain_rate - 3.0 / 8.0).abs() < 1e-15);
    assert!(s.mean_bound_width.unwrap() > 0.0);
}

#[test]
fn zero_budget_attack_changes_nothing() {
    let model = small_model();
    let inputs: Vec<QualityInput> = (0..3).map(|i| QualityInput::Single(random_tensor(i, &[3, 8, 8], 0.5))).collect();
    let ac = AttackConfig { epsilons: vec![0.0, 0.05], ..AttackConfig::default() };
    let r = ifgsm_attack(
        &AttackTarget::Plain(&model),
        &AttackTarget::Smoothed { model: &model, smoothing: cfg(0.25, 200, 1) },
        &inputs,
        &ac,
        9,
    )
    .unwrap();
    assert_eq!(r.undefended[0].relative_gain, 0.0);
    assert_eq!(r.defended[0].relative_gain, 0.0);
    assert!(r.undefended[1].relative_gain > 0.0);
    let adv = ifgsm(&AttackTarget::Plain(&model), &inputs[0], 0.05, &ac).unwrap();
    let d = adv.distorted().sub(inputs[0].distorted()).unwrap();
    assert!(d.data().iter().all(|v| v.abs() <= 0.05 + 1e-12));
    assert_eq!(attack_csv(&r).lines().count(), 3);
}

#[test]
fn timing_counts_backbone_calls() {
    let model = small_model();
    let x = QualityInput::Single(random_tensor(1, &[3, 8, 8], 0.5));
    let t = timing_report(&model, &x, &cfg(0.25, 150, 2), 1e-3, 3).unwrap();
    assert_eq!(t.predict.backbone_calls_per_run, 1.0);
    assert_eq!(t.certify.backbone_calls_per_run, 1.0);
    assert_eq!(t.input_space.backbone_calls_per_run, 150.0);
    assert_eq!(t.backbone_call_ratio, 150.0);
    assert!(t.certify.linearization_calls_per_run > 0.0 && t.predict.linearization_calls_per_run == 0.0);
}

#[test]
fn stability_across_seeds() {
    let model = small_model();
    let x = QualityInput::Single(random_tensor(1, &[3, 8, 8], 0.5));
    let r = stability_report(&model, &x, &cfg(0.25, 2000, 0), 10).unwrap();
    assert_eq!(r.scores.len(), 10);
    assert!(r.max_relative_deviation < 0.05);
    assert!(r.scores.windows(2).any(|w| w[0] != w[1]));
    assert!(stability_report(&model, &x, &cfg(0.25, 20, 0), 1).is_err());
}

#[test]
fn linear_model_certificates_hold() {
    let model = linear_model(30, 8, 6, 2);
    for i in 0..4 {
        let x = QualityInput::Single(random_tensor(i, &[30], 1.0));
        let c = model.certify(&x, &cfg(0.25, 2000, i), 1e-3).unwrap();
        for mode in [SeedMode::Same, SeedMode::Fresh] {
            let r = verify_certificate(&model, &x, &c, 200, 7, mode).unwrap();
            assert_eq!(r.violations, 0, "{mode:?}");
        }
        let deltas = probe_deltas(&c, &[30], 4, 1).unwrap();
        assert_eq!(verify_with_deltas(&model, &x, &c, &deltas, SeedMode::Same).unwrap().trials, 4);
    }
}

#[test]
fn input_space_median_is_reproducible() {
    let model = small_model();
    let x = QualityInput::Single(random_tensor(2, &[3, 8, 8], 0.5));
    let a = input_space_smooth(&model, &x, 0.05, 40, Reduction::Median, 3).unwrap();
    let b = input_space_smooth(&model, &x, 0.05, 40, Reduction::Median, 3).unwrap();
    assert_eq!(a, b);
    let s = input_space_samples(&model, &x, 0.05, 40, 3).unwrap();
    assert_eq!(s.values().len(), 40);
}
