mod common;

use certsmooth::diffcore::{
    compose, dense_jacobian, finite_diff_jacobian, load_map, parameter_checksum, save_map, DifferentiableMap,
    DEFAULT_FD_STEP, DEFAULT_JACOBIAN_BUDGET,
};
use certsmooth::{Error, Tensor};
use common::{fd_jacobian, random_tensor, random_vec};
use proptest::prelude::*;

fn builtin_maps() -> Vec<(&'static str, DifferentiableMap)> {
    let backbone = DifferentiableMap::toy_backbone([2, 4, 4], 3, 6, 5).unwrap();
    vec![
        ("linear", DifferentiableMap::seeded_linear(vec![5], vec![4], 1).unwrap()),
        ("affine_sigmoid", DifferentiableMap::affine_sigmoid(6, 4, 2).unwrap()),
        ("toy_backbone", backbone.clone()),
        ("mlp_scorer", DifferentiableMap::mlp_scorer(4, &[6, 5], 3).unwrap()),
        (
            "composition",
            compose(DifferentiableMap::affine_sigmoid(6, 3, 4).unwrap(), backbone.clone()).unwrap(),
        ),
        ("pair_adapter", DifferentiableMap::pair_adapter(backbone).unwrap()),
    ]
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn jvp_and_vjp_match_central_differences(seed in 0u64..1_000_000) {
        for (name, map) in builtin_maps() {
            let x = random_tensor(seed, map.input_shape(), 1.0);
            let fd = fd_jacobian(&map, &x, 1e-5);
            let dense = dense_jacobian(&map, &x, DEFAULT_JACOBIAN_BUDGET).unwrap();
            let dense_flat: Vec<f64> = (0..map.output_len()).flat_map(|i| dense.row(i).to_vec()).collect();
            prop_assert!(max_abs(&fd, &dense_flat) < 1e-5, "{name}: dense vs fd {}", max_abs(&fd, &dense_flat));
            let u = random_tensor(seed + 1, map.input_shape(), 1.0);
            let ju = map.jvp(&x, &u).unwrap();
            let n = x.len();
            let fd_ju: Vec<f64> = (0..map.output_len())
                .map(|i| (0..n).map(|j| fd[i * n + j] * u.data()[j]).sum())
                .collect();
            prop_assert!(max_abs(ju.data(), &fd_ju) < 1e-5, "{name}: jvp");
        }
    }

    #[test]
    fn adjoint_identity_holds(seed in 0u64..1_000_000) {
        for (name, map) in builtin_maps() {
            let x = random_tensor(seed, map.input_shape(), 2.0);
            let u = random_tensor(seed + 7, map.input_shape(), 1.0);
            let v = random_tensor(seed + 9, map.output_shape(), 1.0);
            let lhs: f64 = v.data().iter().zip(map.jvp(&x, &u).unwrap().data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = map.vjp(&x, &v).unwrap().data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
            let scale = lhs.abs().max(rhs.abs()).max(1e-300);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale, "{name}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn forward_is_deterministic_and_associative(seed in 0u64..1_000_000) {
        let a = DifferentiableMap::mlp_scorer(3, &[4], seed).unwrap();
        let b = DifferentiableMap::affine_sigmoid(5, 3, seed + 1).unwrap();
        let c = DifferentiableMap::seeded_linear(vec![2], vec![5], seed + 2).unwrap();
        let x = random_tensor(seed, &[2], 3.0);
        let left = compose(a.clone(), compose(b.clone(), c.clone()).unwrap()).unwrap();
        let right = compose(compose(a, b).unwrap(), c).unwrap();
        let y = left.forward(&x).unwrap();
        prop_assert_eq!(&y, &right.forward(&x).unwrap());
        prop_assert_eq!(&y, &left.forward(&x).unwrap());
    }
}

#[test]
fn linear_maps_are_exact() {
    let a = DifferentiableMap::diagonal(&[2.0, 1.0]).unwrap();
    let x = Tensor::vector(vec![1.0, 1.0]).unwrap();
    assert_eq!(a.forward(&x).unwrap().data(), &[2.0, 1.0]);
    let m = DifferentiableMap::linear(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]).unwrap();
    let x = Tensor::vector(vec![0.3, -0.7, 2.0]).unwrap();
    let u = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
    assert_eq!(m.jvp(&x, &u).unwrap().data(), &[1.0 - 4.0 + 1.5, 3.0 - 3.0]);
    let v = Tensor::vector(vec![1.0, -1.0]).unwrap();
    assert_eq!(m.vjp(&x, &v).unwrap().data(), &[-2.0, -2.0, 1.5]);
    let j = dense_jacobian(&m, &x, DEFAULT_JACOBIAN_BUDGET).unwrap();
    assert_eq!(j.row(0), &[1.0, -2.0, 0.5]);
    assert_eq!(j.row(1), &[3.0, 0.0, -1.0]);
    let fd = finite_diff_jacobian(&m, &x, 0.1).unwrap();
    assert!(fd.max_abs_diff(&j) < 1e-14);
    assert!(m.jvp(&x, &Tensor::zeros(&[3])).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn composed_linear_jacobian_is_the_product() {
    let a = DifferentiableMap::linear(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = DifferentiableMap::linear(2, 2, vec![0.0, 1.0, -1.0, 0.5]).unwrap();
    let ab = compose(a, b).unwrap();
    let j = dense_jacobian(&ab, &Tensor::zeros(&[2]), DEFAULT_JACOBIAN_BUDGET).unwrap();
    assert_eq!(j.row(0), &[-2.0, 2.0]);
    assert_eq!(j.row(1), &[-4.0, 5.0]);
    let f = DifferentiableMap::mlp_scorer(3, &[4], 8).unwrap();
    let with_id = compose(DifferentiableMap::identity(1).unwrap(), f.clone()).unwrap();
    let x = random_tensor(3, &[3], 1.0);
    assert_eq!(with_id.forward(&x).unwrap().data(), f.forward(&x).unwrap().data());
}

#[test]
fn constant_map_has_zero_jacobian() {
    let c = DifferentiableMap::constant(vec![4], Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
    let j = dense_jacobian(&c, &random_tensor(1, &[4], 1.0), DEFAULT_JACOBIAN_BUDGET).unwrap();
    assert!((0..2).all(|i| j.row(i).iter().all(|&v| v == 0.0)));
}

#[test]
fn zero_affine_sigmoid_outputs_one_half() {
    let m = DifferentiableMap::affine_sigmoid_zeros(7, 3).unwrap();
    let y = m.forward(&random_tensor(4, &[7], 100.0)).unwrap();
    assert_eq!(y.data(), &[0.5, 0.5, 0.5]);
}

#[test]
fn toy_pipeline_dense_jacobian_matches_fd() {
    // 3x8x8 image (n = 192) through the backbone and a 16-wide FTN
    let backbone = DifferentiableMap::toy_backbone([3, 8, 8], 8, 64, 42).unwrap();
    let ftn = DifferentiableMap::affine_sigmoid(64, 16, 1).unwrap();
    let pipe = compose(ftn, backbone).unwrap();
    let x = random_tensor(11, &[3, 8, 8], 0.5);
    let dense = dense_jacobian(&pipe, &x, DEFAULT_JACOBIAN_BUDGET).unwrap();
    let fd = finite_diff_jacobian(&pipe, &x, DEFAULT_FD_STEP).unwrap();
    assert!(dense.max_abs_diff(&fd) < 1e-5);
}

#[test]
fn oversize_jacobian_is_refused() {
    let backbone = DifferentiableMap::toy_backbone([3, 8, 8], 8, 64, 42).unwrap();
    let err = dense_jacobian(&backbone, &Tensor::zeros(&[3, 8, 8]), 1000).unwrap_err();
    assert!(matches!(err, Error::Oversize { entries: 12288, budget: 1000 }));
}

#[test]
fn shape_mismatch_is_rejected() {
    let m = DifferentiableMap::affine_sigmoid(3, 2, 0).unwrap();
    assert!(matches!(m.forward(&Tensor::zeros(&[4])), Err(Error::ShapeMismatch { .. })));
    assert!(m.jvp(&Tensor::zeros(&[3]), &Tensor::zeros(&[2])).is_err());
    assert!(m.vjp(&Tensor::zeros(&[3]), &Tensor::zeros(&[3])).is_err());
    assert!(compose(m.clone(), m).is_err());
}

#[test]
fn pair_adapter_reference_branch_is_separate() {
    let backbone = DifferentiableMap::toy_backbone([1, 4, 4], 2, 5, 9).unwrap();
    let pair = DifferentiableMap::pair_adapter(backbone.clone()).unwrap();
    let x = random_tensor(2, &[2, 1, 4, 4], 1.0);
    let mut u = vec![0.0; 32];
    u[..16].copy_from_slice(&random_vec(5, 16, 1.0));
    let ju = pair.jvp(&x, &Tensor::new(vec![2, 1, 4, 4], u).unwrap()).unwrap();
    assert!(ju.data()[5..].iter().all(|&v| v == 0.0), "reference perturbation leaked into the distorted half");
    let reference = backbone.forward(&Tensor::new(vec![1, 4, 4], x.data()[..16].to_vec()).unwrap()).unwrap();
    let fixed = pair.with_fixed_reference(reference.data()).unwrap();
    let dist = Tensor::new(vec![1, 4, 4], x.data()[16..].to_vec()).unwrap();
    assert_eq!(fixed.forward(&dist).unwrap().data(), pair.forward(&x).unwrap().data());
}

/// Fixed regression values of the seed-42 toy backbone on a zero image.
const GOLDEN_CHECKSUM: &str = "e46c1f8d1b3c43177c029fe93bd23bdc97af662cf9d6bbef0eaa46093fc9f772";
const GOLDEN_HEAD: [f64; 4] = [0.016827783694983403, -0.07606717286619535, -0.024711054127552874, 0.08918597228518262];

#[test]
fn golden_toy_backbone_output() {
    let backbone = DifferentiableMap::toy_backbone([3, 8, 8], 8, 64, 42).unwrap();
    let y = backbone.forward(&Tensor::zeros(&[3, 8, 8])).unwrap();
    // digest over the exact bit patterns of all 64 outputs
    let bits: String = y.data().iter().map(|v| format!("{:016x}", v.to_bits())).collect();
    use sha2::{Digest, Sha256};
    let digest: String = Sha256::digest(bits.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(digest, GOLDEN_CHECKSUM);
    assert_eq!(&y.data()[..4], &GOLDEN_HEAD);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (name, map) in builtin_maps().into_iter().filter(|(n, _)| *n != "composition" && *n != "pair_adapter") {
        let path = dir.path().join(format!("{name}.json"));
        save_map(&map, &path).unwrap();
        let back = load_map(&path).unwrap();
        assert_eq!(parameter_checksum(&back), parameter_checksum(&map), "{name}");
        let x = random_tensor(1, map.input_shape(), 1.0);
        assert_eq!(back.forward(&x).unwrap().data(), map.forward(&x).unwrap().data());
    }
}
