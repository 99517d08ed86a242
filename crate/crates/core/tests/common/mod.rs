//! Reference computations shared by the integration tests. Each one is
//! written independently of the library code it checks.
#![allow(dead_code)]

use certsmooth::diffcore::DifferentiableMap;
use certsmooth::pipeline::{FsIqaModel, Mode};
use certsmooth::rng::CounterRng;
use certsmooth::Tensor;

/// Central differences, one column per input coordinate, row-major `m × n`.
pub fn fd_jacobian(map: &DifferentiableMap, x: &Tensor, h: f64) -> Vec<f64> {
    let n = x.len();
    let m = map.output_len();
    let mut jac = vec![0.0; m * n];
    for j in 0..n {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[j] += h;
        minus[j] -= h;
        let fp = map.forward(&Tensor::new(x.shape().to_vec(), plus).unwrap()).unwrap();
        let fm = map.forward(&Tensor::new(x.shape().to_vec(), minus).unwrap()).unwrap();
        for i in 0..m {
            jac[i * n + j] = (fp.data()[i] - fm.data()[i]) / (2.0 * h);
        }
    }
    jac
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// All singular values of the row-major `m × n` matrix, descending
/// (one-sided Jacobi rotations on the columns).
pub fn singular_values(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[i * n + j]).collect()).collect();
    for _ in 0..200 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let sign = if zeta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// `I_x(a, b)` from the all-positive series of `₂F₁(a+b, 1; a+1; x)`,
/// reflected when `x` lies past the mode.
pub fn incomplete_beta_series(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - incomplete_beta_series(b, a, 1.0 - x);
    }
    let ln_pre = a * x.ln() + b * (1.0 - x).ln() - a.ln() - (libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b));
    let (mut term, mut sum, mut k) = (1.0f64, 1.0f64, 0.0f64);
    while term > 1e-17 * sum {
        term *= (a + b + k) / (a + 1.0 + k) * x;
        sum += term;
        k += 1.0;
    }
    ln_pre.exp() * sum
}

/// `P[Binomial(n, p) ≤ k]` through the beta relation.
pub fn binomial_cdf_oracle(k: u64, n: u64, p: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    incomplete_beta_series((n - k) as f64, (k + 1) as f64, 1.0 - p)
}

/// `Φ(z)` from the Maclaurin series of erf (accurate for |z| ≤ 4).
pub fn phi_series(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let (mut term, mut sum) = (x, x);
    let mut n = 0.0;
    while term.abs() > 1e-18 {
        n += 1.0;
        term *= -x * x / n;
        sum += term / (2.0 * n + 1.0);
    }
    0.5 + sum / std::f64::consts::PI.sqrt()
}

/// Average 1-based ranks by counting, O(n²).
pub fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
    pearson(&brute_ranks(a), &brute_ranks(b))
}

pub fn random_vec(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut s = CounterRng::new(seed).stream(0);
    (0..n).map(|_| scale * (2.0 * s.next_uniform() - 1.0)).collect()
}

pub fn random_tensor(seed: u64, shape: &[usize], scale: f64) -> Tensor {
    Tensor::new(shape.to_vec(), random_vec(seed, shape.iter().product(), scale)).unwrap()
}

/// Backbone, FTN and scorer all linear (affine); the whole score is an
/// affine function of the image, so first-order certificates are exact.
pub fn linear_model(input: usize, features: usize, k: usize, seed: u64) -> FsIqaModel {
    let backbone = DifferentiableMap::seeded_linear(vec![input], vec![features], seed).unwrap();
    let ftn = DifferentiableMap::seeded_linear(vec![features], vec![k], seed + 1).unwrap();
    let scorer = DifferentiableMap::seeded_linear(vec![k], vec![1], seed + 2).unwrap();
    FsIqaModel::new(backbone, ftn, scorer, Mode::Nr).unwrap()
}
