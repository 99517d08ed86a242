//! Gaussian and binomial distribution functions.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

/// Standard normal CDF `Φ(z)`.
pub fn gaussian_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Standard normal density.
pub fn gaussian_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Inverse standard normal CDF `Φ⁻¹(p)` for `p ∈ (0, 1)`.
///
/// Acklam's rational approximation refined by two Halley steps against
/// [`gaussian_cdf`].
pub fn gaussian_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile needs p in (0, 1), got {p}")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    const P_LOW: f64 = 0.02425;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..2 {
        // error measured on the side with more relative precision
        let e = if x <= 0.0 { gaussian_cdf(x) - p } else { (1.0 - p) - gaussian_cdf(-x) };
        let u = e / gaussian_pdf(x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

// Loader's saddle-point binomial density: accurate to a few ulps in relative
// terms across the whole support, unlike differences of log-factorials.

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln n! - ((n + 1/2) ln n - n + ln sqrt(2π))`, the Stirling remainder.
fn stirling_remainder(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        // direct evaluation; ln n! is summed exactly enough at this size
        let ln_fact: f64 = (2..=n as u64).map(|k| (k as f64).ln()).sum();
        return ln_fact - ((n + 0.5) * n.ln() - n + LN_SQRT_2PI);
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, evaluated without cancellation.
fn deviance(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// `P[Binomial(n, p) = k]`.
pub fn binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    let q = 1.0 - p;
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if q == 0.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let (kf, nf) = (k as f64, n as f64);
    if k == 0 {
        return (nf * (-p).ln_1p()).exp();
    }
    if k == n {
        return (nf * p.ln()).exp();
    }
    let lc = stirling_remainder(nf) - stirling_remainder(kf) - stirling_remainder(nf - kf)
        - deviance(kf, nf * p)
        - deviance(nf - kf, nf * q);
    let lf = (2.0 * PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// `P[Binomial(n, p) <= k]`.
///
/// Sums whichever tail is shorter relative to the mean so that both
/// `F(k)` near 0 and `1 - F(k)` near 0 keep absolute accuracy.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> Result<f64> {
    check_binomial(n, p)?;
    if k >= n {
        return Ok(1.0);
    }
    let mean = n as f64 * p;
    if (k as f64) < mean {
        Ok((0..=k).map(|j| binomial_pmf(j, n, p)).sum::<f64>().min(1.0))
    } else {
        let upper: f64 = (k + 1..=n).map(|j| binomial_pmf(j, n, p)).sum();
        Ok((1.0 - upper).max(0.0))
    }
}

/// `[F(0), F(1), ..., F(n)]` for `Binomial(n, p)` in one O(n) pass.
pub fn binomial_cdf_table(n: u64, p: f64) -> Result<Vec<f64>> {
    check_binomial(n, p)?;
    let pmf: Vec<f64> = (0..=n).map(|j| binomial_pmf(j, n, p)).collect();
    let len = pmf.len();
    let mut lower = vec![0.0; len];
    let mut acc = 0.0;
    for (j, v) in pmf.iter().enumerate() {
        acc += v;
        lower[j] = acc;
    }
    // upper[j] = P[X > j]
    let mut upper = vec![0.0; len];
    let mut acc = 0.0;
    for j in (0..len).rev() {
        upper[j] = acc;
        acc += pmf[j];
    }
    let mean = n as f64 * p;
    Ok((0..len)
        .map(|j| if (j as f64) < mean { lower[j].min(1.0) } else { (1.0 - upper[j]).max(0.0) })
        .collect())
}

fn check_binomial(n: u64, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("binomial p must lie in [0, 1], got {p}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("binomial n must be positive".into()));
    }
    Ok(())
}

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
///
/// Used as an independent route to the binomial CDF:
/// `P[Binomial(n, p) <= k] = I_{1-p}(n - k, k + 1)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(format!("incomplete beta domain: a={a}, b={b}, x={x}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    if x > (a + 1.0) / (a + b + 2.0) {
        let cf = beta_continued_fraction(b, a, 1.0 - x)?;
        Ok(1.0 - ln_front.exp() * cf / b)
    } else {
        let cf = beta_continued_fraction(a, b, x)?;
        Ok(ln_front.exp() * cf / a)
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=20_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::Numeric(format!("incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_basics() {
        assert_eq!(gaussian_cdf(0.0), 0.5);
        assert!((gaussian_cdf(1.96) - 0.9750).abs() < 1e-4);
        assert!((gaussian_cdf(-1.0) + gaussian_cdf(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quantile_rejects_endpoints() {
        assert!(gaussian_quantile(0.0).is_err());
        assert!(gaussian_quantile(1.0).is_err());
        assert!(gaussian_quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_round_trip_tails() {
        for &p in &[1e-12, 1e-6, 0.001, 0.3, 0.5, 0.97, 0.999_999] {
            let x = gaussian_quantile(p).unwrap();
            assert!((gaussian_cdf(x) - p).abs() < 1e-12 * p.max(1e-3), "p={p}");
        }
    }

    #[test]
    fn binomial_small_cases() {
        assert!((binomial_cdf(0, 2, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(binomial_cdf(7, 7, 0.3).unwrap(), 1.0);
        assert!((binomial_pmf(1, 2, 0.5) - 0.5).abs() < 1e-15);
        assert!((binomial_pmf(3, 10, 0.2) - 120.0 * 0.008 * 0.8f64.powi(7)).abs() < 1e-15);
    }

    #[test]
    fn binomial_table_matches_pointwise() {
        let table = binomial_cdf_table(300, 0.37).unwrap();
        for k in [0u64, 10, 100, 111, 150, 299, 300] {
            assert!((table[k as usize] - binomial_cdf(k, 300, 0.37).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn binomial_rejects_bad_p() {
        assert!(binomial_cdf(1, 3, 1.5).is_err());
        assert!(binomial_cdf(1, 3, -0.1).is_err());
    }

    #[test]
    fn incomplete_beta_uniform_case() {
        assert!((regularized_incomplete_beta(1.0, 1.0, 0.3).unwrap() - 0.3).abs() < 1e-15);
        assert!((regularized_incomplete_beta(2.0, 3.0, 0.0).unwrap()).abs() < 1e-15);
    }
}
