use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{CertificationOutput, FsIqaModel, QualityInput};
use crate::rng::{mix_seed, CounterRng};
use crate::smoothing::SmoothingConfig;
use crate::tensor::{self, Tensor};

/// Which noise the re-run predictions use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// The certificate's own sampling seed: tests exactly the issued bound.
    Same,
    /// A new seed per probe: tests validity across sampling noise.
    Fresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub trials: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    /// Largest `S − S^u` and `S^l − S` seen (negative when never exceeded).
    pub max_above: f64,
    pub max_below: f64,
    pub epsilon_x: f64,
    pub s_lower: f64,
    pub s_upper: f64,
}

/// Perturbations used by [`verify_certificate`]: `±` the top singular
/// direction first, then random directions alternating between the
/// `ε_x` sphere and the interior of the ball.
pub fn probe_deltas(cert: &CertificationOutput, shape: &[usize], trials: usize, seed: u64) -> Result<Vec<Tensor>> {
    let eps = cert
        .epsilon_x()
        .ok_or_else(|| Error::InvalidArgument("cannot verify an abstained certificate".into()))?;
    let n: usize = shape.iter().product();
    let rng = CounterRng::new(seed);
    let top = cert.spectral.direction.data();
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let data: Vec<f64> = match t {
            0 | 1 if top.len() == n && tensor::norm(top) > 0.0 => {
                let sgn = if t == 0 { 1.0 } else { -1.0 };
                top.iter().map(|v| sgn * eps * v).collect()
            }
            _ => {
                let mut s = rng.stream(t as u64);
                let mut d: Vec<f64> = (0..n).map(|_| s.next_normal()).collect();
                let dn = tensor::norm(&d);
                let radius = if t % 2 == 0 { eps } else { eps * s.next_uniform().powf(1.0 / n as f64) };
                d.iter_mut().for_each(|v| *v *= radius / dn);
                d
            }
        };
        out.push(Tensor::new(shape.to_vec(), data)?);
    }
    Ok(out)
}

/// Re-runs prediction at `x + Δx` for every delta and counts scores
/// outside `[S^l, S^u]`.
pub fn verify_with_deltas(
    model: &FsIqaModel,
    input: &QualityInput,
    cert: &CertificationOutput,
    deltas: &[Tensor],
    mode: SeedMode,
) -> Result<VerificationReport> {
    let c = cert.certified().ok_or_else(|| Error::InvalidArgument("cannot verify an abstained certificate".into()))?;
    let (lo, hi) = (c.bounds.s_lower, c.bounds.s_upper);
    let cfg = cert.smoothing_config();
    let bank = match mode {
        SeedMode::Same => Some(model.noise_bank(&cfg)?),
        SeedMode::Fresh => None,
    };
    let mut violations = 0;
    let (mut max_above, mut max_below) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (t, d) in deltas.iter().enumerate() {
        let probe = input.perturbed(d)?;
        let s = match &bank {
            Some(b) => model.predict_with_bank(&probe, b)?,
            None => {
                let fresh = SmoothingConfig { seed: mix_seed(cfg.seed, t as u64 + 1), ..cfg };
                model.predict(&probe, &fresh)?
            }
        };
        max_above = max_above.max(s - hi);
        max_below = max_below.max(lo - s);
        if s < lo || s > hi {
            violations += 1;
        }
    }
    let trials = deltas.len();
    Ok(VerificationReport {
        trials,
        violations,
        violation_fraction: if trials == 0 { 0.0 } else { violations as f64 / trials as f64 },
        max_above,
        max_below,
        epsilon_x: c.epsilon_x,
        s_lower: lo,
        s_upper: hi,
    })
}

pub fn verify_certificate(
    model: &FsIqaModel,
    input: &QualityInput,
    cert: &CertificationOutput,
    trials: usize,
    seed: u64,
    mode: SeedMode,
) -> Result<VerificationReport> {
    let deltas = probe_deltas(cert, input.distorted().shape(), trials, seed)?;
    verify_with_deltas(model, input, cert, &deltas, mode)
}
