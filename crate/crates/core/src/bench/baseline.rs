use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{FsIqaModel, QualityInput};
use crate::rng::CounterRng;
use crate::smoothing::{mean_smooth, median_smooth, trimmed_smooth, ScoreSamples};
use crate::tensor::Tensor;

/// How the input-space samples are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Mean,
    /// Mean after dropping `floor(α·N)` samples from each end.
    Trimmed(f64),
    Median,
}

impl Reduction {
    pub fn apply(&self, samples: &ScoreSamples) -> Result<f64> {
        match *self {
            Reduction::Mean => Ok(mean_smooth(samples)),
            Reduction::Trimmed(a) => trimmed_smooth(samples, a),
            Reduction::Median => Ok(median_smooth(samples)),
        }
    }
}

/// Smoothing in image space: `N` full passes of the unsmoothed model on
/// copies of the perturbable image with `N(0, σ_in² I)` noise added.
pub fn input_space_samples(
    model: &FsIqaModel,
    input: &QualityInput,
    sigma_in: f64,
    n: usize,
    seed: u64,
) -> Result<ScoreSamples> {
    if !(sigma_in >= 0.0 && sigma_in.is_finite()) || n == 0 {
        return Err(Error::InvalidArgument(format!("need sigma_in ≥ 0 and N > 0, got {sigma_in}, {n}")));
    }
    let rng = CounterRng::new(seed);
    let shape = input.distorted().shape().to_vec();
    let mut noise = vec![0.0; input.distorted().len()];
    let mut values = Vec::with_capacity(n);
    for i in 0..n as u64 {
        rng.fill_normal(i, &mut noise);
        let data = input.distorted().data().iter().zip(&noise).map(|(x, e)| x + sigma_in * e).collect();
        let noisy = input.with_distorted(Tensor::from_parts(shape.clone(), data))?;
        values.push(model.plain_score(&noisy)?);
    }
    ScoreSamples::from_unsorted(values, seed)
}

pub fn input_space_smooth(
    model: &FsIqaModel,
    input: &QualityInput,
    sigma_in: f64,
    n: usize,
    reduction: Reduction,
    seed: u64,
) -> Result<f64> {
    reduction.apply(&input_space_samples(model, input, sigma_in, n, seed)?)
}
