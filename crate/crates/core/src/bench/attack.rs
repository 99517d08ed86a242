use serde::{Deserialize, Serialize};

use crate::diffcore::DifferentiableMap;
use crate::error::{Error, Result};
use crate::pipeline::{FsIqaModel, QualityInput};
use crate::rng::CounterRng;
use crate::smoothing::SmoothingConfig;
use crate::tensor::Tensor;

pub const DEFAULT_ATTACK_ITERATIONS: usize = 10;
pub const DEFAULT_ATTACK_EPSILONS: [f64; 6] = [0.02, 0.05, 0.1, 0.15, 0.20, 0.25];
/// Fixed noise draws in the mean-of-samples surrogate of a smoothed model.
pub const DEFAULT_SURROGATE_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackNorm {
    LInf,
    L2,
}

impl AttackNorm {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linf" | "l_inf" | "inf" => Some(AttackNorm::LInf),
            "l2" => Some(AttackNorm::L2),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttackNorm::LInf => "l_inf",
            AttackNorm::L2 => "l2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub iterations: usize,
    pub epsilons: Vec<f64>,
    pub norm: AttackNorm,
    pub seed: u64,
    pub surrogate_samples: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ATTACK_ITERATIONS,
            epsilons: DEFAULT_ATTACK_EPSILONS.to_vec(),
            norm: AttackNorm::LInf,
            seed: 0,
            surrogate_samples: DEFAULT_SURROGATE_SAMPLES,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.surrogate_samples == 0 {
            return Err(Error::InvalidArgument("iterations and surrogate_samples must be positive".into()));
        }
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::InvalidArgument("epsilons must be finite and non-negative".into()));
        }
        if self.epsilons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("epsilons must be strictly ascending".into()));
        }
        Ok(())
    }
}

/// What the attacker differentiates.
#[derive(Debug, Clone)]
pub enum AttackTarget<'a> {
    /// The unsmoothed composite `Scorer ∘ FTN ∘ b`.
    Plain(&'a FsIqaModel),
    /// A feature-smoothed model, attacked through the mean of scorer
    /// outputs over fixed noise draws and evaluated with fresh-seed median
    /// smoothing.
    Smoothed { model: &'a FsIqaModel, smoothing: SmoothingConfig },
}

impl AttackTarget<'_> {
    fn evaluate(&self, input: &QualityInput, eval_seed: u64) -> Result<f64> {
        match self {
            AttackTarget::Plain(m) => m.plain_score(input),
            AttackTarget::Smoothed { model, smoothing } => {
                model.predict(input, &SmoothingConfig { seed: eval_seed, ..*smoothing })
            }
        }
    }

    /// Gradient of the attacked objective with respect to the perturbable image.
    fn gradient(&self, input: &QualityInput, noise: &[Vec<f64>]) -> Result<Tensor> {
        match self {
            AttackTarget::Plain(m) => {
                let map = m.plain_score_map(input)?;
                map.vjp(input.distorted(), &Tensor::vector(vec![1.0])?)
            }
            AttackTarget::Smoothed { model, smoothing } => {
                let f_init = model.backbone_features(input)?;
                let feature_map: DifferentiableMap = model.feature_map(&f_init)?;
                let f_norm = model.ftn_forward(&f_init)?;
                let scorer = model.scorer();
                let mut g = vec![0.0; f_norm.len()];
                let mut z = vec![0.0; f_norm.len()];
                for e in noise {
                    for ((zi, f), ei) in z.iter_mut().zip(f_norm.data()).zip(e) {
                        *zi = f + smoothing.sigma_f * ei;
                    }
                    let gz = scorer.vjp(&Tensor::vector(z.clone())?, &Tensor::vector(vec![1.0 / noise.len() as f64])?)?;
                    for (a, b) in g.iter_mut().zip(gz.data()) {
                        *a += b;
                    }
                }
                feature_map.vjp(input.distorted(), &Tensor::new(f_norm.shape().to_vec(), g)?)
            }
        }
    }
}

/// Iterative gradient-sign ascent on the score, step `ε / iterations`,
/// projected back onto the `ε` ball after every step.
pub fn ifgsm(target: &AttackTarget<'_>, input: &QualityInput, eps: f64, cfg: &AttackConfig) -> Result<QualityInput> {
    cfg.validate()?;
    if eps == 0.0 {
        return Ok(input.clone());
    }
    let noise = surrogate_noise(target, cfg);
    let x0 = input.distorted().clone();
    let step = eps / cfg.iterations as f64;
    let mut current = input.clone();
    for _ in 0..cfg.iterations {
        let g = target.gradient(&current, &noise)?;
        let mut x = current.distorted().data().to_vec();
        match cfg.norm {
            AttackNorm::LInf => {
                for ((xi, gi), oi) in x.iter_mut().zip(g.data()).zip(x0.data()) {
                    *xi = (*xi + step * sign(*gi)).clamp(oi - eps, oi + eps);
                }
            }
            AttackNorm::L2 => {
                let gn = g.norm();
                if gn > 0.0 {
                    for (xi, gi) in x.iter_mut().zip(g.data()) {
                        *xi += step * gi / gn;
                    }
                }
                let mut delta: Vec<f64> = x.iter().zip(x0.data()).map(|(a, b)| a - b).collect();
                let dn = crate::tensor::norm(&delta);
                if dn > eps {
                    delta.iter_mut().for_each(|d| *d *= eps / dn);
                }
                for ((xi, d), oi) in x.iter_mut().zip(&delta).zip(x0.data()) {
                    *xi = oi + d;
                }
            }
        }
        current = input.with_distorted(Tensor::new(x0.shape().to_vec(), x)?)?;
    }
    Ok(current)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn surrogate_noise(target: &AttackTarget<'_>, cfg: &AttackConfig) -> Vec<Vec<f64>> {
    match target {
        AttackTarget::Plain(_) => Vec::new(),
        AttackTarget::Smoothed { model, .. } => {
            let rng = CounterRng::new(cfg.seed);
            (0..cfg.surrogate_samples as u64)
                .map(|i| {
                    let mut e = vec![0.0; model.feature_dim()];
                    rng.fill_normal(i, &mut e);
                    e
                })
                .collect()
        }
    }
}

/// Score gain at one attack budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainPoint {
    pub epsilon: f64,
    pub mean_clean: f64,
    pub mean_attacked: f64,
    /// `Σ (S_adv − S_clean) / Σ |S_clean|` over the attacked inputs.
    pub relative_gain: f64,
}

/// Attacks every input at every budget; evaluation uses `eval_seed`
/// (distinct from the surrogate's noise) for smoothed targets.
pub fn score_gain_curve(
    target: &AttackTarget<'_>,
    inputs: &[QualityInput],
    cfg: &AttackConfig,
    eval_seed: u64,
) -> Result<Vec<GainPoint>> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no inputs to attack".into()));
    }
    let clean: Vec<f64> = inputs.iter().map(|x| target.evaluate(x, eval_seed)).collect::<Result<_>>()?;
    let clean_sum: f64 = clean.iter().sum();
    let clean_abs: f64 = clean.iter().map(|v| v.abs()).sum();
    let n = inputs.len() as f64;
    cfg.epsilons
        .iter()
        .map(|&eps| {
            let mut adv_sum = 0.0;
            for x in inputs {
                let adv = ifgsm(target, x, eps, cfg)?;
                adv_sum += target.evaluate(&adv, eval_seed)?;
            }
            let relative_gain = if clean_abs > 0.0 { (adv_sum - clean_sum) / clean_abs } else { 0.0 };
            Ok(GainPoint { epsilon: eps, mean_clean: clean_sum / n, mean_attacked: adv_sum / n, relative_gain })
        })
        .collect()
}

/// Gain curves of an undefended and a defended target on the same inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub undefended: Vec<GainPoint>,
    pub defended: Vec<GainPoint>,
}

pub fn ifgsm_attack(
    undefended: &AttackTarget<'_>,
    defended: &AttackTarget<'_>,
    inputs: &[QualityInput],
    cfg: &AttackConfig,
    eval_seed: u64,
) -> Result<AttackReport> {
    Ok(AttackReport {
        undefended: score_gain_curve(undefended, inputs, cfg, eval_seed)?,
        defended: score_gain_curve(defended, inputs, cfg, eval_seed)?,
    })
}

pub fn attack_csv(report: &AttackReport) -> String {
    let mut out = String::from("epsilon,undefended_gain,defended_gain\n");
    for (u, d) in report.undefended.iter().zip(&report.defended) {
        out.push_str(&format!("{},{},{}\n", u.epsilon, u.relative_gain, d.relative_gain));
    }
    out
}
