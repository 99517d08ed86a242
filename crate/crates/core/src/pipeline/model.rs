use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::diffcore::{compose, DifferentiableMap, MapKind, TOY_BACKBONE_CHANNELS, TOY_BACKBONE_FEATURES};
use crate::error::{Error, Result};
use crate::ive::{input_variation, IveOutcome, SpectralEstimate, SpectralOptions};
use crate::rng::{mix_seed, CounterRng};
use crate::smoothing::{
    median_in_place, median_smooth, order_statistic_bounds, percentile_pair, sample_noised_scores, CertifiedBounds,
    SmoothingConfig,
};
use crate::tensor::Tensor;

/// No-reference (single image) or full-reference (reference + distorted pair).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "NR")]
    Nr,
    #[serde(rename = "FR")]
    Fr,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nr" => Some(Mode::Nr),
            "fr" => Some(Mode::Fr),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Nr => "NR",
            Mode::Fr => "FR",
        })
    }
}

/// Model input: one image, or a reference/distorted pair.
#[derive(Debug, Clone, PartialEq)]
pub enum QualityInput {
    Single(Tensor),
    Pair { reference: Tensor, distorted: Tensor },
}

impl QualityInput {
    pub fn pair(reference: Tensor, distorted: Tensor) -> Result<Self> {
        if reference.shape() != distorted.shape() {
            return Err(Error::shape(reference.shape(), distorted.shape()));
        }
        Ok(QualityInput::Pair { reference, distorted })
    }

    pub fn mode(&self) -> Mode {
        match self {
            QualityInput::Single(_) => Mode::Nr,
            QualityInput::Pair { .. } => Mode::Fr,
        }
    }

    /// The image an attacker may perturb.
    pub fn distorted(&self) -> &Tensor {
        match self {
            QualityInput::Single(x) => x,
            QualityInput::Pair { distorted, .. } => distorted,
        }
    }

    /// Same input with the perturbable image replaced.
    pub fn with_distorted(&self, image: Tensor) -> Result<Self> {
        image.expect_shape(self.distorted().shape())?;
        Ok(match self {
            QualityInput::Single(_) => QualityInput::Single(image),
            QualityInput::Pair { reference, .. } => {
                QualityInput::Pair { reference: reference.clone(), distorted: image }
            }
        })
    }

    /// Same input with `delta` added to the perturbable image.
    pub fn perturbed(&self, delta: &Tensor) -> Result<Self> {
        self.with_distorted(self.distorted().add_scaled(1.0, delta)?)
    }
}

/// An input with its subjective score.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRecord {
    pub input: QualityInput,
    /// Mean opinion score normalized to [0, 1].
    pub mos: f64,
}

/// Invocation counters. Backbone forward passes are counted separately from
/// the JVP/VJP evaluations of the linearized feature map.
#[derive(Debug, Default)]
pub struct CallCounters {
    backbone_forward: AtomicUsize,
    linearization: AtomicUsize,
    scorer_forward: AtomicUsize,
}

impl CallCounters {
    pub fn backbone_forward(&self) -> usize {
        self.backbone_forward.load(Ordering::Relaxed)
    }

    pub fn linearization(&self) -> usize {
        self.linearization.load(Ordering::Relaxed)
    }

    pub fn scorer_forward(&self) -> usize {
        self.scorer_forward.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.backbone_forward.store(0, Ordering::Relaxed);
        self.linearization.store(0, Ordering::Relaxed);
        self.scorer_forward.store(0, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CallCounts {
        CallCounts {
            backbone_forward: self.backbone_forward(),
            linearization: self.linearization(),
            scorer_forward: self.scorer_forward(),
        }
    }

    fn add_backbone(&self, n: usize) {
        self.backbone_forward.fetch_add(n, Ordering::Relaxed);
    }
}

impl Clone for CallCounters {
    fn clone(&self) -> Self {
        let c = CallCounters::default();
        c.backbone_forward.store(self.backbone_forward(), Ordering::Relaxed);
        c.linearization.store(self.linearization(), Ordering::Relaxed);
        c.scorer_forward.store(self.scorer_forward(), Ordering::Relaxed);
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub backbone_forward: usize,
    pub linearization: usize,
    pub scorer_forward: usize,
}

impl CallCounts {
    pub fn since(&self, earlier: &CallCounts) -> CallCounts {
        CallCounts {
            backbone_forward: self.backbone_forward - earlier.backbone_forward,
            linearization: self.linearization - earlier.linearization,
            scorer_forward: self.scorer_forward - earlier.scorer_forward,
        }
    }
}

/// Frozen backbone, feature transform-normalize layer, and scorer.
#[derive(Debug, Clone)]
pub struct FsIqaModel {
    pub(crate) backbone: DifferentiableMap,
    pub(crate) ftn: DifferentiableMap,
    pub(crate) scorer: DifferentiableMap,
    mode: Mode,
    counters: CallCounters,
}

/// Desk-scale feature width after the transform-normalize layer.
pub const DEFAULT_FEATURE_DIM: usize = 16;
pub const DEFAULT_SCORER_HIDDEN: [usize; 2] = [64, 32];

impl FsIqaModel {
    /// `backbone` always acts on single images; in FR mode it is applied to
    /// both images of the pair and the FTN sees the concatenation.
    pub fn new(backbone: DifferentiableMap, ftn: DifferentiableMap, scorer: DifferentiableMap, mode: Mode) -> Result<Self> {
        let per_image = backbone.output_len();
        let feat_in = match mode {
            Mode::Nr => per_image,
            Mode::Fr => 2 * per_image,
        };
        if ftn.input_len() != feat_in {
            return Err(Error::InvalidArgument(format!(
                "FTN expects {} inputs but the {mode} backbone yields {feat_in}",
                ftn.input_len()
            )));
        }
        if ftn.output_shape().len() != 1 || scorer.input_shape() != ftn.output_shape() {
            return Err(Error::shape(ftn.output_shape(), scorer.input_shape()));
        }
        if scorer.output_len() != 1 {
            return Err(Error::InvalidArgument("scorer must produce one value".into()));
        }
        Ok(Self { backbone, ftn, scorer, mode, counters: CallCounters::default() })
    }

    /// Toy backbone, affine-sigmoid FTN to `k` features, and a (64, 32) MLP scorer.
    pub fn toy(mode: Mode, image_shape: [usize; 3], k: usize, seed: u64) -> Result<Self> {
        let backbone =
            DifferentiableMap::toy_backbone(image_shape, TOY_BACKBONE_CHANNELS, TOY_BACKBONE_FEATURES, mix_seed(seed, 1))?;
        let feat_in = match mode {
            Mode::Nr => TOY_BACKBONE_FEATURES,
            Mode::Fr => 2 * TOY_BACKBONE_FEATURES,
        };
        let ftn = DifferentiableMap::affine_sigmoid(feat_in, k, mix_seed(seed, 2))?;
        let scorer = DifferentiableMap::mlp_scorer(k, &DEFAULT_SCORER_HIDDEN, mix_seed(seed, 3))?;
        Self::new(backbone, ftn, scorer, mode)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn feature_dim(&self) -> usize {
        self.ftn.output_len()
    }

    pub fn backbone(&self) -> &DifferentiableMap {
        &self.backbone
    }

    pub fn ftn(&self) -> &DifferentiableMap {
        &self.ftn
    }

    pub fn scorer(&self) -> &DifferentiableMap {
        &self.scorer
    }

    pub fn counters(&self) -> &CallCounters {
        &self.counters
    }

    pub fn set_trainable(&mut self, ftn: DifferentiableMap, scorer: DifferentiableMap) -> Result<()> {
        if ftn.input_shape() != self.ftn.input_shape() || ftn.output_shape() != self.ftn.output_shape() {
            return Err(Error::shape(self.ftn.input_shape(), ftn.input_shape()));
        }
        if scorer.input_shape() != self.scorer.input_shape() || scorer.output_shape() != self.scorer.output_shape() {
            return Err(Error::shape(self.scorer.input_shape(), scorer.input_shape()));
        }
        self.ftn = ftn;
        self.scorer = scorer;
        Ok(())
    }

    fn check_input(&self, input: &QualityInput) -> Result<()> {
        if input.mode() != self.mode {
            return Err(Error::InvalidArgument(format!("{} model given a {} input", self.mode, input.mode())));
        }
        input.distorted().expect_shape(self.backbone.input_shape())?;
        if let QualityInput::Pair { reference, .. } = input {
            reference.expect_shape(self.backbone.input_shape())?;
        }
        Ok(())
    }

    /// `f_init = b(x)`: one backbone pass (one per image pair in FR mode).
    pub fn backbone_features(&self, input: &QualityInput) -> Result<Tensor> {
        self.check_input(input)?;
        self.counters.add_backbone(1);
        let data = match input {
            QualityInput::Single(x) => self.backbone.forward_slice(x.data()),
            QualityInput::Pair { reference, distorted } => {
                let mut f = self.backbone.forward_slice(reference.data());
                f.extend(self.backbone.forward_slice(distorted.data()));
                f
            }
        };
        let t = Tensor::from_parts(self.ftn.input_shape().to_vec(), data);
        if !t.all_finite() {
            return Err(Error::Numeric("backbone produced non-finite features".into()));
        }
        Ok(t)
    }

    /// `f_norm = FTN(f_init)`, componentwise in (0, 1).
    pub fn ftn_forward(&self, f_init: &Tensor) -> Result<Tensor> {
        self.ftn.forward(f_init)
    }

    pub fn normalized_features(&self, input: &QualityInput) -> Result<Tensor> {
        self.ftn_forward(&self.backbone_features(input)?)
    }

    /// `FTN ∘ b` as a map of the perturbable image, given the features
    /// already computed for `input` (the reference branch is held fixed in
    /// FR mode).
    pub fn feature_map(&self, f_init: &Tensor) -> Result<DifferentiableMap> {
        match self.mode {
            Mode::Nr => compose(self.ftn.clone(), self.backbone.clone()),
            Mode::Fr => {
                let d = self.backbone.output_len();
                let pair = DifferentiableMap::pair_adapter(self.backbone.clone())?;
                compose(self.ftn.clone(), pair.with_fixed_reference(&f_init.data()[..d])?)
            }
        }
    }

    /// Unsmoothed `Scorer ∘ FTN ∘ b` as a map of the perturbable image.
    pub fn plain_score_map(&self, input: &QualityInput) -> Result<DifferentiableMap> {
        self.check_input(input)?;
        let inner = match (self.mode, input) {
            (Mode::Fr, QualityInput::Pair { reference, .. }) => {
                let f_ref = self.backbone.forward_slice(reference.data());
                let pair = DifferentiableMap::pair_adapter(self.backbone.clone())?;
                compose(self.ftn.clone(), pair.with_fixed_reference(&f_ref)?)?
            }
            _ => compose(self.ftn.clone(), self.backbone.clone())?,
        };
        compose(self.scorer.clone(), inner)
    }

    /// Unsmoothed score: one backbone pass, one scorer pass.
    pub fn plain_score(&self, input: &QualityInput) -> Result<f64> {
        let f = self.normalized_features(input)?;
        self.counters.scorer_forward.fetch_add(1, Ordering::Relaxed);
        Ok(self.scorer.forward_slice(f.data())[0])
    }

    /// Median-smoothed score in feature space, without certification.
    /// Runs the backbone once and the scorer `N` times.
    pub fn predict(&self, input: &QualityInput, cfg: &SmoothingConfig) -> Result<f64> {
        let f_norm = self.normalized_features(input)?;
        self.smoothed_score(&f_norm, cfg)
    }

    pub(crate) fn smoothed_score(&self, f_norm: &Tensor, cfg: &SmoothingConfig) -> Result<f64> {
        let samples = sample_noised_scores(&self.scorer, f_norm, cfg)?;
        self.counters.scorer_forward.fetch_add(cfg.n_samples, Ordering::Relaxed);
        Ok(median_smooth(&samples))
    }

    /// Quality score with certified bounds and input radius, or abstain.
    pub fn certify(&self, input: &QualityInput, cfg: &SmoothingConfig, tau: f64) -> Result<CertificationOutput> {
        self.certify_with(input, cfg, tau, &SpectralOptions::with_seed(cfg.seed))
    }

    pub fn certify_with(
        &self,
        input: &QualityInput,
        cfg: &SmoothingConfig,
        tau: f64,
        spectral_opts: &SpectralOptions,
    ) -> Result<CertificationOutput> {
        cfg.validate()?;
        let f_init = self.backbone_features(input)?;
        let f_norm = self.ftn_forward(&f_init)?;
        let feature_map = self.feature_map(&f_init)?;
        let ive = input_variation(&feature_map, input.distorted(), cfg.sigma_f, tau, spectral_opts)?;
        self.counters.linearization.fetch_add(ive.spectral.linearization_calls, Ordering::Relaxed);
        let decision = match ive.outcome {
            IveOutcome::Abstain => Decision::Abstain,
            IveOutcome::Radius(epsilon_x) => {
                let samples = sample_noised_scores(&self.scorer, &f_norm, cfg)?;
                self.counters.scorer_forward.fetch_add(cfg.n_samples, Ordering::Relaxed);
                let score = median_smooth(&samples);
                // feature deviation is bounded by σ_f, so ε_f = σ_f
                let (q_lower, q_upper) = percentile_pair(cfg.sigma_f, cfg.sigma_f)?;
                let bounds = order_statistic_bounds(&samples, q_lower, q_upper, cfg.alpha)?;
                Decision::Certified(Certified { score, epsilon_x, bounds })
            }
        };
        Ok(CertificationOutput {
            decision,
            spectral: ive.spectral,
            sigma_f: cfg.sigma_f,
            n_samples: cfg.n_samples,
            alpha: cfg.alpha,
            tau,
            seed: cfg.seed,
        })
    }

    /// Precomputes the noise of `cfg` so that repeated smoothed scores with
    /// the same seed (e.g. under many input perturbations) skip regeneration.
    pub fn noise_bank(&self, cfg: &SmoothingConfig) -> Result<NoiseBank> {
        NoiseBank::new(cfg, self.feature_dim())
    }

    /// Same value as [`FsIqaModel::predict`] with `bank.config()`.
    pub fn predict_with_bank(&self, input: &QualityInput, bank: &NoiseBank) -> Result<f64> {
        let f_norm = self.normalized_features(input)?;
        let k = f_norm.len();
        let base = f_norm.data();
        let mut scores = Vec::with_capacity(bank.n);
        let mut z = vec![0.0; k];
        for row in bank.noise.chunks_exact(k) {
            for ((zi, b), e) in z.iter_mut().zip(base).zip(row) {
                *zi = b + bank.cfg.sigma_f * e;
            }
            let s = self.scorer.forward_slice(&z)[0];
            if !s.is_finite() {
                // redraws are rare; defer to the reference path
                return self.smoothed_score(&f_norm, &bank.cfg);
            }
            scores.push(s);
        }
        self.counters.scorer_forward.fetch_add(bank.n, Ordering::Relaxed);
        Ok(median_in_place(&mut scores))
    }
}

/// Standard-normal noise for every sample index of a smoothing config.
#[derive(Debug, Clone)]
pub struct NoiseBank {
    cfg: SmoothingConfig,
    n: usize,
    noise: Vec<f64>,
}

impl NoiseBank {
    pub fn new(cfg: &SmoothingConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        let rng = CounterRng::new(cfg.seed);
        let mut noise = vec![0.0; cfg.n_samples * dim];
        for (i, row) in noise.chunks_exact_mut(dim).enumerate() {
            rng.fill_normal(i as u64, row);
        }
        Ok(Self { cfg: *cfg, n: cfg.n_samples, noise })
    }

    pub fn config(&self) -> &SmoothingConfig {
        &self.cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certified {
    pub score: f64,
    pub epsilon_x: f64,
    pub bounds: CertifiedBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    Certified(Certified),
    Abstain,
}

/// `(S, ε_x, S^l, S^u)` or abstain, with the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificationOutput {
    pub decision: Decision,
    pub spectral: SpectralEstimate,
    pub sigma_f: f64,
    pub n_samples: usize,
    pub alpha: f64,
    pub tau: f64,
    pub seed: u64,
}

impl CertificationOutput {
    pub fn is_abstain(&self) -> bool {
        matches!(self.decision, Decision::Abstain)
    }

    pub fn certified(&self) -> Option<&Certified> {
        match &self.decision {
            Decision::Certified(c) => Some(c),
            Decision::Abstain => None,
        }
    }

    pub fn score(&self) -> Option<f64> {
        self.certified().map(|c| c.score)
    }

    pub fn epsilon_x(&self) -> Option<f64> {
        self.certified().map(|c| c.epsilon_x)
    }

    pub fn s_lower(&self) -> Option<f64> {
        self.certified().map(|c| c.bounds.s_lower)
    }

    pub fn s_upper(&self) -> Option<f64> {
        self.certified().map(|c| c.bounds.s_upper)
    }

    pub fn smoothing_config(&self) -> SmoothingConfig {
        SmoothingConfig { sigma_f: self.sigma_f, n_samples: self.n_samples, alpha: self.alpha, seed: self.seed }
    }
}

pub(crate) fn is_trainable(map: &DifferentiableMap) -> bool {
    matches!(map.kind(), MapKind::Linear | MapKind::AffineSigmoid | MapKind::MlpScorer | MapKind::Composition)
}
