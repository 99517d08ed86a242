use serde::{Deserialize, Serialize};

use crate::bench::metrics::{plcc, srcc};
use crate::diffcore::{DifferentiableMap, MapKind};
use crate::error::{Error, Result};
use crate::rng::{mix_seed, CounterRng};
use crate::smoothing::SmoothingConfig;
use crate::tensor::Tensor;

use super::model::{is_trainable, FsIqaModel, InputRecord};

pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_LEARNING_RATE: f64 = 3e-3;
pub const DEFAULT_TRAIN_SAMPLES: usize = 16;
/// Pre-activation spread targeted by the data-dependent FTN scaling.
pub const DEFAULT_FTN_SPREAD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    /// Adam with β = (0.9, 0.999), ε = 1e-8.
    Adam,
}

impl Optimizer {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Some(Optimizer::Sgd),
            "adam" => Some(Optimizer::Adam),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    /// Noise level used on features during training; 0 trains a plain model.
    pub sigma_train: f64,
    /// Noised copies per record and step (`N_train`).
    pub samples_per_record: usize,
    /// Sample count used for validation predictions.
    pub validation_samples: usize,
    /// Before the first epoch, rescale the FTN affine layer so that each
    /// pre-activation has this standard deviation over the training
    /// features (centered at 0). `None` keeps the current weights, as when
    /// resuming.
    pub ftn_spread: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: 16,
            learning_rate: DEFAULT_LEARNING_RATE,
            optimizer: Optimizer::Adam,
            seed: 0,
            train_fraction: 0.8,
            validation_fraction: 0.2,
            sigma_train: 0.25,
            samples_per_record: DEFAULT_TRAIN_SAMPLES,
            validation_samples: 200,
            ftn_spread: Some(DEFAULT_FTN_SPREAD),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 || self.batch_size == 0 || self.samples_per_record == 0 {
            return bad("epochs, batch_size and samples_per_record must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        let (t, v) = (self.train_fraction, self.validation_fraction);
        if !(t > 0.0 && t <= 1.0 && (0.0..1.0).contains(&v)) || (t + v - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions must be in range and sum to 1, got {t} + {v}"));
        }
        if !(self.sigma_train >= 0.0 && self.sigma_train.is_finite()) {
            return bad(format!("sigma_train must be non-negative, got {}", self.sigma_train));
        }
        if let Some(t) = self.ftn_spread {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("ftn_spread must be positive, got {t}"));
            }
        }
        if self.validation_fraction > 0.0 && self.validation_samples < 2 {
            return bad("validation_samples must be at least 2".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample squared error on the training part, one per epoch.
    pub epoch_losses: Vec<f64>,
    /// MSE of smoothed predictions against MOS on the training part.
    pub final_train_mse: f64,
    pub validation_srcc: Option<f64>,
    pub validation_plcc: Option<f64>,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

/// Seeded permutation of `0..n` (Fisher–Yates).
pub(crate) fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut s = CounterRng::new(seed).stream(0);
    for i in (1..n).rev() {
        let j = s.next_below(i + 1);
        idx.swap(i, j);
    }
    idx
}

/// Optimizer state carried between [`train_from`] calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_completed: usize,
    ftn: StepRule,
    scorer: StepRule,
}

/// Gradient descent on FTN and scorer parameters; the backbone is only
/// evaluated.
///
/// Every record contributes the mean over `samples_per_record` noised
/// copies of `(Scorer(FTN(f_init) + e) − mos)²`.
pub fn train(model: &mut FsIqaModel, records: &[InputRecord], cfg: &TrainConfig) -> Result<TrainReport> {
    train_from(model, records, cfg, None).map(|(r, _)| r)
}

/// Runs `cfg.epochs` further epochs after `state`. Epoch seeds depend on the
/// absolute epoch index, so `n` epochs followed by a resumed `m` equals
/// `n + m` in one go (with `ftn_spread` unset on the resumed call).
pub fn train_from(
    model: &mut FsIqaModel,
    records: &[InputRecord],
    cfg: &TrainConfig,
    state: Option<TrainState>,
) -> Result<(TrainReport, TrainState)> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if !is_trainable(&model.ftn) || !is_trainable(&model.scorer) {
        return Err(Error::InvalidArgument("FTN and scorer must be trainable map kinds".into()));
    }
    let order = permutation(records.len(), mix_seed(cfg.seed, 0x5));
    let n_val = if cfg.validation_fraction > 0.0 && records.len() > 1 {
        ((records.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, records.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let features: Vec<Tensor> = records.iter().map(|r| model.backbone_features(&r.input)).collect::<Result<_>>()?;

    if let Some(target) = cfg.ftn_spread {
        let train_feats: Vec<&Tensor> = train_idx.iter().map(|&i| &features[i]).collect();
        spread_ftn(&mut model.ftn, &train_feats, target)?;
    }

    let n_ftn = model.ftn.param_count();
    let n_scorer = model.scorer.param_count();
    let k = model.ftn.output_len();
    let mut grad_ftn = vec![0.0; n_ftn];
    let mut grad_scorer = vec![0.0; n_scorer];
    let mut noised = vec![0.0; k];
    let mut g_feat = vec![0.0; k];
    let mut losses = Vec::with_capacity(cfg.epochs);
    let (first_epoch, mut opt_ftn, mut opt_scorer) = match state {
        Some(s) => {
            if s.ftn.kind != cfg.optimizer || !s.ftn.fits(n_ftn) || !s.scorer.fits(n_scorer) {
                return Err(Error::InvalidArgument("optimizer state does not match the model or optimizer".into()));
            }
            (s.epochs_completed, s.ftn, s.scorer)
        }
        None => (0, StepRule::new(cfg.optimizer, n_ftn), StepRule::new(cfg.optimizer, n_scorer)),
    };

    for epoch in first_epoch..first_epoch + cfg.epochs {
        let epoch_seed = mix_seed(cfg.seed, epoch as u64 + 1);
        let perm = permutation(train_idx.len(), epoch_seed);
        let rng = CounterRng::new(mix_seed(epoch_seed, 0x6e6f));
        let mut epoch_loss = 0.0;
        for batch in perm.chunks(cfg.batch_size) {
            grad_ftn.iter_mut().for_each(|g| *g = 0.0);
            grad_scorer.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / (batch.len() * cfg.samples_per_record) as f64;
            for &p in batch {
                let r = train_idx[p];
                let f_init = features[r].data();
                let f_norm = model.ftn.forward_slice(f_init);
                g_feat.iter_mut().for_each(|g| *g = 0.0);
                for j in 0..cfg.samples_per_record {
                    rng.fill_normal(((r as u64) << 20) | j as u64, &mut noised);
                    for (z, f) in noised.iter_mut().zip(&f_norm) {
                        *z = f + cfg.sigma_train * *z;
                    }
                    let s = model.scorer.forward_slice(&noised)[0];
                    let err = s - records[r].mos;
                    epoch_loss += err * err;
                    let gz = model.scorer.vjp_params_slice(&noised, &[2.0 * err * scale], &mut grad_scorer)?;
                    for (a, b) in g_feat.iter_mut().zip(&gz) {
                        *a += b;
                    }
                }
                model.ftn.vjp_params_slice(f_init, &g_feat, &mut grad_ftn)?;
            }
            opt_ftn.step(&mut model.ftn, &grad_ftn, cfg.learning_rate);
            opt_scorer.step(&mut model.scorer, &grad_scorer, cfg.learning_rate);
        }
        let epoch_loss = epoch_loss / (train_idx.len() * cfg.samples_per_record) as f64;
        losses.push(epoch_loss);
        let params_ok = model.ftn.parameters().iter().chain(&model.scorer.parameters()).all(|v| v.is_finite());
        if !epoch_loss.is_finite() || !params_ok {
            return Err(Error::Diverged { epoch, loss: epoch_loss, losses });
        }
    }

    let eval = |idx: &[usize]| -> Result<Vec<f64>> {
        idx.iter().map(|&i| evaluate_features(model, &features[i], cfg)).collect()
    };
    let train_pred = eval(&train_idx)?;
    let final_train_mse = train_pred
        .iter()
        .zip(&train_idx)
        .map(|(p, &i)| (p - records[i].mos).powi(2))
        .sum::<f64>()
        / train_idx.len() as f64;

    let (mut validation_srcc, mut validation_plcc) = (None, None);
    if val_idx.len() >= 3 {
        let pred = eval(&val_idx)?;
        let mos: Vec<f64> = val_idx.iter().map(|&i| records[i].mos).collect();
        validation_srcc = srcc(&pred, &mos).ok();
        validation_plcc = plcc(&pred, &mos).ok();
    }

    let report = TrainReport {
        epoch_losses: losses,
        final_train_mse,
        validation_srcc,
        validation_plcc,
        train_indices: train_idx,
        validation_indices: val_idx,
    };
    let state = TrainState { epochs_completed: first_epoch + cfg.epochs, ftn: opt_ftn, scorer: opt_scorer };
    Ok((report, state))
}

/// Per-tensor optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StepRule {
    kind: Optimizer,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl StepRule {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(kind: Optimizer, n: usize) -> Self {
        let n_state = if kind == Optimizer::Adam { n } else { 0 };
        Self { kind, t: 0, m: vec![0.0; n_state], v: vec![0.0; n_state] }
    }

    fn fits(&self, n: usize) -> bool {
        let n_state = if self.kind == Optimizer::Adam { n } else { 0 };
        self.m.len() == n_state && self.v.len() == n_state
    }

    fn step(&mut self, map: &mut DifferentiableMap, grad: &[f64], lr: f64) {
        match self.kind {
            Optimizer::Sgd => map.sgd_step(grad, lr),
            Optimizer::Adam => {
                self.t += 1;
                let c1 = 1.0 - Self::BETA1.powi(self.t);
                let c2 = 1.0 - Self::BETA2.powi(self.t);
                let mut update = vec![0.0; grad.len()];
                for (((u, g), m), v) in update.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                    *u = (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                }
                map.sgd_step(&update, lr);
            }
        }
    }
}

/// Rescales an affine FTN so that, over `feats`, every pre-activation has
/// mean 0 and standard deviation `target`. Input columns are first divided
/// by their own spread, so the random directions act on standardized
/// features.
pub(crate) fn spread_ftn(ftn: &mut DifferentiableMap, feats: &[&Tensor], target: f64) -> Result<()> {
    if !matches!(ftn.kind(), MapKind::AffineSigmoid | MapKind::Linear) {
        return Err(Error::InvalidArgument(format!("cannot rescale a {} FTN", ftn.kind())));
    }
    if feats.len() < 2 {
        return Err(Error::InvalidArgument("need at least two feature vectors to rescale the FTN".into()));
    }
    let (inp, out) = (ftn.input_len(), ftn.output_len());
    let n = feats.len() as f64;
    let mut mean = vec![0.0; inp];
    for f in feats {
        for (m, v) in mean.iter_mut().zip(f.data()) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; inp];
    for f in feats {
        for ((s, v), m) in sd.iter_mut().zip(f.data()).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let mut params = ftn.parameters();
    let (w, b) = params.split_at_mut(inp * out);
    for row in w.chunks_exact_mut(inp) {
        for (wi, s) in row.iter_mut().zip(&sd) {
            // constant features carry nothing; drop them
            *wi = if *s > 0.0 { *wi / s.sqrt() } else { 0.0 };
        }
    }
    for (row, bj) in w.chunks_exact_mut(inp).zip(b.iter_mut()) {
        let center = crate::tensor::dot(row, &mean);
        let var = feats.iter().map(|f| (crate::tensor::dot(row, f.data()) - center).powi(2)).sum::<f64>() / n;
        let scale = if var > 0.0 { target / var.sqrt() } else { 0.0 };
        row.iter_mut().for_each(|wi| *wi *= scale);
        *bj = -center * scale;
    }
    ftn.set_parameters(&params)
}

/// Smoothed score at the training noise level, or the plain score for a
/// model trained without noise.
fn evaluate_features(model: &FsIqaModel, f_init: &Tensor, cfg: &TrainConfig) -> Result<f64> {
    let f_norm = model.ftn_forward(f_init)?;
    if cfg.sigma_train == 0.0 {
        return Ok(model.scorer.forward_slice(f_norm.data())[0]);
    }
    let sc = SmoothingConfig::new(
        cfg.sigma_train,
        cfg.validation_samples.max(2),
        crate::smoothing::DEFAULT_ALPHA,
        mix_seed(cfg.seed, 0x7661),
    )?;
    model.smoothed_score(&f_norm, &sc)
}
