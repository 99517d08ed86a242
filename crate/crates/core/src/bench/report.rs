use std::time::Instant;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{CallCounts, CertificationOutput, Decision, FsIqaModel, InputRecord, QualityInput};
use crate::rng::mix_seed;
use crate::smoothing::SmoothingConfig;

use super::baseline::{input_space_smooth, Reduction};
use super::metrics::{plcc, srcc};

/// A real that may be an infinite sentinel, written as `"inf"` / `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JsonReal(pub f64);

impl Serialize for JsonReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            v if v.is_finite() => s.serialize_f64(v),
            v if v > 0.0 => s.serialize_str("inf"),
            v if v < 0.0 => s.serialize_str("-inf"),
            _ => Err(serde::ser::Error::custom("NaN is not a valid bound")),
        }
    }
}

impl<'de> Deserialize<'de> for JsonReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(JsonReal(v)),
            Raw::Str(s) if s == "inf" => Ok(JsonReal(f64::INFINITY)),
            Raw::Str(s) if s == "-inf" => Ok(JsonReal(f64::NEG_INFINITY)),
            Raw::Str(s) => Err(de::Error::custom(format!("unexpected bound `{s}`"))),
        }
    }
}

/// `ε_x` field: a radius, or the string `"abstain"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsField {
    Radius(f64),
    Abstain,
}

impl Serialize for EpsField {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EpsField::Radius(r) => s.serialize_f64(*r),
            EpsField::Abstain => s.serialize_str("abstain"),
        }
    }
}

impl<'de> Deserialize<'de> for EpsField {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(EpsField::Radius(v)),
            Raw::Str(s) if s == "abstain" => Ok(EpsField::Abstain),
            Raw::Str(s) => Err(de::Error::custom(format!("unexpected eps_x `{s}`"))),
        }
    }
}

/// One line of `certificates.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateLine {
    pub id: usize,
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_x: Option<EpsField>,
    #[serde(rename = "S_l", default, skip_serializing_if = "Option::is_none")]
    pub s_lower: Option<JsonReal>,
    #[serde(rename = "S_u", default, skip_serializing_if = "Option::is_none")]
    pub s_upper: Option<JsonReal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral_value: Option<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CertificateLine {
    pub fn from_output(id: usize, out: &CertificationOutput) -> Self {
        let (score, eps_x, s_lower, s_upper) = match &out.decision {
            Decision::Certified(c) => (
                Some(c.score),
                EpsField::Radius(c.epsilon_x),
                Some(JsonReal(c.bounds.s_lower)),
                Some(JsonReal(c.bounds.s_upper)),
            ),
            Decision::Abstain => (None, EpsField::Abstain, None, None),
        };
        Self {
            id,
            score,
            eps_x: Some(eps_x),
            s_lower,
            s_upper,
            spectral_value: Some(out.spectral.value),
            seed: out.seed,
            error: None,
        }
    }

    pub fn failed(id: usize, seed: u64, err: &Error) -> Self {
        Self {
            id,
            score: None,
            eps_x: None,
            s_lower: None,
            s_upper: None,
            spectral_value: None,
            seed,
            error: Some(err.to_string()),
        }
    }

    pub fn is_abstain(&self) -> bool {
        self.eps_x == Some(EpsField::Abstain)
    }

    pub fn width(&self) -> Option<f64> {
        Some(self.s_upper?.0 - self.s_lower?.0)
    }
}

pub fn to_jsonl(lines: &[CertificateLine]) -> Result<String> {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl(text: &str) -> Result<Vec<CertificateLine>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_records: usize,
    /// Correlations of certified scores over non-abstained records.
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
    /// Correlations of uncertified predictions over all records.
    pub srcc_no_cert: Option<f64>,
    pub plcc_no_cert: Option<f64>,
    pub abstains: usize,
    pub errors: usize,
    pub abstain_rate: f64,
    /// Mean `S^u − S^l` over certified records with finite bounds.
    pub mean_bound_width: Option<f64>,
    pub calls_certify: CallCounts,
    pub calls_predict: CallCounts,
    pub sigma_f: f64,
    pub n_samples: usize,
    pub alpha: f64,
    pub tau: f64,
    pub certificates: Vec<CertificateLine>,
}

/// Aggregates over a set of certificate lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertSummary {
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
    pub abstains: usize,
    pub errors: usize,
    pub abstain_rate: f64,
    pub mean_bound_width: Option<f64>,
}

/// Aggregates certificate lines against MOS (indexed by certificate `id`).
pub fn summarize(lines: &[CertificateLine], mos: &[f64]) -> CertSummary {
    let abstains = lines.iter().filter(|l| l.is_abstain()).count();
    let errors = lines.iter().filter(|l| l.error.is_some()).count();
    let (pred, truth): (Vec<f64>, Vec<f64>) =
        lines.iter().filter_map(|l| Some((l.score?, *mos.get(l.id)?))).unzip();
    let widths: Vec<f64> = lines.iter().filter_map(CertificateLine::width).filter(|w| w.is_finite()).collect();
    let mean_width = (!widths.is_empty()).then(|| widths.iter().sum::<f64>() / widths.len() as f64);
    let abstain_rate = if lines.is_empty() { 0.0 } else { abstains as f64 / lines.len() as f64 };
    CertSummary {
        srcc: srcc(&pred, &truth).ok(),
        plcc: plcc(&pred, &truth).ok(),
        abstains,
        errors,
        abstain_rate,
        mean_bound_width: mean_width,
    }
}

/// One certificate line per `(id, record)`, each certified with its own
/// seed `mix_seed(cfg.seed, id)`; failures are kept as error lines.
pub fn certify_records(model: &FsIqaModel, records: &[(usize, InputRecord)], cfg: &SmoothingConfig, tau: f64) -> Vec<CertificateLine> {
    records
        .iter()
        .map(|(id, r)| {
            let c = record_config(cfg, *id);
            match model.certify(&r.input, &c, tau) {
                Ok(out) => CertificateLine::from_output(*id, &out),
                Err(e) => CertificateLine::failed(*id, c.seed, &e),
            }
        })
        .collect()
}

pub(crate) fn record_config(cfg: &SmoothingConfig, id: usize) -> SmoothingConfig {
    SmoothingConfig { seed: mix_seed(cfg.seed, id as u64), ..*cfg }
}

/// Certifies and predicts every record, reporting both modes.
pub fn evaluate(model: &FsIqaModel, records: &[(usize, InputRecord)], cfg: &SmoothingConfig, tau: f64) -> Result<EvalReport> {
    cfg.validate()?;
    let before = model.counters().snapshot();
    let lines = certify_records(model, records, cfg, tau);
    let mid = model.counters().snapshot();
    let no_cert: Vec<Option<f64>> =
        records.iter().map(|(id, r)| model.predict(&r.input, &record_config(cfg, *id)).ok()).collect();
    let after = model.counters().snapshot();

    let max_id = records.iter().map(|(i, _)| *i).max().unwrap_or(0);
    let mut mos = vec![f64::NAN; max_id + 1];
    for (id, r) in records {
        mos[*id] = r.mos;
    }
    let sum = summarize(&lines, &mos);
    let (pred, truth): (Vec<f64>, Vec<f64>) =
        no_cert.iter().zip(records).filter_map(|(p, (_, r))| Some(((*p)?, r.mos))).unzip();
    Ok(EvalReport {
        n_records: records.len(),
        srcc: sum.srcc,
        plcc: sum.plcc,
        srcc_no_cert: srcc(&pred, &truth).ok(),
        plcc_no_cert: plcc(&pred, &truth).ok(),
        abstains: sum.abstains,
        errors: sum.errors,
        abstain_rate: sum.abstain_rate,
        mean_bound_width: sum.mean_bound_width,
        calls_certify: mid.since(&before),
        calls_predict: after.since(&mid),
        sigma_f: cfg.sigma_f,
        n_samples: cfg.n_samples,
        alpha: cfg.alpha,
        tau,
        certificates: lines,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub median_secs: f64,
    pub backbone_calls_per_run: f64,
    pub linearization_calls_per_run: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub runs: usize,
    pub predict: TimingEntry,
    pub certify: TimingEntry,
    pub input_space: TimingEntry,
    /// Input-space backbone calls per prediction over feature-space smoothing's.
    pub backbone_call_ratio: f64,
}

fn time_runs(model: &FsIqaModel, runs: usize, mut f: impl FnMut(u64) -> Result<()>) -> Result<TimingEntry> {
    let before = model.counters().snapshot();
    let mut secs = Vec::with_capacity(runs);
    for i in 0..runs {
        let t = Instant::now();
        f(i as u64)?;
        secs.push(t.elapsed().as_secs_f64());
    }
    let d = model.counters().snapshot().since(&before);
    secs.sort_by(f64::total_cmp);
    Ok(TimingEntry {
        median_secs: secs[runs / 2],
        backbone_calls_per_run: d.backbone_forward as f64 / runs as f64,
        linearization_calls_per_run: d.linearization as f64 / runs as f64,
    })
}

/// Wall-clock medians (informational) and invocation counts per run for
/// prediction, certification and the input-space median baseline with the
/// same `N`.
pub fn timing_report(
    model: &FsIqaModel,
    input: &QualityInput,
    cfg: &SmoothingConfig,
    tau: f64,
    runs: usize,
) -> Result<TimingReport> {
    if runs == 0 {
        return Err(Error::InvalidArgument("timing needs at least one run".into()));
    }
    let predict = time_runs(model, runs, |i| model.predict(input, &SmoothingConfig { seed: mix_seed(cfg.seed, i), ..*cfg }).map(drop))?;
    let certify = time_runs(model, runs, |i| {
        model.certify(input, &SmoothingConfig { seed: mix_seed(cfg.seed, i), ..*cfg }, tau).map(drop)
    })?;
    let input_space = time_runs(model, runs, |i| {
        input_space_smooth(model, input, cfg.sigma_f, cfg.n_samples, Reduction::Median, mix_seed(cfg.seed, i)).map(drop)
    })?;
    Ok(TimingReport {
        runs,
        backbone_call_ratio: input_space.backbone_calls_per_run / predict.backbone_calls_per_run,
        predict,
        certify,
        input_space,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: usize,
    pub n_samples: usize,
    pub mean: f64,
    /// `max_i |S_i − mean| / |mean|`.
    pub max_relative_deviation: f64,
    pub scores: Vec<f64>,
}

/// Smoothed score under `runs` independent seeds derived from `cfg.seed`.
pub fn stability_report(model: &FsIqaModel, input: &QualityInput, cfg: &SmoothingConfig, runs: usize) -> Result<StabilityReport> {
    if runs < 2 {
        return Err(Error::InvalidArgument(format!("stability needs at least 2 runs, got {runs}")));
    }
    let scores: Vec<f64> = (0..runs as u64)
        .map(|i| model.predict(input, &SmoothingConfig { seed: mix_seed(cfg.seed, i), ..*cfg }))
        .collect::<Result<_>>()?;
    stability_of(scores, cfg.n_samples)
}

pub(crate) fn stability_of(scores: Vec<f64>, n_samples: usize) -> Result<StabilityReport> {
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    if mean == 0.0 {
        return Err(Error::Numeric("relative deviation undefined for a zero mean score".into()));
    }
    let max_dev = scores.iter().map(|s| (s - mean).abs()).fold(0.0, f64::max) / mean.abs();
    Ok(StabilityReport { runs: scores.len(), n_samples, mean, max_relative_deviation: max_dev, scores })
}
