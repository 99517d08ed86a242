//! Evaluation harness: datasets, metrics, baselines, attacks, certificate
//! checks and reports.

pub mod attack;
pub mod baseline;
pub mod curves;
pub mod dataset;
pub mod metrics;
pub mod report;
pub mod verify;

pub use attack::{attack_csv, ifgsm, ifgsm_attack, score_gain_curve, AttackConfig, AttackNorm, AttackReport, AttackTarget, GainPoint};
pub use baseline::{input_space_samples, input_space_smooth, Reduction};
pub use curves::{bound_width_curve, bound_width_curve_with, curves_csv, CurveBin, CURVE_BINS};
pub use dataset::{
    load_dataset, load_dataset_with, read_tensor, synth_dataset, write_dataset, write_tensor, LoadOptions,
    QualityDataset, Split,
};
pub use metrics::{plcc, srcc};
pub use report::{certify_records, evaluate, from_jsonl, summarize, to_jsonl, stability_report, timing_report, CertSummary, CertificateLine, EvalReport, StabilityReport, TimingReport};
pub use verify::{probe_deltas, verify_certificate, verify_with_deltas, SeedMode, VerificationReport};
