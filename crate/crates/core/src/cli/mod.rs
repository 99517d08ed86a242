//! Command-line workflows over the library. Every run reads a flat
//! `key=value` config (flags win), writes its artifacts under `out_dir`
//! together with `manifest.conf`, and is a pure function of config and
//! input files.

mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction};

pub use config::{Command, ConfigValue, RecordSet, RunConfig, MANIFEST_NAME, SEED_ENV};

use crate::bench::report::record_config;
use crate::bench::{
    attack_csv, bound_width_curve, certify_records, curves_csv, evaluate, from_jsonl, ifgsm_attack, load_dataset_with,
    summarize, synth_dataset, to_jsonl, verify_certificate, write_dataset, AttackTarget, LoadOptions, QualityDataset,
    Split,
};
use crate::error::Error;
use crate::pipeline::{load_bundle, save_bundle, train_from, FsIqaModel, InputRecord, TrainState};
use crate::rng::mix_seed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const TRAIN_STATE_FILE: &str = "train_state.json";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Run(e) => e.fmt(f),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(e) => match e {
                Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => EXIT_CONFIG,
                Error::Numeric(_)
                | Error::Diverged { .. }
                | Error::UndefinedCorrelation(_)
                | Error::InvalidTensor(_)
                | Error::Oversize { .. } => EXIT_NUMERIC,
                Error::Io { .. } | Error::Ingest(_) | Error::Checkpoint(_) | Error::Json(_) => EXIT_IO,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn config_err(m: impl Into<String>) -> CliError {
    CliError::Config(m.into())
}

fn clap_command() -> clap::Command {
    let mut cmd = clap::Command::new("certsmooth")
        .about("Certified feature-space smoothing for quality models")
        .arg(
            Arg::new("command")
                .value_parser(Command::ALL.map(|c| c.as_str()))
                .help("workflow to run; may also come from the config file"),
        )
        .arg(Arg::new("config").long("config").value_name("FILE").help("key=value config file"));
    for &(key, ty, help) in RunConfig::KEYS.iter().filter(|(k, ..)| *k != "command") {
        let mut arg = Arg::new(key).long(key.replace('_', "-")).value_name("VALUE").help(help).action(ArgAction::Set);
        if key.contains('_') {
            arg = arg.alias(key);
        }
        if ty == "bool" {
            arg = arg.num_args(0..=1).default_missing_value("true");
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

/// Resolves defaults, then the config file, then `env_seed`, then flags.
pub fn parse_args<I, T>(args: I, env_seed: Option<&str>) -> Result<RunConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut cmd = clap_command();
    let m = cmd.try_get_matches_from_mut(args)?;
    let fail = |cmd: &mut clap::Command, msg: String| cmd.error(clap::error::ErrorKind::InvalidValue, msg);
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        let path = Path::new(path);
        let text = fs::read_to_string(path).map_err(|e| fail(&mut cmd, format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text, path).map_err(|e| fail(&mut cmd, e))?;
    }
    if let Some(s) = env_seed {
        cfg.set("seed", s).map_err(|e| fail(&mut cmd, format!("{SEED_ENV}: {e}")))?;
    }
    for &(key, ..) in RunConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v).map_err(|e| fail(&mut cmd, e))?;
        }
    }
    Ok(cfg)
}

/// Entry point of the `certsmooth` binary; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = match parse_args(args, env_seed.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cfg) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Files written and a short human summary.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub lines: Vec<String>,
}

struct Writer<'a> {
    dir: &'a Path,
    outcome: Outcome,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.outcome.artifacts.push(path.clone());
        Ok(path)
    }

    fn say(&mut self, line: String) {
        self.outcome.lines.push(line);
    }
}

pub fn run(cfg: &RunConfig) -> CliResult<Outcome> {
    let command = cfg.command.ok_or_else(|| config_err("no command given"))?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut w = Writer { dir: &cfg.out_dir, outcome: Outcome::default() };
    let notes = match command {
        Command::Synth => cmd_synth(cfg, &mut w)?,
        Command::Train => cmd_train(cfg, &mut w)?,
        Command::Certify => cmd_certify(cfg, &mut w)?,
        Command::Evaluate => cmd_evaluate(cfg, &mut w)?,
        Command::Attack => cmd_attack(cfg, &mut w)?,
        Command::Verify => cmd_verify(cfg, &mut w)?,
        Command::Curves => cmd_curves(cfg, &mut w)?,
    };
    w.write(MANIFEST_NAME, &cfg.manifest(&notes))?;
    Ok(w.outcome)
}

type Notes = Vec<(&'static str, String)>;

fn load_data(cfg: &RunConfig) -> CliResult<QualityDataset> {
    let mos_range = match (cfg.mos_min, cfg.mos_max) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => return Err(config_err("mos_min and mos_max must be given together")),
    };
    match &cfg.dataset {
        Some(path) => {
            let opts = LoadOptions { mos_range, split_seed: cfg.split_seed, train_fraction: cfg.split_fraction };
            Ok(load_dataset_with(path, &opts)?)
        }
        None => {
            let mut ds = synth_dataset(cfg.synth_seed, cfg.synth_items, cfg.mode)?;
            ds.split = Split::seeded(ds.len(), cfg.split_fraction, cfg.split_seed)?;
            Ok(ds)
        }
    }
}

fn selected(cfg: &RunConfig, ds: &QualityDataset) -> Vec<(usize, InputRecord)> {
    let idx: Vec<usize> = match cfg.records {
        RecordSet::Train => ds.split.train.clone(),
        RecordSet::Test => ds.split.test.clone(),
        RecordSet::All => (0..ds.len()).collect(),
    };
    let cap = if cfg.max_records == 0 { idx.len() } else { cfg.max_records.min(idx.len()) };
    idx[..cap].iter().map(|&i| (i, ds.records[i].clone())).collect()
}

fn load_model(path: Option<&PathBuf>, ds: &QualityDataset) -> CliResult<FsIqaModel> {
    let path = path.ok_or_else(|| config_err("`model` must name a bundle directory"))?;
    let (model, _) = load_bundle(path)?;
    if model.mode() != ds.mode {
        return Err(config_err(format!("{} model cannot score a {} dataset", model.mode(), ds.mode)));
    }
    Ok(model)
}

fn cmd_synth(cfg: &RunConfig, w: &mut Writer<'_>) -> CliResult<Notes> {
    let ds = load_data(cfg)?;
    let csv = write_dataset(&ds, &cfg.out_dir.join("dataset"))?;
    w.outcome.artifacts.push(csv.clone());
    w.say(format!("wrote {} records to {}", ds.len(), csv.display()));
    Ok(vec![("dataset_fingerprint", ds.fingerprint())])
}

fn cmd_train(cfg: &RunConfig, w: &mut Writer<'_>) -> CliResult<Notes> {
    let ds = load_data(cfg)?;
    let records = ds.train_records();
    let first = records.first().ok_or_else(|| config_err("training split is empty"))?;
    let (mut model, creation_seed, state) = if cfg.resume {
        let dir = cfg.model.as_ref().ok_or_else(|| config_err("resume needs `model`"))?;
        let (model, manifest) = load_bundle(dir)?;
        let state_path = dir.join(TRAIN_STATE_FILE);
        let text = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let state: TrainState = serde_json::from_str(&text).map_err(Error::from)?;
        (model, manifest.creation_seed, Some(state))
    } else {
        let shape: [usize; 3] = first
            .input
            .distorted()
            .shape()
            .try_into()
            .map_err(|_| config_err("fresh models need channel × height × width images"))?;
        let seed = mix_seed(cfg.seed, 2);
        (FsIqaModel::toy(ds.mode, shape, cfg.feature_dim, seed)?, seed, None)
    };
    let first_epoch = state.as_ref().map_or(0, |s| s.epochs_completed);
    let loss_csv = |losses: &[f64]| {
        let mut s = String::from("epoch,loss\n");
        for (i, l) in losses.iter().enumerate() {
            s.push_str(&format!("{},{l}\n", first_epoch + i));
        }
        s
    };
    let (report, state) = match train_from(&mut model, &records, &cfg.train_config(), state) {
        Ok(r) => r,
        Err(Error::Diverged { epoch, loss, losses }) => {
            w.write("losses.csv", &loss_csv(&losses))?;
            return Err(Error::Diverged { epoch, loss, losses }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let bundle = cfg.out_dir.join("bundle");
    let manifest = save_bundle(&model, &bundle, creation_seed, &ds.fingerprint())?;
    w.write(&format!("bundle/{TRAIN_STATE_FILE}"), &serde_json::to_string(&state).map_err(Error::from)?)?;
    w.write("losses.csv", &loss_csv(&report.epoch_losses))?;
    w.write("train_report.json", &serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    let srcc = report.validation_srcc.map_or("n/a".into(), |v| format!("{v:.4}"));
    w.say(format!(
        "trained {} epochs, final loss {:.5}, train MSE {:.5}, validation SRCC {srcc}; bundle in {}",
        report.epoch_losses.len(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        report.final_train_mse,
        bundle.display()
    ));
    Ok(vec![
        ("backbone_checksum", manifest.backbone_checksum),
        ("dataset_fingerprint", manifest.dataset_fingerprint),
        ("epochs_completed", state.epochs_completed.to_string()),
        ("final_train_mse", report.final_train_mse.to_string()),
        ("validation_srcc", srcc),
    ])
}

fn cmd_certify(cfg: &RunConfig, w: &mut Writer<'_>) -> CliResult<Notes> {
    let ds = load_data(cfg)?;
    let model = load_model(cfg.model.as_ref(), &ds)?;
    let records = selected(cfg, &ds);
    let lines = certify_records(&model, &records, &cfg.smoothing(cfg.sigma_f)?, cfg.tau);
    let path = w.write("certificates.jsonl", &to_jsonl(&lines)?)?;
    let abstains = lines.iter().filter(|l| l.is_abstain()).count();
    let errors = lines.iter().filter(|l| l.error.is_some()).count();
    w.say(format!("{} certificates ({abstains} abstain, {errors} failed) in {}", lines.len(), path.display()));
    Ok(vec![("dataset_fingerprint", ds.fingerprint())])
}

const EVAL_CSV_HEADER: &str = "sigma_f,n_records,srcc,plcc,srcc_no_cert,plcc_no_cert,abstain_rate,mean_bound_width,\
backbone_calls_certify,linearization_calls_certify,scorer_calls_certify,backbone_calls_predict,scorer_calls_predict\n";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_evaluate(cfg: &RunConfig, w: &mut Writer<'_>) -> CliResult<Notes> {
    let ds = load_data(cfg)?;
    if let Some(path) = &cfg.certificates {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines = from_jsonl(&text)?;
        let mos: Vec<f64> = ds.records.iter().map(|r| r.mos).collect();
        let sum = summarize(&lines, &mos);
        w.write("eval.json", &serde_json::to_string_pretty(&sum).map_err(Error::from)?)?;
        w.write(
            "eval.csv",
            &format!(
                "n_records,srcc,plcc,abstain_rate,mean_bound_width\n{},{},{},{},{}\n",
                lines.len(),
                opt(sum.srcc),
                opt(sum.plcc),
                sum.abstain_rate,
                opt(sum.mean_bound_width)
            ),
        )?;
        w.say(format!("SRCC {} over {} certificates, abstain rate {}", opt(sum.srcc), lines.len(), sum.abstain_rate));
        return Ok(vec![("dataset_fingerprint", ds.fingerprint())]);
    }
    let model = load_model(cfg.model.as_ref(), &ds)?;
    let records = selected(cfg, &ds);
    let sigmas = if cfg.sweep { cfg.sigmas.clone() } else { vec![cfg.sigma_f] };
    let mut reports = Vec::with_capacity(sigmas.len());
    let mut csv = String::from(EVAL_CSV_HEADER);
    for &sigma in &sigmas {
        let r = evaluate(&model, &records, &cfg.smoothing(sigma)?, cfg.tau)?;
        csv.push_str(&format!(
            "{sigma},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.n_records,
            opt(r.srcc),
            opt(r.plcc),
            opt(r.srcc_no_cert),
            opt(r.plcc_no_cert),
            r.abstain_rate,
            opt(r.mean_bound_width),
            r.calls_certify.backbone_forward,
            r.calls_certify.linearization,
            r.calls_certify.scorer_forward,
            r.calls_predict.backbone_forward,
            r.calls_predict.scorer_forward,
        ));
        w.say(format!(
            "sigma_f {sigma}: SRCC {} (no cert {}), abstain rate {}",
            opt(r.srcc),
            opt(r.srcc_no_cert),
            r.abstain_rate
        ));
        reports.push(r);
    }
    w.write("eval.json", &serde_json::to_string_pretty(&reports).map_err(Error::from)?)?;
    w.write("eval.csv", &csv)?;
    Ok(vec![("dataset_fingerprint", ds.fingerprint())])
}

fn cmd_attack(cfg: &RunConfig, w: &mut Writer<'_>) -> CliResult<Notes> {
    let ds = load_data(cfg)?;
    let defended = load_model(cfg.model.as_ref(), &ds)?;
    let undefended = match &cfg.undefended_model {
        Some(p) => load_model(Some(p), &ds)?,
        None => defended.clone(),
    };
    let inputs: Vec<_> = selected(cfg, &ds).into_iter().map(|(_, r)| r.input).collect();
    let report = ifgsm_attack(
        &AttackTarget::Plain(&undefended),
        &AttackTarget::Smoothed { model: &defended, smoothing: cfg.smoothing(cfg.sigma_f)? },
        &inputs,
        &cfg.attack_config(),
        mix_seed(cfg.seed, 4),
    )?;
    w.write("attack.csv", &attack_csv(&report))?;
    w.write("attack.json", &serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    for (u, d) in report.undefended.iter().zip(&report.defended) {
        w.say(format!("eps {}: undefended gain {:.4}, defended gain {:.4}", u.epsilon, u.relative_gain, d.relative_gain));
    }
    Ok(vec![("dataset_fingerprint", ds.fingerprint())])
}

fn cmd_verify(cfg: &RunConfig, w: &mut Writer<'_>) -> CliResult<Notes> {
    let ds = load_data(cfg)?;
    let model = load_model(cfg.model.as_ref(), &ds)?;
    let base = cfg.smoothing(cfg.sigma_f)?;
    let mut csv = String::from("id,epsilon_x,s_lower,s_upper,trials,violations,max_above,max_below\n");
    let (mut total, mut violations) = (0, 0);
    for (id, r) in selected(cfg, &ds) {
        let cert = match model.certify(&r.input, &record_config(&base, id), cfg.tau) {
            Ok(c) => c,
            Err(e) => {
                csv.push_str(&format!("{id},error,,,0,0,,\n"));
                w.say(format!("record {id}: {e}"));
                continue;
            }
        };
        if cert.is_abstain() {
            csv.push_str(&format!("{id},abstain,,,0,0,,\n"));
            continue;
        }
        let v = verify_certificate(&model, &r.input, &cert, cfg.trials, mix_seed(cfg.seed, 5 + id as u64), cfg.seed_mode)?;
        total += v.trials;
        violations += v.violations;
        csv.push_str(&format!(
            "{id},{},{},{},{},{},{},{}\n",
            v.epsilon_x, v.s_lower, v.s_upper, v.trials, v.violations, v.max_above, v.max_below
        ));
    }
    w.write("verify.csv", &csv)?;
    w.say(format!("{violations} violations in {total} perturbed predictions"));
    Ok(vec![("dataset_fingerprint", ds.fingerprint()), ("violations", violations.to_string())])
}

fn cmd_curves(cfg: &RunConfig, w: &mut Writer<'_>) -> CliResult<Notes> {
    let ds = load_data(cfg)?;
    let model = load_model(cfg.model.as_ref(), &ds)?;
    let records = selected(cfg, &ds);
    let mut curves = Vec::with_capacity(cfg.sigmas.len());
    for &sigma in &cfg.sigmas {
        let base = cfg.smoothing(sigma)?;
        let certs: Vec<_> =
            records.iter().filter_map(|(id, r)| model.certify(&r.input, &record_config(&base, *id), cfg.tau).ok()).collect();
        curves.push((format!("sigma_f={sigma}"), bound_width_curve(&certs)?));
    }
    let path = w.write("curves.csv", &curves_csv(&curves))?;
    w.say(format!("{} curves of {} bins in {}", curves.len(), crate::bench::CURVE_BINS, path.display()));
    Ok(vec![("dataset_fingerprint", ds.fingerprint())])
}
