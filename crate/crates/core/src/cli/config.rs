use std::fmt;
use std::path::{Path, PathBuf};

use crate::bench::attack::{AttackConfig, AttackNorm, DEFAULT_ATTACK_EPSILONS};
use crate::bench::verify::SeedMode;
use crate::pipeline::{Mode, Optimizer, TrainConfig};
use crate::smoothing::SmoothingConfig;

/// Environment variable that overrides `seed`.
pub const SEED_ENV: &str = "CERTSMOOTH_SEED";
pub const MANIFEST_NAME: &str = "manifest.conf";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Certify,
    Evaluate,
    Attack,
    Verify,
    Curves,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Synth,
        Command::Train,
        Command::Certify,
        Command::Evaluate,
        Command::Attack,
        Command::Verify,
        Command::Curves,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Certify => "certify",
            Command::Evaluate => "evaluate",
            Command::Attack => "attack",
            Command::Verify => "verify",
            Command::Curves => "curves",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which dataset records a command works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordSet {
    Train,
    Test,
    All,
}

/// A value that can live in a `key=value` config.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("`{s}`: {e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_value!(u64, usize, bool, String);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|e| format!("`{s}`: {e}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{s}` is not a finite number"))
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

/// Empty string means unset.
impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            T::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.as_ref().map(T::render).unwrap_or_default()
    }
}

/// Comma-separated.
impl ConfigValue for Vec<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.split(',').filter(|p| !p.trim().is_empty()).map(|p| f64::parse_value(p.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(f64::render).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for Command {
    fn parse_value(s: &str) -> Result<Self, String> {
        Command::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown command `{s}`"))
    }
    fn render(&self) -> String {
        self.as_str().into()
    }
}

impl ConfigValue for Mode {
    fn parse_value(s: &str) -> Result<Self, String> {
        Mode::parse(s).ok_or_else(|| format!("mode must be NR or FR, got `{s}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Optimizer {
    fn parse_value(s: &str) -> Result<Self, String> {
        Optimizer::parse(s).ok_or_else(|| format!("optimizer must be sgd or adam, got `{s}`"))
    }
    fn render(&self) -> String {
        self.as_str().into()
    }
}

impl ConfigValue for AttackNorm {
    fn parse_value(s: &str) -> Result<Self, String> {
        AttackNorm::parse(s).ok_or_else(|| format!("norm must be l_inf or l2, got `{s}`"))
    }
    fn render(&self) -> String {
        self.as_str().into()
    }
}

impl ConfigValue for SeedMode {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "same" => Ok(SeedMode::Same),
            "fresh" => Ok(SeedMode::Fresh),
            _ => Err(format!("seed_mode must be same or fresh, got `{s}`")),
        }
    }
    fn render(&self) -> String {
        match self {
            SeedMode::Same => "same".into(),
            SeedMode::Fresh => "fresh".into(),
        }
    }
}

impl ConfigValue for RecordSet {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(RecordSet::Train),
            "test" => Ok(RecordSet::Test),
            "all" => Ok(RecordSet::All),
            _ => Err(format!("records must be train, test or all, got `{s}`")),
        }
    }
    fn render(&self) -> String {
        match self {
            RecordSet::Train => "train".into(),
            RecordSet::Test => "test".into(),
            RecordSet::All => "all".into(),
        }
    }
}

macro_rules! run_config {
    ($($field:ident : $ty:ty = $default:expr, $help:literal;)*) => {
        /// Fully resolved configuration of one run. Field names double as
        /// config keys and (with `-` or `_`) as long flags.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $(pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        impl RunConfig {
            /// `(key, type, help)` for every field, in manifest order.
            pub const KEYS: &'static [(&'static str, &'static str, &'static str)] =
                &[$((stringify!($field), stringify!($ty), $help),)*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $(stringify!($field) => {
                        self.$field = <$ty as ConfigValue>::parse_value(value.trim())
                            .map_err(|e| format!("{key}: {e}"))?;
                    })*
                    _ => return Err(format!("unknown config key `{key}`")),
                }
                Ok(())
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.render()),)*]
            }
        }
    };
}

run_config! {
    command: Option<Command> = None, "synth, train, certify, evaluate, attack, verify or curves";
    out_dir: PathBuf = PathBuf::from("out"), "directory receiving every artifact";
    seed: u64 = 0, "global seed";
    model: Option<PathBuf> = None, "model bundle directory";
    dataset: Option<PathBuf> = None, "dataset CSV; synthesized in memory when unset";
    synth_seed: u64 = 0, "seed of the synthetic dataset";
    synth_items: usize = 200, "size of the synthetic dataset";
    mode: Mode = Mode::Nr, "NR or FR (synthetic data and fresh models)";
    mos_min: Option<f64> = None, "raw MOS mapped to 0 (with mos_max)";
    mos_max: Option<f64> = None, "raw MOS mapped to 1 (with mos_min)";
    split_seed: u64 = 0, "seed of the train/test split";
    split_fraction: f64 = 0.8, "training share of the train/test split";
    records: RecordSet = RecordSet::Test, "records used by certify, evaluate, attack, verify, curves";
    max_records: usize = 0, "cap on the records used (0 = no cap)";
    sigma_f: f64 = 0.25, "feature-space noise level";
    n_samples: usize = crate::smoothing::DEFAULT_SAMPLES, "noise samples N";
    alpha: f64 = crate::smoothing::DEFAULT_ALPHA, "overall confidence level";
    tau: f64 = crate::ive::DEFAULT_TAU, "abstain threshold on the Jacobian norm";
    sweep: bool = false, "evaluate every noise level in `sigmas`";
    sigmas: Vec<f64> = vec![0.1, 0.25, 0.5], "noise levels of the evaluate sweep and of curves";
    feature_dim: usize = crate::pipeline::DEFAULT_FEATURE_DIM, "FTN output size k for fresh models";
    epochs: usize = crate::pipeline::DEFAULT_EPOCHS, "training epochs";
    batch_size: usize = 16, "records per gradient step";
    learning_rate: f64 = crate::pipeline::DEFAULT_LEARNING_RATE, "step size";
    optimizer: Optimizer = Optimizer::Adam, "sgd or adam";
    validation_fraction: f64 = 0.2, "share of the training records held out for validation";
    sigma_train: f64 = 0.25, "feature noise during training (0 = plain model)";
    samples_per_record: usize = crate::pipeline::DEFAULT_TRAIN_SAMPLES, "noised copies per record and step";
    validation_samples: usize = 200, "noise samples for validation predictions";
    ftn_spread: f64 = crate::pipeline::DEFAULT_FTN_SPREAD, "FTN pre-activation spread set before training (0 = off)";
    resume: bool = false, "continue training the bundle in `model`";
    iterations: usize = crate::bench::attack::DEFAULT_ATTACK_ITERATIONS, "I-FGSM iterations";
    epsilons: Vec<f64> = DEFAULT_ATTACK_EPSILONS.to_vec(), "attack budgets, ascending";
    norm: AttackNorm = AttackNorm::LInf, "attack ball: l_inf or l2";
    surrogate_samples: usize = crate::bench::attack::DEFAULT_SURROGATE_SAMPLES, "noise draws in the smoothed-attack surrogate";
    undefended_model: Option<PathBuf> = None, "bundle attacked without smoothing (default: `model`)";
    trials: usize = 1000, "perturbations per verified certificate";
    seed_mode: SeedMode = SeedMode::Same, "verification noise: same or fresh";
    certificates: Option<PathBuf> = None, "certificates.jsonl to evaluate instead of a live model";
}

impl RunConfig {
    /// Applies a `key=value` document; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected key=value", origin.display(), i + 1))?;
            self.set(&k.trim().replace('-', "_"), v).map_err(|e| format!("{}:{}: {e}", origin.display(), i + 1))?;
        }
        Ok(())
    }

    /// Manifest text: every resolved key in declaration order, followed by
    /// `notes` as comment lines.
    pub fn manifest(&self, notes: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("{k}={v}\n"));
        }
        for (k, v) in notes {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out
    }

    pub fn smoothing(&self, sigma_f: f64) -> crate::Result<SmoothingConfig> {
        SmoothingConfig::new(sigma_f, self.n_samples, self.alpha, self.seed)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: crate::rng::mix_seed(self.seed, 1),
            train_fraction: 1.0 - self.validation_fraction,
            validation_fraction: self.validation_fraction,
            sigma_train: self.sigma_train,
            samples_per_record: self.samples_per_record,
            validation_samples: self.validation_samples,
            ftn_spread: (self.ftn_spread > 0.0 && !self.resume).then_some(self.ftn_spread),
        }
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            iterations: self.iterations,
            epsilons: self.epsilons.clone(),
            norm: self.norm,
            seed: crate::rng::mix_seed(self.seed, 3),
            surrogate_samples: self.surrogate_samples,
        }
    }
}
