//! Run configuration: a JSON file whose fields command-line flags override.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use regroup::attacks::{parse_epsilon, AttackConfig, Method, TargetRule};
use regroup::regroup::{Mode, DEFAULT_DELTA, DEFAULT_THRESHOLD};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl FromStr for DatasetKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            _ => Err(CliError::Validation(format!("unknown dataset {s:?} (mnist or cifar10)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(CliError::Validation(format!("unknown split {s:?} (train or test)"))),
        }
    }
}

/// Half-open window of sample indices, written `start..end`, `start..` or `..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Window {
    pub start: usize,
    pub end: Option<usize>,
}

impl Window {
    pub const ALL: Window = Window { start: 0, end: None };

    pub fn new(start: usize, end: usize) -> Self {
        Window { start, end: Some(end) }
    }

    /// Clamps the end to `len`.
    pub fn resolve(self, len: usize) -> Result<std::ops::Range<usize>, CliError> {
        let end = self.end.map_or(len, |e| e.min(len));
        if self.start >= end {
            return Err(CliError::Validation(format!("sample window {self} is empty for {len} samples")));
        }
        Ok(self.start..end)
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.end {
            Some(e) => write!(f, "{}..{e}", self.start),
            None => write!(f, "{}..", self.start),
        }
    }
}

impl FromStr for Window {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Validation(format!("cannot read sample window {s:?} (expected start..end)"));
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let start = if a.is_empty() { 0 } else { a.trim().parse().map_err(|_| bad())? };
        let end = if b.is_empty() { None } else { Some(b.trim().parse().map_err(|_| bad())?) };
        if end.is_some_and(|e| e <= start) {
            return Err(bad());
        }
        Ok(Window { start, end })
    }
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Budget given either as an integer on the 0–255 scale or a fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Epsilon(pub f64);

impl FromStr for Epsilon {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Ok(Epsilon(parse_epsilon(s)?))
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        let text = match &v {
            serde_json::Value::Number(n) if n.is_u64() => n.to_string(),
            serde_json::Value::Number(n) => format!("{:?}", n.as_f64().unwrap_or(f64::NAN)),
            serde_json::Value::String(s) => s.clone(),
            _ => return Err(serde::de::Error::custom("epsilon must be a number or string")),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:.2}/255)", self.0, self.0 * 255.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Train on the first `limit` samples only.
    pub limit: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 5,
            learning_rate: 0.05,
            batch_size: 32,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSettings {
    pub quota: usize,
    pub delta: f64,
    pub split: Split,
    pub window: Window,
}

impl Default for BuildSettings {
    fn default() -> Self {
        BuildSettings {
            quota: 50,
            delta: DEFAULT_DELTA,
            split: Split::Train,
            window: Window::ALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSettings {
    pub threshold: f64,
    pub sweep: bool,
    /// Store the selected k in the ensemble file.
    pub write: bool,
    pub split: Split,
    pub window: Window,
}

impl Default for CalibrateSettings {
    fn default() -> Self {
        CalibrateSettings {
            threshold: DEFAULT_THRESHOLD,
            sweep: false,
            write: true,
            split: Split::Test,
            window: Window { start: 5000, end: None },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSettings {
    pub method: Method,
    pub epsilon: Epsilon,
    pub step_size: f64,
    pub iterations: Option<usize>,
    pub random_start: Option<bool>,
    pub target: TargetRule,
    pub min_confidence: f64,
    pub search_steps: usize,
    pub spsa_perturbation: f64,
    pub spsa_batch: usize,
    pub spsa_learning_rate: f64,
    pub split: Split,
    pub window: Window,
    /// Attack at most this many correctly classified samples.
    pub limit: Option<usize>,
    /// Keep only successful records in the output file.
    pub successful_only: bool,
}

impl Default for AttackSettings {
    fn default() -> Self {
        let d = AttackConfig::default();
        AttackSettings {
            method: d.method,
            epsilon: Epsilon(d.epsilon),
            step_size: d.step_size,
            iterations: None,
            random_start: None,
            target: d.target,
            min_confidence: d.min_confidence,
            search_steps: d.search_steps,
            spsa_perturbation: d.spsa_perturbation,
            spsa_batch: d.spsa_batch,
            spsa_learning_rate: d.spsa_learning_rate,
            split: Split::Test,
            window: Window::new(0, 5000),
            limit: None,
            successful_only: false,
        }
    }
}

impl AttackSettings {
    /// Method-specific defaults fill the unset iteration count and random start.
    pub fn to_config(&self, seed: u64) -> AttackConfig {
        let base = match self.method {
            Method::Fgsm => AttackConfig::fgsm(self.epsilon.0),
            Method::Pgd => AttackConfig::pgd(self.epsilon.0),
            Method::PgdHc => AttackConfig {
                epsilon: self.epsilon.0,
                ..AttackConfig::pgd_high_confidence()
            },
            Method::Spsa => AttackConfig::spsa(self.epsilon.0),
        };
        AttackConfig {
            step_size: if self.method == Method::Fgsm { self.epsilon.0 } else { self.step_size },
            iterations: self.iterations.unwrap_or(base.iterations),
            random_start: self.random_start.unwrap_or(base.random_start),
            target: self.target,
            min_confidence: self.min_confidence,
            search_steps: self.search_steps,
            spsa_perturbation: self.spsa_perturbation,
            spsa_batch: self.spsa_batch,
            spsa_learning_rate: self.spsa_learning_rate,
            seed,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Overrides the ensemble's calibrated k.
    pub k: Option<usize>,
    pub modes: Vec<Mode>,
    /// Evaluate unsuccessful adversarial records too.
    pub all_records: bool,
    /// Drop clean samples the softmax classifier gets wrong.
    pub correct_only: bool,
    pub split: Split,
    pub window: Window,
    /// Dataset column of the report; defaults to the input's name.
    pub name: Option<String>,
    /// Attack column of the report; defaults to the adversarial file stem.
    pub attack: Option<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k: None,
            modes: Mode::ALL.to_vec(),
            all_records: false,
            correct_only: false,
            split: Split::Test,
            window: Window::new(0, 5000),
            name: None,
            attack: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSettings {
    /// Raw little-endian f32 image, or a JSON array of pixel values.
    pub input: Option<PathBuf>,
    /// Sample index into the dataset split when no input file is given.
    pub index: Option<usize>,
    pub split: Split,
    pub k: Option<usize>,
}

impl Default for InferSettings {
    fn default() -> Self {
        InferSettings {
            input: None,
            index: None,
            split: Split::Test,
            k: None,
        }
    }
}

/// Every setting of every subcommand. One seed drives all random streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub dataset: DatasetKind,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub ensemble: Option<PathBuf>,
    pub adversarial: Option<PathBuf>,
    /// Output file of the subcommand (report stem for `eval`).
    pub out: Option<PathBuf>,
    pub train: TrainSettings,
    pub build: BuildSettings,
    pub calibrate: CalibrateSettings,
    pub attack: AttackSettings,
    pub eval: EvalSettings,
    pub infer: InferSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            dataset: DatasetKind::Mnist,
            data: None,
            model: None,
            ensemble: None,
            adversarial: None,
            out: None,
            train: TrainSettings::default(),
            build: BuildSettings::default(),
            calibrate: CalibrateSettings::default(),
            attack: AttackSettings::default(),
            eval: EvalSettings::default(),
            infer: InferSettings::default(),
        }
    }
}

impl Settings {
    pub fn from_json_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the subcommand name and the effective settings, hex-encoded.
    pub fn hash(&self, command: &str) -> String {
        let json = serde_json::to_vec(self).expect("settings serialize");
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(&json);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn require<'a>(field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
        field
            .as_deref()
            .ok_or_else(|| CliError::Validation(format!("missing required path: {name}")))
    }

    /// Like [`Settings::require`], and the file must exist.
    pub fn input<'a>(field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
        let p = Self::require(field, name)?;
        if !p.exists() {
            return Err(CliError::Validation(format!("{name} {} does not exist", p.display())));
        }
        Ok(p)
    }
}
