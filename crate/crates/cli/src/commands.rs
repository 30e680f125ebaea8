use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use regroup::attacks::{attack as run_attack, AttackConfig};
use regroup::engine::{accuracy, argmax, reference_cnn, train_sgd, EpochStats, TrainConfig};
use regroup::eval::{evaluate_sample, summarize, SampleResult};
use regroup::io::{
    load_adversarial_set, load_ensemble, load_model, save_adversarial_set, save_ensemble, save_model, write_report,
    AdversarialSet, Report,
};
use regroup::regroup::vote::layer_scores;
use regroup::regroup::{build_ensemble, collect_ballots, rank_layer, select_k, BuildInfo, Mode};
use regroup::{Ensemble, LabeledDataset, Model, Tensor};
use serde::Serialize;

use crate::config::{Settings, Split};
use crate::data::{load_split, load_window, Samples};
use crate::CliError;

fn percent(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn check_pair(model: &Model, ensemble: &Ensemble) -> Result<(), CliError> {
    let layers: Vec<usize> = ensemble.layers().iter().map(|l| l.layer).collect();
    if layers != model.votable_layers() || ensemble.num_classes() != model.num_classes() {
        return Err(CliError::Validation(format!(
            "ensemble (layers {layers:?}, {} classes) does not belong to this model (layers {:?}, {} classes)",
            ensemble.num_classes(),
            model.votable_layers(),
            model.num_classes()
        )));
    }
    Ok(())
}

fn load_pair(s: &Settings) -> Result<(Model, Ensemble), CliError> {
    let model: Model = load_model(Settings::input(&s.model, "model")?)?;
    let ensemble: Ensemble = load_ensemble(Settings::input(&s.ensemble, "ensemble")?)?;
    check_pair(&model, &ensemble)?;
    Ok((model, ensemble))
}

fn data_dir(s: &Settings) -> Result<&Path, CliError> {
    Settings::require(&s.data, "data directory")
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutput {
    pub path: PathBuf,
    pub samples: usize,
    pub epochs: Vec<(f64, f64)>,
    pub test_accuracy: f64,
}

impl fmt::Display for TrainOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "trained on {} samples", self.samples)?;
        for (i, (loss, acc)) in self.epochs.iter().enumerate() {
            writeln!(f, "epoch {}\tloss {loss:.6}\ttrain accuracy {}", i + 1, percent(*acc))?;
        }
        writeln!(f, "test accuracy {}", percent(self.test_accuracy))?;
        write!(f, "model written to {}", self.path.display())
    }
}

pub fn train(s: &Settings) -> Result<TrainOutput, CliError> {
    let dir = data_dir(s)?;
    let out = Settings::require(&s.out, "output model")?;
    let mut data = load_split(s.dataset, dir, Split::Train)?;
    if let Some(limit) = s.train.limit {
        data = data.slice(0..limit.min(data.len()));
    }
    let test = load_split(s.dataset, dir, Split::Test)?;
    let init = Model::initialized(data.shape(), &reference_cnn(data.num_classes()), s.seed)?;
    let cfg = TrainConfig {
        epochs: s.train.epochs,
        learning_rate: s.train.learning_rate,
        batch_size: s.train.batch_size,
        seed: s.seed,
    };
    let (model, stats) = train_sgd(&init, &data, &cfg)?;
    save_model(&model, out)?;
    Ok(TrainOutput {
        path: out.to_path_buf(),
        samples: data.len(),
        epochs: stats.iter().map(|e: &EpochStats| (e.mean_loss, e.train_accuracy)).collect(),
        test_accuracy: accuracy(&model, &test)?,
    })
}

// ---------------------------------------------------------------- build

#[derive(Debug, Clone, Serialize)]
pub struct BuildOutput {
    pub path: PathBuf,
    pub info: BuildInfo,
}

impl BuildOutput {
    pub fn consumed(&self) -> usize {
        self.info.class_counts().iter().sum()
    }
}

impl fmt::Display for BuildOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "class\tsamples")?;
        for (y, n) in self.info.class_counts().iter().enumerate() {
            writeln!(f, "{y}\t{n}")?;
        }
        writeln!(f, "{} samples consumed after scanning {}", self.consumed(), self.info.scanned)?;
        for w in &self.info.warnings {
            writeln!(f, "warning: {w}")?;
        }
        write!(f, "ensemble written to {}", self.path.display())
    }
}

pub fn build(s: &Settings) -> Result<BuildOutput, CliError> {
    if s.build.quota == 0 {
        return Err(CliError::Validation("quota must be at least 1".into()));
    }
    let model: Model = load_model(Settings::input(&s.model, "model")?)?;
    let out = Settings::require(&s.out, "output ensemble")?;
    let samples = load_window(s.dataset, data_dir(s)?, s.build.split, s.build.window)?;
    let ensemble = build_ensemble(&model, &samples.data, s.build.quota, s.build.delta)?;
    let mut info = ensemble.build_info().cloned().expect("build records metadata");
    for members in &mut info.members {
        for i in members.iter_mut() {
            *i = samples.absolute(*i);
        }
    }
    let ensemble = ensemble.with_build_info(info.clone());
    save_ensemble(&ensemble, out)?;
    Ok(BuildOutput {
        path: out.to_path_buf(),
        info,
    })
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationOutput {
    pub threshold: f64,
    pub accuracies: Vec<f64>,
    pub k: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub overlap: Option<usize>,
    pub in_sample: bool,
    /// Aggregated accuracy for k = 1..=n, per mode.
    pub sweep: Option<Vec<(Mode, Vec<f64>)>>,
}

impl CalibrationOutput {
    pub fn sweep_for(&self, mode: Mode) -> Option<&[f64]> {
        self.sweep.as_ref()?.iter().find(|(m, _)| *m == mode).map(|(_, v)| v.as_slice())
    }
}

impl fmt::Display for CalibrationOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.accuracies.len();
        writeln!(f, "layer\tper_layer_accuracy")?;
        for (l, a) in self.accuracies.iter().enumerate() {
            writeln!(f, "{}\t{}", l + 1, percent(*a))?;
        }
        if let Some(sweep) = &self.sweep {
            let modes: Vec<String> = sweep.iter().map(|(m, _)| m.to_string()).collect();
            writeln!(f, "k\t{}", modes.join("\t"))?;
            for k in 0..n {
                let row: Vec<String> = sweep.iter().map(|(_, v)| percent(v[k])).collect();
                writeln!(f, "{}\t{}", k + 1, row.join("\t"))?;
            }
        }
        write!(
            f,
            "{} samples evaluated, {} misclassified skipped",
            self.evaluated, self.skipped
        )?;
        if self.in_sample {
            write!(
                f,
                "\nwarning: {} calibration samples are ensemble members (in-sample)",
                self.overlap.unwrap_or(0)
            )?;
        }
        write!(f, "\nk={} (threshold {})", self.k, self.threshold)
    }
}

pub fn calibrate(s: &Settings) -> Result<CalibrationOutput, CliError> {
    let threshold = s.calibrate.threshold;
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(CliError::Validation(format!("threshold must be finite and >= 0, got {threshold}")));
    }
    let (model, mut ensemble) = load_pair(s)?;
    let samples = load_window(s.dataset, data_dir(s)?, s.calibrate.split, s.calibrate.window)?;
    let ballots = collect_ballots(&ensemble, &samples.data, &model)?;
    let accuracies = ballots.per_layer_accuracy()?;
    let k = select_k(&accuracies, threshold)?;
    let sweep = if s.calibrate.sweep {
        Some(
            Mode::ALL
                .iter()
                .map(|&m| Ok((m, ballots.k_sweep(m)?)))
                .collect::<Result<Vec<_>, regroup::Error>>()?,
        )
    } else {
        None
    };
    let out = CalibrationOutput {
        threshold,
        accuracies,
        k,
        evaluated: ballots.ballots.len(),
        skipped: ballots.skipped,
        overlap: ballots.overlap,
        in_sample: ballots.overlap.is_some_and(|o| o > 0),
        sweep,
    };
    if s.calibrate.write {
        ensemble.set_selected_k(Some(k))?;
        save_ensemble(&ensemble, Settings::require(&s.ensemble, "ensemble")?)?;
    }
    if let Some(path) = &s.out {
        let json = serde_json::to_string_pretty(&out).expect("serializable");
        fs::write(path, json)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------- attack

#[derive(Debug, Clone, Serialize)]
pub struct AttackOutput {
    pub path: PathBuf,
    pub config: AttackConfig,
    pub attacked: usize,
    pub skipped: usize,
    pub successes: usize,
    pub mean_iterations: f64,
    pub seconds: f64,
}

impl fmt::Display for AttackOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "{} eps {} ({:.2}/255), step {}, {} iterations",
            c.method,
            c.epsilon,
            c.epsilon * 255.0,
            c.step_size,
            c.iterations
        )?;
        writeln!(
            f,
            "attacked {} correctly classified samples ({} misclassified skipped) in {:.2}s",
            self.attacked, self.skipped, self.seconds
        )?;
        writeln!(f, "mean iterations {:.2}", self.mean_iterations)?;
        writeln!(f, "#S {}", self.successes)?;
        write!(f, "adversarial set written to {}", self.path.display())
    }
}

/// Indices (within the window) of the first `limit` correctly classified samples.
fn correct_indices(model: &Model, samples: &Samples, limit: Option<usize>) -> Result<(Vec<usize>, usize), CliError> {
    let preds = (0..samples.data.len())
        .into_par_iter()
        .map(|i| Ok(argmax(&model.logits(&samples.data.image(i))?)))
        .collect::<Result<Vec<_>, regroup::Error>>()?;
    let mut keep = Vec::new();
    let mut skipped = 0;
    for (i, p) in preds.into_iter().enumerate() {
        if limit.is_some_and(|l| keep.len() >= l) {
            break;
        }
        if p == samples.data.label(i) {
            keep.push(i);
        } else {
            skipped += 1;
        }
    }
    Ok((keep, skipped))
}

pub fn attack(s: &Settings) -> Result<AttackOutput, CliError> {
    let config = s.attack.to_config(s.seed);
    config.validate()?;
    let model: Model = load_model(Settings::input(&s.model, "model")?)?;
    let out = Settings::require(&s.out, "output adversarial set")?;
    let samples = load_window(s.dataset, data_dir(s)?, s.attack.split, s.attack.window)?;
    let (indices, skipped) = correct_indices(&model, &samples, s.attack.limit)?;
    let start = Instant::now();
    let records = indices
        .par_iter()
        .map(|&i| {
            run_attack(
                &model,
                &samples.data.image(i),
                samples.data.label(i),
                samples.absolute(i),
                &config,
            )
        })
        .collect::<Result<Vec<_>, regroup::Error>>()?;
    let seconds = start.elapsed().as_secs_f64();
    let mut set = AdversarialSet::from_records(samples.data.shape(), &records)?;
    let successes = set.successes();
    if s.attack.successful_only {
        set = set.successful();
    }
    save_adversarial_set(&set, out)?;
    Ok(AttackOutput {
        path: out.to_path_buf(),
        config,
        attacked: records.len(),
        skipped,
        successes,
        mean_iterations: records.iter().map(|r| r.iterations as f64).sum::<f64>() / records.len().max(1) as f64,
        seconds,
    })
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: Report,
    pub results: Vec<SampleResult>,
    /// Samples checked for `both = pos + neg`, and how many violated it.
    pub additivity: Option<(usize, usize)>,
    pub paths: Option<(PathBuf, PathBuf)>,
}

impl fmt::Display for EvalOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.report.to_tsv().trim_end())?;
        if let Some((n, bad)) = self.additivity {
            write!(f, "\nboth = pos + neg on {}/{n} samples", n - bad)?;
        }
        if let Some((tsv, json)) = &self.paths {
            write!(f, "\nreport written to {} and {}", tsv.display(), json.display())?;
        }
        Ok(())
    }
}

fn eval_input(s: &Settings, model: &Model) -> Result<(LabeledDataset, String, String), CliError> {
    let kind = serde_json::to_value(s.dataset).expect("serializable");
    let kind = kind.as_str().unwrap_or("data").to_string();
    let (data, name, attack) = if let Some(path) = &s.adversarial {
        let path = Settings::input(&Some(path.clone()), "adversarial set")?.to_path_buf();
        let mut set = load_adversarial_set(&path)?;
        if !s.eval.all_records {
            set = set.successful();
        }
        let stem = path.file_stem().map_or("adversarial".into(), |s| s.to_string_lossy().into_owned());
        (set.to_dataset(model.num_classes())?, kind, stem)
    } else {
        let samples = load_window(s.dataset, data_dir(s)?, s.eval.split, s.eval.window)?;
        let split = serde_json::to_value(s.eval.split).expect("serializable");
        let name = format!("{kind}-{}[{}]", split.as_str().unwrap_or(""), s.eval.window);
        (samples.data, name, "none".to_string())
    };
    let data = if s.eval.correct_only {
        let keep = (0..data.len())
            .into_par_iter()
            .map(|i| Ok((argmax(&model.logits(&data.image(i))?) == data.label(i)).then_some(i)))
            .collect::<Result<Vec<_>, regroup::Error>>()?;
        data.select(&keep.into_iter().flatten().collect::<Vec<_>>())
    } else {
        data
    };
    Ok((
        data,
        s.eval.name.clone().unwrap_or(name),
        s.eval.attack.clone().unwrap_or(attack),
    ))
}

pub fn eval(s: &Settings) -> Result<EvalOutput, CliError> {
    if s.eval.modes.is_empty() {
        return Err(CliError::Validation("at least one mode is required".into()));
    }
    let (model, ensemble) = load_pair(s)?;
    let k = s
        .eval
        .k
        .or(ensemble.selected_k())
        .ok_or_else(|| CliError::Validation("ensemble has no calibrated k; run calibrate or pass --k".into()))?;
    if k == 0 || k > ensemble.depth() {
        return Err(CliError::Validation(format!("k = {k} is outside 1..={}", ensemble.depth())));
    }
    let (data, name, attack) = eval_input(s, &model)?;
    let modes = &s.eval.modes;
    let results = (0..data.len())
        .into_par_iter()
        .map(|i| evaluate_sample(&model, &ensemble, &data.image(i), data.label(i), k, modes))
        .collect::<Result<Vec<_>, regroup::Error>>()?;
    let rows = summarize(&name, &attack, k, modes, &results)?;
    let slot = |m: Mode| modes.iter().position(|&x| x == m);
    let additivity = match (slot(Mode::Pos), slot(Mode::Neg), slot(Mode::Both)) {
        (Some(p), Some(n), Some(b)) => {
            let bad = results
                .iter()
                .filter(|r| {
                    let (tp, tn, tb) = (&r.tallies[p].scores, &r.tallies[n].scores, &r.tallies[b].scores);
                    tb.iter().zip(tp).zip(tn).any(|((b, p), n)| *b != p + n)
                })
                .count();
            Some((results.len(), bad))
        }
        _ => None,
    };
    let report = Report {
        config_hash: s.hash("eval"),
        rows,
    };
    let paths = match &s.out {
        Some(stem) => {
            write_report(&report, stem)?;
            Some((stem.with_extension("tsv"), stem.with_extension("json")))
        }
        None => None,
    };
    Ok(EvalOutput {
        report,
        results,
        additivity,
        paths,
    })
}

// ---------------------------------------------------------------- infer

#[derive(Debug, Clone, Serialize)]
pub struct InferLayer {
    pub layer: usize,
    pub positive_kl: Vec<f64>,
    pub negative_kl: Vec<f64>,
    pub positive_ranks: Vec<usize>,
    pub negative_ranks: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InferTally {
    pub mode: Mode,
    pub scores: Vec<usize>,
    pub prediction: usize,
    pub ranking: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InferRegroup {
    pub k: usize,
    pub layers: Vec<InferLayer>,
    pub tallies: Vec<InferTally>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InferOutput {
    pub logits: Vec<f64>,
    pub softmax: Vec<f64>,
    pub prediction: usize,
    pub regroup: Option<InferRegroup>,
}

impl fmt::Display for InferOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string_pretty(self).expect("serializable"))
    }
}

/// Raw little-endian f32 values, or a JSON array.
pub fn read_image(path: &Path, shape: [usize; 3]) -> Result<Tensor, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let values: Vec<f64> = if bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'[') {
        serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
    } else {
        if bytes.len() % 4 != 0 {
            return Err(CliError::Validation(format!("{}: length is not a multiple of 4", path.display())));
        }
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    };
    let need: usize = shape.iter().product();
    if values.len() != need {
        return Err(CliError::Validation(format!(
            "{}: {} values, model expects {need} ({shape:?})",
            path.display(),
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Validation(format!("{}: non-finite pixel", path.display())));
    }
    Ok(Tensor::new(shape.to_vec(), values)?)
}

pub fn infer(s: &Settings) -> Result<InferOutput, CliError> {
    let model: Model = load_model(Settings::input(&s.model, "model")?)?;
    let image = match (&s.infer.input, s.infer.index) {
        (Some(p), _) => read_image(p, model.input_shape())?,
        (None, Some(i)) => {
            let data = load_split(s.dataset, data_dir(s)?, s.infer.split)?;
            if i >= data.len() {
                return Err(CliError::Validation(format!("index {i} is outside {} samples", data.len())));
            }
            data.image(i)
        }
        (None, None) => return Err(CliError::Validation("infer needs --input or --index".into())),
    };
    let trace = model.forward_with_trace(&image)?;
    let regroup = match &s.ensemble {
        None => None,
        Some(_) => {
            let ensemble: Ensemble = load_ensemble(Settings::input(&s.ensemble, "ensemble")?)?;
            check_pair(&model, &ensemble)?;
            let k = s.infer.k.or(ensemble.selected_k()).unwrap_or(ensemble.depth());
            if k == 0 || k > ensemble.depth() {
                return Err(CliError::Validation(format!("k = {k} is outside 1..={}", ensemble.depth())));
            }
            let sigs = ensemble.signatures(&trace.preactivations)?;
            let mut layers = Vec::new();
            for (ordinal, sig) in sigs.iter().enumerate() {
                let (pk, nk) = layer_scores(&ensemble, ordinal, sig)?;
                let (pr, nr) = rank_layer(&ensemble, ordinal, sig)?;
                layers.push(InferLayer {
                    layer: ensemble.layers()[ordinal].layer,
                    positive_kl: pk,
                    negative_kl: nk,
                    positive_ranks: pr.ranks,
                    negative_ranks: nr.ranks,
                });
            }
            let ballot = regroup::regroup::cast_ballot(&ensemble, &trace)?;
            let tallies = Mode::ALL
                .iter()
                .map(|&mode| {
                    let t = ballot.tally(k, mode)?;
                    Ok(InferTally {
                        mode,
                        prediction: t.prediction,
                        ranking: t.ranking,
                        scores: t.scores,
                    })
                })
                .collect::<Result<Vec<_>, regroup::Error>>()?;
            Some(InferRegroup { k, layers, tallies })
        }
    };
    Ok(InferOutput {
        prediction: argmax(&trace.softmax),
        logits: trace.logits,
        softmax: trace.softmax,
        regroup,
    })
}
