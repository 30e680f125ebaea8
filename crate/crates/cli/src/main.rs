use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regroup::attacks::{Method, TargetRule};
use regroup::regroup::Mode;
use regroup_cli::config::{DatasetKind, Epsilon, Split, Window};
use regroup_cli::{CliError, Settings};

#[derive(Parser)]
#[command(name = "regroup", version, about = "Rank-aggregated layer-wise defense: train, build, calibrate, attack, eval, infer")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Does not change any output.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// mnist or cifar10
    #[arg(long, global = true)]
    dataset: Option<DatasetKind>,
    /// Directory holding the dataset files.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    ensemble: Option<PathBuf>,
    /// Output path (report stem for eval).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the reference CNN with minibatch SGD.
    Train(TrainArgs),
    /// Build the layer-wise generative ensemble.
    Build(BuildArgs),
    /// Select k from per-layer accuracy on a holdout.
    Calibrate(CalibrateArgs),
    /// Generate an adversarial set.
    Attack(AttackArgs),
    /// Softmax and REGroup accuracy on a dataset window or adversarial set.
    Eval(EvalArgs),
    /// Dump logits, KL scores, ranks and tallies for one image.
    Infer(InferArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Use only the first N training samples.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    quota: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    split: Option<Split>,
    /// Sample window, e.g. 0..20000
    #[arg(long)]
    range: Option<Window>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    threshold: Option<f64>,
    /// Also report aggregated accuracy for every k.
    #[arg(long)]
    sweep: bool,
    /// Do not store the selected k in the ensemble file.
    #[arg(long)]
    no_write: bool,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    range: Option<Window>,
}

#[derive(Args)]
struct AttackArgs {
    /// fgsm, pgd, pgd_hc or spsa
    #[arg(long)]
    method: Option<String>,
    /// Integers are on the 0-255 scale, fractions on [0, 1].
    #[arg(long)]
    epsilon: Option<Epsilon>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    no_random_start: bool,
    /// untargeted, random, or a class index
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    min_confidence: Option<f64>,
    #[arg(long)]
    search_steps: Option<usize>,
    #[arg(long)]
    spsa_perturbation: Option<f64>,
    #[arg(long)]
    spsa_batch: Option<usize>,
    #[arg(long)]
    spsa_learning_rate: Option<f64>,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    range: Option<Window>,
    /// Attack at most N correctly classified samples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    successful_only: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluate an adversarial set instead of a dataset window.
    #[arg(long)]
    adversarial: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated subset of pos,neg,both
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    #[arg(long)]
    all_records: bool,
    #[arg(long)]
    correct_only: bool,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    range: Option<Window>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    attack: Option<String>,
}

#[derive(Args)]
struct InferArgs {
    /// Image as raw little-endian f32 or a JSON array.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Sample index into the dataset split.
    #[arg(long)]
    index: Option<usize>,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    k: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn parse_target(s: &str) -> Result<TargetRule, CliError> {
    match s {
        "untargeted" => Ok(TargetRule::Untargeted),
        "random" => Ok(TargetRule::Random),
        _ => s
            .parse()
            .map(TargetRule::Fixed)
            .map_err(|_| CliError::Validation(format!("unknown target {s:?} (untargeted, random or a class index)"))),
    }
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = match &cli.config {
        Some(p) => Settings::from_json_file(p)?,
        None => Settings::default(),
    };
    set(&mut s.seed, cli.seed);
    set(&mut s.dataset, cli.dataset);
    for (slot, v) in [
        (&mut s.data, &cli.data),
        (&mut s.model, &cli.model),
        (&mut s.ensemble, &cli.ensemble),
        (&mut s.out, &cli.out),
    ] {
        if v.is_some() {
            *slot = v.clone();
        }
    }
    match &cli.command {
        Command::Train(a) => {
            set(&mut s.train.epochs, a.epochs);
            set(&mut s.train.learning_rate, a.learning_rate);
            set(&mut s.train.batch_size, a.batch_size);
            if a.limit.is_some() {
                s.train.limit = a.limit;
            }
        }
        Command::Build(a) => {
            set(&mut s.build.quota, a.quota);
            set(&mut s.build.delta, a.delta);
            set(&mut s.build.split, a.split);
            set(&mut s.build.window, a.range);
        }
        Command::Calibrate(a) => {
            set(&mut s.calibrate.threshold, a.threshold);
            s.calibrate.sweep |= a.sweep;
            s.calibrate.write &= !a.no_write;
            set(&mut s.calibrate.split, a.split);
            set(&mut s.calibrate.window, a.range);
        }
        Command::Attack(a) => {
            let t = &mut s.attack;
            set(&mut t.method, a.method.as_deref().map(str::parse::<Method>).transpose()?);
            set(&mut t.epsilon, a.epsilon);
            set(&mut t.step_size, a.step_size);
            if a.iterations.is_some() {
                t.iterations = a.iterations;
            }
            if a.no_random_start {
                t.random_start = Some(false);
            }
            set(&mut t.target, a.target.as_deref().map(parse_target).transpose()?);
            set(&mut t.min_confidence, a.min_confidence);
            set(&mut t.search_steps, a.search_steps);
            set(&mut t.spsa_perturbation, a.spsa_perturbation);
            set(&mut t.spsa_batch, a.spsa_batch);
            set(&mut t.spsa_learning_rate, a.spsa_learning_rate);
            set(&mut t.split, a.split);
            set(&mut t.window, a.range);
            if a.limit.is_some() {
                t.limit = a.limit;
            }
            t.successful_only |= a.successful_only;
        }
        Command::Eval(a) => {
            if a.adversarial.is_some() {
                s.adversarial = a.adversarial.clone();
            }
            let e = &mut s.eval;
            if a.k.is_some() {
                e.k = a.k;
            }
            if let Some(modes) = &a.modes {
                e.modes = modes.iter().map(|m| m.parse::<Mode>()).collect::<Result<_, _>>()?;
            }
            e.all_records |= a.all_records;
            e.correct_only |= a.correct_only;
            set(&mut e.split, a.split);
            set(&mut e.window, a.range);
            if a.name.is_some() {
                e.name = a.name.clone();
            }
            if a.attack.is_some() {
                e.attack = a.attack.clone();
            }
        }
        Command::Infer(a) => {
            let i = &mut s.infer;
            if a.input.is_some() {
                i.input = a.input.clone();
            }
            if a.index.is_some() {
                i.index = a.index;
            }
            set(&mut i.split, a.split);
            if a.k.is_some() {
                i.k = a.k;
            }
        }
    }
    Ok(s)
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let s = settings(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    pool.install(|| {
        Ok(match cli.command {
            Command::Train(_) => regroup_cli::train(&s)?.to_string(),
            Command::Build(_) => regroup_cli::build(&s)?.to_string(),
            Command::Calibrate(_) => regroup_cli::calibrate(&s)?.to_string(),
            Command::Attack(_) => regroup_cli::attack(&s)?.to_string(),
            Command::Eval(_) => regroup_cli::eval(&s)?.to_string(),
            Command::Infer(_) => regroup_cli::infer(&s)?.to_string(),
        })
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            // A closed pipe (e.g. `| head`) is not a failure of the command.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
