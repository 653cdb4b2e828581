//! The `listnet` command-line front end.
//!
//! Exit status: 0 on success, 1 for data errors and tolerance failures,
//! 2 for usage errors. Every command that takes `--seed` falls back to the
//! `LISTNET_SEED` environment variable and then to 0.
//!
//! `train` and `eval` also read a `key = value` config file (`--config`)
//! whose keys are the long flag names; flags override it. The manifest that
//! `train` writes is itself a valid config file, so
//! `listnet train --config out/manifest.txt` replays a run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::bench::{bench_csv, run_bench, BenchConfig};
use crate::error::Error;
use crate::exec::Execution;
use crate::gradients::{run_gradcheck, GradCheckConfig};
use crate::letor::{generate_synthetic, parse_letor_with, write_letor, ParseOptions, SyntheticSpec};
use crate::metrics::{
    aggregate_runs, evaluate_with, summary_csv_rows, EvalResult, DEFAULT_CUTOFFS,
    DEFAULT_MIN_RELEVANT, SUMMARY_CSV_HEADER,
};
use crate::permutation::{
    class_probability, enumerate_classes_capped, DEFAULT_ENUMERATION_CAP,
};
use crate::ranker::{Dataset, LinearModel};
use crate::samplers::SamplerKind;
use crate::trainer::{
    default_eta, train, train_repeats, Monitor, TrainConfig, TrainMode,
    DEFAULT_MAX_CLASSES,
};

pub const SEED_ENV: &str = "LISTNET_SEED";

#[derive(Debug, Parser)]
#[command(name = "listnet", version, about = "Conventional and stochastic Top-k ListNet")]
pub struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a linear ranker and write weights, traces and a manifest.
    Train(TrainCmd),
    /// Evaluate a model, or the mean over repeated seeded trainings.
    Eval(EvalCmd),
    /// Compare Top-k gradients with central finite differences.
    Gradcheck(GradcheckCmd),
    /// Time training iterations per mode, order and list count.
    Bench(BenchCmd),
    /// Write a synthetic LETOR file.
    Synth(SynthCmd),
    /// List every Top-k permutation class with its probability.
    Enumerate(EnumerateCmd),
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// Key-value config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training data in LETOR format.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Order of the Top-k model.
    #[arg(long)]
    pub k: Option<usize>,
    /// conventional | stochastic
    #[arg(long)]
    pub mode: Option<TrainMode>,
    /// uniform | fixed | adaptive (stochastic mode only)
    #[arg(long)]
    pub sampler: Option<SamplerKind>,
    /// Lists sampled per query (stochastic mode only).
    #[arg(long)]
    pub lists: Option<usize>,
    /// Label-driven list retention; defaults to on for k >= 2.
    #[arg(long)]
    pub resample: Option<bool>,
    #[arg(long)]
    pub max_attempts: Option<usize>,
    /// Maximum label S in the retention probability.
    #[arg(long)]
    pub max_label: Option<f64>,
    /// Initial learning rate; defaults to 1e-3 for k = 1 and 1e-5 otherwise.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// top1 | sampled
    #[arg(long)]
    pub monitor: Option<Monitor>,
    #[arg(long)]
    pub init_range: Option<f64>,
    /// Stop when the monitored loss changes by less than this.
    #[arg(long)]
    pub early_stop: Option<f64>,
    /// Per-query class budget for conventional mode.
    #[arg(long)]
    pub max_classes: Option<u128>,
    /// Minimum label counted as relevant by P@k.
    #[arg(long)]
    pub relevant_label: Option<u8>,
    /// Per-query min-max feature scaling.
    #[arg(long)]
    pub normalize: Option<bool>,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Output directory for model.txt, report.csv, report.txt, manifest.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Weights file (one value per line). Without it, seeded trainings are run.
    #[arg(long, conflicts_with = "repeats")]
    pub model: Option<PathBuf>,
    /// Number of seeded training runs (default 20).
    #[arg(long)]
    pub repeats: Option<usize>,
    /// First run seed; run i uses seed_base + i.
    #[arg(long)]
    pub seed_base: Option<u64>,
    /// Concurrent runs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckCmd {
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Fixed order; by default orders cycle through 1..=min(4, n).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub n_min: usize,
    #[arg(long, default_value_t = 6)]
    pub n_max: usize,
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    /// Maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub abs_tol: f64,
    /// Maximum gap between Top-k at k = 1 and the closed-form Top-1 gradient.
    #[arg(long, default_value_t = 1e-10)]
    pub reduction_tol: f64,
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    /// LETOR data; a synthetic set is generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub queries: usize,
    #[arg(long, default_value_t = 5)]
    pub dim: usize,
    /// Comma-separated orders.
    #[arg(long, default_value = "1,2")]
    pub k: String,
    /// Comma-separated list counts for stochastic mode.
    #[arg(long, default_value = "50")]
    pub lists: String,
    /// Comma-separated modes.
    #[arg(long, default_value = "conventional,stochastic")]
    pub modes: String,
    #[arg(long, default_value = "uniform")]
    pub sampler: SamplerKind,
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use rayon inside each gradient (when compiled in).
    #[arg(long)]
    pub parallel: bool,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    pub max_classes: u128,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Comma-separated ground-truth weights; seeded draws in [-1, 1] when absent.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Destination file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnumerateCmd {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    /// Comma-separated scores (length n); all zero when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub scores: Option<String>,
    #[arg(long, default_value_t = 6)]
    pub precision: usize,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    pub max_classes: u128,
}

/// Failure of a command, carrying its exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(#[from] Error),
    #[error("{0}")]
    Tolerance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Tolerance(_) => 1,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(Error::Io(e))
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T> = Result<T, CliError>;

/// Parse arguments, run the command and return the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run(cli.command, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("listnet: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Train(c) => cmd_train(c, out),
        Command::Eval(c) => cmd_eval(c, out),
        Command::Gradcheck(c) => cmd_gradcheck(c, out),
        Command::Bench(c) => cmd_bench(c, out),
        Command::Synth(c) => cmd_synth(c, out),
        Command::Enumerate(c) => cmd_enumerate(c, out),
    }
}

/// Parsed `key = value` file. `#` starts a comment line.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    source: String,
}

/// Manifest-only keys tolerated when a manifest is used as a config file.
const MANIFEST_PREFIXES: [&str; 3] = ["input.", "toolkit.", "run."];

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("{source}:{}: expected key = value", i + 1)))?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(ConfigFile {
            values,
            source: source.to_string(),
        })
    }

    fn check_keys(&self, allowed: &[&str]) -> CliResult<()> {
        for key in self.values.keys() {
            let known = allowed.contains(&key.as_str())
                || MANIFEST_PREFIXES.iter().any(|p| key.starts_with(p));
            if !known {
                return Err(usage(format!("{}: unknown key {key:?}", self.source)));
            }
        }
        Ok(())
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| usage(format!("{}: bad value for {key}: {e}", self.source)))
            })
            .transpose()
    }
}

fn pick<T: FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => cfg.get(key),
    }
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

const TRAIN_KEYS: [&str; 21] = [
    "data", "valid", "test", "out", "k", "mode", "sampler", "lists", "resample",
    "max-attempts", "max-label", "eta", "iters", "seed", "monitor", "init-range",
    "early-stop", "max-classes", "relevant-label", "normalize", "repeats",
];

/// Fully resolved training settings; every default is materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub data: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub normalize: bool,
    pub config: TrainConfig,
}

impl TrainSettings {
    pub fn resolve(args: &TrainArgs, cfg: &ConfigFile) -> CliResult<Self> {
        cfg.check_keys(&TRAIN_KEYS)?;
        let data = pick(args.data.clone(), cfg, "data")?
            .ok_or_else(|| usage("--data is required"))?;
        let valid = pick(args.valid.clone(), cfg, "valid")?;
        let test = pick(args.test.clone(), cfg, "test")?;
        let k = pick(args.k, cfg, "k")?.unwrap_or(1);
        if k == 0 {
            return Err(usage("--k must be at least 1"));
        }
        let mode = pick(args.mode, cfg, "mode")?.unwrap_or(TrainMode::Stochastic);
        let sampler = pick(args.sampler, cfg, "sampler")?;
        let lists = pick(args.lists, cfg, "lists")?;
        let resample = pick(args.resample, cfg, "resample")?;
        let max_attempts = pick(args.max_attempts, cfg, "max-attempts")?;
        let max_label = pick(args.max_label, cfg, "max-label")?;
        if mode == TrainMode::Conventional
            && (sampler.is_some()
                || lists.is_some()
                || resample.is_some()
                || max_attempts.is_some()
                || max_label.is_some())
        {
            return Err(usage("sampler options apply to stochastic mode only"));
        }
        let seed = match pick(args.seed, cfg, "seed")? {
            Some(s) => s,
            None => resolve_seed(None)?,
        };
        let mut config = TrainConfig::new(k, mode, seed);
        if let Some(kind) = sampler {
            config.sampler.kind = kind;
        }
        if let Some(l) = lists {
            config.sampler.lists = l;
        }
        if let Some(r) = resample {
            config.sampler.resample = r;
        }
        if let Some(a) = max_attempts {
            config.sampler.max_retention_attempts = a;
        }
        if let Some(s) = max_label {
            config.sampler.max_label = s;
        }
        config.eta = pick(args.eta, cfg, "eta")?.unwrap_or(default_eta(k));
        config.iterations = pick(args.iters, cfg, "iters")?.unwrap_or(config.iterations);
        config.monitor = pick(args.monitor, cfg, "monitor")?.unwrap_or(config.monitor);
        config.init_range = pick(args.init_range, cfg, "init-range")?.unwrap_or(config.init_range);
        config.early_stop = pick(args.early_stop, cfg, "early-stop")?;
        config.max_classes =
            pick(args.max_classes, cfg, "max-classes")?.unwrap_or(DEFAULT_MAX_CLASSES);
        config.min_relevant =
            pick(args.relevant_label, cfg, "relevant-label")?.unwrap_or(DEFAULT_MIN_RELEVANT);
        config.validate().map_err(|e| usage(e.to_string()))?;
        let normalize = pick(args.normalize, cfg, "normalize")?.unwrap_or(false);
        Ok(TrainSettings {
            data,
            valid,
            test,
            normalize,
            config,
        })
    }

    /// Config-file lines reproducing these settings.
    pub fn to_config_lines(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "data = {}", self.data.display());
        if let Some(v) = &self.valid {
            let _ = writeln!(s, "valid = {}", v.display());
        }
        if let Some(t) = &self.test {
            let _ = writeln!(s, "test = {}", t.display());
        }
        let _ = writeln!(s, "normalize = {}", self.normalize);
        let _ = writeln!(s, "k = {}", c.k);
        let _ = writeln!(s, "mode = {}", c.mode);
        if c.mode == TrainMode::Stochastic {
            let _ = writeln!(s, "sampler = {}", c.sampler.kind);
            let _ = writeln!(s, "lists = {}", c.sampler.lists);
            let _ = writeln!(s, "resample = {}", c.sampler.resample);
            let _ = writeln!(s, "max-attempts = {}", c.sampler.max_retention_attempts);
            let _ = writeln!(s, "max-label = {}", c.sampler.max_label);
        }
        let _ = writeln!(s, "eta = {}", c.eta);
        let _ = writeln!(s, "iters = {}", c.iterations);
        let _ = writeln!(s, "seed = {}", c.seed);
        let _ = writeln!(s, "monitor = {}", c.monitor);
        let _ = writeln!(s, "init-range = {}", c.init_range);
        if let Some(t) = c.early_stop {
            let _ = writeln!(s, "early-stop = {t}");
        }
        let _ = writeln!(s, "max-classes = {}", c.max_classes);
        let _ = writeln!(s, "relevant-label = {}", c.min_relevant);
        s
    }

    fn splits(&self) -> Vec<(&'static str, &Path)> {
        let mut v = vec![("train", self.data.as_path())];
        if let Some(p) = &self.valid {
            v.push(("valid", p.as_path()));
        }
        if let Some(p) = &self.test {
            v.push(("test", p.as_path()));
        }
        v
    }
}

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::default()),
    }
}

fn read_dataset(path: &Path, normalize: bool) -> CliResult<Dataset> {
    let file = fs::File::open(path).map_err(|e| {
        CliError::Data(Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
    })?;
    Ok(parse_letor_with(BufReader::new(file), ParseOptions { normalize })?)
}

fn sha256_hex(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_model(model: &LinearModel, path: &Path) -> io::Result<()> {
    let mut s = String::new();
    for w in &model.weights {
        let _ = writeln!(s, "{w}");
    }
    fs::write(path, s)
}

pub fn read_model(path: &Path) -> CliResult<LinearModel> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::Data(Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
    })?;
    let weights = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|_| {
                CliError::Data(Error::Parse {
                    line: i + 1,
                    message: format!("{}: bad weight {l:?}", path.display()),
                })
            })
        })
        .collect::<CliResult<Vec<f64>>>()?;
    Ok(LinearModel::new(weights)?)
}

fn metrics_table(rows: &[(&str, EvalResult)]) -> String {
    let mut s = format!("{:<8} {:>8} {:>8}\n", "split", "P@1", "P@10");
    for (split, r) in rows {
        let _ = writeln!(
            s,
            "{:<8} {:>8.4} {:>8.4}",
            split,
            r.mean(1).unwrap_or(f64::NAN),
            r.mean(10).unwrap_or(f64::NAN)
        );
    }
    s
}

pub fn cmd_train(cmd: TrainCmd, out: &mut dyn Write) -> CliResult<()> {
    let cfg = load_config(cmd.train.config.as_deref())?;
    let settings = TrainSettings::resolve(&cmd.train, &cfg)?;
    let out_dir = match cmd.out {
        Some(p) => p,
        None => cfg.get("out")?.unwrap_or_else(|| PathBuf::from("listnet-out")),
    };
    let started = unix_now();
    let train_set = read_dataset(&settings.data, settings.normalize)?;
    let report = train(&train_set, &settings.config)?;

    let mut evals = Vec::new();
    for (split, path) in settings.splits() {
        let ds = if split == "train" {
            train_set.clone()
        } else {
            read_dataset(path, settings.normalize)?
        };
        let r = evaluate_with(
            &ds,
            &report.model,
            &DEFAULT_CUTOFFS,
            settings.config.min_relevant,
            settings.config.execution,
        )?;
        evals.push((split, r));
    }

    fs::create_dir_all(&out_dir)?;
    write_model(&report.model, &out_dir.join("model.txt"))?;
    fs::write(out_dir.join("report.csv"), report.to_csv())?;
    fs::write(out_dir.join("report.txt"), report.to_key_value())?;

    let mut manifest = String::from("# listnet run manifest\n");
    manifest.push_str(&settings.to_config_lines());
    for (split, path) in settings.splits() {
        let _ = writeln!(manifest, "input.sha256.{split} = {}", sha256_hex(path)?);
    }
    let _ = writeln!(manifest, "toolkit.version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "run.started_unix = {started}");
    let _ = writeln!(manifest, "run.finished_unix = {}", unix_now());
    fs::write(out_dir.join("manifest.txt"), manifest)?;

    write!(out, "{}", metrics_table(&evals))?;
    Ok(())
}

pub fn cmd_eval(cmd: EvalCmd, out: &mut dyn Write) -> CliResult<()> {
    let cfg = load_config(cmd.train.config.as_deref())?;
    let settings = TrainSettings::resolve(&cmd.train, &cfg)?;
    let min_relevant = settings.config.min_relevant;
    let mut splits = Vec::new();
    for (split, path) in settings.splits() {
        splits.push((split, read_dataset(path, settings.normalize)?));
    }

    // results[split] holds one EvalResult per model.
    let mut results: Vec<Vec<EvalResult>> = vec![Vec::new(); splits.len()];
    if let Some(path) = &cmd.model {
        let model = read_model(path)?;
        for (i, (_, ds)) in splits.iter().enumerate() {
            results[i].push(evaluate_with(ds, &model, &DEFAULT_CUTOFFS, min_relevant, Execution::preferred())?);
        }
    } else {
        let repeats = pick(cmd.repeats, &cfg, "repeats")?.unwrap_or(20);
        if repeats == 0 {
            return Err(usage("--repeats must be at least 1"));
        }
        let seed_base = cmd.seed_base.unwrap_or(settings.config.seed);
        let reports = run_with_jobs(cmd.jobs, || {
            train_repeats(&splits[0].1, &settings.config, repeats, seed_base, Execution::preferred())
        })??;
        for report in &reports {
            for (i, (_, ds)) in splits.iter().enumerate() {
                results[i].push(evaluate_with(ds, &report.model, &DEFAULT_CUTOFFS, min_relevant, Execution::Sequential)?);
            }
        }
    }

    let mut csv = format!("{SUMMARY_CSV_HEADER}\n");
    for ((split, _), runs) in splits.iter().zip(&results) {
        csv.push_str(&summary_csv_rows(split, &aggregate_runs(runs)?));
    }
    match &cmd.out {
        Some(p) => fs::write(p, csv)?,
        None => write!(out, "{csv}")?,
    }
    Ok(())
}

/// Run `f` on a pool bounded to `jobs` threads when rayon is available.
fn run_with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    if jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    if let Some(j) = jobs {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| usage(format!("cannot build thread pool: {e}")))?;
        return Ok(pool.install(f));
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
    Ok(f())
}

pub fn cmd_gradcheck(cmd: GradcheckCmd, out: &mut dyn Write) -> CliResult<()> {
    if !(cmd.h > 0.0) {
        return Err(usage("--h must be positive"));
    }
    if cmd.k == Some(0) {
        return Err(usage("--k must be at least 1"));
    }
    if cmd.n_min == 0 || cmd.n_min > cmd.n_max || cmd.dim == 0 {
        return Err(usage("need 1 <= --n-min <= --n-max and --dim >= 1"));
    }
    let config = GradCheckConfig {
        instances: cmd.instances,
        seed: resolve_seed(cmd.seed)?,
        h: cmd.h,
        k: cmd.k,
        n_min: cmd.n_min,
        n_max: cmd.n_max,
        dim: cmd.dim,
        abs_tol: cmd.abs_tol,
    };
    let r = run_gradcheck(&config)?;
    writeln!(out, "instances = {}", r.instances)?;
    writeln!(out, "h = {}", config.h)?;
    writeln!(out, "max_relative_error = {:e}", r.max_relative_error)?;
    writeln!(out, "max_absolute_error = {:e}", r.max_absolute_error)?;
    if let Some(gap) = r.top1_reduction_error {
        writeln!(out, "top1_reduction_error = {gap:e}")?;
    }
    if r.max_relative_error >= cmd.tol {
        return Err(CliError::Tolerance(format!(
            "max relative error {:e} exceeds {:e}",
            r.max_relative_error, cmd.tol
        )));
    }
    if let Some(gap) = r.top1_reduction_error.filter(|g| *g >= cmd.reduction_tol) {
        return Err(CliError::Tolerance(format!(
            "Top-1 reduction error {gap:e} exceeds {:e}",
            cmd.reduction_tol
        )));
    }
    writeln!(out, "ok")?;
    Ok(())
}

fn parse_list<T: FromStr>(flag: &str, text: &str) -> CliResult<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|e| usage(format!("--{flag}: bad entry {t:?}: {e}")))
        })
        .collect()
}

pub fn cmd_bench(cmd: BenchCmd, out: &mut dyn Write) -> CliResult<()> {
    let orders: Vec<usize> = parse_list("k", &cmd.k)?;
    if orders.contains(&0) {
        return Err(usage("--k entries must be at least 1"));
    }
    let lists: Vec<usize> = parse_list("lists", &cmd.lists)?;
    if lists.contains(&0) {
        return Err(usage("--lists entries must be at least 1"));
    }
    let modes: Vec<TrainMode> = parse_list("modes", &cmd.modes)?;
    if cmd.iters == 0 {
        return Err(usage("--iters must be at least 1"));
    }
    let seed = resolve_seed(cmd.seed)?;
    let dataset = match &cmd.data {
        Some(p) => read_dataset(p, false)?,
        None => {
            let spec = SyntheticSpec::with_seeded_weights(cmd.queries, cmd.n, cmd.dim, 0.0, seed);
            generate_synthetic(&spec).map_err(|e| usage(e.to_string()))?
        }
    };
    let config = BenchConfig {
        modes,
        orders,
        lists,
        sampler: cmd.sampler,
        iterations: cmd.iters,
        seed,
        execution: if cmd.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        },
        max_classes: cmd.max_classes,
    };
    let csv = bench_csv(&run_bench(&dataset, &config)?);
    match &cmd.out {
        Some(p) => fs::write(p, csv)?,
        None => write!(out, "{csv}")?,
    }
    Ok(())
}

const SYNTH_KEYS: [&str; 7] = ["queries", "docs", "dim", "weights", "noise", "seed", "out"];

pub fn cmd_synth(cmd: SynthCmd, out: &mut dyn Write) -> CliResult<()> {
    let cfg = load_config(cmd.config.as_deref())?;
    cfg.check_keys(&SYNTH_KEYS)?;
    let queries = pick(cmd.queries, &cfg, "queries")?.unwrap_or(100);
    let docs = pick(cmd.docs, &cfg, "docs")?.unwrap_or(12);
    let dim = pick(cmd.dim, &cfg, "dim")?.unwrap_or(5);
    let noise = pick(cmd.noise, &cfg, "noise")?.unwrap_or(0.0);
    let seed = match pick(cmd.seed, &cfg, "seed")? {
        Some(s) => s,
        None => resolve_seed(None)?,
    };
    let mut spec = SyntheticSpec::with_seeded_weights(queries, docs, dim, noise, seed);
    if let Some(w) = pick::<String>(cmd.weights, &cfg, "weights")? {
        spec.weights = parse_list("weights", &w)?;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let dataset = generate_synthetic(&spec)?;
    match pick::<PathBuf>(cmd.out, &cfg, "out")? {
        Some(p) => {
            let mut f = io::BufWriter::new(fs::File::create(&p)?);
            write_letor(&dataset, &mut f)?;
            f.flush()?;
        }
        None => write_letor(&dataset, out)?,
    }
    Ok(())
}

pub fn cmd_enumerate(cmd: EnumerateCmd, out: &mut dyn Write) -> CliResult<()> {
    if cmd.k == 0 || cmd.k > cmd.n {
        return Err(usage("need 1 <= --k <= --n"));
    }
    let scores: Vec<f64> = match &cmd.scores {
        Some(s) => parse_list("scores", s)?,
        None => vec![0.0; cmd.n],
    };
    if scores.len() != cmd.n || scores.iter().any(|s| !s.is_finite()) {
        return Err(usage(format!("--scores needs {} finite values", cmd.n)));
    }
    let set = enumerate_classes_capped(cmd.n, cmd.k, cmd.max_classes)?;
    let p = cmd.precision;
    let mut total = 0.0;
    for class in set.classes() {
        let prob = class_probability(&scores, class)?;
        total += prob;
        writeln!(out, "{class}\t{prob:.p$}")?;
    }
    writeln!(out, "sum\t{total:.p$}")?;
    Ok(())
}
