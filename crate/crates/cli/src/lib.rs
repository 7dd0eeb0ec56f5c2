//! Argument definitions and subcommand drivers for the `anchorprobe` binary.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anchorprobe::data::{save_bank, save_container, SyntheticTaskSpec};
use anchorprobe::harness::{
    self, CrossShiftMatrix, ExperimentConfig, Method, RunOptions, RunResult, Task, TaskSource,
};
use anchorprobe::probe::{BatchMode, Init, PenaltyStep};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Lib(anchorprobe::Error),
    Usage(String),
    /// Per-task tuning requested without opting into the oracle protocol.
    Protocol(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Lib(e) => e.kind(),
            CliError::Usage(_) => "UsageError",
            CliError::Protocol(_) => "ProtocolError",
        }
    }

    /// `error kind=K message="..."` on one line.
    pub fn record(&self) -> String {
        let msg = self
            .to_string()
            .replace('\\', "\\\\")
            .replace('"', "\\\"")
            .replace('\n', "\\n");
        format!("error kind={} message=\"{}\"", self.kind(), msg)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Protocol(m) => f.write_str(m),
        }
    }
}

impl From<anchorprobe::Error> for CliError {
    fn from(e: anchorprobe::Error) -> Self {
        CliError::Lib(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "anchorprobe",
    version,
    about = "Few-shot linear probes over frozen embeddings, anchored to zero-shot prototypes",
    long_about = "Few-shot linear probes over frozen embeddings, anchored to zero-shot prototypes.\n\n\
Every subcommand trains with one fixed configuration (300 epochs, lr 0.1 with cosine decay, \
momentum 0.9, full batch, 20 augmentation views per shot on the bundled tasks). \
Flags and --config change it for every task alike."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one method on one task and save the bank, trace and result
    Train(TrainArgs),
    /// Sweep tasks x methods x shots x seeds under one shared config
    Bench(BenchArgs),
    /// Oracle hyperparameter-transfer matrix between tasks
    Crossshift(CrossShiftArgs),
    /// Train on a source task, evaluate the frozen model on shifted targets
    Domgen(DomGenArgs),
    /// Write a synthetic task as feature containers
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StepArg {
    Explicit,
    Proximal,
}

/// Overrides of the shared training configuration. Precedence: built-in
/// defaults, then `--config`, then these flags.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML experiment config (top-level method knobs plus a [train] table)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Training epochs [default: 300]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate, decayed to 0 by a cosine schedule over the epochs [default: 0.1]
    #[arg(long, value_name = "LR")]
    pub lr: Option<f64>,
    /// SGD momentum [default: 0.9]
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Mini-batch size [default: full batch]
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Inverse softmax temperature [default: 100]
    #[arg(long, value_name = "T")]
    pub temperature: Option<f64>,
    /// Skip the unit-norm projection after each step [default: project]
    #[arg(long)]
    pub no_project: bool,
    /// Start from N(0, sigma) prototypes instead of the zero-shot ones [default: zero-shot init]
    #[arg(long, value_name = "SIGMA")]
    pub random_init: Option<f64>,
    /// How the quadratic penalty enters each step [default: explicit]
    #[arg(long, value_enum)]
    pub penalty_step: Option<StepArg>,
    /// Divide the penalty by the number of support rows [default: off]
    #[arg(long)]
    pub penalty_mean: bool,
    /// Scale on every class multiplier of the clap methods [default: 1]
    #[arg(long)]
    pub lambda_scale: Option<f64>,
    /// Initial rho for clap-fullalm [default: 1]
    #[arg(long)]
    pub rho: Option<f64>,
    /// TIP-Adapter fusion weight [default: 1]
    #[arg(long)]
    pub tip_alpha: Option<f64>,
    /// TIP-Adapter affinity sharpness [default: 1]
    #[arg(long)]
    pub tip_beta: Option<f64>,
    /// TaskRes residual scale [default: 1]
    #[arg(long)]
    pub taskres_alpha: Option<f64>,
    /// Augmentation views per training sample of synthetic tasks [default: 20]
    #[arg(long)]
    pub views: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads, 0 for one per core
    #[arg(long, env = "ANCHORPROBE_WORKERS", default_value_t = 0)]
    pub workers: usize,
    /// Record wall time per run (outputs are then no longer byte-identical)
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Synthetic task: a bundled name (default, noisy) or a spec .toml
    #[arg(long, value_name = "TASK", conflicts_with = "features")]
    pub synthetic: Option<String>,
    /// Feature-container prefix (PREFIX_train.bin, PREFIX_test.bin, ...)
    #[arg(long, value_name = "PREFIX")]
    pub features: Option<PathBuf>,
    /// zeroshot, zslp, clap, clap-const1, clap-avg, clap-corr, clap-fullalm, randlp, tipadapter or taskres-equiv
    #[arg(long, default_value = "clap", value_parser = parse_method)]
    pub method: Method,
    /// Shots per class
    #[arg(long, default_value_t = 16)]
    pub shots: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Synthetic tasks, comma separated [default: every bundled task]
    #[arg(long, value_delimiter = ',', value_name = "TASKS")]
    pub synthetic: Vec<String>,
    /// Feature-container prefixes, comma separated
    #[arg(long, value_delimiter = ',', value_name = "PREFIXES")]
    pub features: Vec<PathBuf>,
    /// Comma-separated method names (see `train --help`)
    #[arg(long, value_delimiter = ',', default_value = "zslp,clap", value_parser = parse_method)]
    pub methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub shots: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    /// Per-task config file, as TASK=FILE; only allowed with --oracle-mode
    #[arg(long, value_name = "TASK=FILE")]
    pub task_config: Vec<String>,
    /// Allow per-task configs (test-set tuned settings, not a fair protocol)
    #[arg(long)]
    pub oracle_mode: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct CrossShiftArgs {
    #[arg(long, value_delimiter = ',', value_name = "TASKS")]
    pub synthetic: Vec<String>,
    #[arg(long, value_delimiter = ',', value_name = "PREFIXES")]
    pub features: Vec<PathBuf>,
    /// zeroshot, zslp, clap, clap-const1, clap-avg, clap-corr, clap-fullalm, randlp, tipadapter or taskres-equiv
    #[arg(long, default_value = "clap", value_parser = parse_method)]
    pub method: Method,
    /// JSON array of objects mapping hyperparameter names to values
    #[arg(long, value_name = "FILE")]
    pub grid: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub shots: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct DomGenArgs {
    /// Source task: bundled name, spec .toml, or features:PREFIX
    #[arg(long)]
    pub source: String,
    /// Target tasks, comma separated, same forms as --source
    #[arg(long, value_delimiter = ',', required = true)]
    pub targets: Vec<String>,
    /// zeroshot, zslp, clap, clap-const1, clap-avg, clap-corr, clap-fullalm, randlp, tipadapter or taskres-equiv
    #[arg(long, default_value = "clap", value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 16)]
    pub shots: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Bundled name or spec .toml
    #[arg(long, default_value = "default")]
    pub synthetic: String,
    /// Augmentation views per training sample [default: the spec's value]
    #[arg(long)]
    pub views: Option<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::from_str(s).map_err(|_| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
        format!("unknown method {s:?}; expected one of {}", names.join(", "))
    })
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Lib(anchorprobe::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_file(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> CliResult<()> {
    fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
    written.push(path);
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

impl ConfigArgs {
    /// Defaults, then the config file, then flags; validated.
    pub fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                toml::from_str::<ExperimentConfig>(&text).map_err(|e| {
                    CliError::Lib(anchorprobe::Error::InvalidConfig(format!(
                        "{}: {}",
                        path.display(),
                        e.message()
                    )))
                })?
            }
            None => ExperimentConfig::default(),
        };
        let t = &mut c.train;
        if let Some(x) = self.epochs {
            t.epochs = x;
        }
        if let Some(x) = self.lr {
            t.lr0 = x;
        }
        if let Some(x) = self.momentum {
            t.momentum = x;
        }
        if let Some(size) = self.batch_size {
            t.batch_mode = BatchMode::MiniBatch { size };
        }
        if let Some(x) = self.temperature {
            t.temperature_inv = x;
        }
        if self.no_project {
            t.project_unit_norm = false;
        }
        if let Some(sigma) = self.random_init {
            t.init = Init::RandomGaussian { sigma };
        }
        if let Some(s) = self.penalty_step {
            t.penalty_step = match s {
                StepArg::Explicit => PenaltyStep::Explicit,
                StepArg::Proximal => PenaltyStep::Proximal,
            };
        }
        if self.penalty_mean {
            t.penalty_mean_scale = true;
        }
        for (flag, slot) in [
            (self.lambda_scale, &mut c.lambda_scale),
            (self.rho, &mut c.rho),
            (self.tip_alpha, &mut c.tip_alpha),
            (self.tip_beta, &mut c.tip_beta),
            (self.taskres_alpha, &mut c.taskres_alpha),
        ] {
            if let Some(x) = flag {
                *slot = x;
            }
        }
        c.validate()?;
        Ok(c)
    }

    fn source(&self, text: &str) -> CliResult<TaskSource> {
        let source = TaskSource::from_str(text)?;
        match (self.views, source.spec()?) {
            (Some(views), Some(mut spec)) => {
                spec.views = views;
                Ok(TaskSource::Spec(spec))
            }
            _ => Ok(source),
        }
    }
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            workers: self.workers,
            timing: self.timing,
        }
    }
}

fn load_tasks(
    config: &ConfigArgs,
    synthetic: &[String],
    features: &[PathBuf],
) -> CliResult<Vec<Task>> {
    let mut sources = Vec::new();
    for s in synthetic {
        sources.push(config.source(s)?);
    }
    for f in features {
        sources.push(TaskSource::Features(f.clone()));
    }
    if sources.is_empty() {
        return Err(CliError::Usage(
            "no tasks given; use --synthetic or --features".into(),
        ));
    }
    let tasks = sources
        .iter()
        .map(|s| s.load())
        .collect::<anchorprobe::Result<Vec<_>>>()?;
    let mut names: Vec<&str> = tasks.iter().map(|t| t.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::Usage(format!(
            "task name {:?} appears twice",
            w[0]
        )));
    }
    Ok(tasks)
}

pub fn run(cli: Cli) -> CliResult<Vec<PathBuf>> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Crossshift(a) => cmd_crossshift(&a),
        Command::Domgen(a) => cmd_domgen(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<Vec<PathBuf>> {
    let config = a.config.resolve()?;
    let synthetic: Vec<String> = a.synthetic.iter().cloned().collect();
    let features: Vec<PathBuf> = a.features.iter().cloned().collect();
    let task = load_tasks(&a.config, &synthetic, &features)?.remove(0);
    let (result, model, trace) =
        harness::run_one_detailed(&task, a.method, &config, a.shots, a.seed, a.run.timing)?;

    create_dir(&a.run.out)?;
    let mut written = Vec::new();
    if let harness::Fitted::Bank(bank) = &model {
        let path = a.run.out.join("bank.bin");
        save_bank(&path, bank, &task.train.class_names)?;
        written.push(path.with_extension("json"));
        written.push(path);
    }
    if let Some(trace) = trace {
        write_file(a.run.out.join("trace.csv"), &trace.to_csv(), &mut written)?;
    }
    write_file(
        a.run.out.join("result.json"),
        &harness::to_pretty_json(&result)?,
        &mut written,
    )?;
    Ok(written)
}

fn read_task_configs(a: &BenchArgs) -> CliResult<Vec<(String, ExperimentConfig)>> {
    if a.task_config.is_empty() {
        return Ok(Vec::new());
    }
    if !a.oracle_mode {
        return Err(CliError::Protocol(
            "per-task config overrides are refused: the benchmark runs the validation-free \
             protocol, one fixed configuration for every task; pass --oracle-mode to run \
             test-tuned settings anyway"
                .into(),
        ));
    }
    a.task_config
        .iter()
        .map(|spec| {
            let (task, file) = spec.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("--task-config expects TASK=FILE, got {spec:?}"))
            })?;
            let args = ConfigArgs {
                config: Some(PathBuf::from(file)),
                ..a.config.clone()
            };
            Ok((task.to_string(), args.resolve()?))
        })
        .collect()
}

pub fn cmd_bench(a: &BenchArgs) -> CliResult<Vec<PathBuf>> {
    let config = a.config.resolve()?;
    let overrides = read_task_configs(a)?;
    let synthetic: Vec<String> = if a.synthetic.is_empty() && a.features.is_empty() {
        SyntheticTaskSpec::BUNDLED
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        a.synthetic.clone()
    };
    let tasks = load_tasks(&a.config, &synthetic, &a.features)?;
    for (name, _) in &overrides {
        if !tasks.iter().any(|t| &t.name == name) {
            return Err(CliError::Usage(format!(
                "--task-config names unknown task {name:?}"
            )));
        }
    }
    let mut results: Vec<RunResult> = Vec::new();
    for task in &tasks {
        let cfg = overrides
            .iter()
            .find(|(n, _)| n == &task.name)
            .map_or(&config, |(_, c)| c);
        results.extend(harness::run_benchmark(
            std::slice::from_ref(task),
            &a.methods,
            &a.shots,
            &a.seeds,
            cfg,
            a.run.options(),
        )?);
    }
    results.sort_by(|x, y| {
        (&x.task, x.method.as_str(), x.shots, x.seed).cmp(&(
            &y.task,
            y.method.as_str(),
            y.shots,
            y.seed,
        ))
    });

    create_dir(&a.run.out)?;
    let mut written = Vec::new();
    write_file(
        a.run.out.join("results.csv"),
        &harness::results_csv(&results),
        &mut written,
    )?;
    write_file(
        a.run.out.join("summary.json"),
        &harness::to_pretty_json(&harness::summarize(&results))?,
        &mut written,
    )?;
    Ok(written)
}

pub fn cmd_crossshift(a: &CrossShiftArgs) -> CliResult<Vec<PathBuf>> {
    let config = a.config.resolve()?;
    let text = fs::read_to_string(&a.grid).map_err(|e| io_err(&a.grid, e))?;
    let grid = harness::parse_grid(&text).map_err(|e| e.context(a.grid.display().to_string()))?;
    let tasks = load_tasks(&a.config, &a.synthetic, &a.features)?;
    let m: CrossShiftMatrix = harness::cross_shift_matrix(
        &tasks,
        a.method,
        &grid,
        &config,
        a.shots,
        &a.seeds,
        a.run.options(),
    )?;
    create_dir(&a.run.out)?;
    let mut written = Vec::new();
    write_file(a.run.out.join("crossshift.csv"), &m.to_csv(), &mut written)?;
    write_file(a.run.out.join("crossshift.svg"), &m.to_svg(), &mut written)?;
    write_file(
        a.run.out.join("crossshift.json"),
        &harness::to_pretty_json(&m)?,
        &mut written,
    )?;
    Ok(written)
}

pub fn cmd_domgen(a: &DomGenArgs) -> CliResult<Vec<PathBuf>> {
    let config = a.config.resolve()?;
    let source = a.config.source(&a.source)?.load()?;
    let targets = a
        .targets
        .iter()
        .map(|t| Ok(a.config.source(t)?.load()?))
        .collect::<CliResult<Vec<_>>>()?;
    let table = harness::domain_generalization(
        &source,
        &targets,
        a.method,
        &config,
        a.shots,
        &a.seeds,
        a.run.options(),
    )?;
    create_dir(&a.run.out)?;
    let mut written = Vec::new();
    write_file(a.run.out.join("domgen.csv"), &table.to_csv(), &mut written)?;
    write_file(
        a.run.out.join("domgen.json"),
        &harness::to_pretty_json(&table)?,
        &mut written,
    )?;
    Ok(written)
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<Vec<PathBuf>> {
    let args = ConfigArgs {
        views: a.views,
        ..ConfigArgs::default()
    };
    let task = args.source(&a.synthetic)?.load()?;
    create_dir(&a.out)?;
    let mut written = Vec::new();
    let stem = |suffix: &str| a.out.join(format!("{}_{suffix}.bin", task.name));
    for (path, set, split) in [
        (stem("train"), &task.train, "train"),
        (stem("test"), &task.test, "test"),
    ] {
        save_container(&path, set, split)?;
        written.push(path.with_extension("json"));
        written.push(path);
    }
    let path = stem("prototypes");
    save_bank(&path, &task.anchors, &task.train.class_names)?;
    written.push(path.with_extension("json"));
    written.push(path);
    Ok(written)
}
