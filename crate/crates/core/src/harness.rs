//! Experiment protocols: fixed-configuration few-shot sweeps, evaluation of
//! one frozen bank on shifted targets, and the oracle cross-shift matrix.
//!
//! Every run is a pure function of (task, method, config, shots, seed).
//! Sweeps run their cells on a rayon pool and sort the collected results by
//! (task, method, shots, seed), so output never depends on scheduling.
//! Wall time is only recorded when asked for, which keeps artifacts
//! byte-identical across re-runs by default.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{random_lp, tip_adapter_logits, TipCache};
use crate::data::{
    generate_synthetic, load_bank, load_container, sample_few_shot, SupportSet, SyntheticTask,
    SyntheticTaskSpec,
};
use crate::error::{Error, Result};
use crate::penalty::PenaltyKind;
use crate::primitives::{argmax, dot, EmbeddingSet, PrototypeBank};
use crate::probe::{
    drift_norms, train_probe, Init, LambdaChoice, PenaltySpec, PenaltyStep, TrainConfig, TrainTrace,
};
use crate::zeroshot::{build_text_prototypes, PromptEmbeddings};

/// A labelled train pool, a test split, and zero-shot anchors.
#[derive(Debug, Clone)]
pub struct Task {
    pub name: String,
    pub train: EmbeddingSet,
    pub test: EmbeddingSet,
    pub anchors: PrototypeBank,
}

impl From<SyntheticTask> for Task {
    fn from(t: SyntheticTask) -> Self {
        Self {
            name: t.name,
            train: t.train,
            test: t.test,
            anchors: t.anchors,
        }
    }
}

/// Where a task comes from.
///
/// Text form: a bundled synthetic name (`default`, `noisy`), a path to a
/// synthetic spec ending in `.toml`, or `features:PREFIX` for
/// `PREFIX_train.bin`, `PREFIX_test.bin` and either `PREFIX_prototypes.bin`
/// or `PREFIX_prompts.bin` (prompt embeddings labelled by class).
#[derive(Debug, Clone, PartialEq)]
pub enum TaskSource {
    Bundled(String),
    SpecFile(PathBuf),
    Spec(SyntheticTaskSpec),
    Features(PathBuf),
}

impl FromStr for TaskSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(prefix) = s.strip_prefix("features:") {
            return Ok(Self::Features(PathBuf::from(prefix)));
        }
        if SyntheticTaskSpec::BUNDLED.contains(&s) {
            return Ok(Self::Bundled(s.to_string()));
        }
        if s.ends_with(".toml") {
            return Ok(Self::SpecFile(PathBuf::from(s)));
        }
        Err(Error::InvalidConfig(format!(
            "unknown task {s:?}: expected one of {:?}, a .toml spec, or features:PREFIX",
            SyntheticTaskSpec::BUNDLED
        )))
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl TaskSource {
    pub fn spec(&self) -> Result<Option<SyntheticTaskSpec>> {
        match self {
            Self::Bundled(name) => SyntheticTaskSpec::bundled(name)
                .map(Some)
                .ok_or_else(|| Error::InvalidConfig(format!("no bundled task {name:?}"))),
            Self::SpecFile(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                SyntheticTaskSpec::from_toml(&text)
                    .map(Some)
                    .map_err(|e| e.context(path.display().to_string()))
            }
            Self::Spec(spec) => Ok(Some(spec.clone())),
            Self::Features(_) => Ok(None),
        }
    }

    pub fn load(&self) -> Result<Task> {
        if let Some(spec) = self.spec()? {
            spec.validate()?;
            return generate_synthetic(&spec).map(Task::from);
        }
        let Self::Features(prefix) = self else {
            unreachable!()
        };
        let train = load_container(&with_suffix(prefix, "_train.bin"))?;
        let test = load_container(&with_suffix(prefix, "_test.bin"))?;
        let bank_path = with_suffix(prefix, "_prototypes.bin");
        let anchors = if bank_path.exists() {
            load_bank(&bank_path)?
        } else {
            let prompts = load_container(&with_suffix(prefix, "_prompts.bin"))?;
            build_text_prototypes(&PromptEmbeddings::from_embedding_set(&prompts)?)?
        };
        let name = prefix
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| prefix.display().to_string());
        Ok(Task {
            name,
            train,
            test,
            anchors,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[serde(rename = "zeroshot")]
    ZeroShot,
    Zslp,
    Clap,
    #[serde(rename = "clap-const1")]
    ClapConst1,
    ClapAvg,
    ClapCorr,
    ClapFullalm,
    Randlp,
    Tipadapter,
    TaskresEquiv,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::ZeroShot,
        Method::Zslp,
        Method::Clap,
        Method::ClapConst1,
        Method::ClapAvg,
        Method::ClapCorr,
        Method::ClapFullalm,
        Method::Randlp,
        Method::Tipadapter,
        Method::TaskresEquiv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ZeroShot => "zeroshot",
            Method::Zslp => "zslp",
            Method::Clap => "clap",
            Method::ClapConst1 => "clap-const1",
            Method::ClapAvg => "clap-avg",
            Method::ClapCorr => "clap-corr",
            Method::ClapFullalm => "clap-fullalm",
            Method::Randlp => "randlp",
            Method::Tipadapter => "tipadapter",
            Method::TaskresEquiv => "taskres-equiv",
        }
    }

    /// The probe configuration this method trains with, or `None` for the
    /// training-free methods.
    pub fn train_config(self, config: &ExperimentConfig, seed: u64) -> Option<TrainConfig> {
        let base = TrainConfig {
            seed,
            penalty: None,
            outer_steps: 0,
            ..config.train.clone()
        };
        let clap = |lambda: LambdaChoice| TrainConfig {
            penalty: Some(PenaltySpec {
                lambda_scale: config.lambda_scale,
                ..PenaltySpec::quadratic(lambda)
            }),
            outer_steps: 1,
            ..base.clone()
        };
        Some(match self {
            Method::ZeroShot | Method::Tipadapter => return None,
            Method::Zslp => TrainConfig {
                init: Init::ZeroShot,
                ..base
            },
            Method::Clap => clap(LambdaChoice::ClassWise),
            Method::ClapConst1 => clap(LambdaChoice::ConstantOne),
            Method::ClapAvg => clap(LambdaChoice::Avg),
            Method::ClapCorr => clap(LambdaChoice::Corrected),
            Method::ClapFullalm => TrainConfig {
                penalty: Some(PenaltySpec {
                    kind: PenaltyKind::Phr,
                    lambda: LambdaChoice::ClassWise,
                    lambda_scale: config.lambda_scale,
                    rho: config.rho,
                }),
                outer_steps: base.epochs,
                penalty_step: PenaltyStep::Explicit,
                ..base
            },
            Method::Randlp => base,
            Method::TaskresEquiv => TrainConfig {
                lr0: base.lr0 * config.taskres_alpha * config.taskres_alpha,
                init: Init::ZeroShot,
                ..base
            },
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnsupportedMethod(s.to_string()))
    }
}

fn one() -> f64 {
    1.0
}

/// Probe defaults plus the per-method knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Multiplies every class multiplier of the penalized methods.
    pub lambda_scale: f64,
    /// Initial ρ for the full-ALM method.
    pub rho: f64,
    pub tip_alpha: f64,
    pub tip_beta: f64,
    /// TaskRes residual scale; the trained probe uses `lr0 · alpha²`.
    pub taskres_alpha: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            lambda_scale: one(),
            rho: one(),
            tip_alpha: one(),
            tip_beta: one(),
            taskres_alpha: one(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        for (name, x) in [
            ("lambda_scale", self.lambda_scale),
            ("tip_alpha", self.tip_alpha),
            ("tip_beta", self.tip_beta),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {x}"
                )));
            }
        }
        for (name, x) in [("rho", self.rho), ("taskres_alpha", self.taskres_alpha)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {x}"
                )));
            }
        }
        for m in Method::ALL {
            if let Some(cfg) = m.train_config(self, 0) {
                cfg.validate()
                    .map_err(|e| e.context(format!("method {m}")))?;
            }
        }
        Ok(())
    }
}

fn canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json's map type is ordered by key, so this is field-order free
    let v = serde_json::to_value(value).expect("config serializes");
    serde_json::to_string(&v).expect("value serializes")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash over every hyperparameter that affects `method`.
pub fn config_fingerprint(method: Method, config: &ExperimentConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        method: &'a str,
        train: Option<TrainConfig>,
        tip: Option<(f64, f64)>,
    }
    let key = Key {
        method: method.as_str(),
        train: method.train_config(config, 0),
        tip: (method == Method::Tipadapter).then_some((config.tip_alpha, config.tip_beta)),
    };
    sha256_hex(canonical_json(&key).as_bytes())
}

/// Hash of a bank's exact bits.
pub fn bank_hash(bank: &PrototypeBank) -> String {
    let mut h = Sha256::new();
    h.update((bank.n_classes() as u64).to_le_bytes());
    h.update((bank.dim() as u64).to_le_bytes());
    h.update(bank.temperature_inv.to_bits().to_le_bytes());
    for x in bank.weights.as_slice() {
        h.update(x.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// A trained (or training-free) classifier.
#[derive(Debug, Clone)]
pub enum Fitted {
    Bank(PrototypeBank),
    Tip {
        cache: TipCache,
        anchors: PrototypeBank,
    },
}

impl Fitted {
    /// Per-class scores whose argmax is the prediction.
    pub fn scores(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            Fitted::Bank(bank) => {
                if v.len() != bank.dim() {
                    return Err(Error::shape("scores", bank.dim(), v.len()));
                }
                Ok(bank.weights.iter_rows().map(|w| dot(v, w)).collect())
            }
            Fitted::Tip { cache, anchors } => tip_adapter_logits(cache, anchors, v),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Fitted::Bank(b) => b.n_classes(),
            Fitted::Tip { anchors, .. } => anchors.n_classes(),
        }
    }

    pub fn hash(&self) -> String {
        match self {
            Fitted::Bank(b) => bank_hash(b),
            Fitted::Tip { cache, anchors } => {
                let mut h = Sha256::new();
                h.update(bank_hash(anchors));
                h.update(cache.alpha.to_bits().to_le_bytes());
                h.update(cache.beta.to_bits().to_le_bytes());
                for x in cache.keys().as_slice() {
                    h.update(x.to_bits().to_le_bytes());
                }
                for &l in cache.values().labels() {
                    h.update((l as u64).to_le_bytes());
                }
                hex::encode(h.finalize())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    /// `None` for classes absent from the evaluated split.
    pub per_class: Vec<Option<f64>>,
    pub class_counts: Vec<usize>,
}

fn score_predictions(predicted: &[usize], labels: &[usize], n_classes: usize) -> Result<Accuracy> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("evaluation split"));
    }
    let mut hits = vec![0usize; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (&p, &l) in predicted.iter().zip(labels) {
        counts[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let total: usize = hits.iter().sum();
    Ok(Accuracy {
        accuracy: total as f64 / labels.len() as f64,
        per_class: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
            .collect(),
        class_counts: counts,
    })
}

/// Top-1 and per-class accuracy of a bank (ties go to the lowest class).
pub fn evaluate(bank: &PrototypeBank, test: &EmbeddingSet) -> Result<Accuracy> {
    evaluate_fitted(&Fitted::Bank(bank.clone()), test)
}

/// Like [`evaluate`] for any fitted model. When `test` carries
/// `parent_class_ids`, its class `l` is the model's class `ids[l]` and
/// predictions are restricted to those classes.
pub fn evaluate_fitted(model: &Fitted, test: &EmbeddingSet) -> Result<Accuracy> {
    if test.is_empty() {
        return Err(Error::EmptyInput("evaluation split"));
    }
    let mapping: Option<&[usize]> = match &test.parent_class_ids {
        Some(ids) => {
            if let Some(&bad) = ids.iter().find(|&&i| i >= model.n_classes()) {
                return Err(Error::ClassSpace(format!(
                    "parent class id {bad} outside the model's {} classes",
                    model.n_classes()
                )));
            }
            Some(ids)
        }
        None if test.n_classes() != model.n_classes() => {
            return Err(Error::ClassSpace(format!(
                "split has {} classes, model has {}, and no parent_class_ids mask",
                test.n_classes(),
                model.n_classes()
            )))
        }
        None => None,
    };
    let mut predicted = Vec::with_capacity(test.len());
    for v in test.features.iter_rows() {
        let scores = model.scores(v)?;
        let p = match mapping {
            None => argmax(&scores),
            Some(ids) => {
                let sub: Vec<f64> = ids.iter().map(|&i| scores[i]).collect();
                argmax(&sub)
            }
        };
        predicted.push(p);
    }
    score_predictions(&predicted, &test.labels, test.n_classes())
}

/// Support selection plus training for one (method, seed).
pub fn fit(
    task: &Task,
    method: Method,
    config: &ExperimentConfig,
    shots: usize,
    seed: u64,
) -> Result<(Fitted, Option<TrainTrace>)> {
    if method == Method::ZeroShot {
        return Ok((Fitted::Bank(task.anchors.clone()), None));
    }
    let support = sample_few_shot(&task.train, shots, seed)?;
    fit_support(task, &support, method, config, seed)
}

fn fit_support(
    task: &Task,
    support: &SupportSet,
    method: Method,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Fitted, Option<TrainTrace>)> {
    match method {
        Method::ZeroShot => Ok((Fitted::Bank(task.anchors.clone()), None)),
        Method::Tipadapter => {
            let cache = TipCache::from_support(support, config.tip_alpha, config.tip_beta)?;
            Ok((
                Fitted::Tip {
                    cache,
                    anchors: task.anchors.clone(),
                },
                None,
            ))
        }
        Method::Randlp => {
            let cfg = method.train_config(config, seed).expect("trained method");
            let (bank, trace) = random_lp(&task.anchors, support, &cfg)?;
            Ok((Fitted::Bank(bank), Some(trace)))
        }
        _ => {
            let cfg = method.train_config(config, seed).expect("trained method");
            let (bank, trace) = train_probe(&task.anchors, support, &cfg)?;
            Ok((Fitted::Bank(bank), Some(trace)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task: String,
    pub method: Method,
    pub shots: usize,
    pub seed: u64,
    pub fingerprint: String,
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    /// Mean `||w_c - t_c||` of the final bank; 0 for training-free methods.
    pub mean_drift: f64,
    /// 0 unless timing was requested.
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Worker threads; 0 lets rayon decide.
    pub workers: usize,
    pub timing: bool,
}

fn mean_drift(model: &Fitted, anchors: &PrototypeBank) -> Result<f64> {
    match model {
        Fitted::Bank(bank) => {
            let d = drift_norms(bank, anchors)?;
            Ok(d.iter().sum::<f64>() / d.len() as f64)
        }
        Fitted::Tip { .. } => Ok(0.0),
    }
}

/// One cell of a sweep, with the model and trace it produced.
pub fn run_one_detailed(
    task: &Task,
    method: Method,
    config: &ExperimentConfig,
    shots: usize,
    seed: u64,
    timing: bool,
) -> Result<(RunResult, Fitted, Option<TrainTrace>)> {
    let start = Instant::now();
    let ctx = || {
        format!(
            "task={} method={} shots={} seed={}",
            task.name, method, shots, seed
        )
    };
    let (model, trace) = fit(task, method, config, shots, seed).map_err(|e| e.context(ctx()))?;
    let acc = evaluate_fitted(&model, &task.test).map_err(|e| e.context(ctx()))?;
    let wall_ms = if timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let result = RunResult {
        task: task.name.clone(),
        method,
        shots,
        seed,
        fingerprint: config_fingerprint(method, config),
        accuracy: acc.accuracy,
        per_class: acc.per_class,
        mean_drift: mean_drift(&model, &task.anchors)?,
        wall_ms,
    };
    Ok((result, model, trace))
}

pub fn run_one(
    task: &Task,
    method: Method,
    config: &ExperimentConfig,
    shots: usize,
    seed: u64,
    timing: bool,
) -> Result<RunResult> {
    run_one_detailed(task, method, config, shots, seed, timing).map(|(r, _, _)| r)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))
}

fn sort_results(results: &mut [RunResult]) {
    results.sort_by(|a, b| {
        (&a.task, a.method.as_str(), a.shots, a.seed).cmp(&(
            &b.task,
            b.method.as_str(),
            b.shots,
            b.seed,
        ))
    });
}

/// Every (task, method, shots, seed) combination under one shared config.
pub fn run_benchmark(
    tasks: &[Task],
    methods: &[Method],
    shots: &[usize],
    seeds: &[u64],
    config: &ExperimentConfig,
    options: RunOptions,
) -> Result<Vec<RunResult>> {
    config.validate()?;
    let mut cells = Vec::new();
    for task in tasks {
        for &method in methods {
            for &k in shots {
                for &seed in seeds {
                    cells.push((task, method, k, seed));
                }
            }
        }
    }
    let mut results = pool(options.workers)?.install(|| {
        cells
            .par_iter()
            .map(|&(task, method, k, seed)| run_one(task, method, config, k, seed, options.timing))
            .collect::<Result<Vec<_>>>()
    })?;
    sort_results(&mut results);
    Ok(results)
}

/// Mean over a sample in input order, shifted by the first value so a
/// constant sample averages to itself exactly.
fn mean(xs: &[f64]) -> f64 {
    let x0 = xs[0];
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
fn population_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub task: String,
    pub method: Method,
    pub shots: usize,
    pub seeds: Vec<u64>,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_drift: f64,
    pub mean_wall_ms: f64,
}

/// Per-(task, method, shots) mean and population SD over seeds. Values are
/// reduced in seed order, so the result does not depend on input order.
pub fn summarize(results: &[RunResult]) -> Vec<CellSummary> {
    let mut cells: BTreeMap<(String, &'static str, usize), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        cells
            .entry((r.task.clone(), r.method.as_str(), r.shots))
            .or_default()
            .push(r);
    }
    cells
        .into_values()
        .map(|mut rs| {
            rs.sort_by_key(|r| r.seed);
            let acc: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
            let drift: Vec<f64> = rs.iter().map(|r| r.mean_drift).collect();
            let wall: Vec<f64> = rs.iter().map(|r| r.wall_ms as f64).collect();
            CellSummary {
                task: rs[0].task.clone(),
                method: rs[0].method,
                shots: rs[0].shots,
                seeds: rs.iter().map(|r| r.seed).collect(),
                mean_accuracy: mean(&acc),
                sd_accuracy: population_sd(&acc),
                mean_drift: mean(&drift),
                mean_wall_ms: mean(&wall),
            }
        })
        .collect()
}

pub const RESULTS_CSV_HEADER: &str = "task,method,shots,seed,acc,acc_sd,drift,wall_ms";

/// One row per run; `acc_sd` is the population SD of the run's cell.
pub fn results_csv(results: &[RunResult]) -> String {
    let summaries = summarize(results);
    let sd_of = |r: &RunResult| {
        summaries
            .iter()
            .find(|s| s.task == r.task && s.method == r.method && s.shots == r.shots)
            .map_or(0.0, |s| s.sd_accuracy)
    };
    let mut out = String::from(RESULTS_CSV_HEADER);
    out.push('\n');
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.task,
            r.method,
            r.shots,
            r.seed,
            r.accuracy,
            sd_of(r),
            r.mean_drift,
            r.wall_ms
        );
    }
    out
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: "serializing output".into(),
        source,
    })?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomGenRow {
    pub target: String,
    pub accuracy: f64,
    pub accuracy_sd: f64,
    pub zero_shot: f64,
    /// `accuracy - zero_shot`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomGenTable {
    pub method: Method,
    pub source: String,
    pub shots: usize,
    pub seeds: Vec<u64>,
    /// The source test split, evaluated like any target.
    pub source_row: DomGenRow,
    pub rows: Vec<DomGenRow>,
    /// Hash of the model trained for each seed, taken before and after
    /// all target evaluations.
    pub model_hashes: Vec<(String, String)>,
}

fn check_class_space(source: &Task, target: &Task) -> Result<()> {
    if target.test.dim() != source.anchors.dim() {
        return Err(Error::shape(
            "target dim",
            source.anchors.dim(),
            target.test.dim(),
        ));
    }
    if target.test.parent_class_ids.is_none()
        && target.test.n_classes() != source.anchors.n_classes()
    {
        return Err(Error::ClassSpace(format!(
            "target {} has {} classes, source {} has {}, and no parent_class_ids mask",
            target.name,
            target.test.n_classes(),
            source.name,
            source.anchors.n_classes()
        )));
    }
    Ok(())
}

/// Trains once per seed on the source support and evaluates that same
/// frozen model on the source test split and on every target's test split.
pub fn domain_generalization(
    source: &Task,
    targets: &[Task],
    method: Method,
    config: &ExperimentConfig,
    shots: usize,
    seeds: &[u64],
    options: RunOptions,
) -> Result<DomGenTable> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::EmptyInput("seeds"));
    }
    for t in targets {
        check_class_space(source, t)?;
    }
    let zero_shot = Fitted::Bank(source.anchors.clone());
    let splits: Vec<(&str, &EmbeddingSet)> = std::iter::once((source.name.as_str(), &source.test))
        .chain(targets.iter().map(|t| (t.name.as_str(), &t.test)))
        .collect();

    let mut sorted_seeds = seeds.to_vec();
    sorted_seeds.sort_unstable();
    let per_seed = pool(options.workers)?.install(|| {
        sorted_seeds
            .par_iter()
            .map(|&seed| -> Result<(Vec<f64>, (String, String))> {
                let (model, _) = fit(source, method, config, shots, seed).map_err(|e| {
                    e.context(format!(
                        "source={} method={method} seed={seed}",
                        source.name
                    ))
                })?;
                let before = model.hash();
                let accs = splits
                    .iter()
                    .map(|(name, split)| {
                        evaluate_fitted(&model, split)
                            .map(|a| a.accuracy)
                            .map_err(|e| e.context(format!("target={name}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((accs, (before, model.hash())))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::with_capacity(splits.len());
    for (i, (name, split)) in splits.iter().enumerate() {
        let accs: Vec<f64> = per_seed.iter().map(|(a, _)| a[i]).collect();
        let zs = evaluate_fitted(&zero_shot, split)?.accuracy;
        let accuracy = mean(&accs);
        rows.push(DomGenRow {
            target: name.to_string(),
            accuracy,
            accuracy_sd: population_sd(&accs),
            zero_shot: zs,
            delta: accuracy - zs,
        });
    }
    let source_row = rows.remove(0);
    Ok(DomGenTable {
        method,
        source: source.name.clone(),
        shots,
        seeds: sorted_seeds,
        source_row,
        rows,
        model_hashes: per_seed.into_iter().map(|(_, h)| h).collect(),
    })
}

impl DomGenTable {
    pub const CSV_HEADER: &'static str = "split,method,shots,acc,acc_sd,zero_shot,delta";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in std::iter::once(&self.source_row).chain(&self.rows) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.target, self.method, self.shots, r.accuracy, r.accuracy_sd, r.zero_shot, r.delta
            );
        }
        out
    }
}

/// Hyperparameter overrides, keyed by name.
pub type GridPoint = BTreeMap<String, f64>;

pub const GRID_KEYS: [&str; 9] = [
    "lr0",
    "epochs",
    "momentum",
    "temperature_inv",
    "lambda_scale",
    "rho",
    "tip_alpha",
    "tip_beta",
    "taskres_alpha",
];

/// `config` with the point's overrides applied and validated.
pub fn apply_grid_point(config: &ExperimentConfig, point: &GridPoint) -> Result<ExperimentConfig> {
    let mut c = config.clone();
    for (key, &value) in point {
        match key.as_str() {
            "lr0" => c.train.lr0 = value,
            "epochs" => {
                if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(Error::InvalidConfig(format!(
                        "epochs must be a positive integer, got {value}"
                    )));
                }
                c.train.epochs = value as usize;
            }
            "momentum" => c.train.momentum = value,
            "temperature_inv" => c.train.temperature_inv = value,
            "lambda_scale" => c.lambda_scale = value,
            "rho" => c.rho = value,
            "tip_alpha" => c.tip_alpha = value,
            "tip_beta" => c.tip_beta = value,
            "taskres_alpha" => c.taskres_alpha = value,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown grid key {other:?}; expected one of {GRID_KEYS:?}"
                )))
            }
        }
    }
    c.validate()?;
    Ok(c)
}

/// Parses a grid: a JSON array of objects mapping keys to numbers.
pub fn parse_grid(text: &str) -> Result<Vec<GridPoint>> {
    let grid: Vec<GridPoint> = serde_json::from_str(text).map_err(|source| Error::Json {
        context: "grid".into(),
        source,
    })?;
    if grid.is_empty() {
        return Err(Error::EmptyInput("hyperparameter grid"));
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossShiftMatrix {
    pub method: Method,
    pub tasks: Vec<String>,
    pub shots: usize,
    pub seeds: Vec<u64>,
    pub grid: Vec<GridPoint>,
    /// Index into `grid` picked for each row task by test accuracy.
    pub selected: Vec<usize>,
    /// `grid_accuracy[g][j]`: mean test accuracy of grid point `g` on task `j`.
    pub grid_accuracy: Vec<Vec<f64>>,
    /// Mean ZS-LP test accuracy per task, under the base configuration.
    pub zslp_accuracy: Vec<f64>,
    /// `entries[i][j]`: accuracy on task `j` with task `i`'s pick, minus ZS-LP on `j`.
    pub entries: Vec<Vec<f64>>,
}

/// Oracle hyperparameter transfer. For each row task the grid point with
/// the best mean test accuracy is selected (lowest index on ties); each
/// column task is then trained with that point. All cells share `seeds`.
///
/// The selection looks at test labels on purpose: this protocol exists to
/// measure how badly test-tuned settings transfer.
pub fn cross_shift_matrix(
    tasks: &[Task],
    method: Method,
    grid: &[GridPoint],
    config: &ExperimentConfig,
    shots: usize,
    seeds: &[u64],
    options: RunOptions,
) -> Result<CrossShiftMatrix> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("hyperparameter grid"));
    }
    if tasks.is_empty() {
        return Err(Error::EmptyInput("tasks"));
    }
    if seeds.is_empty() {
        return Err(Error::EmptyInput("seeds"));
    }
    config.validate()?;
    let configs = grid
        .iter()
        .enumerate()
        .map(|(g, p)| apply_grid_point(config, p).map_err(|e| e.context(format!("grid point {g}"))))
        .collect::<Result<Vec<_>>>()?;

    // (config index or None for the ZS-LP baseline, task, seed)
    let mut cells: Vec<(Option<usize>, usize, u64)> = Vec::new();
    for j in 0..tasks.len() {
        for &seed in seeds {
            cells.push((None, j, seed));
            for g in 0..configs.len() {
                cells.push((Some(g), j, seed));
            }
        }
    }
    let accs = pool(options.workers)?.install(|| {
        cells
            .par_iter()
            .map(|&(g, j, seed)| {
                let (m, cfg) = match g {
                    Some(g) => (method, &configs[g]),
                    None => (Method::Zslp, config),
                };
                run_one(&tasks[j], m, cfg, shots, seed, false).map(|r| r.accuracy)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    // (grid point or ZS-LP, column task) -> (seed, accuracy)
    type Cell = (Option<usize>, usize);
    let mut sums: BTreeMap<Cell, Vec<(u64, f64)>> = BTreeMap::new();
    for (&(g, j, seed), &a) in cells.iter().zip(&accs) {
        sums.entry((g, j)).or_default().push((seed, a));
    }
    let cell_mean = |g: Option<usize>, j: usize| {
        let mut v = sums[&(g, j)].clone();
        v.sort_by_key(|&(s, _)| s);
        mean(&v.iter().map(|&(_, a)| a).collect::<Vec<_>>())
    };
    let n = tasks.len();
    let grid_accuracy: Vec<Vec<f64>> = (0..configs.len())
        .map(|g| (0..n).map(|j| cell_mean(Some(g), j)).collect())
        .collect();
    let zslp_accuracy: Vec<f64> = (0..n).map(|j| cell_mean(None, j)).collect();
    let selected: Vec<usize> = (0..n)
        .map(|i| argmax(&grid_accuracy.iter().map(|row| row[i]).collect::<Vec<_>>()))
        .collect();
    let entries = selected
        .iter()
        .map(|&g| {
            (0..n)
                .map(|j| grid_accuracy[g][j] - zslp_accuracy[j])
                .collect()
        })
        .collect();
    let mut sorted_seeds = seeds.to_vec();
    sorted_seeds.sort_unstable();
    Ok(CrossShiftMatrix {
        method,
        tasks: tasks.iter().map(|t| t.name.clone()).collect(),
        shots,
        seeds: sorted_seeds,
        grid: grid.to_vec(),
        selected,
        grid_accuracy,
        zslp_accuracy,
        entries,
    })
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl CrossShiftMatrix {
    /// Rows are the tasks hyperparameters were picked on, columns the tasks
    /// they were applied to.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("selected_on");
        for t in &self.tasks {
            out.push(',');
            out.push_str(t);
        }
        out.push('\n');
        for (t, row) in self.tasks.iter().zip(&self.entries) {
            out.push_str(t);
            for x in row {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }

    /// Heatmap as an SVG document; green above ZS-LP, red below.
    pub fn to_svg(&self) -> String {
        const CELL: usize = 72;
        const LABEL: usize = 120;
        let n = self.tasks.len();
        let (w, h) = (LABEL + CELL * n, LABEL + CELL * n);
        let scale = self
            .entries
            .iter()
            .flatten()
            .fold(0.0f64, |m, x| m.max(x.abs()))
            .max(1e-12);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        for (j, t) in self.tasks.iter().enumerate() {
            let x = LABEL + j * CELL + CELL / 2;
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
                LABEL - 8,
                xml_escape(t)
            );
        }
        for (i, row) in self.entries.iter().enumerate() {
            let y = LABEL + i * CELL;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                LABEL - 8,
                y + CELL / 2 + 4,
                xml_escape(&self.tasks[i])
            );
            for (j, &v) in row.iter().enumerate() {
                let x = LABEL + j * CELL;
                let t = (v.abs() / scale).min(1.0);
                let fade = (255.0 * (1.0 - t)).round() as u8;
                let fill = if v >= 0.0 {
                    format!("rgb({fade},255,{fade})")
                } else {
                    format!("rgb(255,{fade},{fade})")
                };
                let _ = writeln!(
                    s,
                    r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="black"/>"#
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle">{:+.2}</text>"#,
                    x + CELL / 2,
                    y + CELL / 2 + 4,
                    100.0 * v
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}
