//! Experiment driver: configuration, the strategy grid, multi-seed runs,
//! aggregation and CSV output.
//!
//! Every run derives its random streams from its own seed only, so the
//! output of a configuration does not depend on run order or thread count.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{
    train_continual, ClassifierParams, EmbeddingSnapshot, RetrievalStrategy, TrainConfig, UpdateStrategy,
};
use crate::memory::RetrievalConfig;
use crate::metrics::{average_accuracy, average_forgetting};
use crate::numeric::RngStream;
use crate::stream::{generate_synthetic_stream, load_embedding_dataset, TaskStream, TaskStreamSpec};

// Stream ids under one run seed.
const STREAM_DATA: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_IID: u64 = 4;

/// A named point of the update x retrieval grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// No memory, no replay.
    FineTune,
    /// No memory; the training set is shuffled across tasks first.
    IidOnline,
    /// Reservoir update, random retrieval.
    Er,
    /// Shapley-value update, random retrieval.
    SvUpd,
    /// Reservoir update, max/min adversarial Shapley retrieval.
    AsvRet,
    /// Reservoir update, mean adversarial Shapley retrieval.
    AsvMuRet,
    /// Shapley-value update, max/min adversarial Shapley retrieval.
    Aser,
    /// Shapley-value update, mean adversarial Shapley retrieval.
    AserMu,
    /// Shapley-value update, nearest-distance retrieval.
    Dist,
    /// Shapley-value update, mean-distance retrieval.
    DistMu,
}

impl Strategy {
    pub const ALL: [Strategy; 10] = [
        Strategy::FineTune,
        Strategy::IidOnline,
        Strategy::Er,
        Strategy::SvUpd,
        Strategy::AsvRet,
        Strategy::AsvMuRet,
        Strategy::Aser,
        Strategy::AserMu,
        Strategy::Dist,
        Strategy::DistMu,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::FineTune => "fine_tune",
            Strategy::IidOnline => "iid_online",
            Strategy::Er => "er",
            Strategy::SvUpd => "sv_upd",
            Strategy::AsvRet => "asv_ret",
            Strategy::AsvMuRet => "asv_mu_ret",
            Strategy::Aser => "aser",
            Strategy::AserMu => "aser_mu",
            Strategy::Dist => "dist",
            Strategy::DistMu => "dist_mu",
        }
    }

    pub fn uses_memory(self) -> bool {
        !matches!(self, Strategy::FineTune | Strategy::IidOnline)
    }

    pub fn update(self) -> UpdateStrategy {
        match self {
            Strategy::FineTune | Strategy::IidOnline | Strategy::Er | Strategy::AsvRet | Strategy::AsvMuRet => {
                UpdateStrategy::Reservoir
            }
            Strategy::SvUpd | Strategy::Aser | Strategy::AserMu | Strategy::Dist | Strategy::DistMu => {
                UpdateStrategy::Sv
            }
        }
    }

    pub fn retrieval(self) -> RetrievalStrategy {
        match self {
            Strategy::FineTune | Strategy::IidOnline => RetrievalStrategy::None,
            Strategy::Er | Strategy::SvUpd => RetrievalStrategy::Random,
            Strategy::AsvRet | Strategy::Aser => RetrievalStrategy::Aser,
            Strategy::AsvMuRet | Strategy::AserMu => RetrievalStrategy::AserMu,
            Strategy::Dist => RetrievalStrategy::Dist,
            Strategy::DistMu => RetrievalStrategy::DistMu,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim())
            .ok_or_else(|| {
                let known: Vec<&str> = Strategy::ALL.iter().map(|s| s.as_str()).collect();
                Error::Config(format!("unknown strategy {s:?} (known: {})", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(TaskStreamSpec),
    Csv { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(TaskStreamSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Width of the hidden (latent) layer.
    pub hidden_dim: usize,
    pub memory_capacity: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 10,
            hidden_dim: 64,
            memory_capacity: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train: TrainSettings,
    pub retrieval: RetrievalConfig,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    pub output_dir: PathBuf,
    /// Write latent embeddings at every task boundary.
    pub dump_embeddings: bool,
    /// Fill the `wall_seconds` column with measured times. Off by default so
    /// reruns produce identical files.
    pub record_wall_time: bool,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            train: TrainSettings::default(),
            retrieval: RetrievalConfig::default(),
            seeds: (0..15).collect(),
            strategies: Strategy::ALL.to_vec(),
            output_dir: PathBuf::from("results"),
            dump_embeddings: false,
            record_wall_time: false,
            threads: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // dataset paths are relative to the config file
        if let DataSource::Csv { path: data } = &mut cfg.data {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.strategies {
            if !seen.insert(*s) {
                return Err(Error::Config(format!("strategy {s} listed twice")));
            }
        }
        let mut seeds = HashSet::new();
        for s in &self.seeds {
            if !seeds.insert(*s) {
                return Err(Error::Config(format!("seed {s} listed twice")));
            }
        }
        if self.train.hidden_dim == 0 {
            return Err(Error::Config("train.hidden_dim must be at least 1".into()));
        }
        self.train_config(Strategy::Er).validate()?;
        match &self.data {
            DataSource::Synthetic(spec) => spec.validate(),
            DataSource::Csv { path } => {
                let stream = load_embedding_dataset(path, &mut RngStream::new(0))?;
                if stream.num_tasks() == 0 {
                    return Err(Error::Config(format!("{}: no samples", path.display())));
                }
                if stream.test_sets().iter().any(Vec::is_empty) {
                    return Err(Error::Config(format!("{}: every task needs test rows", path.display())));
                }
                Ok(())
            }
        }
    }

    pub fn train_config(&self, strategy: Strategy) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            update: strategy.update(),
            retrieval: strategy.retrieval(),
            memory_capacity: if strategy.uses_memory() {
                self.train.memory_capacity
            } else {
                0
            },
            retrieval_cfg: self.retrieval,
            record_embeddings: self.dump_embeddings,
        }
    }

    fn stream_for(&self, seed: u64) -> Result<TaskStream> {
        let mut rng = RngStream::derive(seed, STREAM_DATA);
        match &self.data {
            DataSource::Synthetic(spec) => generate_synthetic_stream(spec, &mut rng),
            DataSource::Csv { path } => load_embedding_dataset(path, &mut rng),
        }
    }
}

/// Parses `a..b` (half-open), `a..=b` (inclusive) or a comma-separated list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seeds {text:?}"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = text.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        text.split(',').map(num).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Parses a comma-separated strategy list.
pub fn parse_strategies(text: &str) -> Result<Vec<Strategy>> {
    text.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// Outcome of one (strategy, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub seed: u64,
    pub memory_size: usize,
    pub avg_accuracy: f64,
    /// Undefined for single-task streams.
    pub avg_forgetting: Option<f64>,
    /// Accuracy on each task after the last task.
    pub final_accuracies: Vec<f64>,
    pub wall_seconds: f64,
    pub retrieval_fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    /// Embedding snapshots per record, empty unless requested.
    pub embeddings: Vec<Vec<EmbeddingSnapshot>>,
}

fn run_one(cfg: &ExperimentConfig, strategy: Strategy, seed: u64) -> Result<(RunRecord, Vec<EmbeddingSnapshot>)> {
    let start = Instant::now();
    let mut stream = cfg.stream_for(seed)?;
    if strategy == Strategy::IidOnline {
        stream = stream.into_iid(&mut RngStream::derive(seed, STREAM_IID));
    }
    let params = ClassifierParams::init(
        stream.dim(),
        cfg.train.hidden_dim,
        stream.num_classes(),
        &mut RngStream::derive(seed, STREAM_INIT),
    );
    let train_cfg = cfg.train_config(strategy);
    let outcome = train_continual(&mut stream, &train_cfg, params, &mut RngStream::derive(seed, STREAM_TRAIN))?;

    let t = outcome.accuracy.tasks();
    let avg_accuracy = average_accuracy(&outcome.accuracy, t)?;
    let avg_forgetting = if t >= 2 {
        Some(average_forgetting(&outcome.accuracy, t)?)
    } else {
        None
    };
    let record = RunRecord {
        strategy,
        seed,
        memory_size: train_cfg.memory_capacity,
        avg_accuracy,
        avg_forgetting,
        final_accuracies: outcome.accuracy.row(t).map(<[f64]>::to_vec).unwrap_or_default(),
        wall_seconds: start.elapsed().as_secs_f64(),
        retrieval_fallbacks: outcome.retrieval_fallbacks,
    };
    Ok((record, outcome.embeddings))
}

/// Runs every (strategy, seed) pair, records ordered by strategy then seed.
pub fn run_experiment_full(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pairs: Vec<(Strategy, u64)> = cfg
        .strategies
        .iter()
        .flat_map(|&st| cfg.seeds.iter().map(move |&seed| (st, seed)))
        .collect();
    let work = || -> Result<Vec<_>> { pairs.par_iter().map(|&(st, seed)| run_one(cfg, st, seed)).collect() };
    let results = if cfg.threads == 0 {
        work()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?
    };
    let (records, embeddings) = results.into_iter().unzip();
    Ok(ExperimentOutput { records, embeddings })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    Ok(run_experiment_full(cfg)?.records)
}

/// Mean, sample standard deviation and normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
}

pub fn summarize(values: &[f64]) -> Result<Stat> {
    if values.is_empty() {
        return Err(Error::Empty("aggregation group"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Stat {
        mean,
        std,
        ci95: 1.96 * std / n.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub strategy: Strategy,
    pub runs: usize,
    pub memory_size: usize,
    pub accuracy: Stat,
    pub forgetting: Option<Stat>,
}

/// Per-strategy statistics, in order of first appearance.
pub fn aggregate_runs(records: &[RunRecord]) -> Result<Vec<Aggregate>> {
    let mut order: Vec<Strategy> = Vec::new();
    for r in records {
        if !order.contains(&r.strategy) {
            order.push(r.strategy);
        }
    }
    order
        .into_iter()
        .map(|strategy| {
            let group: Vec<&RunRecord> = records.iter().filter(|r| r.strategy == strategy).collect();
            let acc: Vec<f64> = group.iter().map(|r| r.avg_accuracy).collect();
            let forgetting: Option<Vec<f64>> = group.iter().map(|r| r.avg_forgetting).collect();
            Ok(Aggregate {
                strategy,
                runs: group.len(),
                memory_size: group[0].memory_size,
                accuracy: summarize(&acc)?,
                forgetting: forgetting.map(|f| summarize(&f)).transpose()?,
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders `runs.csv`.
pub fn runs_csv(records: &[RunRecord], include_wall_time: bool) -> String {
    let tasks = records.iter().map(|r| r.final_accuracies.len()).max().unwrap_or(0);
    let mut out = String::from("strategy,seed,M,avg_accuracy,avg_forgetting");
    for t in 1..=tasks {
        out.push_str(&format!(",acc_task_{t}"));
    }
    out.push_str(",wall_seconds\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.strategy,
            r.seed,
            r.memory_size,
            r.avg_accuracy,
            opt(r.avg_forgetting)
        ));
        for t in 0..tasks {
            out.push(',');
            if let Some(a) = r.final_accuracies.get(t) {
                out.push_str(&a.to_string());
            }
        }
        let wall = if include_wall_time { r.wall_seconds } else { 0.0 };
        out.push_str(&format!(",{wall}\n"));
    }
    out
}

/// Renders `summary.csv`.
pub fn summary_csv(aggregates: &[Aggregate]) -> String {
    let mut out = String::from(
        "strategy,runs,M,acc_mean,acc_std,acc_ci95,forgetting_mean,forgetting_std,forgetting_ci95\n",
    );
    for a in aggregates {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            a.strategy,
            a.runs,
            a.memory_size,
            a.accuracy.mean,
            a.accuracy.std,
            a.accuracy.ci95,
            opt(a.forgetting.map(|f| f.mean)),
            opt(a.forgetting.map(|f| f.std)),
            opt(a.forgetting.map(|f| f.ci95)),
        ));
    }
    out
}

/// Writes `runs.csv` and `summary.csv` into `dir`, creating it if needed.
pub fn write_results(records: &[RunRecord], aggregates: &[Aggregate], dir: &Path, include_wall_time: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("runs.csv"), &runs_csv(records, include_wall_time))?;
    write_file(&dir.join("summary.csv"), &summary_csv(aggregates))
}

/// Writes one CSV per task boundary under `dir/embeddings/`.
pub fn write_embeddings(output: &ExperimentOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let base = dir.join("embeddings");
    let mut written = Vec::new();
    for (record, snapshots) in output.records.iter().zip(&output.embeddings) {
        for snap in snapshots {
            if written.is_empty() {
                fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
            }
            let dim = snap.rows.first().map_or(0, |r| r.latent.len());
            let mut out = String::from("stream_index,label,source");
            for k in 0..dim {
                out.push_str(&format!(",l{k}"));
            }
            out.push('\n');
            for row in &snap.rows {
                out.push_str(&format!("{},{},{}", row.stream_index, row.label, row.source.as_str()));
                for v in &row.latent {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
            let path = base.join(format!("{}_seed{}_task{}.csv", record.strategy, record.seed, snap.task + 1));
            write_file(&path, &out)?;
            written.push(path);
        }
    }
    Ok(written)
}
