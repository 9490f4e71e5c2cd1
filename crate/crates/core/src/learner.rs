//! One-hidden-layer rectifier network trained by plain SGD, and the online
//! replay training loop.
//!
//! The hidden layer is the feature extractor: its activations are the latent
//! embeddings used by the Shapley-value machinery. The output layer is a
//! linear softmax head.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn_shapley::LabeledEmbedding;
use crate::memory::{retrieve_aser, retrieve_random, FeatureExtractor, MemoryBuffer, RetrievalConfig, Sample};
use crate::metrics::AccuracyMatrix;
use crate::numeric::{ensure_finite, RngStream};
use crate::scoring::ScoreVariant;
use crate::stream::TaskStream;

/// Network weights. Matrices are row-major: `w1` is `hidden x input`,
/// `w2` is `classes x hidden`. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub latent: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ClassifierParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            classes,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; classes * hidden_dim],
            b2: vec![0.0; classes],
        }
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(input_dim: usize, hidden_dim: usize, classes: usize, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim, classes);
        let a1 = 1.0 / (input_dim.max(1) as f64).sqrt();
        let a2 = 1.0 / (hidden_dim.max(1) as f64).sqrt();
        for w in p.w1.iter_mut().chain(p.b1.iter_mut()) {
            *w = rng.uniform_range(-a1, a1);
        }
        for w in p.w2.iter_mut().chain(p.b2.iter_mut()) {
            *w = rng.uniform_range(-a2, a2);
        }
        p
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat view in the order `w1, b1, w2, b2`.
    pub fn flatten(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    /// Overwrites every parameter from a flat slice in `flatten` order.
    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: flat.len(),
            });
        }
        for (p, v) in self.params_mut().zip(flat) {
            *p = *v;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        ensure_finite(x, "input features")
    }

    /// Hidden pre-activations `W1 x + b1`.
    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.w1
            .chunks_exact(self.input_dim.max(1))
            .zip(&self.b1)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn head(&self, latent: &[f64]) -> Vec<f64> {
        self.w2
            .chunks_exact(self.hidden_dim.max(1))
            .zip(&self.b2)
            .map(|(row, b)| b + row.iter().zip(latent).map(|(w, h)| w * h).sum::<f64>())
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let latent: Vec<f64> = self.pre_activation(x).into_iter().map(|z| z.max(0.0)).collect();
        let logits = self.head(&latent);
        let probs = softmax(&logits);
        Ok(Forward { latent, logits, probs })
    }

    /// Predicted class: argmax of the logits, ties to the lower class id.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let f = self.forward(x)?;
        let mut best = 0;
        for (c, &z) in f.logits.iter().enumerate() {
            if z > f.logits[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// Mean cross-entropy over `batch` and its exact gradient.
    pub fn loss_and_gradients(&self, batch: &[Sample]) -> Result<(f64, ClassifierParams)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.classes);
        let mut grads = Self::zeros(d, h, c);
        let mut loss = 0.0;
        for s in batch {
            if s.label >= c {
                return Err(Error::invalid(format!("label {} outside {c} classes", s.label)));
            }
            self.check_input(&s.features)?;
            let pre = self.pre_activation(&s.features);
            let latent: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
            let logits = self.head(&latent);
            let lse = log_sum_exp(&logits);
            loss += lse - logits[s.label];

            // dL/dlogits = softmax - onehot
            let mut dlogits: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
            dlogits[s.label] -= 1.0;

            let mut dlatent = vec![0.0; h];
            for (k, &g) in dlogits.iter().enumerate() {
                grads.b2[k] += g;
                let row = &self.w2[k * h..(k + 1) * h];
                let grow = &mut grads.w2[k * h..(k + 1) * h];
                for j in 0..h {
                    grow[j] += g * latent[j];
                    dlatent[j] += g * row[j];
                }
            }
            for j in 0..h {
                if pre[j] <= 0.0 {
                    continue;
                }
                let g = dlatent[j];
                grads.b1[j] += g;
                let grow = &mut grads.w1[j * d..(j + 1) * d];
                for (gw, x) in grow.iter_mut().zip(&s.features) {
                    *gw += g * x;
                }
            }
        }
        let n = batch.len() as f64;
        grads.params_mut().for_each(|g| *g /= n);
        Ok((loss / n, grads))
    }

    /// `p <- p - lr * g` for every parameter.
    pub fn sgd_step(&mut self, grads: &ClassifierParams, lr: f64) -> Result<()> {
        if grads.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: grads.len(),
            });
        }
        for (p, g) in self.params_mut().zip(grads.params()) {
            *p -= lr * g;
        }
        Ok(())
    }

    /// Latent embeddings of `samples`, labels carried through.
    pub fn extract_features(&self, samples: &[Sample]) -> Result<Vec<LabeledEmbedding>> {
        self.embed_samples(samples)
    }

    /// Fraction of `test_set` classified correctly.
    pub fn evaluate(&self, test_set: &[Sample]) -> Result<f64> {
        if test_set.is_empty() {
            return Err(Error::Empty("test set"));
        }
        let mut correct = 0usize;
        for s in test_set {
            if self.predict(&s.features)? == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / test_set.len() as f64)
    }
}

impl FeatureExtractor for ClassifierParams {
    fn embed(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        Ok(self.pre_activation(features).into_iter().map(|z| z.max(0.0)).collect())
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStrategy {
    Reservoir,
    Sv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalStrategy {
    None,
    Random,
    Aser,
    AserMu,
    Dist,
    DistMu,
}

impl RetrievalStrategy {
    pub fn score_variant(self) -> Option<ScoreVariant> {
        match self {
            RetrievalStrategy::None | RetrievalStrategy::Random => None,
            RetrievalStrategy::Aser => Some(ScoreVariant::Asv),
            RetrievalStrategy::AserMu => Some(ScoreVariant::AsvMu),
            RetrievalStrategy::Dist => Some(ScoreVariant::Dist),
            RetrievalStrategy::DistMu => Some(ScoreVariant::DistMu),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub update: UpdateStrategy,
    pub retrieval: RetrievalStrategy,
    pub memory_capacity: usize,
    pub retrieval_cfg: RetrievalConfig,
    /// Capture latent embeddings at every task boundary.
    pub record_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 10,
            update: UpdateStrategy::Reservoir,
            retrieval: RetrievalStrategy::Random,
            memory_capacity: 100,
            retrieval_cfg: RetrievalConfig::default(),
            record_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.retrieval_cfg.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Memory,
    Input,
    Retrieved,
}

impl EmbeddingSource {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingSource::Memory => "memory",
            EmbeddingSource::Input => "input",
            EmbeddingSource::Retrieved => "retrieved",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub stream_index: u64,
    pub label: usize,
    pub source: EmbeddingSource,
    pub latent: Vec<f64>,
}

/// Latent snapshot taken on the last batch of a task, before the SGD step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSnapshot {
    pub task: usize,
    pub rows: Vec<EmbeddingRow>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ClassifierParams,
    pub memory: MemoryBuffer,
    pub accuracy: AccuracyMatrix,
    /// Scored retrievals that had to fall back to uniform sampling.
    pub retrieval_fallbacks: usize,
    pub embeddings: Vec<EmbeddingSnapshot>,
}

fn snapshot(
    params: &ClassifierParams,
    task: usize,
    memory: &MemoryBuffer,
    input: &[Sample],
    retrieved: &[Sample],
) -> Result<EmbeddingSnapshot> {
    let mut rows = Vec::new();
    for (source, samples) in [
        (EmbeddingSource::Memory, memory.slots()),
        (EmbeddingSource::Input, input),
        (EmbeddingSource::Retrieved, retrieved),
    ] {
        for s in samples {
            rows.push(EmbeddingRow {
                stream_index: s.stream_index,
                label: s.label,
                source,
                latent: params.embed(&s.features)?,
            });
        }
    }
    Ok(EmbeddingSnapshot { task, rows })
}

/// Single pass over `stream` with replay.
///
/// Per incoming batch: retrieve a replay batch from memory, take one SGD step
/// on the union, then update memory with the incoming batch. After the last
/// batch of each task the model is evaluated on the test sets of all tasks
/// reached so far, producing one accuracy row.
pub fn train_continual(
    stream: &mut TaskStream,
    cfg: &TrainConfig,
    mut params: ClassifierParams,
    rng: &mut RngStream,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut memory = MemoryBuffer::new(cfg.memory_capacity);
    let mut accuracy = AccuracyMatrix::new();
    let mut fallbacks = 0usize;
    let mut embeddings = Vec::new();
    let b_m = cfg.retrieval_cfg.memory_batch_size;

    while let Some(batch) = stream.next_batch(cfg.batch_size) {
        let input = batch.samples;
        let replay: Vec<Sample> = if memory.is_empty() {
            Vec::new()
        } else {
            match cfg.retrieval {
                RetrievalStrategy::None => Vec::new(),
                RetrievalStrategy::Random => retrieve_random(&memory, b_m, rng)?,
                scored => {
                    let variant = scored.score_variant().expect("scored strategy");
                    let r = retrieve_aser(&memory, &input, &cfg.retrieval_cfg, variant, &params, rng)?;
                    if r.fell_back {
                        fallbacks += 1;
                    }
                    r.samples
                }
            }
        };

        if cfg.record_embeddings && batch.ends_task {
            embeddings.push(snapshot(&params, accuracy.tasks(), &memory, &input, &replay)?);
        }

        let mut combined = input.clone();
        combined.extend(replay);
        let (_, grads) = params.loss_and_gradients(&combined)?;
        params.sgd_step(&grads, cfg.learning_rate)?;

        match cfg.update {
            UpdateStrategy::Reservoir => memory.reservoir_update(&input, rng),
            UpdateStrategy::Sv => memory.sv_update(&input, &cfg.retrieval_cfg, &params, rng)?,
        }

        if batch.ends_task {
            let reached = accuracy.tasks() + 1;
            let row = stream.test_sets()[..reached]
                .iter()
                .map(|t| params.evaluate(t))
                .collect::<Result<Vec<_>>>()?;
            debug!("task {reached}: accuracy {row:?}");
            accuracy.push_row(row)?;
        }
    }
    if fallbacks > 0 {
        debug!("{fallbacks} scored retrievals fell back to random sampling");
    }
    Ok(TrainOutcome {
        params,
        memory,
        accuracy,
        retrieval_fallbacks: fallbacks,
        embeddings,
    })
}
