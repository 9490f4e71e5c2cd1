//! Replay memory: storage, the two update policies (reservoir and
//! Shapley-value based) and the retrieval policies (uniform random and the
//! scored retrieval that ranks memory candidates in latent space).
//!
//! Every random choice is made over samples ordered by `stream_index`, never
//! by slot position, so outputs depend on buffer contents and the random
//! stream only.

use std::collections::{BTreeMap, HashSet};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn_shapley::{knn_sv_matrix, LabeledEmbedding};
use crate::numeric::{sample_without_replacement, RngStream};
use crate::scoring::{asv, asv_mu, dist_mu_score, dist_score, ScoreVariant};

/// One labelled instance from the stream. `task_id` is bookkeeping for the
/// evaluation harness; no update or retrieval policy reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub stream_index: u64,
    pub features: Vec<f64>,
    pub label: usize,
    pub task_id: usize,
}

/// Maps raw features into the latent space where neighbours are measured.
pub trait FeatureExtractor {
    fn embed(&self, features: &[f64]) -> Result<Vec<f64>>;

    fn embed_samples(&self, samples: &[Sample]) -> Result<Vec<LabeledEmbedding>> {
        samples
            .iter()
            .map(|s| Ok(LabeledEmbedding::new(self.embed(&s.features)?, s.label)))
            .collect()
    }
}

/// Uses raw features as the latent space.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn embed(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(features.to_vec())
    }
}

impl<F> FeatureExtractor for F
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    fn embed(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self(features))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Samples replayed per step.
    pub memory_batch_size: usize,
    /// Evaluation subsample size per class present in memory.
    pub subsample_per_class: usize,
    /// Upper bound on the evaluation subsample size.
    pub subsample_max: usize,
    /// Memory candidates scored per retrieval.
    pub candidate_size: usize,
    /// Neighbourhood size of the KNN utility.
    pub knn_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            memory_batch_size: 10,
            subsample_per_class: 5,
            subsample_max: 50,
            candidate_size: 100,
            knn_k: 5,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("memory_batch_size", self.memory_batch_size),
            ("subsample_per_class", self.subsample_per_class),
            ("subsample_max", self.subsample_max),
            ("candidate_size", self.candidate_size),
            ("knn_k", self.knn_k),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("retrieval.{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Evaluation subsample size for a memory holding `classes` classes.
    pub fn subsample_size(&self, classes: usize) -> usize {
        (self.subsample_per_class * classes.max(1)).min(self.subsample_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    capacity: usize,
    slots: Vec<Sample>,
    seen: u64,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            slots: Vec::with_capacity(capacity),
            seen: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() >= self.capacity
    }

    /// Number of stream samples offered to the buffer so far.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn slots(&self) -> &[Sample] {
        &self.slots
    }

    /// Distinct labels currently stored, ascending.
    pub fn classes(&self) -> Vec<usize> {
        let mut labels: Vec<usize> = self.slots.iter().map(|s| s.label).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    /// Appends batch samples while there is room and returns the rest.
    fn fill<'a>(&mut self, batch: &'a [Sample]) -> &'a [Sample] {
        let room = self.capacity.saturating_sub(self.slots.len()).min(batch.len());
        self.slots.extend_from_slice(&batch[..room]);
        self.seen += room as u64;
        &batch[room..]
    }

    /// Reservoir sampling: the sample at global position `n` (0-based)
    /// replaces a uniformly chosen slot with probability `M / (n + 1)`.
    pub fn reservoir_update(&mut self, batch: &[Sample], rng: &mut RngStream) {
        let rest = self.fill(batch);
        for sample in rest {
            if self.capacity > 0 {
                let j = rng.index((self.seen + 1) as usize);
                if j < self.capacity {
                    self.slots[j] = sample.clone();
                }
            }
            self.seen += 1;
        }
    }

    /// Shapley-value update. Once the buffer is full, incoming samples and the
    /// memory outside a balanced evaluation subsample are valued by their
    /// average KNN Shapley value against that subsample; each incoming sample,
    /// in stream order, replaces the lowest-valued replaceable slot if it is
    /// worth strictly more, and is dropped otherwise.
    pub fn sv_update<E: FeatureExtractor + ?Sized>(
        &mut self,
        batch: &[Sample],
        cfg: &RetrievalConfig,
        extractor: &E,
        rng: &mut RngStream,
    ) -> Result<()> {
        let rest = self.fill(batch);
        if rest.is_empty() {
            return Ok(());
        }
        self.seen += rest.len() as u64;
        if self.capacity == 0 {
            return Ok(());
        }

        let n_sub = cfg.subsample_size(self.classes().len());
        let sub_slots = balanced_subsample_slots(self, n_sub, rng)?;
        let in_sub: HashSet<usize> = sub_slots.iter().copied().collect();
        let mut replaceable: Vec<usize> = (0..self.slots.len()).filter(|i| !in_sub.contains(i)).collect();
        if replaceable.is_empty() {
            debug!("sv_update: evaluation subsample covers the whole memory, batch dropped");
            return Ok(());
        }
        // slot order keeps the argmin tie-break on the lower slot index
        replaceable.sort_unstable();

        let eval: Vec<Sample> = sub_slots.iter().map(|&i| self.slots[i].clone()).collect();
        let eval = extractor.embed_samples(&eval)?;
        let mut candidates: Vec<Sample> = replaceable.iter().map(|&i| self.slots[i].clone()).collect();
        candidates.extend_from_slice(rest);
        let candidates = extractor.embed_samples(&candidates)?;
        let values = knn_sv_matrix(&candidates, &eval, cfg.knn_k)?.averages();

        let (mem_values, input_values) = values.split_at(replaceable.len());
        let mut slot_value: Vec<f64> = mem_values.to_vec();
        for (sample, &value) in rest.iter().zip(input_values) {
            let (pos, &lowest) = slot_value
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                .expect("non-empty");
            if value > lowest {
                self.slots[replaceable[pos]] = sample.clone();
                slot_value[pos] = value;
            }
        }
        Ok(())
    }
}

/// Stored slots grouped by label (ascending), each group ordered by
/// `stream_index`.
fn slots_by_class(buffer: &MemoryBuffer) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in buffer.slots.iter().enumerate() {
        groups.entry(s.label).or_default().push(i);
    }
    for members in groups.values_mut() {
        members.sort_by_key(|&i| buffer.slots[i].stream_index);
    }
    groups
}

/// Slot indices of a class-balanced subsample of at most `n_sub` samples.
///
/// Each class present gets `n_sub / classes` samples (or all it has); any
/// unused budget is then handed out one sample at a time, cycling over the
/// classes that still have unpicked samples in ascending label order.
pub fn balanced_subsample_slots(buffer: &MemoryBuffer, n_sub: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if buffer.is_empty() {
        return Err(Error::Empty("memory buffer"));
    }
    let groups = slots_by_class(buffer);
    let quota = n_sub / groups.len();

    let mut picked = Vec::with_capacity(n_sub);
    // unpicked members of each class, in stream order
    let mut leftovers: Vec<Vec<usize>> = Vec::with_capacity(groups.len());
    for members in groups.values() {
        let take = quota.min(members.len());
        let chosen = sample_without_replacement(rng, members.len(), take)?;
        let chosen_set: HashSet<usize> = chosen.iter().copied().collect();
        picked.extend(chosen.iter().map(|&p| members[p]));
        leftovers.push(
            (0..members.len())
                .filter(|p| !chosen_set.contains(p))
                .map(|p| members[p])
                .collect(),
        );
    }

    let mut budget = n_sub - picked.len();
    while budget > 0 && leftovers.iter().any(|l| !l.is_empty()) {
        for pool in leftovers.iter_mut() {
            if budget == 0 {
                break;
            }
            if pool.is_empty() {
                continue;
            }
            let p = rng.index(pool.len());
            picked.push(pool.remove(p));
            budget -= 1;
        }
    }
    Ok(picked)
}

/// Class-balanced subsample of the memory (see [`balanced_subsample_slots`]).
pub fn balanced_subsample(buffer: &MemoryBuffer, n_sub: usize, rng: &mut RngStream) -> Result<Vec<Sample>> {
    Ok(balanced_subsample_slots(buffer, n_sub, rng)?
        .into_iter()
        .map(|i| buffer.slots[i].clone())
        .collect())
}

/// Draws `k` distinct slots from `pool`, uniformly, after ordering the pool
/// by stream index.
fn draw_slots(buffer: &MemoryBuffer, mut pool: Vec<usize>, k: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    pool.sort_by_key(|&i| buffer.slots[i].stream_index);
    let k = k.min(pool.len());
    Ok(sample_without_replacement(rng, pool.len(), k)?
        .into_iter()
        .map(|p| pool[p])
        .collect())
}

/// `min(b_m, |memory|)` distinct samples drawn uniformly.
pub fn retrieve_random(buffer: &MemoryBuffer, b_m: usize, rng: &mut RngStream) -> Result<Vec<Sample>> {
    if buffer.is_empty() {
        return Err(Error::Empty("memory buffer"));
    }
    let slots = draw_slots(buffer, (0..buffer.len()).collect(), b_m, rng)?;
    Ok(slots.into_iter().map(|i| buffer.slots[i].clone()).collect())
}

/// Outcome of a scored retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub samples: Vec<Sample>,
    /// True when scoring was skipped and samples were drawn uniformly.
    pub fell_back: bool,
}

/// Scored retrieval.
///
/// Draws a balanced evaluation subsample from memory and up to
/// `candidate_size` candidates from the rest, embeds everything with
/// `extractor`, scores the candidates with `variant` and returns the
/// `memory_batch_size` best (ties to the lower stream index). When fewer
/// candidates than requested exist the batch is padded with random memory
/// samples. A buffer that is not yet full, or that has no samples outside
/// the subsample, is served by [`retrieve_random`] instead.
pub fn retrieve_aser<E: FeatureExtractor + ?Sized>(
    buffer: &MemoryBuffer,
    input_batch: &[Sample],
    cfg: &RetrievalConfig,
    variant: ScoreVariant,
    extractor: &E,
    rng: &mut RngStream,
) -> Result<Retrieval> {
    if buffer.is_empty() {
        return Err(Error::Empty("memory buffer"));
    }
    if input_batch.is_empty() {
        return Err(Error::Empty("input batch"));
    }
    let b_m = cfg.memory_batch_size;
    if !buffer.is_full() {
        return Ok(Retrieval {
            samples: retrieve_random(buffer, b_m, rng)?,
            fell_back: true,
        });
    }

    let n_sub = cfg.subsample_size(buffer.classes().len());
    let sub_slots = balanced_subsample_slots(buffer, n_sub, rng)?;
    let in_sub: HashSet<usize> = sub_slots.iter().copied().collect();
    let outside: Vec<usize> = (0..buffer.len()).filter(|i| !in_sub.contains(i)).collect();
    if outside.is_empty() {
        debug!("retrieve_aser: no candidates outside the evaluation subsample, using random retrieval");
        return Ok(Retrieval {
            samples: retrieve_random(buffer, b_m, rng)?,
            fell_back: true,
        });
    }
    let cand_slots = draw_slots(buffer, outside, cfg.candidate_size, rng)?;

    let gather = |slots: &[usize]| -> Vec<Sample> { slots.iter().map(|&i| buffer.slots[i].clone()).collect() };
    let input_emb = extractor.embed_samples(input_batch)?;
    let sub_emb = extractor.embed_samples(&gather(&sub_slots))?;
    let cand_emb = extractor.embed_samples(&gather(&cand_slots))?;

    let scores = match variant {
        ScoreVariant::Asv | ScoreVariant::AsvMu => {
            let sv_mem = knn_sv_matrix(&cand_emb, &sub_emb, cfg.knn_k)?;
            let sv_input = knn_sv_matrix(&cand_emb, &input_emb, cfg.knn_k)?;
            if variant == ScoreVariant::Asv {
                asv(&sv_mem, &sv_input)?
            } else {
                asv_mu(&sv_mem, &sv_input)?
            }
        }
        ScoreVariant::Dist => dist_score(&cand_emb, &sub_emb, &input_emb)?,
        ScoreVariant::DistMu => dist_mu_score(&cand_emb, &sub_emb, &input_emb)?,
    }
    .scores;

    let mut ranked: Vec<usize> = (0..cand_slots.len()).collect();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| buffer.slots[cand_slots[a]].stream_index.cmp(&buffer.slots[cand_slots[b]].stream_index))
    });
    let mut chosen: Vec<usize> = ranked.into_iter().take(b_m).map(|r| cand_slots[r]).collect();

    let target = b_m.min(buffer.len());
    if chosen.len() < target {
        let taken: HashSet<usize> = chosen.iter().copied().collect();
        let pool: Vec<usize> = (0..buffer.len()).filter(|i| !taken.contains(i)).collect();
        let extra = draw_slots(buffer, pool, target - chosen.len(), rng)?;
        chosen.extend(extra);
    }
    Ok(Retrieval {
        samples: gather(&chosen),
        fell_back: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(idx: u64, x: &[f64], label: usize) -> Sample {
        Sample {
            stream_index: idx,
            features: x.to_vec(),
            label,
            task_id: 0,
        }
    }

    fn stream(n: u64, label_of: impl Fn(u64) -> usize) -> Vec<Sample> {
        (0..n).map(|i| sample(i, &[i as f64], label_of(i))).collect()
    }

    fn full_buffer(samples: Vec<Sample>) -> MemoryBuffer {
        let mut buf = MemoryBuffer::new(samples.len());
        buf.reservoir_update(&samples, &mut RngStream::new(0));
        buf
    }

    fn indices(samples: &[Sample]) -> Vec<u64> {
        let mut v: Vec<u64> = samples.iter().map(|s| s.stream_index).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn reservoir_fill_phase() {
        let mut buf = MemoryBuffer::new(5);
        buf.reservoir_update(&stream(3, |_| 0), &mut RngStream::new(1));
        assert_eq!(indices(buf.slots()), vec![0, 1, 2]);
        assert_eq!(buf.seen(), 3);
    }

    #[test]
    fn reservoir_zero_capacity() {
        let mut buf = MemoryBuffer::new(0);
        let mut rng = RngStream::new(1);
        buf.reservoir_update(&stream(20, |_| 0), &mut rng);
        assert!(buf.is_empty());
        assert_eq!(buf.seen(), 20);
    }

    #[test]
    fn reservoir_size_invariant() {
        let mut buf = MemoryBuffer::new(7);
        let mut rng = RngStream::new(3);
        let data = stream(50, |i| (i % 3) as usize);
        for chunk in data.chunks(4) {
            buf.reservoir_update(chunk, &mut rng);
            assert_eq!(buf.len() as u64, buf.seen().min(7));
        }
        let idx = indices(buf.slots());
        let mut dedup = idx.clone();
        dedup.dedup();
        assert_eq!(idx, dedup);
    }

    #[test]
    fn reservoir_retention_is_uniform() {
        // each of n items survives with probability M/n
        let (m, n, reps) = (5usize, 200u64, 4000);
        let data = stream(n, |_| 0);
        let mut counts = vec![0usize; n as usize];
        for seed in 0..reps {
            let mut buf = MemoryBuffer::new(m);
            let mut rng = RngStream::new(seed);
            for chunk in data.chunks(10) {
                buf.reservoir_update(chunk, &mut rng);
            }
            for s in buf.slots() {
                counts[s.stream_index as usize] += 1;
            }
        }
        let p = m as f64 / n as f64;
        // pooled over 20-item blocks of the stream
        let se = (p * (1.0 - p) / (reps as f64 * 20.0)).sqrt();
        for block in counts.chunks(20) {
            let freq = block.iter().sum::<usize>() as f64 / (reps as f64 * 20.0);
            assert!((freq - p).abs() < 4.0 * se, "block frequency {freq}");
        }
    }

    #[test]
    fn balanced_even_quota() {
        let buf = full_buffer(stream(10, |i| (i % 2) as usize));
        let sub = balanced_subsample(&buf, 4, &mut RngStream::new(9)).unwrap();
        assert_eq!(sub.iter().filter(|s| s.label == 0).count(), 2);
        assert_eq!(sub.iter().filter(|s| s.label == 1).count(), 2);
    }

    #[test]
    fn balanced_redistributes_leftover() {
        let buf = full_buffer(stream(10, |i| usize::from(i != 0)));
        let sub = balanced_subsample(&buf, 4, &mut RngStream::new(9)).unwrap();
        assert_eq!(sub.iter().filter(|s| s.label == 0).count(), 1);
        assert_eq!(sub.iter().filter(|s| s.label == 1).count(), 3);
    }

    #[test]
    fn balanced_capped_by_availability() {
        let buf = full_buffer(stream(2, |_| 0));
        let sub = balanced_subsample(&buf, 10, &mut RngStream::new(9)).unwrap();
        assert_eq!(indices(&sub), vec![0, 1]);
        assert!(balanced_subsample(&MemoryBuffer::new(3), 2, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn balanced_round_robin_order() {
        // classes {0:1, 1:3, 2:3}, n_sub = 6: quota 2 -> 1 + 2 + 2, leftover 1 goes to class 1
        let labels = [0, 1, 1, 1, 2, 2, 2];
        let buf = full_buffer(stream(7, |i| labels[i as usize]));
        let sub = balanced_subsample(&buf, 6, &mut RngStream::new(4)).unwrap();
        let count = |c| sub.iter().filter(|s| s.label == c).count();
        assert_eq!((count(0), count(1), count(2)), (1, 3, 2));
    }

    #[test]
    fn random_retrieval() {
        let small = full_buffer(stream(3, |_| 0));
        let got = retrieve_random(&small, 10, &mut RngStream::new(1)).unwrap();
        assert_eq!(indices(&got), vec![0, 1, 2]);

        let big = full_buffer(stream(100, |i| (i % 4) as usize));
        let got = retrieve_random(&big, 10, &mut RngStream::new(1)).unwrap();
        let mut idx = indices(&got);
        idx.dedup();
        assert_eq!(idx.len(), 10);

        assert!(retrieve_random(&MemoryBuffer::new(4), 2, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn random_retrieval_frequency() {
        let buf = full_buffer(stream(4, |_| 0));
        let mut rng = RngStream::new(77);
        let mut counts = [0usize; 4];
        let reps = 10_000;
        for _ in 0..reps {
            for s in retrieve_random(&buf, 2, &mut rng).unwrap() {
                counts[s.stream_index as usize] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / reps as f64 - 0.5).abs() <= 0.02);
        }
    }

    fn cfg(b_m: usize, n_sub: usize, n_c: usize, k: usize) -> RetrievalConfig {
        RetrievalConfig {
            memory_batch_size: b_m,
            subsample_per_class: n_sub,
            subsample_max: 1000,
            candidate_size: n_c,
            knn_k: k,
        }
    }

    #[test]
    fn aser_ties_go_to_low_stream_index() {
        // every sample at the same point with one label: all ASV scores equal
        let samples: Vec<Sample> = (0..8).map(|i| sample(10 + i, &[1.0, 1.0], 0)).collect();
        let buf = full_buffer(samples);
        let input = vec![sample(100, &[1.0, 1.0], 0)];
        let c = cfg(2, 1, 100, 3);
        let mut rng = RngStream::new(5);
        let mut probe = rng.clone();
        let sub = balanced_subsample(&buf, 1, &mut probe).unwrap();
        let got = retrieve_aser(&buf, &input, &c, ScoreVariant::Asv, &IdentityExtractor, &mut rng).unwrap();
        assert!(!got.fell_back);
        let expected: Vec<u64> = (10..18).filter(|&i| i != sub[0].stream_index).take(2).collect();
        assert_eq!(indices(&got.samples), expected);
    }

    #[test]
    fn aser_pads_small_candidate_sets() {
        let buf = full_buffer(stream(6, |i| (i % 2) as usize));
        let input = vec![sample(50, &[0.5], 1)];
        // 4 in the subsample, 2 candidates, 5 requested -> 2 scored + 3 padding
        let c = cfg(5, 2, 100, 1);
        let got = retrieve_aser(&buf, &input, &c, ScoreVariant::AsvMu, &IdentityExtractor, &mut RngStream::new(3)).unwrap();
        assert_eq!(got.samples.len(), 5);
        let mut idx = indices(&got.samples);
        idx.dedup();
        assert_eq!(idx.len(), 5);
    }

    #[test]
    fn aser_falls_back_when_subsample_covers_memory() {
        let buf = full_buffer(stream(4, |i| (i % 2) as usize));
        let input = vec![sample(50, &[0.5], 1)];
        let got = retrieve_aser(&buf, &input, &cfg(2, 2, 10, 1), ScoreVariant::Asv, &IdentityExtractor, &mut RngStream::new(3)).unwrap();
        assert!(got.fell_back);
        assert_eq!(got.samples.len(), 2);
    }

    #[test]
    fn aser_falls_back_before_memory_is_full() {
        let mut buf = MemoryBuffer::new(10);
        buf.reservoir_update(&stream(4, |_| 0), &mut RngStream::new(0));
        let input = vec![sample(50, &[0.5], 1)];
        let got = retrieve_aser(&buf, &input, &cfg(2, 1, 10, 1), ScoreVariant::Dist, &IdentityExtractor, &mut RngStream::new(3)).unwrap();
        assert!(got.fell_back);
        assert!(retrieve_aser(&buf, &[], &cfg(2, 1, 10, 1), ScoreVariant::Dist, &IdentityExtractor, &mut RngStream::new(3)).is_err());
    }

    #[test]
    fn aser_excludes_subsample_and_is_deterministic() {
        let data: Vec<Sample> = (0..40)
            .map(|i| sample(i, &[(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()], (i % 4) as usize))
            .collect();
        let buf = full_buffer(data);
        let input: Vec<Sample> = (0..5).map(|i| sample(100 + i, &[0.1 * i as f64, 0.2], 1)).collect();
        let c = cfg(6, 2, 20, 3);
        for variant in [ScoreVariant::Asv, ScoreVariant::AsvMu, ScoreVariant::Dist, ScoreVariant::DistMu] {
            let mut rng = RngStream::new(21);
            let mut probe = rng.clone();
            let sub = indices(&balanced_subsample(&buf, 8, &mut probe).unwrap());
            let a = retrieve_aser(&buf, &input, &c, variant, &IdentityExtractor, &mut rng).unwrap();
            let b = retrieve_aser(&buf, &input, &c, variant, &IdentityExtractor, &mut RngStream::new(21)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.samples.len(), 6);
            for s in &a.samples {
                assert!(!sub.contains(&s.stream_index));
            }
        }
    }

    #[test]
    fn aser_ignores_slot_order() {
        let data: Vec<Sample> = (0..30)
            .map(|i| sample(i, &[(i as f64 * 0.7).sin() * 3.0, (i as f64 * 1.3).cos()], (i % 3) as usize))
            .collect();
        let buf = full_buffer(data.clone());
        let mut rev = data;
        rev.reverse();
        let buf_rev = full_buffer(rev);
        let input: Vec<Sample> = (0..4).map(|i| sample(200 + i, &[0.3 * i as f64, -0.2], 2)).collect();
        let c = cfg(5, 3, 12, 2);
        let a = retrieve_aser(&buf, &input, &c, ScoreVariant::AsvMu, &IdentityExtractor, &mut RngStream::new(8)).unwrap();
        let b = retrieve_aser(&buf_rev, &input, &c, ScoreVariant::AsvMu, &IdentityExtractor, &mut RngStream::new(8)).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn sv_update_fill_phase() {
        let mut buf = MemoryBuffer::new(5);
        let batch = stream(3, |_| 0);
        buf.sv_update(&batch, &RetrievalConfig::default(), &IdentityExtractor, &mut RngStream::new(0))
            .unwrap();
        assert_eq!(buf.slots(), batch.as_slice());
        assert_eq!(buf.seen(), 3);
    }

    #[test]
    fn sv_update_keeps_buffer_when_inputs_are_worse() {
        // memory: class 0 clustered at 0, class 1 clustered at 10
        let mem: Vec<Sample> = (0..8)
            .map(|i| {
                let label = (i % 2) as usize;
                sample(i, &[label as f64 * 10.0 + 0.01 * i as f64], label)
            })
            .collect();
        let mut buf = full_buffer(mem);
        let before = buf.slots().to_vec();
        // inputs labelled 0 but sitting inside the class-1 cluster: negative value
        let batch = vec![sample(50, &[10.0], 0), sample(51, &[10.02], 0)];
        let c = cfg(1, 2, 10, 1);
        buf.sv_update(&batch, &c, &IdentityExtractor, &mut RngStream::new(2)).unwrap();
        assert_eq!(buf.slots(), before.as_slice());
        assert_eq!(buf.seen(), 10);
    }

    #[test]
    fn sv_update_replaces_the_minimum() {
        // one stored sample is mislabelled and sits in the other cluster
        let mut mem: Vec<Sample> = (0..6)
            .map(|i| {
                let label = (i % 2) as usize;
                sample(i, &[label as f64 * 10.0 + 0.01 * i as f64], label)
            })
            .collect();
        mem.push(sample(6, &[10.5], 0));
        let mut buf = full_buffer(mem);
        let batch = vec![sample(60, &[0.02], 0)];
        let c = cfg(1, 2, 10, 1);
        buf.sv_update(&batch, &c, &IdentityExtractor, &mut RngStream::new(4)).unwrap();
        let idx = indices(buf.slots());
        assert!(idx.contains(&60));
        assert!(!idx.contains(&6));
        assert_eq!(buf.len(), 7);
    }

    #[test]
    fn sv_update_size_invariant() {
        let mut buf = MemoryBuffer::new(12);
        let mut rng = RngStream::new(12);
        let data: Vec<Sample> = (0..100)
            .map(|i| sample(i, &[(i as f64).sin(), (i as f64 * 0.5).cos()], (i % 3) as usize))
            .collect();
        for chunk in data.chunks(7) {
            buf.sv_update(chunk, &cfg(3, 2, 50, 2), &IdentityExtractor, &mut rng).unwrap();
            assert_eq!(buf.len() as u64, buf.seen().min(12));
        }
        let mut zero = MemoryBuffer::new(0);
        zero.sv_update(&data[..5], &cfg(3, 2, 50, 2), &IdentityExtractor, &mut rng).unwrap();
        assert!(zero.is_empty());
        assert_eq!(zero.seen(), 5);
    }
}
