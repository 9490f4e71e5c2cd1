//! Exact Shapley values of a K-nearest-neighbour classifier.
//!
//! For one evaluation point the candidates are ranked by distance and the
//! values are produced by a backward recursion from the farthest candidate,
//! costing one sort per evaluation point. Values for an evaluation *set* are
//! the column-wise collection of single-point values; their row average is
//! the usual data-valuation score.

#[cfg(feature = "oracle")]
pub mod oracle;

use crate::error::{Error, Result};
use crate::numeric::{argsort_ascending, ensure_finite, euclidean_distance, squared_distance, ExactSum};

/// A point in latent space together with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub embedding: Vec<f64>,
    pub label: usize,
}

impl LabeledEmbedding {
    pub fn new(embedding: Vec<f64>, label: usize) -> Self {
        Self { embedding, label }
    }
}

/// KNN likelihood utility of `subset` for one evaluation point: the fraction
/// of the `k` nearest members (or fewer, when the subset is smaller) whose
/// label agrees with the evaluation label, always divided by `k`.
pub fn knn_utility(subset: &[LabeledEmbedding], eval_point: &LabeledEmbedding, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let distances = subset
        .iter()
        .map(|c| euclidean_distance(&c.embedding, &eval_point.embedding))
        .collect::<Result<Vec<_>>>()?;
    let order = argsort_ascending(&distances)?;
    let hits = order
        .iter()
        .take(k)
        .filter(|&&i| subset[i].label == eval_point.label)
        .count();
    Ok(hits as f64 / k as f64)
}

/// Candidate x evaluation-point matrix of KNN Shapley values.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyMatrix {
    /// Row-major, one row per candidate.
    values: Vec<f64>,
    candidate_count: usize,
    eval_count: usize,
}

impl ShapleyMatrix {
    /// Builds a matrix from per-candidate rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let candidate_count = rows.len();
        let eval_count = rows.first().map_or(0, Vec::len);
        if candidate_count == 0 || eval_count == 0 {
            return Err(Error::Empty("shapley matrix"));
        }
        let mut values = Vec::with_capacity(candidate_count * eval_count);
        for row in rows {
            if row.len() != eval_count {
                return Err(Error::DimensionMismatch {
                    expected: eval_count,
                    found: row.len(),
                });
            }
            ensure_finite(&row, "shapley matrix")?;
            values.extend(row);
        }
        Ok(Self {
            values,
            candidate_count,
            eval_count,
        })
    }

    fn from_columns(columns: Vec<Vec<f64>>, candidate_count: usize) -> Self {
        let eval_count = columns.len();
        let mut values = vec![0.0; candidate_count * eval_count];
        for (j, col) in columns.into_iter().enumerate() {
            for (i, v) in col.into_iter().enumerate() {
                values[i * eval_count + j] = v;
            }
        }
        Self {
            values,
            candidate_count,
            eval_count,
        }
    }

    pub fn candidate_count(&self) -> usize {
        self.candidate_count
    }

    pub fn eval_count(&self) -> usize {
        self.eval_count
    }

    pub fn get(&self, candidate: usize, eval: usize) -> f64 {
        self.values[candidate * self.eval_count + eval]
    }

    /// Values of one candidate against every evaluation point.
    pub fn row(&self, candidate: usize) -> &[f64] {
        let start = candidate * self.eval_count;
        &self.values[start..start + self.eval_count]
    }

    pub fn column(&self, eval: usize) -> Vec<f64> {
        (0..self.candidate_count).map(|i| self.get(i, eval)).collect()
    }

    /// Per-candidate average over the evaluation set.
    pub fn averages(&self) -> Vec<f64> {
        (0..self.candidate_count)
            .map(|i| self.row(i).iter().sum::<f64>() / self.eval_count as f64)
            .collect()
    }
}

/// Shapley values of every candidate for a single evaluation point, in input
/// order. Distance ties are ranked by lower candidate index.
pub fn knn_sv_single(candidates: &[LabeledEmbedding], eval_point: &LabeledEmbedding, k: usize) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let dim = eval_point.embedding.len();
    ensure_finite(&eval_point.embedding, "evaluation embedding")?;
    for c in candidates {
        if c.embedding.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.embedding.len(),
            });
        }
        ensure_finite(&c.embedding, "candidate embedding")?;
    }
    Ok(sv_column(candidates, eval_point, k))
}

/// Recursion body; inputs are already validated.
fn sv_column(candidates: &[LabeledEmbedding], eval_point: &LabeledEmbedding, k: usize) -> Vec<f64> {
    let n = candidates.len();
    let distances: Vec<f64> = candidates
        .iter()
        .map(|c| squared_distance(&c.embedding, &eval_point.embedding).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));

    let hit = |rank: usize| -> f64 {
        // rank is 1-based
        f64::from(u8::from(candidates[order[rank - 1]].label == eval_point.label))
    };

    // Each rank's value is the farthest value plus the signed steps between,
    // where a step at rank m is +-1 / max(K, m). Summing those terms exactly
    // and rounding once per rank makes mathematically equal values
    // bit-identical and keeps every strict ordering between them.
    let mut acc = ExactSum::new();
    // With fewer than K candidates everyone is always among the K nearest,
    // so the farthest one contributes hit / K rather than hit / N.
    acc.add(hit(n) / n.max(k) as f64);
    let mut current = acc.value();
    let mut by_rank = vec![0.0; n + 1];
    by_rank[n] = current;
    for m in (1..n).rev() {
        let step = hit(m) - hit(m + 1);
        if step != 0.0 {
            acc.add(step * (1.0 / m.max(k) as f64));
            current = acc.value();
        }
        by_rank[m] = current;
    }

    let mut values = vec![0.0; n];
    for (rank0, &idx) in order.iter().enumerate() {
        values[idx] = by_rank[rank0 + 1];
    }
    values
}

/// Shapley values of every candidate against every point of `eval_set`.
/// Column `j` is `knn_sv_single(candidates, &eval_set[j], k)`.
pub fn knn_sv_matrix(
    candidates: &[LabeledEmbedding],
    eval_set: &[LabeledEmbedding],
    k: usize,
) -> Result<ShapleyMatrix> {
    if eval_set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let columns = eval_set
        .iter()
        .map(|e| knn_sv_single(candidates, e, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(ShapleyMatrix::from_columns(columns, candidates.len()))
}
