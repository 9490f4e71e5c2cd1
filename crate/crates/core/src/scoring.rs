//! Retrieval scores for memory candidates.
//!
//! Shapley-based scores reward candidates that are valuable to the balanced
//! memory subsample and harmful to the incoming batch. The distance-based
//! scores are the same idea with Shapley values swapped for Euclidean
//! distances in latent space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn_shapley::{LabeledEmbedding, ShapleyMatrix};
use crate::numeric::euclidean_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    /// max over the memory subsample minus min over the input batch.
    Asv,
    /// mean over the memory subsample minus mean over the input batch.
    AsvMu,
    /// Negated sum of nearest same-class memory distance and nearest input distance.
    Dist,
    /// Negated sum of mean same-class memory distance and mean input distance.
    DistMu,
}

impl ScoreVariant {
    pub fn uses_shapley(self) -> bool {
        matches!(self, ScoreVariant::Asv | ScoreVariant::AsvMu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub variant: ScoreVariant,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn check_pair(sv_mem: &ShapleyMatrix, sv_input: &ShapleyMatrix) -> Result<()> {
    if sv_mem.candidate_count() != sv_input.candidate_count() {
        return Err(Error::DimensionMismatch {
            expected: sv_mem.candidate_count(),
            found: sv_input.candidate_count(),
        });
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `max_j s_j(i) - min_k s_k(i)`, `j` over the memory subsample columns and
/// `k` over the input batch columns.
pub fn asv(sv_mem: &ShapleyMatrix, sv_input: &ShapleyMatrix) -> Result<ScoreVector> {
    check_pair(sv_mem, sv_input)?;
    let scores = (0..sv_mem.candidate_count())
        .map(|i| {
            let best = sv_mem.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let worst = sv_input.row(i).iter().copied().fold(f64::INFINITY, f64::min);
            best - worst
        })
        .collect();
    Ok(ScoreVector {
        scores,
        variant: ScoreVariant::Asv,
    })
}

/// Mean over the memory subsample minus mean over the input batch.
pub fn asv_mu(sv_mem: &ShapleyMatrix, sv_input: &ShapleyMatrix) -> Result<ScoreVector> {
    check_pair(sv_mem, sv_input)?;
    let scores = (0..sv_mem.candidate_count())
        .map(|i| mean(sv_mem.row(i)) - mean(sv_input.row(i)))
        .collect();
    Ok(ScoreVector {
        scores,
        variant: ScoreVariant::AsvMu,
    })
}

/// Distances from `candidate` to the same-class members of `s_sub`, or to
/// all of `s_sub` when its class is absent there.
fn memory_distances(candidate: &LabeledEmbedding, s_sub: &[LabeledEmbedding]) -> Result<Vec<f64>> {
    let same: Vec<&LabeledEmbedding> = s_sub.iter().filter(|e| e.label == candidate.label).collect();
    let pool: Vec<&LabeledEmbedding> = if same.is_empty() {
        s_sub.iter().collect()
    } else {
        same
    };
    pool.into_iter()
        .map(|e| euclidean_distance(&candidate.embedding, &e.embedding))
        .collect()
}

fn input_distances(candidate: &LabeledEmbedding, input: &[LabeledEmbedding]) -> Result<Vec<f64>> {
    input
        .iter()
        .map(|e| euclidean_distance(&candidate.embedding, &e.embedding))
        .collect()
}

fn distance_score(
    candidates: &[LabeledEmbedding],
    s_sub: &[LabeledEmbedding],
    input_batch: &[LabeledEmbedding],
    variant: ScoreVariant,
    reduce: fn(&[f64]) -> f64,
) -> Result<ScoreVector> {
    if input_batch.is_empty() {
        return Err(Error::Empty("input batch"));
    }
    if s_sub.is_empty() {
        return Err(Error::Empty("memory subsample"));
    }
    let scores = candidates
        .iter()
        .map(|c| {
            let mem = memory_distances(c, s_sub)?;
            let inp = input_distances(c, input_batch)?;
            Ok(-(reduce(&mem) + reduce(&inp)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreVector { scores, variant })
}

fn min(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `-(min same-class memory distance + min input distance)`.
pub fn dist_score(
    candidates: &[LabeledEmbedding],
    s_sub: &[LabeledEmbedding],
    input_batch: &[LabeledEmbedding],
) -> Result<ScoreVector> {
    distance_score(candidates, s_sub, input_batch, ScoreVariant::Dist, min)
}

/// `-(mean same-class memory distance + mean input distance)`.
pub fn dist_mu_score(
    candidates: &[LabeledEmbedding],
    s_sub: &[LabeledEmbedding],
    input_batch: &[LabeledEmbedding],
) -> Result<ScoreVector> {
    distance_score(candidates, s_sub, input_batch, ScoreVariant::DistMu, mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::argsort_ascending;
    use proptest::prelude::*;

    fn one_row(mem: &[f64], inp: &[f64]) -> (ShapleyMatrix, ShapleyMatrix) {
        (
            ShapleyMatrix::from_rows(vec![mem.to_vec()]).unwrap(),
            ShapleyMatrix::from_rows(vec![inp.to_vec()]).unwrap(),
        )
    }

    fn pt(x: &[f64], label: usize) -> LabeledEmbedding {
        LabeledEmbedding::new(x.to_vec(), label)
    }

    #[test]
    fn asv_examples() {
        let (m, i) = one_row(&[0.1, 0.3, -0.2], &[-0.4, 0.0]);
        assert!((asv(&m, &i).unwrap().scores[0] - 0.7).abs() < 1e-15);
        let (m, i) = one_row(&[0.0, 0.0], &[0.0]);
        assert_eq!(asv(&m, &i).unwrap().scores, vec![0.0]);
        let (m, i) = one_row(&[0.5], &[0.5]);
        assert_eq!(asv(&m, &i).unwrap().scores, vec![0.0]);
    }

    #[test]
    fn asv_mu_examples() {
        let (m, i) = one_row(&[0.1, 0.3, -0.2], &[-0.4, 0.0]);
        let s = asv_mu(&m, &i).unwrap().scores[0];
        assert!((s - (0.2 / 3.0 + 0.2)).abs() < 1e-12, "{s}");
        assert!((s - 0.2667).abs() < 1e-4);
        assert_eq!(asv_mu(&m, &m).unwrap().scores, vec![0.0]);
        let (m, i) = one_row(&[0.25, 0.25], &[-0.5, -0.5, -0.5]);
        assert_eq!(asv_mu(&m, &i).unwrap().scores, vec![0.75]);
    }

    #[test]
    fn candidate_count_mismatch() {
        let m = ShapleyMatrix::from_rows(vec![vec![0.1], vec![0.2]]).unwrap();
        let i = ShapleyMatrix::from_rows(vec![vec![0.1]]).unwrap();
        assert!(asv(&m, &i).is_err());
        assert!(asv_mu(&m, &i).is_err());
    }

    #[test]
    fn single_cell_variants_agree() {
        let (m, i) = one_row(&[0.37], &[-0.11]);
        assert_eq!(asv(&m, &i).unwrap().scores, asv_mu(&m, &i).unwrap().scores);
    }

    #[test]
    fn dist_examples() {
        let cand = [pt(&[0.0], 0)];
        // same-class memory at distance 2, other class at 0.5 (ignored), input at 1.
        let s_sub = [pt(&[2.0], 0), pt(&[0.5], 1)];
        let input = [pt(&[1.0], 1), pt(&[-3.0], 0)];
        assert_eq!(dist_score(&cand, &s_sub, &input).unwrap().scores, vec![-3.0]);

        let s_sub = [pt(&[0.0], 0)];
        let input = [pt(&[0.0], 1)];
        assert_eq!(dist_score(&cand, &s_sub, &input).unwrap().scores, vec![0.0]);

        // class 2 absent from the subsample: fall back to all of it.
        let cand = [pt(&[0.0], 2)];
        let s_sub = [pt(&[4.0], 0), pt(&[-5.0], 1)];
        let input = [pt(&[1.0], 0)];
        assert_eq!(dist_score(&cand, &s_sub, &input).unwrap().scores, vec![-5.0]);
    }

    #[test]
    fn dist_mu_examples() {
        let cand = [pt(&[0.0], 0)];
        let s_sub = [pt(&[2.0], 0), pt(&[-3.5], 0), pt(&[0.1], 1)];
        let input = [pt(&[1.0], 1), pt(&[4.0], 1)];
        assert_eq!(dist_mu_score(&cand, &s_sub, &input).unwrap().scores, vec![-5.25]);

        let zero = [pt(&[0.0], 0)];
        assert_eq!(dist_mu_score(&cand, &zero, &zero).unwrap().scores, vec![0.0]);

        let cand = [pt(&[0.0], 2)];
        let s_sub = [pt(&[2.0], 0), pt(&[-4.0], 1)];
        let input = [pt(&[1.0], 0), pt(&[3.0], 0)];
        assert_eq!(dist_mu_score(&cand, &s_sub, &input).unwrap().scores, vec![-5.0]);
    }

    #[test]
    fn dist_errors() {
        let cand = [pt(&[0.0], 0)];
        assert!(matches!(dist_score(&cand, &cand, &[]), Err(Error::Empty(_))));
        assert!(dist_mu_score(&cand, &[], &cand).is_err());
    }

    fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, cols), rows)
    }

    proptest! {
        #[test]
        fn shift_keeps_ranking(mem in matrix(6, 4), inp in matrix(6, 3), shift in -0.5f64..0.5) {
            let shifted = |m: &Vec<Vec<f64>>| ShapleyMatrix::from_rows(
                m.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect()).unwrap();
            let a = ShapleyMatrix::from_rows(mem.clone()).unwrap();
            let b = ShapleyMatrix::from_rows(inp.clone()).unwrap();
            for f in [asv, asv_mu] {
                let base = f(&a, &b).unwrap().scores;
                let moved = f(&shifted(&mem), &shifted(&inp)).unwrap().scores;
                // the shift cancels up to rounding, so rankings are compared
                // only when scores are well separated
                for i in 0..base.len() {
                    prop_assert!((base[i] - moved[i]).abs() < 1e-12);
                }
                let order_a = argsort_ascending(&base).unwrap();
                let order_b = argsort_ascending(&moved).unwrap();
                if order_a.windows(2).all(|w| base[w[1]] - base[w[0]] > 1e-9) {
                    prop_assert_eq!(order_a, order_b);
                }
            }
        }

        #[test]
        fn dist_scores_nonpositive(
            cands in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 2), 0usize..3), 1..6),
            sub in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 2), 0usize..3), 1..6),
            inp in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 2), 0usize..3), 1..6),
        ) {
            let to = |v: Vec<(Vec<f64>, usize)>| v.into_iter().map(|(x, l)| LabeledEmbedding::new(x, l)).collect::<Vec<_>>();
            let (c, s, i) = (to(cands), to(sub), to(inp));
            for sv in [dist_score(&c, &s, &i).unwrap(), dist_mu_score(&c, &s, &i).unwrap()] {
                prop_assert!(sv.scores.iter().all(|&x| x <= 0.0));
            }
            // permuting candidates permutes scores
            let mut rev = c.clone();
            rev.reverse();
            let mut back = dist_score(&rev, &s, &i).unwrap().scores;
            back.reverse();
            prop_assert_eq!(back, dist_score(&c, &s, &i).unwrap().scores);
        }
    }
}
