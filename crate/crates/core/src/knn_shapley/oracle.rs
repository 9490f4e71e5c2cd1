//! Brute-force exact Shapley values under the KNN utility.
//!
//! Enumerates every coalition, so the cost is `O(2^N)` utility evaluations.
//! Only used to check the recursion; never called from retrieval or update.

use super::{knn_sv_single, knn_utility, LabeledEmbedding};
use crate::error::{Error, Result};
use crate::numeric::RngStream;

/// Largest candidate set the enumeration accepts.
pub const MAX_CANDIDATES: usize = 20;

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        // exact: acc * (n - i) is divisible by (i + 1)
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc as f64
}

/// Shapley value of each candidate, averaged marginal utility over all
/// coalitions of the other candidates, weighted by `1 / (N * C(N-1, |S|))`.
pub fn exact_shapley_bruteforce(
    candidates: &[LabeledEmbedding],
    eval_point: &LabeledEmbedding,
    k: usize,
) -> Result<Vec<f64>> {
    let n = candidates.len();
    if n > MAX_CANDIDATES {
        return Err(Error::invalid(format!(
            "brute-force Shapley limited to {MAX_CANDIDATES} candidates, got {n}"
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    // Utility of every coalition, keyed by bitmask. Members are listed in
    // candidate order so distance ties resolve exactly like the recursion.
    let mut utility = vec![0.0; 1 << n];
    let mut subset = Vec::with_capacity(n);
    for (mask, slot) in utility.iter_mut().enumerate() {
        subset.clear();
        subset.extend((0..n).filter(|i| mask & (1 << i) != 0).map(|i| candidates[i].clone()));
        *slot = knn_utility(&subset, eval_point, k)?;
    }

    let weights: Vec<f64> = (0..n).map(|s| 1.0 / (n as f64 * binomial(n - 1, s))).collect();
    let values = (0..n)
        .map(|i| {
            let bit = 1usize << i;
            (0..1usize << n)
                .filter(|mask| mask & bit == 0)
                .map(|mask| weights[mask.count_ones() as usize] * (utility[mask | bit] - utility[mask]))
                .sum()
        })
        .collect();
    Ok(values)
}

/// A random instance for equivalence checks.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub candidates: Vec<LabeledEmbedding>,
    pub eval_point: LabeledEmbedding,
    pub k: usize,
}

/// Draws an instance with `1..=max_candidates` candidates, K in {1,2,3},
/// dimension in {1,2,5} and three classes. Coordinates are rounded to one
/// decimal so distance ties occur.
pub fn random_instance(rng: &mut RngStream, max_candidates: usize) -> OracleInstance {
    let n = 1 + rng.index(max_candidates);
    let k = 1 + rng.index(3);
    let dim = [1, 2, 5][rng.index(3)];
    let point = |rng: &mut RngStream| -> LabeledEmbedding {
        let x = (0..dim).map(|_| (rng.normal() * 10.0).round() / 10.0).collect();
        LabeledEmbedding::new(x, rng.index(3))
    };
    let candidates = (0..n).map(|_| point(rng)).collect();
    let eval_point = point(rng);
    OracleInstance {
        candidates,
        eval_point,
        k,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub instances: usize,
    pub max_abs_error: f64,
}

/// Compares the recursion against enumeration on `instances` random
/// instances with at most eight candidates.
pub fn equivalence_suite(seed: u64, instances: usize) -> Result<OracleReport> {
    let mut rng = RngStream::new(seed);
    let mut max_abs_error: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_instance(&mut rng, 8);
        let fast = knn_sv_single(&inst.candidates, &inst.eval_point, inst.k)?;
        let slow = exact_shapley_bruteforce(&inst.candidates, &inst.eval_point, inst.k)?;
        for (a, b) in fast.iter().zip(&slow) {
            max_abs_error = max_abs_error.max((a - b).abs());
        }
    }
    Ok(OracleReport {
        instances,
        max_abs_error,
    })
}
