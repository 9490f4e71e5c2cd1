//! Average accuracy and average forgetting over the lower-triangular matrix
//! of per-task test accuracies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row `i` (0-based) holds the accuracy on tasks `0..=i` measured right after
/// training on task `i`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Appends the row for the next task; it must have one entry per task
    /// seen so far, each in `[0, 1]`.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let expected = self.rows.len() + 1;
        if row.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: row.len(),
            });
        }
        if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid("accuracy entries must lie in [0, 1]"));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Number of completed rows.
    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    /// `a[i][j]` with 1-based task numbers, `j <= i`.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == 0 || j == 0 {
            return None;
        }
        self.rows.get(i - 1)?.get(j - 1).copied()
    }

    pub fn row(&self, i: usize) -> Option<&[f64]> {
        self.rows.get(i.checked_sub(1)?).map(Vec::as_slice)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// `A_T`: mean accuracy over all `t` tasks after training on task `t`.
pub fn average_accuracy(m: &AccuracyMatrix, t: usize) -> Result<f64> {
    let row = m
        .row(t)
        .ok_or_else(|| Error::invalid(format!("accuracy row {t} is not recorded")))?;
    Ok(row.iter().sum::<f64>() / t as f64)
}

/// `F_T`: mean over tasks `j < t` of the drop from the best accuracy on `j`
/// seen at rows `j..t-1` to the accuracy after task `t`.
pub fn average_forgetting(m: &AccuracyMatrix, t: usize) -> Result<f64> {
    if t < 2 {
        return Err(Error::invalid("forgetting needs at least two tasks"));
    }
    if m.tasks() < t {
        return Err(Error::invalid(format!("accuracy row {t} is not recorded")));
    }
    let total: f64 = (1..t)
        .map(|j| {
            let best = (j..t)
                .filter_map(|l| m.get(l, j))
                .fold(f64::NEG_INFINITY, f64::max);
            best - m.get(t, j).expect("row t is complete")
        })
        .sum();
    Ok(total / (t - 1) as f64)
}
