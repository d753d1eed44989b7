//! Symmetric user-user similarity matrices.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A symmetric n x n matrix of user-user similarities with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    user_ids: Vec<String>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Identity matrix (diagonal 1, off-diagonal 0) over the given users.
    pub fn new(user_ids: Vec<String>) -> Self {
        let n = user_ids.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        SimilarityMatrix { user_ids, values }
    }

    pub fn n(&self) -> usize {
        self.user_ids.len()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n() + j]
    }

    /// Set both (i, j) and (j, i).
    pub fn set_symmetric(&mut self, i: usize, j: usize, value: f64) {
        let n = self.n();
        self.values[i * n + j] = value;
        self.values[j * n + i] = value;
    }

    /// Strict upper-triangle values (i < j).
    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Median of the strict upper triangle; even counts average the two
    /// middle values.
    pub fn median_off_diagonal(&self) -> Option<f64> {
        let mut vals = self.off_diagonal();
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(f64::total_cmp);
        let mid = vals.len() / 2;
        Some(if vals.len() % 2 == 1 {
            vals[mid]
        } else {
            0.5 * (vals[mid - 1] + vals[mid])
        })
    }

    /// Element-wise minimum; both matrices must cover the same users in the
    /// same order. This is the conjunction of two similarity criteria.
    pub fn elementwise_min(&self, other: &SimilarityMatrix) -> Result<SimilarityMatrix> {
        if self.user_ids != other.user_ids {
            return Err(Error::Internal(
                "similarity matrices cover different users".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.min(*b))
            .collect();
        Ok(SimilarityMatrix {
            user_ids: self.user_ids.clone(),
            values,
        })
    }

    /// CSV with a user-id header row and column.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "user_id,{}", self.user_ids.join(","))?;
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.n()).map(|j| self.get(i, j).to_string()).collect();
            writeln!(w, "{},{}", self.user_ids[i], row.join(","))?;
        }
        Ok(())
    }
}

/// Similarity from per-user scalars: 1 - |v_i - v_j| / (cohort range). A
/// zero-range cohort makes every pair fully similar.
pub fn range_normalized_similarity(user_ids: Vec<String>, values: &[f64]) -> SimilarityMatrix {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let mut matrix = SimilarityMatrix::new(user_ids);
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            let sim = if range == 0.0 {
                1.0
            } else {
                1.0 - (values[i] - values[j]).abs() / range
            };
            matrix.set_symmetric(i, j, sim);
        }
    }
    matrix
}
