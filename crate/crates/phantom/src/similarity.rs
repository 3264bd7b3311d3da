//! Positional slice similarity.

use crate::error::{DataError, Result};

fn check_position(p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(DataError::PositionOutOfRange(p))
    }
}

/// `1 - |p_i - p_j|` for normalized positions in [0, 1].
pub fn similarity(p_i: f64, p_j: f64) -> Result<f64> {
    Ok(1.0 - (check_position(p_i)? - check_position(p_j)?).abs())
}

/// Symmetric pairwise similarity over the views of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_values(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n);
        SimilarityMatrix { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Row-major entries.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn similarity_matrix(positions: &[f64]) -> Result<SimilarityMatrix> {
    let n = positions.len();
    if n < 2 {
        return Err(DataError::TooFewViews(n));
    }
    let mut values = Vec::with_capacity(n * n);
    for &pi in positions {
        for &pj in positions {
            values.push(similarity(pi, pj)?);
        }
    }
    Ok(SimilarityMatrix { n, values })
}
