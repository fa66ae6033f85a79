use serde::{Deserialize, Serialize};

/// A dense embedding. Stored vectors are L2-normalized, or all-zero for
/// degenerate (empty) input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Embedding(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Cosine similarity; 0 when either side is the zero vector.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        self.dot(other) / denom
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for v in &mut self.0 {
                *v /= n;
            }
        }
        self
    }

    /// Normalized mean of `items`. Empty or all-zero input yields zeros.
    pub fn centroid<'a, I>(dim: usize, items: I) -> Self
    where
        I: IntoIterator<Item = &'a Embedding>,
    {
        let mut acc = vec![0.0; dim];
        for e in items {
            for (a, v) in acc.iter_mut().zip(&e.0) {
                *a += v;
            }
        }
        Embedding(acc).normalized()
    }
}
