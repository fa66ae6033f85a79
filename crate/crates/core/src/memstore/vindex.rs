//! Exact cosine top-k index.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::gateway::Embedding;

/// Nearest-neighbour index over embeddings. Implementations return at most
/// `k` `(key, cosine)` pairs sorted by score descending, ties by insertion
/// order (older first).
pub trait VectorIndex<K> {
    fn upsert(&mut self, key: K, embedding: Embedding) -> Result<(), StoreError>;
    fn topk(&self, query: &Embedding, k: usize) -> Result<Vec<(K, f64)>, StoreError>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(
    serialize = "K: Serialize + Eq + Hash",
    deserialize = "K: Deserialize<'de> + Eq + Hash"
))]
pub struct ExactIndex<K: Eq + Hash> {
    dim: Option<usize>,
    keys: Vec<K>,
    vectors: Vec<Embedding>,
    #[serde(skip)]
    pos: HashMap<K, usize>,
}

impl<K: Eq + Hash> Default for ExactIndex<K> {
    fn default() -> Self {
        Self { dim: None, keys: Vec::new(), vectors: Vec::new(), pos: HashMap::new() }
    }
}

struct Candidate {
    score: f64,
    order: usize,
}

// "greater" means better: higher score, then older insertion
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.order.cmp(&self.order))
    }
}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}

impl<K: Clone + Eq + Hash> ExactIndex<K> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuild the key lookup after deserialization.
    pub fn reindex(&mut self) {
        self.pos = self.keys.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
    }

    pub fn contains(&self, key: &K) -> bool {
        self.pos.contains_key(key)
    }

    pub fn keys(&self) -> &[K] {
        &self.keys
    }

    pub fn get(&self, key: &K) -> Option<&Embedding> {
        self.pos.get(key).map(|&i| &self.vectors[i])
    }

    fn check_dim(&self, e: &Embedding) -> Result<(), StoreError> {
        match self.dim {
            Some(d) if d != e.dim() => Err(StoreError::Dimension { expected: d, got: e.dim() }),
            _ => Ok(()),
        }
    }
}

impl<K: Clone + Eq + Hash> VectorIndex<K> for ExactIndex<K> {
    fn upsert(&mut self, key: K, embedding: Embedding) -> Result<(), StoreError> {
        self.check_dim(&embedding)?;
        self.dim = Some(embedding.dim());
        match self.pos.get(&key) {
            Some(&i) => self.vectors[i] = embedding,
            None => {
                self.pos.insert(key.clone(), self.keys.len());
                self.keys.push(key);
                self.vectors.push(embedding);
            }
        }
        Ok(())
    }

    fn topk(&self, query: &Embedding, k: usize) -> Result<Vec<(K, f64)>, StoreError> {
        if k == 0 {
            return Err(StoreError::InvalidArgument("k must be at least 1".into()));
        }
        self.check_dim(query)?;
        // min-heap of the best k seen so far
        let mut heap: BinaryHeap<std::cmp::Reverse<Candidate>> = BinaryHeap::with_capacity(k + 1);
        for (order, v) in self.vectors.iter().enumerate() {
            let cand = Candidate { score: query.cosine(v), order };
            if heap.len() < k {
                heap.push(std::cmp::Reverse(cand));
            } else if heap.peek().is_some_and(|worst| cand > worst.0) {
                heap.pop();
                heap.push(std::cmp::Reverse(cand));
            }
        }
        let mut best: Vec<Candidate> = heap.into_iter().map(|r| r.0).collect();
        best.sort_by(|a, b| b.cmp(a));
        Ok(best.into_iter().map(|c| (self.keys[c.order].clone(), c.score)).collect())
    }

    fn len(&self) -> usize {
        self.keys.len()
    }
}
