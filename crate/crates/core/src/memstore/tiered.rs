use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::tree::SummaryTree;
use super::types::{Message, Segment, SegmentId};
use super::vindex::{ExactIndex, VectorIndex};
use super::StoreError;
use crate::gateway::Embedding;

/// Segments promoted out of the mid-term tree. Promotion copies the index
/// entry only; segment bodies stay in their mid-term leaves.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LongTermMemory {
    index: ExactIndex<SegmentId>,
}

impl LongTermMemory {
    pub fn contains(&self, id: SegmentId) -> bool {
        self.index.contains(&id)
    }

    /// Idempotent by segment id. Returns whether it was newly added.
    pub fn promote(&mut self, seg: &Segment) -> Result<bool, StoreError> {
        if self.index.contains(&seg.id) {
            return Ok(false);
        }
        self.index.upsert(seg.id, seg.embedding.clone())?;
        Ok(true)
    }

    pub fn ids(&self) -> &[SegmentId] {
        self.index.keys()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn topk(&self, query: &Embedding, k: usize) -> Result<Vec<(SegmentId, f64)>, StoreError> {
        if self.index.is_empty() {
            return Ok(Vec::new());
        }
        self.index.topk(query, k)
    }

    pub(crate) fn reindex(&mut self) {
        self.index.reindex();
    }
}

/// Short-term FIFO, mid-term summary tree, long-term promoted set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TieredMemory {
    pub short_term: VecDeque<Message>,
    pub mid_term: SummaryTree,
    pub long_term: LongTermMemory,
    pub next_segment_id: u64,
}

impl TieredMemory {
    pub fn new(dim: usize) -> Self {
        Self {
            short_term: VecDeque::new(),
            mid_term: SummaryTree::new(dim),
            long_term: LongTermMemory::default(),
            next_segment_id: 0,
        }
    }

    pub fn allocate_segment_id(&mut self) -> SegmentId {
        let id = SegmentId(self.next_segment_id);
        self.next_segment_id += 1;
        id
    }

    pub fn reindex(&mut self) {
        self.mid_term.reindex();
        self.long_term.reindex();
    }

    /// Seqs held by short-term plus every mid-term leaf, sorted.
    pub fn held_seqs(&self) -> Vec<u64> {
        let mut seqs: Vec<u64> = self.short_term.iter().map(|m| m.seq).collect();
        for leaf in self.mid_term.leaves() {
            seqs.extend(leaf.payload.as_ref().expect("leaf").seqs());
        }
        seqs.sort_unstable();
        seqs
    }

    /// Conservation against the ingested seqs plus tree shape plus
    /// long-term ⊆ mid-term leaves, and short-term bounded by `capacity`.
    pub fn validate(&self, ingested: &[u64], capacity: usize) -> Result<(), String> {
        let mut expected = ingested.to_vec();
        expected.sort_unstable();
        let held = self.held_seqs();
        if held != expected {
            return Err(format!(
                "message multiset mismatch: holding {} seqs, ingested {}",
                held.len(),
                expected.len()
            ));
        }
        if self.short_term.len() > capacity {
            return Err(format!("short-term holds {} > capacity {capacity}", self.short_term.len()));
        }
        if !self.short_term.iter().zip(self.short_term.iter().skip(1)).all(|(a, b)| a.seq < b.seq) {
            return Err("short-term out of seq order".into());
        }
        self.mid_term.validate()?;
        if let Some(id) = self.long_term.ids().iter().find(|id| self.mid_term.segment(**id).is_none()) {
            return Err(format!("long-term segment {id} missing from mid-term"));
        }
        Ok(())
    }
}
