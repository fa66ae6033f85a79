//! Storage shapes: flat store, exact vector index, summary tree, temporal
//! graph, and the three-tier container built from them.

pub mod flat;
pub mod graph;
pub mod persist;
pub mod tiered;
pub mod tree;
pub mod types;
pub mod vindex;

pub use flat::{FlatStore, ScanFilter};
pub use graph::{EdgeId, EntityId, FactEdge, NewEdge, NewEntity, TemporalGraph};
pub use persist::{Manifest, StoreSnapshot};
pub use tiered::{LongTermMemory, TieredMemory};
pub use tree::{NodeId, SummaryTree, TreeNode};
pub use types::{EntryId, EntryStatus, MemoryEntry, Message, Segment, SegmentId};
pub use vindex::{ExactIndex, VectorIndex};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("embedding dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown entry {0}")]
    UnknownEntry(EntryId),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
