use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::gateway::Embedding;

/// One dialogue turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub conversation_id: String,
    pub session_id: String,
    pub seq: u64,
    pub speaker: String,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

impl Message {
    /// `"{speaker}: {text}"`
    pub fn render(&self) -> String {
        format!("{}: {}", self.speaker, self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: EntryId,
    pub content: String,
    pub embedding: Embedding,
    pub keywords: BTreeSet<String>,
    pub tags: BTreeSet<String>,
    pub source_seqs: Vec<u64>,
    pub created_at: DateTime<Utc>,
    pub last_access: DateTime<Utc>,
    pub access_count: u64,
    /// Ebbinghaus strength, in days.
    pub strength: f64,
    pub status: EntryStatus,
    pub links: BTreeSet<EntryId>,
}

impl MemoryEntry {
    /// A fresh valid entry. The id is assigned when appended to a store.
    pub fn new(content: impl Into<String>, embedding: Embedding, created_at: DateTime<Utc>) -> Self {
        Self {
            id: EntryId(0),
            content: content.into(),
            embedding,
            keywords: BTreeSet::new(),
            tags: BTreeSet::new(),
            source_seqs: Vec::new(),
            created_at,
            last_access: created_at,
            access_count: 0,
            strength: 1.0,
            status: EntryStatus::Valid,
            links: BTreeSet::new(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.status == EntryStatus::Valid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub u64);

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// A contiguous run of messages stored as one mid-term leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    pub messages: Vec<Message>,
    pub summary: String,
    /// Embedding of `summary`.
    pub embedding: Embedding,
    pub created_at: DateTime<Utc>,
    pub last_access: DateTime<Utc>,
    pub access_count: u64,
    /// Set when the summary fell back to the first message text.
    #[serde(default)]
    pub degraded: bool,
}

impl Segment {
    pub fn seqs(&self) -> impl Iterator<Item = u64> + '_ {
        self.messages.iter().map(|m| m.seq)
    }

    /// Non-empty and strictly increasing in seq.
    pub fn is_contiguous(&self) -> bool {
        !self.messages.is_empty() && self.messages.windows(2).all(|w| w[0].seq < w[1].seq)
    }

    pub fn render_messages(&self) -> Vec<String> {
        self.messages.iter().map(Message::render).collect()
    }
}
