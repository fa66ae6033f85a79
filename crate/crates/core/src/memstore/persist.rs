//! Directory persistence: `manifest.json`, `messages.jsonl`, `entries.jsonl`,
//! `tree.json`, `graph.json`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::flat::FlatStore;
use super::graph::TemporalGraph;
use super::tiered::TieredMemory;
use super::types::{MemoryEntry, Message};
use super::StoreError;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub engine_version: String,
    pub format_version: u32,
    pub embedding_dimension: usize,
    pub conversation_id: String,
    /// Owner-specific state (engine counters, configuration).
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl Manifest {
    pub fn new(conversation_id: &str, embedding_dimension: usize) -> Self {
        Self {
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            format_version: FORMAT_VERSION,
            embedding_dimension,
            conversation_id: conversation_id.to_string(),
            extra: serde_json::Value::Null,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    mid_term: super::tree::SummaryTree,
    long_term: super::tiered::LongTermMemory,
    next_segment_id: u64,
}

/// Everything one conversation persists.
#[derive(Debug, Clone)]
pub struct StoreSnapshot {
    pub manifest: Manifest,
    pub flat: FlatStore,
    pub tiered: TieredMemory,
    pub graph: TemporalGraph,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut w, value)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let r = BufReader::new(fs::File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<(), StoreError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn save(
    dir: &Path,
    manifest: &Manifest,
    flat: &FlatStore,
    tiered: &TieredMemory,
    graph: &TemporalGraph,
) -> Result<(), StoreError> {
    fs::create_dir_all(dir)?;
    write_jsonl::<Message>(&dir.join("messages.jsonl"), tiered.short_term.iter())?;
    write_jsonl::<MemoryEntry>(&dir.join("entries.jsonl"), flat.entries())?;
    let tree = TreeFile {
        mid_term: tiered.mid_term.clone(),
        long_term: tiered.long_term.clone(),
        next_segment_id: tiered.next_segment_id,
    };
    write_json(&dir.join("tree.json"), &tree)?;
    write_json(&dir.join("graph.json"), graph)?;
    // manifest last: its presence marks a complete snapshot
    write_json(&dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<StoreSnapshot, StoreError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(StoreError::Format(format!("{} has no manifest.json", dir.display())));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(StoreError::Format(format!(
            "unsupported snapshot format {}",
            manifest.format_version
        )));
    }
    let short_term: Vec<Message> = read_jsonl(&dir.join("messages.jsonl"))?;
    let entries: Vec<MemoryEntry> = read_jsonl(&dir.join("entries.jsonl"))?;
    let tree: TreeFile = read_json(&dir.join("tree.json"))?;
    let mut graph: TemporalGraph = read_json(&dir.join("graph.json"))?;
    graph.reindex();
    if tree.mid_term.dim() != manifest.embedding_dimension {
        return Err(StoreError::Dimension { expected: manifest.embedding_dimension, got: tree.mid_term.dim() });
    }
    let mut tiered = TieredMemory {
        short_term: short_term.into(),
        mid_term: tree.mid_term,
        long_term: tree.long_term,
        next_segment_id: tree.next_segment_id,
    };
    tiered.reindex();
    Ok(StoreSnapshot { manifest, flat: FlatStore::from_entries(entries), tiered, graph })
}
