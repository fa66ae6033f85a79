//! A common face for memory pipelines so the benchmark runner can drive any
//! of them, plus a flat single-store baseline.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::extraction;
use crate::gateway::{CallKind, ChatMessage, ChatRequest, Gateway, LlmContext};
use crate::hiermem::{Answer, Engine, EngineConfig, EngineError, IncomingMessage};
use crate::management;
use crate::memstore::{EntryId, ExactIndex, FlatStore, MemoryEntry, Message, ScanFilter, VectorIndex};
use crate::prompts::{PromptKind, PromptSet};
use crate::retrieval::{self, Bm25Params, HitSource, RetrievalHit};

pub trait MemoryPipeline: Send {
    fn ingest(&mut self, msg: IncomingMessage) -> Result<(), EngineError>;
    fn answer(&mut self, question: &str) -> Result<Answer, EngineError>;
}

impl MemoryPipeline for Engine {
    fn ingest(&mut self, msg: IncomingMessage) -> Result<(), EngineError> {
        Engine::ingest(self, msg).map(|_| ())
    }

    fn answer(&mut self, question: &str) -> Result<Answer, EngineError> {
        Engine::answer(self, question)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    /// The three-tier engine.
    Hiermem,
    /// Raw turns in a flat store, hybrid lexical + vector retrieval.
    FlatArchive,
    /// Windowed summary extraction into a flat store, hybrid retrieval.
    FlatSummary,
}

impl std::str::FromStr for PipelineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hiermem" => Ok(Self::Hiermem),
            "flat_archive" | "flat-archive" => Ok(Self::FlatArchive),
            "flat_summary" | "flat-summary" => Ok(Self::FlatSummary),
            other => Err(format!("unknown pipeline `{other}` (hiermem, flat_archive, flat_summary)")),
        }
    }
}

pub fn build_pipeline(
    kind: PipelineKind,
    conversation_id: &str,
    config: &EngineConfig,
    gateway: Arc<Gateway>,
    prompts: Arc<PromptSet>,
) -> Result<Box<dyn MemoryPipeline>, EngineError> {
    Ok(match kind {
        PipelineKind::Hiermem => Box::new(Engine::new(conversation_id, config.clone(), gateway, prompts)?),
        PipelineKind::FlatArchive => Box::new(FlatPipeline::new(conversation_id, FlatMode::Archive, config, gateway, prompts)),
        PipelineKind::FlatSummary => {
            Box::new(FlatPipeline::new(conversation_id, FlatMode::Summary { window: 5 }, config, gateway, prompts))
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlatMode {
    Archive,
    Summary { window: usize },
}

pub struct FlatPipeline {
    conversation_id: String,
    mode: FlatMode,
    gateway: Arc<Gateway>,
    prompts: Arc<PromptSet>,
    store: FlatStore,
    index: ExactIndex<EntryId>,
    pending: Vec<Message>,
    next_seq: u64,
    top_k: usize,
    answer_max_tokens: u32,
}

impl FlatPipeline {
    pub fn new(conversation_id: &str, mode: FlatMode, config: &EngineConfig, gateway: Arc<Gateway>, prompts: Arc<PromptSet>) -> Self {
        Self {
            conversation_id: conversation_id.to_string(),
            mode,
            gateway,
            prompts,
            store: FlatStore::new(),
            index: ExactIndex::new(),
            pending: Vec::new(),
            next_seq: 0,
            top_k: config.top_k,
            answer_max_tokens: config.answer_max_tokens,
        }
    }

    pub fn store(&self) -> &FlatStore {
        &self.store
    }

    fn store_entry(&mut self, entry: MemoryEntry) -> Result<(), EngineError> {
        let emb = entry.embedding.clone();
        let id = self.store.append(entry);
        self.index.upsert(id, emb)?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), EngineError> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let msgs = std::mem::take(&mut self.pending);
        let ctx = LlmContext::new(&self.gateway, &self.conversation_id, &self.prompts);
        let out = extraction::extract_summary(&ctx, &msgs)?;
        let mut content = out.summary.clone();
        if !out.keywords.is_empty() {
            content.push_str(" [");
            content.push_str(&out.keywords.join(", "));
            content.push(']');
        }
        let emb = ctx.embed_one(&content)?;
        let last = msgs.last().expect("non-empty");
        let mut entry = MemoryEntry::new(content, emb, last.timestamp);
        entry.keywords = out.keywords.into_iter().collect();
        entry.tags = out.tags.into_iter().collect();
        entry.source_seqs = msgs.iter().map(|m| m.seq).collect();
        self.store_entry(entry)
    }

    fn search(&self, question: &str) -> Result<Vec<RetrievalHit>, EngineError> {
        let valid = self.store.scan(&ScanFilter::valid());
        if valid.is_empty() {
            return Ok(Vec::new());
        }
        let hit = |id: EntryId, score: f64| RetrievalHit {
            source: HitSource::Flat,
            reference: id.to_string(),
            segment: None,
            score,
            text: self.store.get(id).map(|e| e.content.clone()).unwrap_or_default(),
        };
        let corpus: Vec<(EntryId, &str)> = valid.iter().map(|e| (e.id, e.content.as_str())).collect();
        let lexical: Vec<RetrievalHit> = retrieval::score_bm25(question, &corpus, Bm25Params::default(), self.top_k)
            .into_iter()
            .filter(|(_, s)| *s > 0.0)
            .map(|(id, s)| hit(id, s))
            .collect();
        let q = self.gateway.embed_one(question)?;
        let vector: Vec<RetrievalHit> = self
            .index
            .topk(&q, self.top_k + valid.len().min(self.top_k))?
            .into_iter()
            .filter(|(id, _)| self.store.get(*id).is_some_and(MemoryEntry::is_valid))
            .take(self.top_k)
            .map(|(id, s)| hit(id, s))
            .collect();
        let mut fused = retrieval::fuse_min_max([lexical, vector]);
        fused.truncate(self.top_k);
        Ok(fused)
    }
}

impl MemoryPipeline for FlatPipeline {
    fn ingest(&mut self, msg: IncomingMessage) -> Result<(), EngineError> {
        let m = Message {
            conversation_id: self.conversation_id.clone(),
            session_id: msg.session_id,
            seq: self.next_seq,
            speaker: msg.speaker,
            text: msg.text,
            timestamp: msg.timestamp,
        };
        match self.mode {
            FlatMode::Archive => {
                let ctx = LlmContext::new(&self.gateway, &self.conversation_id, &self.prompts);
                let entry = extraction::archive_direct_embedded(&ctx, &m)?;
                self.store_entry(entry)?;
            }
            FlatMode::Summary { window } => {
                self.pending.push(m);
                if self.pending.len() >= window {
                    self.flush()?;
                }
            }
        }
        self.next_seq += 1;
        Ok(())
    }

    fn answer(&mut self, question: &str) -> Result<Answer, EngineError> {
        self.flush()?;
        let hits = self.search(question)?;
        let context: Vec<&str> = hits.iter().map(|h| h.text.as_str()).collect();
        let user = self.prompts.render(
            PromptKind::AnswerGenerate,
            &[("context", &format!("[MEMORIES]\n{}\n", context.join("\n"))), ("question", question)],
        );
        let req = ChatRequest::new(vec![ChatMessage::system("Answer the question using the memories. Be concise."), ChatMessage::user(user)])
            .with_max_tokens(self.answer_max_tokens);
        let (text, usage) = self.gateway.chat(&self.conversation_id, CallKind::Generate, &req)?;
        let now = self.store.entries().iter().map(|e| e.created_at).max();
        if let Some(now) = now {
            for h in &hits {
                if let Ok(id) = h.reference.trim_start_matches('e').parse::<u64>() {
                    if let Ok(e) = self.store.get_mut(EntryId(id)) {
                        management::on_access(e, now);
                    }
                }
            }
        }
        Ok(Answer { answer: text.trim().to_string(), hits, usage })
    }
}
