//! Hierarchical three-tier memory engine. Short-term is a FIFO of raw turns;
//! overflow is segmented by similarity and attached to a summary tree
//! (mid-term); frequently retrieved segments are promoted to long-term.

use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    CallKind, ChatMessage, ChatRequest, Embedding, Gateway, GatewayError, LlmContext, MockHint, UsageRecord,
};
use crate::management::{self, HeatConfig, ManagementError};
use crate::memstore::{persist, FlatStore, Manifest, Message, Segment, SegmentId, StoreError, TemporalGraph, TieredMemory};
use crate::prompts::{PromptKind, PromptSet};
use crate::retrieval::{self, RetrievalHit, TieredContext, TieredRetrievalParams};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Extraction(#[from] crate::extraction::ExtractionError),
    #[error("snapshot belongs to conversation `{found}`, expected `{expected}`")]
    WrongConversation { expected: String, found: String },
}

impl From<ManagementError> for EngineError {
    fn from(e: ManagementError) -> Self {
        match e {
            ManagementError::Gateway(g) => EngineError::Gateway(g),
            ManagementError::Store(s) => EngineError::Store(s),
            ManagementError::InvalidArgument(m) => EngineError::Config(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// τ: short-term capacity in messages.
    pub short_term_capacity: usize,
    /// θ: promotion threshold on heat.
    pub heat_threshold: f64,
    pub top_k: usize,
    pub beam_width: usize,
    pub fanout: usize,
    /// σ: a message joins the open segment when its cosine to the segment
    /// centroid is at least this.
    pub similarity_threshold: f64,
    pub max_segment_len: usize,
    pub context_budget: usize,
    pub summary_max_tokens: u32,
    pub answer_max_tokens: u32,
    pub heat: HeatConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            short_term_capacity: 20,
            heat_threshold: 5.0,
            top_k: 10,
            beam_width: 3,
            fanout: 5,
            similarity_threshold: 0.5,
            max_segment_len: 10,
            context_budget: 20_000,
            summary_max_tokens: 64,
            answer_max_tokens: 256,
            heat: HeatConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let positive = [
            ("short_term_capacity", self.short_term_capacity),
            ("top_k", self.top_k),
            ("beam_width", self.beam_width),
            ("max_segment_len", self.max_segment_len),
            ("context_budget", self.context_budget),
            ("summary_max_tokens", self.summary_max_tokens as usize),
            ("answer_max_tokens", self.answer_max_tokens as usize),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(EngineError::Config(format!("{name} must be positive")));
        }
        if self.fanout < 2 {
            return Err(EngineError::Config("fanout must be at least 2".into()));
        }
        if self.heat_threshold.is_nan() || self.heat_threshold <= 0.0 || !(0.0..=1.0).contains(&self.similarity_threshold) || self.similarity_threshold == 0.0 {
            return Err(EngineError::Config("heat_threshold must be positive, similarity_threshold in (0, 1]".into()));
        }
        if self.heat.tau_hours.is_nan() || self.heat.tau_hours <= 0.0 || self.heat.w_frequency < 0.0 || self.heat.w_recency < 0.0 {
            return Err(EngineError::Config("heat weights must be non-negative and tau_hours positive".into()));
        }
        Ok(())
    }

    pub fn segmentation(&self) -> SegmentationParams {
        SegmentationParams {
            similarity_threshold: self.similarity_threshold,
            max_len: self.max_segment_len,
            summary_max_tokens: self.summary_max_tokens,
        }
    }

    pub fn retrieval(&self) -> TieredRetrievalParams {
        TieredRetrievalParams { top_k: self.top_k, beam_width: self.beam_width, context_budget: self.context_budget }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationParams {
    pub similarity_threshold: f64,
    pub max_len: usize,
    pub summary_max_tokens: u32,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        EngineConfig::default().segmentation()
    }
}

/// Greedy left-to-right grouping by cosine to the open segment's centroid,
/// then one summary call per segment. A summary that fails twice falls back
/// to the first message text and the segment is flagged degraded.
pub fn segment_messages(
    ctx: &LlmContext<'_>,
    msgs: &[Message],
    params: &SegmentationParams,
    next_id: &mut dyn FnMut() -> SegmentId,
) -> Result<Vec<Segment>, GatewayError> {
    if msgs.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = msgs.iter().map(|m| m.text.clone()).collect();
    let embs = ctx.embed(&texts)?;
    let dim = ctx.gateway.dimension();

    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, e) in embs.iter().enumerate() {
        let joins = groups.last().is_some_and(|g| {
            g.len() < params.max_len && e.cosine(&Embedding::centroid(dim, g.iter().map(|&j| &embs[j]))) >= params.similarity_threshold
        });
        if joins {
            groups.last_mut().expect("checked").push(i);
        } else {
            groups.push(vec![i]);
        }
    }

    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let messages: Vec<Message> = g.iter().map(|&i| msgs[i].clone()).collect();
        let (summary, degraded) = summarize_segment(ctx, &messages, params.summary_max_tokens);
        let embedding = ctx.embed_one(&summary)?;
        let created_at = messages.last().expect("non-empty group").timestamp;
        out.push(Segment {
            id: next_id(),
            messages,
            summary,
            embedding,
            created_at,
            last_access: created_at,
            access_count: 0,
            degraded,
        });
    }
    Ok(out)
}

fn summarize_segment(ctx: &LlmContext<'_>, messages: &[Message], max_tokens: u32) -> (String, bool) {
    let rendered: Vec<String> = messages.iter().map(Message::render).collect();
    let prompt = ctx.prompts.render(PromptKind::SegmentSummary, &[("messages", &rendered.join("\n"))]);
    let hint = MockHint::Summary(messages.iter().map(|m| m.text.clone()).collect());
    let req = ChatRequest::user(prompt).with_max_tokens(max_tokens).with_hint(hint);
    for attempt in 0..2 {
        match ctx.chat(CallKind::Manage, &req) {
            Ok((s, _)) if !s.trim().is_empty() => return (s.trim().to_string(), false),
            Ok(_) => log::warn!("empty segment summary (attempt {})", attempt + 1),
            Err(e) => log::warn!("segment summary failed (attempt {}): {e}", attempt + 1),
        }
    }
    (messages[0].text.clone(), true)
}

/// A turn handed to the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomingMessage {
    pub speaker: String,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub session_id: String,
}

impl IncomingMessage {
    pub fn new(speaker: &str, text: &str, timestamp: DateTime<Utc>) -> Self {
        Self { speaker: speaker.into(), text: text.into(), timestamp, session_id: String::new() }
    }

    pub fn in_session(mut self, session_id: &str) -> Self {
        self.session_id = session_id.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub seq: u64,
    pub short_term: usize,
    pub mid_term_segments: usize,
    pub long_term: usize,
    pub transferred: usize,
    pub promoted: Vec<SegmentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub answer: String,
    pub hits: Vec<RetrievalHit>,
    pub usage: UsageRecord,
}

const GENERATE_SYSTEM: &str = "You are a helpful assistant with access to memories of earlier conversation. \
Answer the question using the memory blocks below. Be concise.";

/// One engine per conversation.
pub struct Engine {
    conversation_id: String,
    config: EngineConfig,
    gateway: Arc<Gateway>,
    prompts: Arc<PromptSet>,
    tiered: TieredMemory,
    next_seq: u64,
    clock: Option<DateTime<Utc>>,
}

#[derive(Serialize, Deserialize)]
struct EngineState {
    config: EngineConfig,
    next_seq: u64,
    clock: Option<DateTime<Utc>>,
}

impl Engine {
    pub fn new(
        conversation_id: &str,
        config: EngineConfig,
        gateway: Arc<Gateway>,
        prompts: Arc<PromptSet>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let dim = gateway.dimension();
        Ok(Self {
            conversation_id: conversation_id.to_string(),
            config,
            gateway,
            prompts,
            tiered: TieredMemory::new(dim),
            next_seq: 0,
            clock: None,
        })
    }

    pub fn conversation_id(&self) -> &str {
        &self.conversation_id
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn tiers(&self) -> &TieredMemory {
        &self.tiered
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// Latest message timestamp seen; the engine's notion of "now".
    pub fn clock(&self) -> Option<DateTime<Utc>> {
        self.clock
    }

    pub fn ingested(&self) -> u64 {
        self.next_seq
    }

    fn ctx(&self) -> LlmContext<'_> {
        LlmContext::new(&self.gateway, &self.conversation_id, &self.prompts)
    }

    /// Enqueue one message; on overflow move the oldest half to mid-term.
    /// Then promote hot segments. On failure the tiers are unchanged.
    pub fn ingest(&mut self, msg: IncomingMessage) -> Result<IngestReport, EngineError> {
        let message = Message {
            conversation_id: self.conversation_id.clone(),
            session_id: msg.session_id,
            seq: self.next_seq,
            speaker: msg.speaker,
            text: msg.text,
            timestamp: msg.timestamp,
        };
        let now = self.clock.map_or(message.timestamp, |c| c.max(message.timestamp));
        self.tiered.short_term.push_back(message);

        let mut transferred = 0;
        if self.tiered.short_term.len() > self.config.short_term_capacity {
            let ctx = LlmContext::new(&self.gateway, &self.conversation_id, &self.prompts);
            let result = management::transfer_fifo_overflow(
                &ctx,
                &mut self.tiered,
                &self.config.segmentation(),
                self.config.fanout,
            );
            match result {
                Ok(segs) => transferred = segs.iter().map(|s| s.messages.len()).sum(),
                Err(e) => {
                    self.tiered.short_term.pop_back();
                    return Err(e.into());
                }
            }
        }
        let promoted = management::promote_hot_segments(&mut self.tiered, &self.config.heat, self.config.heat_threshold, now)?;
        self.clock = Some(now);
        self.next_seq += 1;
        Ok(IngestReport {
            seq: self.next_seq - 1,
            short_term: self.tiered.short_term.len(),
            mid_term_segments: self.tiered.mid_term.leaf_count(),
            long_term: self.tiered.long_term.len(),
            transferred,
            promoted,
        })
    }

    /// A query/response pair, ingested in order.
    pub fn ingest_turn(
        &mut self,
        query: IncomingMessage,
        response: IncomingMessage,
    ) -> Result<(IngestReport, IngestReport), EngineError> {
        let a = self.ingest(query)?;
        let b = self.ingest(response)?;
        Ok((a, b))
    }

    /// Read-only context assembly.
    pub fn retrieve(&self, query: &str) -> Result<TieredContext, EngineError> {
        let q = self.gateway.embed_one(query)?;
        Ok(retrieval::retrieve_tiered(&self.tiered, &q, &self.config.retrieval())?)
    }

    /// One generation call over an assembled context. Read-only.
    pub fn generate(&self, query: &str, context: &TieredContext) -> Result<(String, UsageRecord), EngineError> {
        let user = self.prompts.render(PromptKind::AnswerGenerate, &[("context", &context.render()), ("question", query)]);
        let req = ChatRequest::new(vec![ChatMessage::system(GENERATE_SYSTEM), ChatMessage::user(user)])
            .with_max_tokens(self.config.answer_max_tokens);
        let (text, usage) = self.ctx().chat(CallKind::Generate, &req)?;
        Ok((text.trim().to_string(), usage))
    }

    /// Count a retrieval of each segment at the engine clock.
    pub fn record_access(&mut self, segments: &[SegmentId]) {
        let Some(now) = self.clock else { return };
        for &id in segments {
            self.tiered.mid_term.touch_segment(id, now);
        }
    }

    /// Retrieve, generate, then mark the segments that reached the context.
    pub fn answer(&mut self, query: &str) -> Result<Answer, EngineError> {
        let context = self.retrieve(query)?;
        let (answer, usage) = self.generate(query, &context)?;
        self.record_access(&context.accessed_segments());
        Ok(Answer { answer, hits: context.hits().cloned().collect(), usage })
    }

    /// Answer first, then ingest the question and the answer.
    pub fn converse(&mut self, speaker: &str, query: &str, at: DateTime<Utc>) -> Result<Answer, EngineError> {
        let answer = self.answer(query)?;
        self.ingest_turn(IncomingMessage::new(speaker, query, at), IncomingMessage::new("assistant", &answer.answer, at))?;
        Ok(answer)
    }

    pub fn validate(&self) -> Result<(), String> {
        let ingested: Vec<u64> = (0..self.next_seq).collect();
        self.tiered.validate(&ingested, self.config.short_term_capacity)
    }

    pub fn save(&self, dir: &Path) -> Result<(), EngineError> {
        let mut manifest = Manifest::new(&self.conversation_id, self.gateway.dimension());
        let state = EngineState { config: self.config.clone(), next_seq: self.next_seq, clock: self.clock };
        manifest.extra = serde_json::to_value(state).map_err(StoreError::from)?;
        persist::save(dir, &manifest, &FlatStore::new(), &self.tiered, &TemporalGraph::new())?;
        Ok(())
    }

    pub fn load(dir: &Path, gateway: Arc<Gateway>, prompts: Arc<PromptSet>) -> Result<Self, EngineError> {
        let snap = persist::load(dir)?;
        if snap.manifest.embedding_dimension != gateway.dimension() {
            return Err(StoreError::Dimension { expected: gateway.dimension(), got: snap.manifest.embedding_dimension }.into());
        }
        let state: EngineState = serde_json::from_value(snap.manifest.extra).map_err(StoreError::from)?;
        state.config.validate()?;
        Ok(Self {
            conversation_id: snap.manifest.conversation_id,
            config: state.config,
            gateway,
            prompts,
            tiered: snap.tiered,
            next_seq: state.next_seq,
            clock: state.clock,
        })
    }

    /// Replace this engine's state with a snapshot of the same conversation.
    pub fn restore(&mut self, dir: &Path) -> Result<(), EngineError> {
        let other = Self::load(dir, self.gateway.clone(), self.prompts.clone())?;
        if other.conversation_id != self.conversation_id {
            return Err(EngineError::WrongConversation {
                expected: self.conversation_id.clone(),
                found: other.conversation_id,
            });
        }
        *self = other;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use chrono::{Duration, TimeZone};

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    fn message(seq: u64, text: &str) -> Message {
        Message {
            conversation_id: "c".into(),
            session_id: "s".into(),
            seq,
            speaker: "u".into(),
            text: text.into(),
            timestamp: t0(),
        }
    }

    fn segment_seqs(msgs: &[Message]) -> Vec<Vec<u64>> {
        let g = Gateway::mock(64);
        let p = PromptSet::default();
        let ctx = LlmContext::new(&g, "c", &p);
        let mut n = 0;
        segment_messages(&ctx, msgs, &SegmentationParams::default(), &mut || {
            n += 1;
            SegmentId(n)
        })
        .unwrap()
        .iter()
        .map(|s| s.seqs().collect())
        .collect()
    }

    #[test]
    fn identical_texts_form_one_segment() {
        let msgs: Vec<Message> = (0..6).map(|i| message(i, "same words")).collect();
        assert_eq!(segment_seqs(&msgs), vec![vec![0, 1, 2, 3, 4, 5]]);
    }

    #[test]
    fn disjoint_topics_split_every_message() {
        let msgs: Vec<Message> =
            (0..6).map(|i| message(i, if i % 2 == 0 { "apples oranges" } else { "rockets engines" })).collect();
        assert_eq!(segment_seqs(&msgs), (0..6).map(|i| vec![i]).collect::<Vec<_>>());
    }

    #[test]
    fn two_topic_blocks_split_at_boundary() {
        let a = ["garden roses bloom", "garden roses water", "garden roses soil", "garden roses prune", "garden roses smell", "garden roses weeds"];
        let b = ["engine oil change", "engine oil belt", "engine oil filter", "engine oil leak", "engine oil pressure", "engine oil spark"];
        let msgs: Vec<Message> = a.iter().chain(b.iter()).enumerate().map(|(i, t)| message(i as u64, t)).collect();

        // hand evaluation: a joins the open group iff cos(e, centroid) >= 0.5
        let mock = MockBackend::new(64);
        let embs: Vec<Embedding> = msgs.iter().map(|m| mock.embed_text(&m.text)).collect();
        let mut oracle: Vec<Vec<u64>> = vec![vec![0]];
        for i in 1..embs.len() {
            let open = oracle.last().unwrap();
            let mut mean = vec![0.0; 64];
            for &j in open {
                for (m, x) in mean.iter_mut().zip(&embs[j as usize].0) {
                    *m += x / open.len() as f64;
                }
            }
            let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
            let cos = embs[i].0.iter().zip(&mean).map(|(x, y)| x * y).sum::<f64>() / norm;
            if cos >= 0.5 && open.len() < 10 {
                oracle.last_mut().unwrap().push(i as u64);
            } else {
                oracle.push(vec![i as u64]);
            }
        }
        assert_eq!(oracle, vec![(0..6).collect::<Vec<_>>(), (6..12).collect()]);
        assert_eq!(segment_seqs(&msgs), oracle);
    }

    #[test]
    fn max_len_caps_segments() {
        let msgs: Vec<Message> = (0..23).map(|i| message(i, "same words")).collect();
        let lens: Vec<usize> = segment_seqs(&msgs).iter().map(Vec::len).collect();
        assert_eq!(lens, vec![10, 10, 3]);
    }

    fn engine(cfg: EngineConfig) -> Engine {
        Engine::new("c", cfg, Arc::new(Gateway::mock(64)), Arc::new(PromptSet::default())).unwrap()
    }

    #[test]
    fn ingestion_follows_ceil_rule() {
        let mut e = engine(EngineConfig::default());
        for i in 0..20 {
            let r = e.ingest(IncomingMessage::new("u", &format!("turn {i}"), t0())).unwrap();
            assert_eq!(r.transferred, 0);
        }
        assert_eq!(e.tiers().short_term.len(), 20);
        let r = e.ingest(IncomingMessage::new("u", "turn 20", t0())).unwrap();
        assert_eq!(r.transferred, 11);
        assert_eq!(r.short_term, 10);
        e.validate().unwrap();
    }

    #[test]
    fn answers_touch_segments_and_raise_heat() {
        let mut e = engine(EngineConfig { short_term_capacity: 4, ..Default::default() });
        for i in 0..5 {
            e.ingest(IncomingMessage::new("Alice", "my cat is named Miso", t0() + Duration::minutes(i))).unwrap();
        }
        let seg = e.tiers().mid_term.leaves().next().unwrap().payload.clone().unwrap();
        let now = e.clock().unwrap();
        let before = management::compute_heat(&e.config().heat, &seg, now).value;
        e.answer("what is the cat named?").unwrap();
        e.answer("what is the cat named?").unwrap();
        let after = e.tiers().mid_term.segment(seg.id).unwrap();
        assert_eq!(after.access_count, seg.access_count + 2);
        assert!(management::compute_heat(&e.config().heat, after, now).value > before);
    }

    #[test]
    fn empty_memory_answer_is_deterministic() {
        let mut a = engine(EngineConfig::default());
        let mut b = engine(EngineConfig::default());
        let x = a.answer("anything?").unwrap();
        let y = b.answer("anything?").unwrap();
        assert_eq!(x, y);
        assert!(x.hits.is_empty());
    }

    #[test]
    fn snapshot_roundtrip_preserves_answers() {
        let mut a = engine(EngineConfig { short_term_capacity: 6, ..Default::default() });
        for i in 0..15 {
            a.ingest(IncomingMessage::new("u", &format!("topic{} words {i}", i % 3), t0() + Duration::hours(i))).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let mut b = Engine::load(dir.path(), Arc::new(Gateway::mock(64)), Arc::new(PromptSet::default())).unwrap();
        assert_eq!(a.answer("topic1").unwrap(), b.answer("topic1").unwrap());
        assert!(Engine::load(dir.path(), Arc::new(Gateway::mock(32)), Arc::new(PromptSet::default())).is_err());
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = EngineConfig { fanout: 1, ..Default::default() };
        assert!(Engine::new("c", cfg, Arc::new(Gateway::mock(8)), Arc::new(PromptSet::default())).is_err());
    }
}
