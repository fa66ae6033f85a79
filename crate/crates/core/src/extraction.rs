//! Information extraction: direct archiving, summarization-based extraction
//! and graph (entity + relation) extraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::gateway::{
    CallKind, ChatMessage, ChatRequest, Embedding, GatewayError, LlmContext, MockHint, ParsedError,
};
use crate::memstore::graph::canonical_name;
use crate::memstore::{MemoryEntry, Message};
use crate::prompts::PromptKind;
use crate::text;

pub const MAX_KEYWORDS: usize = 10;

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("nothing to extract from")]
    EmptyInput,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{stage} output unparseable after repair: {message}")]
    Parse { stage: &'static str, message: String, raw: String },
}

impl ExtractionError {
    fn from_parsed(stage: &'static str, e: ParsedError) -> Self {
        match e {
            ParsedError::Gateway(g) => ExtractionError::Gateway(g),
            ParsedError::Parse(p) => ExtractionError::Parse { stage, message: p.message, raw: p.raw },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryExtract {
    pub summary: String,
    pub keywords: Vec<String>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation_type: String,
    pub object: String,
    pub fact: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleExtract {
    pub entities: Vec<String>,
    pub triples: Vec<Triple>,
}

/// Store the raw turn verbatim. No model call.
pub fn archive_direct(msg: &Message, embedding: Embedding) -> MemoryEntry {
    let mut entry = MemoryEntry::new(msg.render(), embedding, msg.timestamp);
    entry.source_seqs = vec![msg.seq];
    entry
}

/// [`archive_direct`], embedding the rendered content through `ctx`.
pub fn archive_direct_embedded(ctx: &LlmContext<'_>, msg: &Message) -> Result<MemoryEntry, GatewayError> {
    let content = msg.render();
    let emb = if msg.text.is_empty() { Embedding::zeros(ctx.gateway.dimension()) } else { ctx.embed_one(&content)? };
    Ok(archive_direct(msg, emb))
}

/// Lowercase, NFC, trim, drop empties, dedupe preserving order, cap.
pub fn normalize_terms<I, S>(terms: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out: Vec<String> = Vec::new();
    for t in terms {
        let norm: String = t.as_ref().trim().nfc().collect::<String>().to_lowercase();
        if !norm.is_empty() && !out.contains(&norm) {
            out.push(norm);
        }
        if out.len() == MAX_KEYWORDS {
            break;
        }
    }
    out
}

#[derive(Deserialize)]
struct RawSummary {
    summary: String,
    #[serde(default)]
    keywords: Vec<String>,
    #[serde(default)]
    tags: Vec<String>,
}

fn parse_summary(raw: &str) -> Result<SummaryExtract, String> {
    let body = text::find_json_object(raw).ok_or("no JSON object found")?;
    let parsed: RawSummary = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let summary = parsed.summary.trim().to_string();
    if summary.is_empty() {
        return Err("summary is empty".into());
    }
    Ok(SummaryExtract {
        summary,
        keywords: normalize_terms(&parsed.keywords),
        tags: normalize_terms(&parsed.tags),
    })
}

/// One call on the happy path; one repair call on a parse failure.
pub fn extract_summary(ctx: &LlmContext<'_>, msgs: &[Message]) -> Result<SummaryExtract, ExtractionError> {
    if msgs.is_empty() {
        return Err(ExtractionError::EmptyInput);
    }
    let rendered: Vec<String> = msgs.iter().map(Message::render).collect();
    let prompt = ctx.prompts.render(PromptKind::SummaryExtract, &[("message", &rendered.join("\n"))]);
    let payload = msgs.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n");
    let req = ChatRequest::user(prompt).with_max_tokens(256).with_hint(MockHint::JsonSummary(payload));
    ctx.chat_parsed(CallKind::Extract, &req, parse_summary)
        .map_err(|e| ExtractionError::from_parsed("summary extraction", e))
}

/// Split `msgs` into consecutive windows of `window` turns.
pub fn windows(msgs: &[Message], window: usize) -> impl Iterator<Item = &[Message]> {
    msgs.chunks(window.max(1))
}

const ENTITY_FORMAT: &str =
    "Respond with only a JSON object of the form {\"entities\": [\"<speaker>\", \"<entity>\", ...]}.";
const RELATION_FORMAT: &str = "Respond with only a JSON object of the form {\"facts\": [{\"subject\": \"<entity>\", \"relation_type\": \"<ALL_CAPS>\", \"object\": \"<entity>\", \"fact\": \"<detailed fact>\"}]}.";

#[derive(Deserialize)]
struct RawEntities {
    entities: Vec<String>,
}

#[derive(Deserialize)]
struct RawFacts {
    facts: Vec<RawFact>,
}

#[derive(Deserialize)]
struct RawFact {
    subject: String,
    relation_type: String,
    object: String,
    #[serde(default)]
    fact: String,
}

fn parse_entities(raw: &str) -> Result<Vec<String>, String> {
    let body = text::find_json_object(raw).ok_or("no JSON object found")?;
    let parsed: RawEntities = serde_json::from_str(body).map_err(|e| e.to_string())?;
    Ok(parsed.entities)
}

fn parse_facts(raw: &str) -> Result<Vec<RawFact>, String> {
    let body = text::find_json_object(raw).ok_or("no JSON object found")?;
    let parsed: RawFacts = serde_json::from_str(body).map_err(|e| e.to_string())?;
    Ok(parsed.facts)
}

fn is_relation_type(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
        && s.chars().any(|c| c.is_ascii_uppercase())
}

/// Entities deduplicated by canonical name, speaker forced to the front.
fn validate_entities(speaker: &str, raw: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = vec![speaker.trim().to_string()];
    for e in raw {
        let e = e.trim().to_string();
        if e.is_empty() || out.iter().any(|o| canonical_name(o) == canonical_name(&e)) {
            continue;
        }
        out.push(e);
    }
    out
}

/// Keep only triples with distinct endpoints drawn from `entities` and an
/// all-caps relation type. Offending triples are dropped, never repaired.
fn validate_triples(entities: &[String], raw: Vec<RawFact>) -> Vec<Triple> {
    let lookup = |name: &str| entities.iter().find(|e| canonical_name(e) == canonical_name(name)).cloned();
    raw.into_iter()
        .filter_map(|f| {
            let subject = lookup(&f.subject)?;
            let object = lookup(&f.object)?;
            if canonical_name(&subject) == canonical_name(&object) || !is_relation_type(f.relation_type.trim()) {
                return None;
            }
            let fact = if f.fact.trim().is_empty() {
                format!("{subject} {} {object}", f.relation_type.trim())
            } else {
                f.fact.trim().to_string()
            };
            Some(Triple { subject, relation_type: f.relation_type.trim().to_string(), object, fact })
        })
        .collect()
}

/// Two chained calls: entities (speaker first), then relations restricted to
/// those entities.
pub fn extract_graph(ctx: &LlmContext<'_>, prev: &[Message], cur: &Message) -> Result<TripleExtract, ExtractionError> {
    let previous = prev.iter().map(Message::render).collect::<Vec<_>>().join("\n");
    let current = cur.render();
    let vars = [("previous messages", previous.as_str()), ("current message", current.as_str())];

    let entity_req = ChatRequest::new(vec![
        ChatMessage::system(ENTITY_FORMAT),
        ChatMessage::user(ctx.prompts.render(PromptKind::EntityExtract, &vars)),
    ]);
    let raw_entities = ctx
        .chat_parsed(CallKind::Extract, &entity_req, parse_entities)
        .map_err(|e| ExtractionError::from_parsed("entity extraction", e))?;
    let entities = validate_entities(&cur.speaker, raw_entities);

    let listed = entities.join("\n");
    let relation_req = ChatRequest::new(vec![
        ChatMessage::system(RELATION_FORMAT),
        ChatMessage::user(ctx.prompts.render(
            PromptKind::RelationExtract,
            &[vars[0], vars[1], ("entities", listed.as_str())],
        )),
    ]);
    let raw_facts = ctx
        .chat_parsed(CallKind::Extract, &relation_req, parse_facts)
        .map_err(|e| ExtractionError::from_parsed("relation extraction", e))?;
    let triples = validate_triples(&entities, raw_facts);
    Ok(TripleExtract { entities, triples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, MockBackend};
    use crate::prompts::PromptSet;
    use chrono::{TimeZone, Utc};
    use std::sync::Arc;

    fn msg(seq: u64, speaker: &str, text: &str) -> Message {
        Message {
            conversation_id: "c".into(),
            session_id: "s".into(),
            seq,
            speaker: speaker.into(),
            text: text.into(),
            timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        }
    }

    fn setup() -> (Arc<MockBackend>, Gateway, PromptSet) {
        let mock = Arc::new(MockBackend::new(64));
        let g = Gateway::new(mock.clone());
        (mock, g, PromptSet::default())
    }

    #[test]
    fn direct_archive_is_verbatim_and_free() {
        let (_, g, p) = setup();
        let ctx = LlmContext::new(&g, "c", &p);
        let e = archive_direct_embedded(&ctx, &msg(3, "Alice", "I moved to Paris")).unwrap();
        assert_eq!(e.content, "Alice: I moved to Paris");
        assert_eq!(e.source_seqs, vec![3]);
        let empty = archive_direct_embedded(&ctx, &msg(4, "Alice", "")).unwrap();
        assert_eq!(empty.content, "Alice: ");
        assert!(empty.embedding.is_zero());
        assert_eq!(g.usage_report("c").overall().calls, 0);
    }

    #[test]
    fn summary_keywords_follow_mock_frequency_rule() {
        let (_, g, p) = setup();
        let ctx = LlmContext::new(&g, "c", &p);
        let out = extract_summary(&ctx, &[msg(0, "Alice", "I adopted a golden retriever named Max")]).unwrap();
        // non-stopword tokens: adopted golden retriever named max, each once
        assert_eq!(out.keywords, vec!["adopted", "golden", "retriever", "named", "max"]);
        assert_eq!(out.summary, "I adopted a golden retriever named Max");
        assert_eq!(g.usage_report("c").kind(CallKind::Extract).calls, 1);
    }

    #[test]
    fn empty_message_gives_empty_keywords() {
        let (_, g, p) = setup();
        let ctx = LlmContext::new(&g, "c", &p);
        let out = extract_summary(&ctx, &[msg(0, "Alice", "")]).unwrap();
        assert!(out.keywords.is_empty());
        assert!(!out.summary.is_empty());
        assert!(matches!(extract_summary(&ctx, &[]), Err(ExtractionError::EmptyInput)));
    }

    #[test]
    fn repair_then_fail() {
        let (mock, g, p) = setup();
        let ctx = LlmContext::new(&g, "c", &p);
        mock.push_script(["not json", "{\"summary\": \"ok\", \"keywords\": [\"A\", \"a\", \" b \"]}"]);
        let out = extract_summary(&ctx, &[msg(0, "u", "x")]).unwrap();
        assert_eq!(out.keywords, vec!["a", "b"]);

        mock.push_script(["garbage", "{\"summary\": \"\"}"]);
        match extract_summary(&ctx, &[msg(0, "u", "x")]) {
            Err(ExtractionError::Parse { raw, .. }) => assert_eq!(raw, "{\"summary\": \"\"}"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(g.usage_report("c").kind(CallKind::Extract).calls, 4);
    }

    #[test]
    fn normalization_caps_and_dedupes() {
        let many: Vec<String> = (0..20).map(|i| format!("K{i}")).collect();
        assert_eq!(normalize_terms(&many).len(), MAX_KEYWORDS);
        // NFC: "e" + combining acute == "é"
        assert_eq!(normalize_terms(["Cafe\u{301}", "café"]), vec!["café"]);
    }

    #[test]
    fn graph_extraction_enforces_invariants() {
        let (mock, g, p) = setup();
        let ctx = LlmContext::new(&g, "c", &p);
        mock.push_script([
            r#"{"entities": ["hiking", "Bob", "Alice"]}"#,
            r#"{"facts": [
                {"subject": "Alice", "relation_type": "LOVES", "object": "hiking", "fact": "Alice loves hiking"},
                {"subject": "Alice", "relation_type": "LOVES", "object": "Alice", "fact": "self"},
                {"subject": "Alice", "relation_type": "KNOWS", "object": "Carol", "fact": "unlisted"},
                {"subject": "Alice", "relation_type": "hikes with", "object": "Bob", "fact": "lowercase"}
            ]}"#,
        ]);
        let out = extract_graph(&ctx, &[], &msg(0, "Alice", "I love hiking with Bob")).unwrap();
        assert_eq!(out.entities, vec!["Alice", "hiking", "Bob"]);
        assert_eq!(out.triples.len(), 1);
        assert_eq!(out.triples[0].relation_type, "LOVES");
        assert_eq!(g.usage_report("c").kind(CallKind::Extract).calls, 2);
    }

    #[test]
    fn graph_extraction_is_scripted_and_stable() {
        let (mock, g, p) = setup();
        let ctx = LlmContext::new(&g, "c", &p);
        let script = [
            r#"{"entities": ["Alice", "Paris", "Acme"]}"#,
            r#"{"facts": [
                {"subject": "Alice", "relation_type": "LIVES_IN", "object": "Paris", "fact": "Alice lives in Paris"},
                {"subject": "Alice", "relation_type": "WORKS_FOR", "object": "Acme", "fact": "Alice works for Acme"}
            ]}"#,
        ];
        mock.push_script(script);
        let cur = msg(1, "Alice", "I live in Paris and work for Acme.");
        let a = extract_graph(&ctx, &[msg(0, "Bob", "Where are you?")], &cur).unwrap();
        mock.push_script(script);
        let b = extract_graph(&ctx, &[msg(0, "Bob", "Where are you?")], &cur).unwrap();
        assert_eq!(a, b);
        let rels: Vec<_> = a.triples.iter().map(|t| (t.relation_type.as_str(), t.object.as_str())).collect();
        assert_eq!(rels, vec![("LIVES_IN", "Paris"), ("WORKS_FOR", "Acme")]);
    }

    #[test]
    fn graph_parse_failure_after_repair() {
        let (mock, g, p) = setup();
        let ctx = LlmContext::new(&g, "c", &p);
        mock.push_script(["nope", "still nope"]);
        let err = extract_graph(&ctx, &[], &msg(0, "Alice", "hi")).unwrap_err();
        assert!(matches!(err, ExtractionError::Parse { stage: "entity extraction", .. }));
    }
}
