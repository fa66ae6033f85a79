//! Deterministic offline backend.
//!
//! Chat resolution order:
//! 1. the scripted reply queue (front first),
//! 2. the first [`MockRule`] whose substrings all occur in the prompt,
//! 3. prompt markers: `[[ECHO:x]]`, `[[SUMMARY]]`, `[[JSON_SUMMARY]]`,
//! 4. the request's [`MockHint`],
//! 5. the last 200 characters of the prompt.
//!
//! Free-text replies are capped at `4 * max_output_tokens` characters.
//! Tokens are counted as ceil(chars / 4) on both sides.
//!
//! Embeddings are hashed bag-of-words: lowercase, split on non-alphanumerics,
//! drop stopwords, FNV-1a each token into `dimension` buckets, L2-normalize.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendKind, ChatRequest, Completion, Embedding, MockHint};
use crate::text;

const ECHO_OPEN: &str = "[[ECHO:";
const SUMMARY_MARKER: &str = "[[SUMMARY]]";
const JSON_SUMMARY_MARKER: &str = "[[JSON_SUMMARY]]";

/// Reply with `reply` when every string in `contains` occurs in the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: Vec<String>,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub dimension: usize,
    pub rules: Vec<MockRule>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self { dimension: 256, rules: Vec::new() }
    }
}

pub struct MockBackend {
    dimension: usize,
    rules: Vec<MockRule>,
    script: Mutex<VecDeque<String>>,
}

impl MockBackend {
    pub fn new(dimension: usize) -> Self {
        Self::from_config(MockConfig { dimension, rules: Vec::new() })
    }

    pub fn from_config(cfg: MockConfig) -> Self {
        assert!(cfg.dimension > 0, "mock embedding dimension must be positive");
        Self { dimension: cfg.dimension, rules: cfg.rules, script: Mutex::new(VecDeque::new()) }
    }

    pub fn with_rule(mut self, contains: &[&str], reply: &str) -> Self {
        self.rules.push(MockRule {
            contains: contains.iter().map(|s| s.to_string()).collect(),
            reply: reply.to_string(),
        });
        self
    }

    /// Queue replies returned verbatim by the next chat calls.
    pub fn push_script<I, S>(&self, replies: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut q = self.script.lock().expect("script poisoned");
        q.extend(replies.into_iter().map(Into::into));
    }

    pub fn embed_text(&self, text: &str) -> Embedding {
        let mut v = vec![0.0; self.dimension];
        for tok in text::content_tokens(text) {
            let bucket = (text::fnv1a64(tok.as_bytes()) % self.dimension as u64) as usize;
            v[bucket] += 1.0;
        }
        Embedding(v).normalized()
    }

    fn respond(&self, req: &ChatRequest, prompt: &str) -> String {
        if let Some(reply) = self.script.lock().expect("script poisoned").pop_front() {
            return reply;
        }
        if let Some(rule) = self
            .rules
            .iter()
            .find(|r| r.contains.iter().all(|needle| prompt.contains(needle.as_str())))
        {
            return rule.reply.clone();
        }
        let cap = req.max_output_tokens as usize * 4;
        if let Some(start) = prompt.find(ECHO_OPEN) {
            let rest = &prompt[start + ECHO_OPEN.len()..];
            if let Some(end) = rest.find("]]") {
                return rest[..end].to_string();
            }
        }
        if let Some(pos) = prompt.find(SUMMARY_MARKER) {
            let body = &prompt[pos + SUMMARY_MARKER.len()..];
            let items: Vec<&str> = body.lines().filter(|l| !l.trim().is_empty()).collect();
            return summarize_items(&items, cap);
        }
        if let Some(pos) = prompt.find(JSON_SUMMARY_MARKER) {
            return json_summary(&prompt[pos + JSON_SUMMARY_MARKER.len()..], cap);
        }
        match &req.hint {
            Some(MockHint::Echo(s)) => s.clone(),
            Some(MockHint::Summary(items)) => {
                let items: Vec<&str> = items.iter().map(String::as_str).collect();
                summarize_items(&items, cap)
            }
            Some(MockHint::JsonSummary(payload)) => json_summary(payload, cap),
            None => text::truncate_chars(text::tail_chars(prompt, 200), cap).to_string(),
        }
    }
}

fn summarize_items(items: &[&str], cap: usize) -> String {
    let joined = items.iter().map(|s| text::first_sentence(s)).collect::<Vec<_>>().join("; ");
    text::truncate_chars(&joined, cap).to_string()
}

fn json_summary(payload: &str, cap: usize) -> String {
    let summary = text::first_sentence(payload);
    let summary = if summary.is_empty() { "(no content)" } else { summary };
    let keywords = text::top_keywords(payload, 5);
    let tags: Vec<&str> = if keywords.is_empty() { vec![] } else { vec!["dialogue"] };
    serde_json::json!({
        "summary": text::truncate_chars(summary, cap),
        "keywords": keywords,
        "tags": tags,
    })
    .to_string()
}

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        let prompt = req.prompt_text();
        let text = self.respond(req, &prompt);
        Ok(Completion {
            prompt_tokens: text::estimate_tokens(&prompt),
            completion_tokens: text::estimate_tokens(&text),
            text,
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CallKind, Gateway};
    use std::sync::Arc;

    fn chat(b: &MockBackend, prompt: &str) -> Completion {
        b.complete(&ChatRequest::user(prompt)).unwrap()
    }

    #[test]
    fn echo_marker() {
        let b = MockBackend::new(32);
        let c = chat(&b, "please [[ECHO:x]] now");
        assert_eq!(c.text, "x");
        assert_eq!(c.completion_tokens, 1);
    }

    #[test]
    fn summary_marker_joins_first_sentences() {
        let b = MockBackend::new(32);
        let c = chat(&b, "[[SUMMARY]]\nI moved to Paris. It rains.\nBob got a dog! Cute.");
        assert_eq!(c.text, "I moved to Paris.; Bob got a dog!");
    }

    #[test]
    fn json_summary_marker_is_wellformed() {
        let b = MockBackend::new(32);
        let c = chat(&b, "[[JSON_SUMMARY]]I adopted a golden retriever named Max");
        let v: serde_json::Value = serde_json::from_str(&c.text).unwrap();
        assert_eq!(v["summary"], "I adopted a golden retriever named Max");
        assert_eq!(v["keywords"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn default_reply_is_prompt_tail() {
        let b = MockBackend::new(32);
        let prompt = "z".repeat(150) + &"y".repeat(150);
        assert_eq!(chat(&b, &prompt).text, prompt[100..]);
        assert_eq!(chat(&b, &prompt).prompt_tokens, 75);
    }

    #[test]
    fn scripts_and_rules_take_precedence() {
        let b = MockBackend::new(32).with_rule(&["cat", "called"], "Miso");
        assert_eq!(chat(&b, "what is the cat called? [[ECHO:no]]").text, "Miso");
        b.push_script(["first"]);
        assert_eq!(chat(&b, "what is the cat called?").text, "first");
        assert_eq!(chat(&b, "unrelated [[ECHO:e]]").text, "e");
    }

    #[test]
    fn hint_stands_in_for_markers() {
        let b = MockBackend::new(32);
        let req = ChatRequest::user("Summarize this.")
            .with_hint(MockHint::Summary(vec!["A b. c".into(), "D e".into()]));
        assert_eq!(b.complete(&req).unwrap().text, "A b.; D e");
    }

    #[test]
    fn embeddings_are_bag_of_words() {
        let b = MockBackend::new(256);
        let e1 = b.embed_text("apple");
        assert_eq!(e1, b.embed_text("apple"));
        let ab = b.embed_text("apple banana");
        let ba = b.embed_text("banana apple");
        assert!((ab.cosine(&ba) - 1.0).abs() < 1e-12);
        assert!((ab.norm() - 1.0).abs() < 1e-12);
        let empty = b.embed_text("");
        assert!(empty.is_zero());
        assert_eq!(empty.norm(), 0.0);
        assert!(b.embed_text("the of and").is_zero());
    }

    #[test]
    fn identical_sequences_identical_ledgers() {
        let run = || {
            let g = Gateway::new(Arc::new(MockBackend::new(64)));
            for p in ["[[ECHO:a]]", "hello world", "[[SUMMARY]]\nx. y"] {
                g.chat("conv", CallKind::Generate, &ChatRequest::user(p)).unwrap();
            }
            g.usage_log("conv")
        };
        assert_eq!(run(), run());
    }
}
