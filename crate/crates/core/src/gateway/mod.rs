//! Single access point for model calls: chat completion and text embedding,
//! with retries and a per-scope token ledger.
//!
//! Two backends exist: [`MockBackend`], a deterministic offline model driven
//! by prompt markers and scripted rules, and [`OpenAiBackend`], which speaks
//! the OpenAI-compatible `/chat/completions` and `/embeddings` endpoints.

mod embedding;
mod mock;
mod openai;

pub use embedding::Embedding;
pub use mock::{MockBackend, MockConfig, MockRule};
pub use openai::{OpenAiBackend, OpenAiConfig};

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::PromptSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

/// Structured side channel for the mock backend. Live backends ignore it;
/// the mock treats it like the matching prompt marker so that real prompt
/// templates stay marker-free.
#[derive(Debug, Clone, PartialEq)]
pub enum MockHint {
    /// Behave like `[[ECHO:x]]`.
    Echo(String),
    /// Behave like `[[SUMMARY]]` over these input messages.
    Summary(Vec<String>),
    /// Behave like `[[JSON_SUMMARY]]` over this payload.
    JsonSummary(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub hint: Option<MockHint>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self { messages, temperature: 0.0, max_output_tokens: 256, hint: None }
    }

    pub fn user(prompt: impl Into<String>) -> Self {
        Self::new(vec![ChatMessage::user(prompt)])
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn with_hint(mut self, hint: MockHint) -> Self {
        self.hint = Some(hint);
        self
    }

    /// All message contents joined by newlines.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::Precondition("chat request has no messages".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::Precondition("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::Precondition("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Extract,
    Manage,
    Retrieve,
    Generate,
}

impl CallKind {
    pub const ALL: [CallKind; 4] =
        [CallKind::Extract, CallKind::Manage, CallKind::Retrieve, CallKind::Generate];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub call_kind: CallKind,
}

impl UsageRecord {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub calls: u64,
}

impl TokenTotals {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    fn add(&mut self, rec: &UsageRecord) {
        self.prompt_tokens += rec.prompt_tokens;
        self.completion_tokens += rec.completion_tokens;
        self.calls += 1;
    }
}

/// Ledger totals for one scope, broken down by call kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageReport {
    pub by_kind: BTreeMap<CallKind, TokenTotals>,
}

impl UsageReport {
    pub fn kind(&self, kind: CallKind) -> TokenTotals {
        self.by_kind.get(&kind).copied().unwrap_or_default()
    }

    pub fn overall(&self) -> TokenTotals {
        let mut t = TokenTotals::default();
        for v in self.by_kind.values() {
            t.prompt_tokens += v.prompt_tokens;
            t.completion_tokens += v.completion_tokens;
            t.calls += v.calls;
        }
        t
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a UsageRecord>) -> Self {
        let mut report = UsageReport::default();
        for rec in records {
            report.by_kind.entry(rec.call_kind).or_default().add(rec);
        }
        report
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Live,
}

/// Output of one backend completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("embedding dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn dimension(&self) -> usize;
    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, BackendError>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("backend call failed after {attempts} attempt(s): {source}")]
    Backend {
        attempts: u32,
        #[source]
        source: BackendError,
    },
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Backend { source, .. } if source.retryable())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay_ms: 500 }
    }
}

#[derive(Debug, Default)]
struct ScopeLedger {
    calls: Vec<UsageRecord>,
    totals: UsageReport,
}

/// Thread-safe front door to a backend. Cheap to share behind an `Arc`.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    ledger: Mutex<HashMap<String, ScopeLedger>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self::with_retry(backend, RetryPolicy::default())
    }

    pub fn with_retry(backend: Arc<dyn Backend>, retry: RetryPolicy) -> Self {
        Self { backend, retry, ledger: Mutex::new(HashMap::new()) }
    }

    pub fn mock(dimension: usize) -> Self {
        Self::new(Arc::new(MockBackend::new(dimension)))
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn dimension(&self) -> usize {
        self.backend.dimension()
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, GatewayError> {
        let attempts = self.retry.attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() && attempt < attempts => {
                    let delay = self.retry.base_delay_ms.saturating_mul(1 << (attempt - 1));
                    log::warn!("backend attempt {attempt} failed: {e}; retrying in {delay} ms");
                    std::thread::sleep(Duration::from_millis(delay));
                }
                Err(source) => return Err(GatewayError::Backend { attempts: attempt, source }),
            }
        }
    }

    /// Run one chat completion and record its usage under `scope`.
    pub fn chat(
        &self,
        scope: &str,
        kind: CallKind,
        req: &ChatRequest,
    ) -> Result<(String, UsageRecord), GatewayError> {
        req.validate()?;
        let completion = self.with_retries(|| self.backend.complete(req))?;
        let record = UsageRecord {
            prompt_tokens: completion.prompt_tokens,
            completion_tokens: completion.completion_tokens,
            call_kind: kind,
        };
        let mut ledger = self.ledger.lock().expect("ledger poisoned");
        let entry = ledger.entry(scope.to_string()).or_default();
        entry.calls.push(record);
        entry.totals.by_kind.entry(kind).or_default().add(&record);
        Ok((completion.text, record))
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Precondition("embed called with no texts".into()));
        }
        self.with_retries(|| self.backend.embed(texts))
    }

    pub fn embed_one(&self, text: &str) -> Result<Embedding, GatewayError> {
        let mut out = self.embed(&[text.to_string()])?;
        Ok(out.pop().expect("backend returned one vector per input"))
    }

    /// Totals for `scope`; unknown scopes report zeros.
    pub fn usage_report(&self, scope: &str) -> UsageReport {
        let ledger = self.ledger.lock().expect("ledger poisoned");
        ledger.get(scope).map(|l| l.totals.clone()).unwrap_or_default()
    }

    /// Every call recorded under `scope`, in call order.
    pub fn usage_log(&self, scope: &str) -> Vec<UsageRecord> {
        let ledger = self.ledger.lock().expect("ledger poisoned");
        ledger.get(scope).map(|l| l.calls.clone()).unwrap_or_default()
    }

    pub fn reset_scope(&self, scope: &str) {
        self.ledger.lock().expect("ledger poisoned").remove(scope);
    }
}

/// A gateway bound to one ledger scope, plus the prompt templates in use.
#[derive(Clone, Copy)]
pub struct LlmContext<'a> {
    pub gateway: &'a Gateway,
    pub scope: &'a str,
    pub prompts: &'a PromptSet,
}

/// Result of [`LlmContext::chat_parsed`] when both attempts fail to parse.
#[derive(Debug)]
pub struct ParseFailure {
    pub raw: String,
    pub message: String,
}

#[derive(Debug)]
pub enum ParsedError {
    Gateway(GatewayError),
    Parse(ParseFailure),
}

impl<'a> LlmContext<'a> {
    pub fn new(gateway: &'a Gateway, scope: &'a str, prompts: &'a PromptSet) -> Self {
        Self { gateway, scope, prompts }
    }

    pub fn chat(&self, kind: CallKind, req: &ChatRequest) -> Result<(String, UsageRecord), GatewayError> {
        self.gateway.chat(self.scope, kind, req)
    }

    pub fn embed_one(&self, text: &str) -> Result<Embedding, GatewayError> {
        self.gateway.embed_one(text)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, GatewayError> {
        self.gateway.embed(texts)
    }

    /// Chat and parse; on a parse failure, re-prompt once with the parser
    /// error quoted back. At most two calls.
    pub fn chat_parsed<T>(
        &self,
        kind: CallKind,
        req: &ChatRequest,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, ParsedError> {
        let (raw, _) = self.chat(kind, req).map_err(ParsedError::Gateway)?;
        let first_err = match parse(&raw) {
            Ok(v) => return Ok(v),
            Err(e) => e,
        };
        let mut retry = req.clone();
        retry.messages.push(ChatMessage { role: Role::Assistant, content: raw });
        retry.messages.push(ChatMessage::user(format!(
            "Your previous reply could not be parsed: {first_err}. Reply again with only the JSON object."
        )));
        let (raw, _) = self.chat(kind, &retry).map_err(ParsedError::Gateway)?;
        parse(&raw).map_err(|message| ParsedError::Parse(ParseFailure { raw, message }))
    }
}
