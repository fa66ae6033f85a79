//! OpenAI-compatible HTTP backend (`/chat/completions`, `/embeddings`).

use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendKind, ChatRequest, Completion, Embedding, Role};
use crate::text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenAiConfig {
    /// Base URL including the version prefix, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embedding_model: String,
    pub dimension: usize,
    pub timeout_secs: u64,
}

impl Default for OpenAiConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            api_key: None,
            chat_model: "Qwen2.5-7B-Instruct".into(),
            embedding_model: "all-MiniLM-L6-v2".into(),
            dimension: 384,
            timeout_secs: 120,
        }
    }
}

pub struct OpenAiBackend {
    cfg: OpenAiConfig,
    client: Client,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: Role,
    content: &'a str,
}

#[derive(Serialize)]
struct WireChatRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireChatResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireAssistant,
}

#[derive(Deserialize)]
struct WireAssistant {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

#[derive(Serialize)]
struct WireEmbedRequest<'a> {
    model: &'a str,
    input: Vec<&'a str>,
}

#[derive(Deserialize)]
struct WireEmbedResponse {
    data: Vec<WireEmbedding>,
}

#[derive(Deserialize)]
struct WireEmbedding {
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl OpenAiBackend {
    pub fn new(cfg: OpenAiConfig) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs.max(1)))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { cfg, client })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, BackendError> {
        let mut req = self.client.post(self.url(path)).json(body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(BackendError::Status { status: status.as_u16(), body });
        }
        resp.json::<R>().map_err(|e| BackendError::Decode(e.to_string()))
    }
}

impl Backend for OpenAiBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn dimension(&self) -> usize {
        self.cfg.dimension
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        let body = WireChatRequest {
            model: &self.cfg.chat_model,
            messages: req
                .messages
                .iter()
                .map(|m| WireMessage { role: m.role, content: &m.content })
                .collect(),
            temperature: req.temperature,
            max_tokens: req.max_output_tokens,
        };
        let resp: WireChatResponse = self.post("chat/completions", &body)?;
        let text = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        let (prompt_tokens, completion_tokens) = match resp.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => {
                log::warn!("endpoint did not report usage; estimating locally");
                (text::estimate_tokens(&req.prompt_text()), text::estimate_tokens(&text))
            }
        };
        Ok(Completion { text, prompt_tokens, completion_tokens })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>, BackendError> {
        let dim = self.cfg.dimension;
        let mut out: Vec<Embedding> = texts.iter().map(|_| Embedding::zeros(dim)).collect();
        // most endpoints reject empty strings; those stay zero vectors
        let live: Vec<usize> = (0..texts.len()).filter(|&i| !texts[i].trim().is_empty()).collect();
        if live.is_empty() {
            return Ok(out);
        }
        let body = WireEmbedRequest {
            model: &self.cfg.embedding_model,
            input: live.iter().map(|&i| texts[i].as_str()).collect(),
        };
        let resp: WireEmbedResponse = self.post("embeddings", &body)?;
        if resp.data.len() != live.len() {
            return Err(BackendError::Decode(format!(
                "expected {} embeddings, got {}",
                live.len(),
                resp.data.len()
            )));
        }
        for (pos, item) in resp.data.into_iter().enumerate() {
            if item.embedding.len() != dim {
                return Err(BackendError::Dimension { expected: dim, got: item.embedding.len() });
            }
            let slot = live[item.index.unwrap_or(pos).min(live.len() - 1)];
            out[slot] = Embedding(item.embedding).normalized();
        }
        Ok(out)
    }
}
