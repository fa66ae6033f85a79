//! TOML configuration for the service and CLI. Secrets may come from the
//! environment instead of the file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{BackendError, Gateway, MockBackend, MockConfig, OpenAiBackend, OpenAiConfig, RetryPolicy};
use crate::hiermem::{EngineConfig, EngineError};
use crate::pipeline::PipelineKind;

pub const API_KEY_ENV: &str = "AGENTMEM_API_KEY";
pub const BEARER_TOKEN_ENV: &str = "AGENTMEM_BEARER_TOKEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid engine config: {0}")]
    Engine(#[from] EngineError),
    #[error("backend setup failed: {0}")]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum GatewayConfig {
    Mock(MockConfig),
    Openai(OpenAiConfig),
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig::Mock(MockConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Required as `Authorization: Bearer <token>` when set.
    pub bearer_token: Option<String>,
    /// One persistence directory per conversation lives under here.
    pub data_dir: PathBuf,
    pub lock_timeout_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            bearer_token: None,
            data_dir: PathBuf::from("agentmem-data"),
            lock_timeout_ms: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub pipeline: PipelineKind,
    pub engine: EngineConfig,
    pub gateway: GatewayConfig,
    pub retry: RetryPolicy,
    pub service: ServiceConfig,
    /// Directory of prompt template overrides.
    pub prompts_dir: Option<PathBuf>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineKind::Hiermem,
            engine: EngineConfig::default(),
            gateway: GatewayConfig::default(),
            retry: RetryPolicy::default(),
            service: ServiceConfig::default(),
            prompts_dir: None,
        }
    }
}

impl AppConfig {
    pub fn parse(raw: &str) -> Result<Self, ConfigError> {
        let cfg: AppConfig = toml::from_str(raw)?;
        cfg.engine.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&raw)
    }

    /// File if given, defaults otherwise, then environment secrets.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let (GatewayConfig::Openai(o), Some(key)) = (&mut self.gateway, get(API_KEY_ENV)) {
            o.api_key = Some(key);
        }
        if let Some(token) = get(BEARER_TOKEN_ENV) {
            self.service.bearer_token = Some(token);
        }
    }

    pub fn build_gateway(&self) -> Result<Arc<Gateway>, ConfigError> {
        let backend: Arc<dyn crate::gateway::Backend> = match &self.gateway {
            GatewayConfig::Mock(m) => Arc::new(MockBackend::from_config(m.clone())),
            GatewayConfig::Openai(o) => Arc::new(OpenAiBackend::new(o.clone())?),
        };
        Ok(Arc::new(Gateway::with_retry(backend, self.retry)))
    }

    pub fn build_prompts(&self) -> Result<Arc<crate::prompts::PromptSet>, ConfigError> {
        Ok(Arc::new(match &self.prompts_dir {
            Some(dir) => crate::prompts::PromptSet::load_dir(dir)
                .map_err(|source| ConfigError::Io { path: dir.clone(), source })?,
            None => crate::prompts::PromptSet::default(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::BackendKind;

    #[test]
    fn defaults_are_mock() {
        let cfg = AppConfig::parse("").unwrap();
        assert_eq!(cfg, AppConfig::default());
        assert_eq!(cfg.build_gateway().unwrap().backend_kind(), BackendKind::Mock);
    }

    #[test]
    fn full_file() {
        let raw = r#"
pipeline = "flat_archive"

[engine]
short_term_capacity = 8
heat_threshold = 3.5

[gateway]
backend = "openai"
base_url = "http://127.0.0.1:9/v1"
chat_model = "m"
dimension = 16

[service]
port = 9000
"#;
        let mut cfg = AppConfig::parse(raw).unwrap();
        assert_eq!(cfg.pipeline, PipelineKind::FlatArchive);
        assert_eq!(cfg.engine.short_term_capacity, 8);
        assert_eq!(cfg.engine.top_k, 10);
        assert_eq!(cfg.service.port, 9000);
        cfg.apply_env(|k| (k == API_KEY_ENV).then(|| "sk-x".to_string()));
        match &cfg.gateway {
            GatewayConfig::Openai(o) => {
                assert_eq!(o.dimension, 16);
                assert_eq!(o.api_key.as_deref(), Some("sk-x"));
            }
            other => panic!("{other:?}"),
        }
        assert!(cfg.service.bearer_token.is_none());
    }

    #[test]
    fn mock_rules_and_bad_engine() {
        let raw = r#"
[gateway]
backend = "mock"
dimension = 32
rules = [{ contains = ["pet"], reply = "Miso" }]
"#;
        let cfg = AppConfig::parse(raw).unwrap();
        assert_eq!(cfg.build_gateway().unwrap().dimension(), 32);
        assert!(AppConfig::parse("[engine]\nfanout = 1\n").is_err());
        assert!(AppConfig::parse("[gateway]\nbackend = \"x\"\n").is_err());
    }
}
