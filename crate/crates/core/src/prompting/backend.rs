use super::{PromptBundle, PromptKey};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed completion response: {0}")]
    Malformed(String),
    #[error("API key variable {0} is not set")]
    MissingKey(String),
    #[error("mock script {path}: {message}")]
    MockScript { path: PathBuf, message: String },
    #[error("mock script has no entry for {0}")]
    MockMissing(String),
    #[error("mock script entry {0} is exhausted")]
    MockExhausted(String),
}

/// Where completions come from: an OpenAI-compatible chat endpoint, or a
/// JSON script keyed by prompt key (`mock:path/to/script.json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BackendTarget {
    Http { url: String },
    Mock { script: PathBuf },
}

impl BackendTarget {
    pub fn parse(s: &str) -> Self {
        match s.strip_prefix("mock:") {
            Some(path) => BackendTarget::Mock {
                script: PathBuf::from(path),
            },
            None => BackendTarget::Http { url: s.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub target: BackendTarget,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(with = "crate::sandbox::duration_secs")]
    pub request_timeout: Duration,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    pub api_key_env: String,
    pub max_in_flight: usize,
}

impl BackendConfig {
    pub fn new(target: BackendTarget, model: impl Into<String>) -> Self {
        Self {
            target,
            model: model.into(),
            temperature: 0.0,
            max_tokens: 4096,
            request_timeout: Duration::from_secs(120),
            retries: 1,
            api_key_env: "LLM_API_KEY".to_string(),
            max_in_flight: 4,
        }
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &B {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        (**self).complete(bundle)
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Box<B> {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        (**self).complete(bundle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn from_bundle(config: &BackendConfig, bundle: &PromptBundle) -> Self {
        Self {
            model: config.model.clone(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: bundle.role_preamble.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: bundle.body.clone(),
                },
            ],
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        }
    }
}

struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.slots.lock().expect("gate");
        while *free == 0 {
            free = self.freed.wait(free).expect("gate");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().expect("gate") += 1;
        self.0.freed.notify_one();
    }
}

/// Blocking client for `POST {url}` with a chat-completions body.
pub struct HttpBackend {
    config: BackendConfig,
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: Gate,
    backoff: Duration,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let BackendTarget::Http { url } = &config.target else {
            return Err(BackendError::Malformed(
                "HttpBackend needs an http target".into(),
            ));
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            url: url.clone(),
            api_key: std::env::var(&config.api_key_env).ok(),
            gate: Gate {
                slots: Mutex::new(config.max_in_flight.max(1)),
                freed: Condvar::new(),
            },
            config,
            client,
            backoff: Duration::from_millis(250),
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, body: &ChatRequest) -> Result<String, AttemptError> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(AttemptError::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(AttemptError::Fatal(BackendError::Transport {
                attempts: 1,
                message: format!("HTTP {status}: {text}"),
            }));
        }
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| AttemptError::Fatal(BackendError::Malformed(e.to_string())))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                AttemptError::Fatal(BackendError::Malformed(
                    "missing choices[0].message.content".into(),
                ))
            })
    }
}

enum AttemptError {
    Retryable(String),
    Fatal(BackendError),
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        let body = ChatRequest::from_bundle(&self.config, bundle);
        let _slot = self.gate.acquire();
        let mut last = String::new();
        for i in 0..=self.config.retries {
            if i > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(i - 1));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(msg)) => {
                    log::warn!("{}: attempt {} failed: {msg}", bundle.key, i + 1);
                    last = msg;
                }
            }
        }
        Err(BackendError::Transport {
            attempts: self.config.retries + 1,
            message: last,
        })
    }
}

/// A scripted response: one text for every request with the key, or a
/// sequence consumed in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockEntry {
    One(String),
    Seq(Vec<String>),
}

pub struct MockBackend {
    entries: HashMap<String, MockEntry>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl MockBackend {
    pub fn new(entries: HashMap<String, MockEntry>) -> Self {
        Self {
            entries,
            cursors: Mutex::new(HashMap::new()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let err = |message: String| BackendError::MockScript {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let entries = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(Self::new(entries))
    }

    pub fn lookup(&self, key: &PromptKey) -> Result<String, BackendError> {
        let k = key.to_string();
        match self.entries.get(&k) {
            None => Err(BackendError::MockMissing(k)),
            Some(MockEntry::One(text)) => Ok(text.clone()),
            Some(MockEntry::Seq(seq)) => {
                let mut cursors = self.cursors.lock().expect("mock cursors");
                let pos = cursors.entry(k.clone()).or_insert(0);
                let text = seq
                    .get(*pos)
                    .cloned()
                    .ok_or(BackendError::MockExhausted(k))?;
                *pos += 1;
                Ok(text)
            }
        }
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        self.lookup(&bundle.key)
    }
}

/// Wraps a backend and keeps every (bundle, response) pair.
pub struct RecordingBackend<B> {
    pub inner: B,
    log: Mutex<Vec<(PromptBundle, String)>>,
}

impl<B: CompletionBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<(PromptBundle, String)> {
        self.log.lock().expect("recording log").clone()
    }
}

impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    fn complete(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        let text = self.inner.complete(bundle)?;
        self.log
            .lock()
            .expect("recording log")
            .push((bundle.clone(), text.clone()));
        Ok(text)
    }
}

pub fn backend_from_config(
    config: &BackendConfig,
) -> Result<Box<dyn CompletionBackend>, BackendError> {
    Ok(match &config.target {
        BackendTarget::Http { .. } => Box::new(HttpBackend::new(config.clone())?),
        BackendTarget::Mock { script } => Box::new(MockBackend::load(script)?),
    })
}

/// One-shot completion; builds the backend from `config` each call.
pub fn complete(config: &BackendConfig, bundle: &PromptBundle) -> Result<String, BackendError> {
    backend_from_config(config)?.complete(bundle)
}
