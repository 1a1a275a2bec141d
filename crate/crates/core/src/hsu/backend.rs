use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Text-in/text-out completion call.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;

    /// True when identical prompts are guaranteed identical replies.
    fn is_deterministic(&self) -> bool;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, prompt: &str) -> Result<String> {
        (**self).complete(prompt)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UsageStats {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub reply_tokens: u64,
}

/// Wraps a backend and counts calls and whitespace tokens.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicU64,
    prompt_tokens: AtomicU64,
    reply_tokens: AtomicU64,
}

impl<B: ChatBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
            prompt_tokens: AtomicU64::new(0),
            reply_tokens: AtomicU64::new(0),
        }
    }

    pub fn stats(&self) -> UsageStats {
        UsageStats {
            calls: self.calls.load(Ordering::Relaxed),
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            reply_tokens: self.reply_tokens.load(Ordering::Relaxed),
        }
    }
}

impl<B: ChatBackend> ChatBackend for CountingBackend<B> {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.prompt_tokens.fetch_add(prompt.split_whitespace().count() as u64, Ordering::Relaxed);
        let reply = self.inner.complete(prompt)?;
        self.reply_tokens.fetch_add(reply.split_whitespace().count() as u64, Ordering::Relaxed);
        Ok(reply)
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpChatConfig {
    /// Full URL of a chat-completions endpoint.
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: u64,
    pub seed: u64,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    seed: u64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    content: String,
}

/// OpenAI-compatible chat-completions client, always at temperature 0.
///
/// Request: `{"model", "messages": [{"role": "user", "content"}], "temperature": 0, "seed"}`.
/// Response: the first `choices[].message.content` is returned.
pub struct HttpChatBackend {
    config: HttpChatConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatBackend {
    pub fn new(config: HttpChatConfig) -> Result<Self> {
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { config, token, client })
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: 0.0,
            seed: self.config.seed,
        };
        let mut req = self.client.post(&self.config.url).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Error::Transport(format!("chat endpoint returned {status}: {text}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| Error::Transport(format!("bad chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Transport("chat response has no choices".into()))
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}
