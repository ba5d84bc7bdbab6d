//! Text-completion backends shared by the model-backed classifier, planner
//! and responder. The reference pipeline does not need one.

use std::collections::VecDeque;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Millis};
use crate::error::{Error, Result};

#[async_trait]
pub trait TextBackend: Send + Sync {
    async fn complete(&self, prompt: &str) -> Result<String>;
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// POSTs `{"prompt": ...}` and expects `{"text": ...}`.
pub struct HttpTextBackend {
    url: String,
    client: reqwest::Client,
}

impl HttpTextBackend {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), client: reqwest::Client::new() }
    }
}

#[async_trait]
impl TextBackend for HttpTextBackend {
    async fn complete(&self, prompt: &str) -> Result<String> {
        let resp = self
            .client
            .post(&self.url)
            .json(&CompletionRequest { prompt })
            .send()
            .await
            .map_err(|e| Error::Backend(format!("{}: {e}", self.url)))?;
        if !resp.status().is_success() {
            return Err(Error::Backend(format!("{} returned {}", self.url, resp.status())));
        }
        let body: CompletionResponse = resp.json().await.map_err(|e| Error::Backend(format!("{}: {e}", self.url)))?;
        Ok(body.text)
    }
}

/// Scripted backend for tests: replays queued responses after a fixed
/// virtual latency. An `Err` entry simulates a backend failure.
pub struct CannedBackend {
    clock: Clock,
    latency_ms: Millis,
    responses: Mutex<VecDeque<std::result::Result<String, String>>>,
    prompts: Mutex<Vec<String>>,
}

impl CannedBackend {
    pub fn new(clock: Clock, latency_ms: Millis) -> Self {
        Self { clock, latency_ms, responses: Mutex::new(VecDeque::new()), prompts: Mutex::new(Vec::new()) }
    }

    pub fn push_ok(&self, text: impl Into<String>) -> &Self {
        self.responses.lock().push_back(Ok(text.into()));
        self
    }

    pub fn push_err(&self, message: impl Into<String>) -> &Self {
        self.responses.lock().push_back(Err(message.into()));
        self
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().clone()
    }
}

#[async_trait]
impl TextBackend for CannedBackend {
    async fn complete(&self, prompt: &str) -> Result<String> {
        self.prompts.lock().push(prompt.to_string());
        self.clock.sleep_ms(self.latency_ms).await;
        match self.responses.lock().pop_front() {
            Some(Ok(text)) => Ok(text),
            Some(Err(m)) => Err(Error::Backend(m)),
            None => Err(Error::Backend("no canned response left".into())),
        }
    }
}
