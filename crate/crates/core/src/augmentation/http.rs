use async_trait::async_trait;
use serde_json::Value;

use super::envelope::ExecutionEnvelope;
use super::registry::ToolHandler;

/// External tool: the envelope is POSTed as JSON and the response body is
/// the result value.
pub struct HttpToolHandler {
    url: String,
    client: reqwest::Client,
}

impl HttpToolHandler {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), client: reqwest::Client::new() }
    }
}

#[async_trait]
impl ToolHandler for HttpToolHandler {
    async fn call(&self, envelope: &ExecutionEnvelope) -> Result<Value, String> {
        let resp = self.client.post(&self.url).json(envelope).send().await.map_err(|e| format!("{}: {e}", self.url))?;
        if !resp.status().is_success() {
            return Err(format!("{} returned {}", self.url, resp.status()));
        }
        resp.json::<Value>().await.map_err(|e| e.to_string())
    }
}
