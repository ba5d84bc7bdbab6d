//! Perception gateway: turns per-turn modality payloads into one textual
//! request object.
//!
//! Video frames are never passed through end to end. Each frame descriptor is
//! captioned into a short line of text and its tags are merged with the
//! speech transcript. The per-turn perception charge depends only on the
//! configured paradigm, so the latency of either paradigm is reproducible as a
//! constant under the virtual clock.

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Millis};
use crate::config::PerceptionMode;
use crate::error::{Error, Result};
use crate::ids::SessionId;

/// Tag map describing one sampled frame, e.g. `{subject: user, action: waving}`.
pub type FrameDescriptor = BTreeMap<String, String>;

/// Keys rendered first, in this order; remaining keys follow alphabetically.
const CAPTION_KEY_ORDER: [&str; 5] = ["subject", "action", "posture", "object", "environment"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
    Video,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality", rename_all = "lowercase")]
pub enum ModalityPayload {
    Text {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        captured_at: Option<Millis>,
    },
    Audio {
        transcript: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        captured_at: Option<Millis>,
    },
    Video {
        frames: Vec<FrameDescriptor>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        captured_at: Option<Millis>,
    },
}

impl ModalityPayload {
    pub fn text(t: impl Into<String>) -> Self {
        ModalityPayload::Text { text: t.into(), captured_at: None }
    }

    pub fn audio(t: impl Into<String>) -> Self {
        ModalityPayload::Audio { transcript: t.into(), captured_at: None }
    }

    pub fn video(frames: Vec<FrameDescriptor>) -> Self {
        ModalityPayload::Video { frames, captured_at: None }
    }

    pub fn modality(&self) -> Modality {
        match self {
            ModalityPayload::Text { .. } => Modality::Text,
            ModalityPayload::Audio { .. } => Modality::Audio,
            ModalityPayload::Video { .. } => Modality::Video,
        }
    }

    fn captured_at(&self) -> Option<Millis> {
        match self {
            ModalityPayload::Text { captured_at, .. }
            | ModalityPayload::Audio { captured_at, .. }
            | ModalityPayload::Video { captured_at, .. } => *captured_at,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ModalityPayload::Text { text, .. } if text.trim().is_empty() => {
                Err(Error::InvalidTurn("text payload is empty".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Normalized per-turn request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestObject {
    pub session_id: SessionId,
    pub utterance: String,
    pub visual_tags: Vec<String>,
    pub origin_timestamps: BTreeMap<Modality, Millis>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub tags: Vec<String>,
}

/// Deterministic caption composed from a frame's tags.
pub fn caption_stub(frame: &FrameDescriptor) -> Caption {
    let mut parts: Vec<&str> = Vec::new();
    let mut tags = Vec::new();
    let ordered = CAPTION_KEY_ORDER
        .iter()
        .filter_map(|k| frame.get_key_value(*k))
        .chain(frame.iter().filter(|(k, _)| !CAPTION_KEY_ORDER.contains(&k.as_str())));
    for (key, value) in ordered {
        let value = value.trim();
        if value.is_empty() {
            continue;
        }
        parts.push(value);
        if key != "subject" {
            tags.push(value.to_string());
        }
    }
    Caption { text: parts.join(" "), tags }
}

/// Fuse payloads into a request. Pure: the same payloads always yield the
/// same request. Audio and text are concatenated in arrival order; visual
/// tags are the first-seen-ordered union over all frames.
pub fn normalize(payloads: &[ModalityPayload], session_id: &SessionId) -> Result<RequestObject> {
    let captions = payloads
        .iter()
        .map(|p| match p {
            ModalityPayload::Video { frames, .. } => frames.iter().map(caption_stub).collect(),
            _ => Vec::new(),
        })
        .collect::<Vec<_>>();
    normalize_with_captions(payloads, &captions, session_id)
}

/// Like [`normalize`] but with captions produced elsewhere; `captions[i]`
/// holds the captions for `payloads[i]` (empty for non-video payloads).
pub fn normalize_with_captions(
    payloads: &[ModalityPayload],
    captions: &[Vec<Caption>],
    session_id: &SessionId,
) -> Result<RequestObject> {
    if payloads.is_empty() {
        return Err(Error::InvalidTurn("turn carries no payloads".into()));
    }
    for p in payloads {
        p.validate()?;
    }
    let mut speech = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let mut origin = BTreeMap::new();
    for (i, p) in payloads.iter().enumerate() {
        if let Some(at) = p.captured_at() {
            origin.entry(p.modality()).or_insert(at);
        }
        match p {
            ModalityPayload::Text { text, .. } => speech.push(text.trim().to_string()),
            ModalityPayload::Audio { transcript, .. } => {
                if !transcript.trim().is_empty() {
                    speech.push(transcript.trim().to_string());
                }
            }
            ModalityPayload::Video { .. } => {
                for cap in captions.get(i).into_iter().flatten() {
                    for tag in &cap.tags {
                        if !tags.contains(tag) {
                            tags.push(tag.clone());
                        }
                    }
                }
            }
        }
    }
    let utterance = speech.join(" ");
    if utterance.is_empty() && tags.is_empty() {
        return Err(Error::InvalidTurn("all payloads are empty".into()));
    }
    let utterance = if utterance.is_empty() {
        // a silent turn is described by what the camera sees
        tags.join(", ")
    } else {
        utterance
    };
    Ok(RequestObject { session_id: session_id.clone(), utterance, visual_tags: tags, origin_timestamps: origin })
}

/// Source of frame captions.
#[async_trait]
pub trait Perceptor: Send + Sync {
    async fn caption(&self, frame: &FrameDescriptor) -> Result<Caption>;
}

/// Template captioner used by tests and the benchmark.
#[derive(Debug, Default, Clone, Copy)]
pub struct StubPerceptor;

#[async_trait]
impl Perceptor for StubPerceptor {
    async fn caption(&self, frame: &FrameDescriptor) -> Result<Caption> {
        Ok(caption_stub(frame))
    }
}

/// External captioner: POSTs the frame descriptor as JSON and expects
/// `{"caption": "..."}` back. The caption text becomes the frame's only tag.
pub struct HttpPerceptor {
    client: reqwest::Client,
    url: String,
}

impl HttpPerceptor {
    pub fn new(url: impl Into<String>) -> Self {
        Self { client: reqwest::Client::new(), url: url.into() }
    }
}

#[derive(Deserialize)]
struct CaptionResponse {
    caption: String,
}

#[async_trait]
impl Perceptor for HttpPerceptor {
    async fn caption(&self, frame: &FrameDescriptor) -> Result<Caption> {
        let resp = self
            .client
            .post(&self.url)
            .json(frame)
            .send()
            .await
            .map_err(|e| Error::Backend(format!("perceptor: {e}")))?
            .error_for_status()
            .map_err(|e| Error::Backend(format!("perceptor: {e}")))?;
        let body: CaptionResponse = resp.json().await.map_err(|e| Error::Backend(format!("perceptor: {e}")))?;
        let text = body.caption.trim().to_string();
        let tags = if text.is_empty() { vec![] } else { vec![text.clone()] };
        Ok(Caption { text, tags })
    }
}

/// Captions frames and charges the paradigm's perception latency.
#[derive(Clone)]
pub struct PerceptionGateway {
    perceptor: Arc<dyn Perceptor>,
    mode: PerceptionMode,
    decoupled_ms: Millis,
    monolithic_ms: Millis,
}

impl PerceptionGateway {
    pub fn new(perceptor: Arc<dyn Perceptor>, mode: PerceptionMode) -> Self {
        Self { perceptor, mode, decoupled_ms: 480, monolithic_ms: 2_100 }
    }

    pub fn with_latencies(mut self, decoupled_ms: Millis, monolithic_ms: Millis) -> Self {
        self.decoupled_ms = decoupled_ms;
        self.monolithic_ms = monolithic_ms;
        self
    }

    pub fn mode(&self) -> PerceptionMode {
        self.mode
    }

    /// Perception cost for one turn. Turns that carry only typed text skip
    /// the ASR/VLM stage and cost nothing.
    pub fn turn_latency_ms(&self, payloads: &[ModalityPayload]) -> Millis {
        let perceived =
            payloads.iter().any(|p| matches!(p, ModalityPayload::Audio { .. } | ModalityPayload::Video { .. }));
        if !perceived {
            return 0;
        }
        match self.mode {
            PerceptionMode::Decoupled => self.decoupled_ms,
            PerceptionMode::Monolithic => self.monolithic_ms,
        }
    }

    pub async fn perceive(
        &self,
        payloads: &[ModalityPayload],
        session_id: &SessionId,
        clock: &Clock,
    ) -> Result<RequestObject> {
        let started = clock.now_ms();
        let mut captions = Vec::with_capacity(payloads.len());
        for p in payloads {
            let mut caps = Vec::new();
            if let ModalityPayload::Video { frames, .. } = p {
                for f in frames {
                    if f.values().all(|v| v.trim().is_empty()) {
                        caps.push(Caption::default());
                    } else {
                        caps.push(self.perceptor.caption(f).await?);
                    }
                }
            }
            captions.push(caps);
        }
        let request = normalize_with_captions(payloads, &captions, session_id)?;
        let charge = self.turn_latency_ms(payloads);
        clock.sleep_until_ms(started + charge).await;
        Ok(request)
    }
}
