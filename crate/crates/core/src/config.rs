//! Engine configuration and its flat `key = value` file format.
//!
//! One configuration surface serves the engine, the benchmark harness and the
//! flywheel. Blank lines and lines starting with `#` are ignored; unknown keys
//! are an error so typos do not silently fall back to defaults.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerceptionMode {
    /// Lightweight captioner feeding text to the LLM.
    Decoupled,
    /// End-to-end video-in model.
    Monolithic,
}

impl FromStr for PerceptionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "decoupled" => Ok(PerceptionMode::Decoupled),
            "monolithic" => Ok(PerceptionMode::Monolithic),
            other => Err(Error::Config(format!("unknown perception mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyProfile {
    /// Per-tool defaults from the built-in catalog.
    Default,
    /// Every tool draws from the configured heavy-tail lognormal.
    HeavyTail,
}

impl FromStr for LatencyProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "default" => Ok(LatencyProfile::Default),
            "heavy_tail" | "heavy-tail" => Ok(LatencyProfile::HeavyTail),
            other => Err(Error::Config(format!("unknown latency profile '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Reference,
    Http,
}

impl FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reference" => Ok(BackendKind::Reference),
            "http" | "external" => Ok(BackendKind::Http),
            other => Err(Error::Config(format!("unknown backend '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub budget_ms: u64,
    pub perception: PerceptionMode,
    pub perception_decoupled_ms: u64,
    pub perception_monolithic_ms: u64,
    pub router_latency_ms: u64,
    pub responder_latency_ms: u64,
    pub step_timeout_ms: u64,
    pub task_concurrency: usize,
    pub subtask_global_cap: usize,
    pub delegation_depth_cap: u32,
    pub ambiguity_min_candidates: usize,
    pub ambiguity_margin: f64,
    pub clarification_max_turns: u32,
    pub surface_artifacts: bool,
    pub context_budget_tokens: u64,
    pub fold_cap_tokens: Option<u64>,
    pub seed: u64,
    pub latency_profile: LatencyProfile,
    pub heavy_tail_mu: f64,
    pub heavy_tail_sigma: f64,
    pub generalist_profile: String,
    pub backend: BackendKind,
    pub responder_url: Option<String>,
    pub classifier_url: Option<String>,
    pub perceptor_url: Option<String>,
    pub log_dir: Option<PathBuf>,
    pub archive_path: Option<PathBuf>,
    pub episodes_dir: Option<PathBuf>,
    pub sentiment_threshold: f64,
    pub gold_sample_rate: f64,
    pub gtr_base_ms: u64,
    pub gtr_per_token_ms: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            budget_ms: 500,
            perception: PerceptionMode::Decoupled,
            perception_decoupled_ms: 480,
            perception_monolithic_ms: 2_100,
            router_latency_ms: 5,
            responder_latency_ms: 10,
            step_timeout_ms: 8_000,
            task_concurrency: 4,
            subtask_global_cap: 64,
            delegation_depth_cap: 2,
            ambiguity_min_candidates: 5,
            ambiguity_margin: 0.05,
            clarification_max_turns: 2,
            surface_artifacts: true,
            context_budget_tokens: 256,
            fold_cap_tokens: None,
            seed: 42,
            latency_profile: LatencyProfile::Default,
            heavy_tail_mu: 6.0,
            heavy_tail_sigma: 1.5,
            generalist_profile: "Generalist".to_string(),
            backend: BackendKind::Reference,
            responder_url: None,
            classifier_url: None,
            perceptor_url: None,
            log_dir: None,
            archive_path: None,
            episodes_dir: None,
            sentiment_threshold: 0.0,
            gold_sample_rate: 0.1,
            gtr_base_ms: 1_500,
            gtr_per_token_ms: 40,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_opt_string(value: &str) -> Option<String> {
    let v = value.trim();
    if v.is_empty() || v == "none" {
        None
    } else {
        Some(v.to_string())
    }
}

impl EngineConfig {
    /// Per-turn perception charge for the configured paradigm.
    pub fn perception_latency_ms(&self) -> u64 {
        match self.perception {
            PerceptionMode::Decoupled => self.perception_decoupled_ms,
            PerceptionMode::Monolithic => self.perception_monolithic_ms,
        }
    }

    /// Parse a flat `key = value` document on top of the defaults.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "budget_ms" => self.budget_ms = parse(key, value)?,
            "perception" => self.perception = value.parse()?,
            "perception_decoupled_ms" => self.perception_decoupled_ms = parse(key, value)?,
            "perception_monolithic_ms" => self.perception_monolithic_ms = parse(key, value)?,
            "router_latency_ms" => self.router_latency_ms = parse(key, value)?,
            "responder_latency_ms" => self.responder_latency_ms = parse(key, value)?,
            "step_timeout_ms" => self.step_timeout_ms = parse(key, value)?,
            "task_concurrency" => self.task_concurrency = parse(key, value)?,
            "subtask_global_cap" => self.subtask_global_cap = parse(key, value)?,
            "delegation_depth_cap" => self.delegation_depth_cap = parse(key, value)?,
            "ambiguity_min_candidates" => self.ambiguity_min_candidates = parse(key, value)?,
            "ambiguity_margin" => self.ambiguity_margin = parse(key, value)?,
            "clarification_max_turns" => self.clarification_max_turns = parse(key, value)?,
            "surface_artifacts" => self.surface_artifacts = parse(key, value)?,
            "context_budget_tokens" => self.context_budget_tokens = parse(key, value)?,
            "fold_cap_tokens" => {
                self.fold_cap_tokens = match parse_opt_string(value) {
                    None => None,
                    Some(v) => Some(parse(key, &v)?),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "latency_profile" => self.latency_profile = value.parse()?,
            "heavy_tail_mu" => self.heavy_tail_mu = parse(key, value)?,
            "heavy_tail_sigma" => self.heavy_tail_sigma = parse(key, value)?,
            "generalist_profile" => self.generalist_profile = value.to_string(),
            "backend" => self.backend = value.parse()?,
            "responder_url" => self.responder_url = parse_opt_string(value),
            "classifier_url" => self.classifier_url = parse_opt_string(value),
            "perceptor_url" => self.perceptor_url = parse_opt_string(value),
            "log_dir" => self.log_dir = parse_opt_string(value).map(PathBuf::from),
            "archive_path" => self.archive_path = parse_opt_string(value).map(PathBuf::from),
            "episodes_dir" => self.episodes_dir = parse_opt_string(value).map(PathBuf::from),
            "sentiment_threshold" => self.sentiment_threshold = parse(key, value)?,
            "gold_sample_rate" => self.gold_sample_rate = parse(key, value)?,
            "gtr_base_ms" => self.gtr_base_ms = parse(key, value)?,
            "gtr_per_token_ms" => self.gtr_per_token_ms = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget_ms == 0 {
            return Err(Error::Config("budget_ms must be positive".into()));
        }
        if self.task_concurrency == 0 {
            return Err(Error::Config("task_concurrency must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gold_sample_rate) {
            return Err(Error::Config("gold_sample_rate must be in [0,1]".into()));
        }
        if self.heavy_tail_sigma < 0.0 {
            return Err(Error::Config("heavy_tail_sigma must be non-negative".into()));
        }
        Ok(())
    }
}
