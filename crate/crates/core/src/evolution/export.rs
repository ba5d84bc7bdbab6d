//! Newline-delimited SFT export and versioned `evo-vN` output directories.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::episode::{Episode, RoutedTurn};
use super::judge::JudgeVerdict;
use crate::error::{Error, Result};
use crate::router::PlanItem;
use crate::state::{Role, TraceItem};

pub const EXPORT_FORMAT: &str = "dualtrack-sft";
pub const EXPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Conversation,
    Collaboration,
}

/// Stratum of the episode's most frequent tier; ties go to the higher tier.
pub fn stratum(episode: &Episode) -> Stratum {
    let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
    for r in &episode.routing_decisions {
        *counts.entry(r.tier).or_default() += 1;
    }
    let dominant = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0))).map(|(t, _)| *t).unwrap_or(1);
    if dominant == 1 {
        Stratum::Conversation
    } else {
        Stratum::Collaboration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub format: String,
    pub version: u32,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub episode_id: String,
    pub stratum: Stratum,
    pub input_context: Vec<String>,
    pub routing_decisions: Vec<RoutedTurn>,
    pub plan: Vec<Vec<PlanItem>>,
    pub deliverable: Option<String>,
    pub verdict: JudgeVerdict,
    /// Working-memory items; folded branches appear as summary + archive ref.
    pub traces: Vec<TraceItem>,
}

impl SftRecord {
    pub fn new(episode: &Episode, verdict: JudgeVerdict) -> Self {
        Self {
            episode_id: episode.episode_id.clone(),
            stratum: stratum(episode),
            input_context: episode
                .turns
                .iter()
                .map(|t| {
                    let who = if t.role == Role::User { "user" } else { "assistant" };
                    format!("{who}: {}", t.content)
                })
                .collect(),
            routing_decisions: episode.routing_decisions.clone(),
            plan: episode.traces.iter().filter_map(|t| t.graph.as_ref().map(|g| g.to_plan_items())).collect(),
            deliverable: episode.last_deliverable().map(|d| d.content.clone()),
            verdict,
            traces: episode.memory.clone(),
        }
    }
}

/// Write a header line then one record per episode. Episodes without a
/// verdict are skipped. Returns the record count.
pub fn export_sft(episodes: &[&Episode], verdicts: &BTreeMap<String, JudgeVerdict>, path: &Path) -> Result<usize> {
    let records: Vec<SftRecord> =
        episodes.iter().filter_map(|e| verdicts.get(&e.episode_id).map(|v| SftRecord::new(e, v.clone()))).collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = ExportHeader { format: EXPORT_FORMAT.into(), version: EXPORT_VERSION, records: records.len() };
    write_line(&mut w, path, &header)?;
    for r in &records {
        write_line(&mut w, path, r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

fn write_line<T: Serialize>(w: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec(value)?;
    bytes.push(b'\n');
    w.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Create the next `evo-vN` directory under `root` (N starts at 1).
pub fn next_version_dir(root: &Path) -> Result<(u32, PathBuf)> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let latest = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_prefix("evo-v")?.parse::<u32>().ok())
        .max()
        .unwrap_or(0);
    let version = latest + 1;
    let dir = root.join(format!("evo-v{version}"));
    std::fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok((version, dir))
}
