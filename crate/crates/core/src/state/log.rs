//! Append-only session log: one JSON object per transcript entry in
//! `<session_id>.log.jsonl`, plus a small `<session_id>.meta.json` sidecar with
//! the session's owner so a restarted process can rebuild it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SessionState, TranscriptEntry};
use crate::clock::Millis;
use crate::error::{Error, Result};
use crate::ids::SessionId;

const LOG_SUFFIX: &str = ".log.jsonl";
const META_SUFFIX: &str = ".meta.json";

#[derive(Debug, Serialize, Deserialize)]
struct SessionMeta {
    session_id: SessionId,
    user_id: String,
    persona_id: String,
    created_at: Millis,
}

pub(super) struct SessionLog {
    path: PathBuf,
    file: File,
}

fn log_path(dir: &Path, id: &SessionId) -> PathBuf {
    dir.join(format!("{id}{LOG_SUFFIX}"))
}

impl SessionLog {
    pub(super) fn create(dir: &Path, state: &SessionState) -> Result<Self> {
        let meta = SessionMeta {
            session_id: state.session_id.clone(),
            user_id: state.user_id.clone(),
            persona_id: state.persona_id.clone(),
            created_at: state.created_at,
        };
        let meta_path = dir.join(format!("{}{META_SUFFIX}", state.session_id));
        std::fs::write(&meta_path, serde_json::to_vec(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
        Self::reopen(dir, &state.session_id)
    }

    pub(super) fn reopen(dir: &Path, id: &SessionId) -> Result<Self> {
        let path = log_path(dir, id);
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, file })
    }

    pub(super) fn append(&mut self, entry: &TranscriptEntry) -> Result<()> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        self.file.write_all(&line).and_then(|_| self.file.flush()).map_err(|e| Error::io(&self.path, e))
    }
}

pub(super) fn load_all(dir: &Path) -> Result<Vec<SessionState>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut metas: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(META_SUFFIX)))
        .collect();
    metas.sort();
    for meta_path in metas {
        let bytes = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: SessionMeta = serde_json::from_slice(&bytes)?;
        let path = log_path(dir, &meta.session_id);
        let mut transcript = Vec::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: TranscriptEntry = serde_json::from_str(&line)?;
                if entry.seq != transcript.len() as u64 {
                    return Err(Error::InvalidEntry(format!(
                        "{}: expected seq {}, found {}",
                        path.display(),
                        transcript.len(),
                        entry.seq
                    )));
                }
                transcript.push(entry);
            }
        }
        let last_active_at = transcript.last().map(|e| e.timestamp).unwrap_or(meta.created_at).max(meta.created_at);
        out.push(SessionState {
            session_id: meta.session_id,
            user_id: meta.user_id,
            persona_id: meta.persona_id,
            transcript,
            working_memory: Vec::new(),
            pending_tasks: Default::default(),
            created_at: meta.created_at,
            last_active_at,
        });
    }
    Ok(out)
}
