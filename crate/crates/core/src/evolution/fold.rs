//! Context folding: a verbose execution branch is archived verbatim and its
//! working-memory items are replaced by one capped summary.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::archive::{Archive, ArchiveRef};
use crate::error::{Error, Result};
use crate::ids::{SessionId, TaskId};
use crate::state::{SessionStore, TraceItem};
use crate::text::{estimate_tokens, truncate_to_tokens};

const HEAD_WORDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldedBranch {
    pub branch_id: String,
    pub summary: String,
    pub archive_ref: ArchiveRef,
    pub original_tokens: u64,
    pub folded_tokens: u64,
}

impl FoldedBranch {
    pub fn to_trace_item(&self, task_id: Option<TaskId>) -> TraceItem {
        let mut item = TraceItem::new(task_id, None, self.summary.clone());
        item.archive_ref = Some(self.archive_ref);
        item.token_estimate = self.folded_tokens;
        item.folded = true;
        item
    }
}

/// The raw bytes a branch archives to: payloads joined by newlines.
pub fn branch_text(items: &[TraceItem]) -> String {
    items.iter().map(|t| t.payload.as_str()).collect::<Vec<_>>().join("\n")
}

fn head(text: &str) -> String {
    text.split_whitespace().take(HEAD_WORDS).collect::<Vec<_>>().join(" ")
}

fn item_line(item: &TraceItem) -> String {
    let step = item.step_id.map(|s| format!("step {s} ")).unwrap_or_default();
    match serde_json::from_str::<Value>(&item.payload) {
        Ok(v) if v.get("tool").is_some() => {
            let tool = v["tool"].as_str().unwrap_or("?");
            if let Some(err) = v.get("error") {
                let msg = err.get("message").and_then(Value::as_str).unwrap_or("error");
                format!("{step}{tool} failed: {}", head(msg))
            } else {
                let res = &v["result"];
                let text =
                    res.get("summary").and_then(Value::as_str).map(str::to_string).unwrap_or_else(|| res.to_string());
                format!("{step}{tool} done: {}", head(&text))
            }
        }
        _ => format!("{step}{}", head(&item.payload)),
    }
}

/// Summary of step names, terminal states and result heads, capped.
pub fn summarize_branch(items: &[TraceItem], token_cap: u64) -> String {
    let lines: Vec<String> = items.iter().map(item_line).collect();
    truncate_to_tokens(&lines.join("; "), token_cap)
}

/// Fold a branch whose token total exceeds `token_cap`. Returns `None` when
/// the branch fits or is already folded.
pub fn fold(branch_id: &str, items: &[TraceItem], token_cap: u64, archive: &Archive) -> Result<Option<FoldedBranch>> {
    if items.is_empty() || items.iter().any(|t| t.folded) {
        return Ok(None);
    }
    let original_tokens: u64 = items.iter().map(|t| t.token_estimate).sum();
    if original_tokens <= token_cap {
        return Ok(None);
    }
    let summary = summarize_branch(items, token_cap);
    let archive_ref = archive.append(branch_text(items).as_bytes())?;
    Ok(Some(FoldedBranch {
        branch_id: branch_id.to_string(),
        folded_tokens: estimate_tokens(&summary),
        summary,
        archive_ref,
        original_tokens,
    }))
}

/// Recover the raw branch text.
pub fn unfold(archive: &Archive, at: ArchiveRef) -> Result<String> {
    String::from_utf8(archive.read(at)?).map_err(|e| Error::InvalidInput(format!("archive bytes are not UTF-8: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldOutcome {
    pub branch: FoldedBranch,
    pub tokens_before: u64,
    pub tokens_after: u64,
}

/// Fold one task's working-memory branch in place.
pub fn fold_task(
    store: &SessionStore,
    session: &SessionId,
    task: &TaskId,
    token_cap: u64,
    archive: &Archive,
) -> Result<Option<FoldOutcome>> {
    let items = store.task_traces(session, task)?;
    let Some(branch) = fold(task.as_str(), &items, token_cap, archive)? else {
        return Ok(None);
    };
    let (tokens_before, tokens_after) =
        store.replace_task_traces(session, task, branch.to_trace_item(Some(task.clone())))?;
    Ok(Some(FoldOutcome { branch, tokens_before, tokens_after }))
}
