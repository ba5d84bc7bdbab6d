//! The data flywheel: log episodes, judge them, curate silver and gold
//! sets, fold verbose branches, distill nuggets and export training data.

mod archive;
mod curate;
mod distill;
mod episode;
mod export;
mod fold;
mod judge;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use archive::{Archive, ArchiveRef};
pub use curate::{apply_reviews, curate, gold_sample, import_reviews, Curated, CurationConfig, Review};
pub use distill::{commit_nuggets, distill, preference_statements, MAX_STATEMENT_CHARS};
pub use episode::{is_correction, log_episode, Episode, EpisodeStore, OutcomeSignals, RoutedTurn};
pub use export::{export_sft, next_version_dir, stratum, ExportHeader, SftRecord, Stratum, EXPORT_FORMAT};
pub use fold::{branch_text, fold, fold_task, summarize_branch, unfold, FoldOutcome, FoldedBranch};
pub use judge::{
    compliance_violations, engagement, is_terminal_turn, parse_model_verdict, sentiment_score, Judge, JudgeVerdict,
    ModelJudge, ModelScores, RuleJudge,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlywheelSummary {
    pub version: u32,
    pub out_dir: PathBuf,
    pub episodes: usize,
    pub silver: usize,
    pub gold_candidates: usize,
    pub nuggets: usize,
    pub sft_records: usize,
    pub conversation: usize,
    pub collaboration: usize,
}

#[derive(Serialize)]
struct SilverLine<'a> {
    episode_id: &'a str,
    verdict: &'a JudgeVerdict,
}

#[derive(Serialize)]
struct GoldLine<'a> {
    episode_id: &'a str,
    needs_review: bool,
}

fn write_lines<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(&r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Judge, curate, distill and export one batch into the next `evo-vN`
/// directory under `out_root`.
pub async fn run_flywheel(
    episodes: &[Episode],
    judge: &dyn Judge,
    cfg: &CurationConfig,
    out_root: &Path,
) -> Result<FlywheelSummary> {
    let mut verdicts = Vec::with_capacity(episodes.len());
    for e in episodes {
        verdicts.push(judge.judge(e).await?);
    }
    let ids: Vec<String> = episodes.iter().map(|e| e.episode_id.clone()).collect();
    let curated = curate(&ids, &verdicts, cfg)?;
    let by_id: BTreeMap<String, JudgeVerdict> = ids.iter().cloned().zip(verdicts.iter().cloned()).collect();
    let index: BTreeMap<&str, &Episode> = episodes.iter().map(|e| (e.episode_id.as_str(), e)).collect();
    let silver: Vec<&Episode> = curated.silver.iter().map(|id| index[id.as_str()]).collect();

    let (version, dir) = next_version_dir(out_root)?;
    write_lines(
        &dir.join("silver.jsonl"),
        curated.silver.iter().map(|id| SilverLine { episode_id: id, verdict: &by_id[id] }),
    )?;
    write_lines(
        &dir.join("gold_candidates.jsonl"),
        curated.gold_candidates.iter().map(|id| GoldLine { episode_id: id, needs_review: true }),
    )?;
    let nuggets: Vec<_> = episodes.iter().flat_map(distill).collect();
    write_lines(&dir.join("nuggets.jsonl"), nuggets.iter())?;
    let sft_records = export_sft(&silver, &by_id, &dir.join("sft.jsonl"))?;
    let conversation = silver.iter().filter(|e| stratum(e) == Stratum::Conversation).count();
    let summary = FlywheelSummary {
        version,
        out_dir: dir.clone(),
        episodes: episodes.len(),
        silver: curated.silver.len(),
        gold_candidates: curated.gold_candidates.len(),
        nuggets: nuggets.len(),
        sft_records,
        conversation,
        collaboration: silver.len() - conversation,
    };
    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
