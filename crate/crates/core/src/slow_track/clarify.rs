//! Ambiguity detection and the clarification hand-off to the user.

use async_trait::async_trait;

use super::constraints::Candidate;
use crate::ids::TaskId;
use crate::text::TermVector;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClarificationOutcome {
    Answered(String),
    Abandoned,
}

/// Suspends a step until the user answers, or gives up.
#[async_trait]
pub trait Clarifier: Send + Sync {
    async fn ask(&self, task: &TaskId, step_id: u32, question: &str) -> ClarificationOutcome;
}

/// Clarifier for contexts with no user to ask (e.g. delegated sub-tasks).
pub struct NoClarifier;

#[async_trait]
impl Clarifier for NoClarifier {
    async fn ask(&self, _: &TaskId, _: u32, _: &str) -> ClarificationOutcome {
        ClarificationOutcome::Abandoned
    }
}

/// Clarifier answering every question with a fixed reply.
pub struct FixedClarifier(pub String);

#[async_trait]
impl Clarifier for FixedClarifier {
    async fn ask(&self, _: &TaskId, _: u32, _: &str) -> ClarificationOutcome {
        ClarificationOutcome::Answered(self.0.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ambiguity {
    /// Many candidates with nearly equal top scores.
    NearTie { count: usize, gap: f64 },
    /// Constraint fusion removed every candidate.
    AllFiltered { before: usize },
}

/// `min_candidates` is exclusive: strictly more candidates are required.
pub fn detect_ambiguity(
    before_fusion: usize,
    after: &[Candidate],
    min_candidates: usize,
    margin: f64,
) -> Option<Ambiguity> {
    if after.is_empty() {
        return (before_fusion > 0).then_some(Ambiguity::AllFiltered { before: before_fusion });
    }
    if after.len() > min_candidates {
        let mut scores: Vec<f64> = after.iter().map(|c| c.score).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        let gap = scores[0] - scores[1];
        if gap < margin {
            return Some(Ambiguity::NearTie { count: after.len(), gap });
        }
    }
    None
}

pub fn question_for(ambiguity: &Ambiguity, candidates: &[Candidate], constraints: &[String]) -> String {
    match ambiguity {
        Ambiguity::NearTie { count, .. } => {
            let sample: Vec<&str> = candidates.iter().take(3).map(|c| c.name.as_str()).collect();
            format!(
                "I found {count} close matches (for example {}). Could you give me a detail that tells them apart?",
                sample.join("; ")
            )
        }
        Ambiguity::AllFiltered { before } => format!(
            "None of the {before} options fit your preferences ({}). Which one should I relax?",
            constraints.join(", ")
        ),
    }
}

/// Re-rank by similarity to the user's answer; stable, so candidates the
/// answer does not distinguish keep their order.
pub fn rerank(candidates: &[Candidate], answer: &str) -> Vec<Candidate> {
    let a = TermVector::from_text(answer);
    let mut scored: Vec<(f64, &Candidate)> = candidates
        .iter()
        .map(|c| (a.cosine(&TermVector::from_text(&format!("{} {}", c.name, c.tags.join(" ")))), c))
        .collect();
    scored.sort_by(|x, y| y.0.total_cmp(&x.0));
    scored.into_iter().map(|(_, c)| c.clone()).collect()
}
