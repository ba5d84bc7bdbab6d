//! Term-frequency retrieval over the heterogeneous resource layer.

use serde::{Deserialize, Serialize};

use crate::state::{profile_line, AgentMemory, UserMemory};
use crate::text::TermVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    KnowledgeBase,
    UserHistory,
    AgentMemory,
    HotFeed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub source: Source,
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub source: Source,
    pub doc_id: String,
    pub text: String,
    pub score: f64,
}

/// Gather retrievable documents from user and agent memory plus a hot feed.
/// Profile attributes are exposed as user-history documents.
pub fn build_corpus(
    user: &UserMemory,
    agent: Option<&AgentMemory>,
    hot_feed: &[String],
    sources: &[Source],
) -> Vec<CorpusDoc> {
    let mut docs = Vec::new();
    let wanted = |s: Source| sources.contains(&s);
    if wanted(Source::KnowledgeBase) {
        if let Some(a) = agent {
            docs.extend(a.knowledge_base.iter().map(|d| CorpusDoc {
                source: Source::KnowledgeBase,
                doc_id: d.doc_id.clone(),
                text: d.text.clone(),
            }));
        }
    }
    if wanted(Source::UserHistory) {
        docs.extend(user.profile.iter().map(|(k, v)| CorpusDoc {
            source: Source::UserHistory,
            doc_id: format!("profile:{k}"),
            text: profile_line(k, v),
        }));
        docs.extend(user.history.iter().enumerate().map(|(i, f)| CorpusDoc {
            source: Source::UserHistory,
            doc_id: format!("history:{i}"),
            text: f.statement.clone(),
        }));
    }
    if wanted(Source::AgentMemory) {
        if let Some(a) = agent {
            docs.extend(a.nuggets.iter().map(|n| CorpusDoc {
                source: Source::AgentMemory,
                doc_id: n.nugget_id.clone(),
                text: n.statement.clone(),
            }));
        }
    }
    if wanted(Source::HotFeed) {
        docs.extend(hot_feed.iter().enumerate().map(|(i, t)| CorpusDoc {
            source: Source::HotFeed,
            doc_id: format!("feed:{i}"),
            text: t.clone(),
        }));
    }
    docs
}

/// Top-`k` documents by cosine similarity, ties broken by corpus order.
/// Documents with zero similarity are not returned.
pub fn retrieve(query: &str, corpus: &[CorpusDoc], top_k: usize) -> Vec<Snippet> {
    let q = TermVector::from_text(query);
    if q.is_empty() {
        return Vec::new();
    }
    let mut scored: Vec<(usize, f64)> = corpus
        .iter()
        .enumerate()
        .map(|(i, d)| (i, q.cosine(&TermVector::from_text(&d.text))))
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(top_k)
        .map(|(i, score)| Snippet {
            source: corpus[i].source,
            doc_id: corpus[i].doc_id.clone(),
            text: corpus[i].text.clone(),
            score,
        })
        .collect()
}
