//! Distillation of episodes into knowledge nuggets.

use std::collections::BTreeSet;

use crate::state::{KnowledgeNugget, MemoryOwner, MemoryStore, NuggetScope};
use crate::text::normalize;

use super::episode::Episode;

pub const MAX_STATEMENT_CHARS: usize = 200;

/// (lowercase trigger, statement verb) pairs for first-person preferences.
const PATTERNS: &[(&str, &str)] = &[
    ("i dislike ", "dislikes"),
    ("i don't like ", "dislikes"),
    ("i do not like ", "dislikes"),
    ("i hate ", "dislikes"),
    ("i prefer ", "prefers"),
    ("i'd prefer ", "prefers"),
    ("i am a ", "is a"),
    ("i am an ", "is an"),
    ("i'm a ", "is a"),
    ("i'm an ", "is an"),
    ("user dislikes ", "dislikes"),
    ("user prefers ", "prefers"),
    ("user is a ", "is a"),
    ("user is an ", "is an"),
];

fn clip(s: &str) -> String {
    s.chars().take(MAX_STATEMENT_CHARS).collect()
}

/// Preference statements in one utterance, as "User <verb> <object>".
pub fn preference_statements(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for sentence in text.split(['.', '!', '?', ';', '\n']) {
        let lower = sentence.trim().to_lowercase().replace('\u{2019}', "'");
        for (trigger, verb) in PATTERNS {
            let Some(at) = lower.find(trigger) else { continue };
            if at > 0 && !lower[..at].ends_with(' ') && !lower[..at].ends_with(',') {
                continue;
            }
            let object = lower[at + trigger.len()..]
                .split([',', '('])
                .next()
                .unwrap_or("")
                .split(" but ")
                .next()
                .unwrap_or("")
                .trim();
            if !object.is_empty() {
                out.push(clip(&format!("User {verb} {object}")));
            }
            break;
        }
    }
    out
}

/// Nuggets from user-turn preference patterns and constraint-fusion records.
pub fn distill(episode: &Episode) -> Vec<KnowledgeNugget> {
    let mut statements: Vec<String> = Vec::new();
    for turn in episode.user_turns() {
        statements.extend(preference_statements(&turn.content));
    }
    for trace in &episode.traces {
        for fusion in &trace.fusions {
            for c in &fusion.constraints {
                statements.push(clip(&format!("User {c}")));
            }
        }
    }
    let mut seen = BTreeSet::new();
    statements
        .into_iter()
        .filter(|s| seen.insert(normalize(s)))
        .enumerate()
        .map(|(i, statement)| KnowledgeNugget {
            nugget_id: format!("{}#n{}", episode.episode_id, i + 1),
            statement,
            scope: NuggetScope::User,
            provenance: episode.episode_id.clone(),
            created_at: episode.closed_at,
        })
        .collect()
}

/// Commit nuggets to the episode owner's memory; returns how many were new.
pub fn commit_nuggets(memory: &MemoryStore, user_id: &str, nuggets: &[KnowledgeNugget]) -> usize {
    let owner = MemoryOwner::User(user_id.to_string());
    nuggets.iter().filter(|n| memory.commit_nugget(&owner, (*n).clone())).count()
}
