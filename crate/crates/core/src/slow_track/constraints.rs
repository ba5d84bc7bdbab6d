//! Constraint fusion: filter tool candidates by preferences from memory.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::state::HistoryFact;
use crate::text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Dislike,
    Require,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Constraint {
    pub kind: ConstraintKind,
    /// Normalized attribute tag the predicate tests.
    pub tag: String,
}

impl Constraint {
    pub fn dislike(tag: &str) -> Self {
        Self { kind: ConstraintKind::Dislike, tag: normalize(tag) }
    }

    pub fn require(tag: &str) -> Self {
        Self { kind: ConstraintKind::Require, tag: normalize(tag) }
    }

    pub fn admits(&self, c: &Candidate) -> bool {
        let has = c.tags.iter().any(|t| normalize(t) == self.tag);
        match self.kind {
            ConstraintKind::Dislike => !has,
            ConstraintKind::Require => has,
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ConstraintKind::Dislike => write!(f, "dislikes {}", self.tag),
            ConstraintKind::Require => write!(f, "requires {}", self.tag),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub score: f64,
}

impl Candidate {
    /// Candidates carried by a tool result under `"candidates"`, if any.
    pub fn list_from(value: &Value) -> Option<Vec<Candidate>> {
        serde_json::from_value(value.get("candidates")?.clone()).ok()
    }
}

/// Drop candidates that violate any constraint; order is preserved.
pub fn apply_constraints(candidates: &[Candidate], constraints: &[Constraint]) -> Vec<Candidate> {
    candidates.iter().filter(|c| constraints.iter().all(|k| k.admits(c))).cloned().collect()
}

/// One removal made by constraint fusion, kept in the execution trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRecord {
    pub step_id: u32,
    pub constraints: Vec<Constraint>,
    pub kept: Vec<String>,
    pub removed: Vec<(String, String)>,
}

/// First violated constraint for a candidate, for explanations.
pub fn violated_by<'a>(c: &Candidate, constraints: &'a [Constraint]) -> Option<&'a Constraint> {
    constraints.iter().find(|k| !k.admits(c))
}

fn split_values(v: &str) -> impl Iterator<Item = &str> {
    v.split([',', ';']).map(str::trim).filter(|s| !s.is_empty())
}

/// Constraints from profile keys `Dislikes` / `Requires` and from history
/// statements of the form "User dislikes X", "User requires X" or
/// "User is a vegetarian".
pub fn constraints_from_memory(profile: &BTreeMap<String, String>, history: &[HistoryFact]) -> Vec<Constraint> {
    let mut out: Vec<Constraint> = Vec::new();
    let mut push = |c: Constraint| {
        if !out.contains(&c) {
            out.push(c);
        }
    };
    for (k, v) in profile {
        match normalize(k).as_str() {
            "dislikes" | "dislike" => split_values(v).for_each(|x| push(Constraint::dislike(x))),
            "requires" | "require" | "diet" => split_values(v).for_each(|x| push(Constraint::require(x))),
            _ => {}
        }
    }
    for fact in history {
        let s = normalize(&fact.statement);
        let s = s.trim_end_matches('.');
        if let Some(x) = s.strip_prefix("user dislikes ") {
            push(Constraint::dislike(x));
        } else if let Some(x) = s.strip_prefix("user requires ") {
            push(Constraint::require(x));
        } else if s == "user is a vegetarian" || s == "user is vegetarian" {
            push(Constraint::require("vegetarian"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(name: &str, tags: &[&str]) -> Candidate {
        Candidate { name: name.into(), tags: tags.iter().map(|t| t.to_string()).collect(), score: 0.5 }
    }

    #[test]
    fn raw_fish_excluded() {
        let cands = vec![c("Sushi Omakase", &["raw fish"]), c("Wagyu Beef", &["beef"])];
        let out = apply_constraints(&cands, &[Constraint::dislike("Raw Fish")]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].name, "Wagyu Beef");
        assert_eq!(apply_constraints(&cands, &[]), cands);
    }

    #[test]
    fn memory_constraints() {
        let profile: BTreeMap<String, String> =
            [("Hobby".to_string(), "Basketball".to_string()), ("Dislikes".to_string(), "Raw Fish".to_string())]
                .into_iter()
                .collect();
        let history = vec![HistoryFact { statement: "User is a vegetarian".into(), provenance: None, recorded_at: 0 }];
        let got = constraints_from_memory(&profile, &history);
        assert_eq!(got, vec![Constraint::dislike("raw fish"), Constraint::require("vegetarian")]);
    }

    const TAGS: &[&str] = &["a", "b", "c", "d"];

    proptest! {
        #[test]
        fn equals_brute_force_filter(
            cands in proptest::collection::vec(proptest::collection::vec(0usize..4, 0..4), 0..20),
            cons in proptest::collection::vec((any::<bool>(), 0usize..4), 0..4),
        ) {
            let cands: Vec<Candidate> = cands.iter().enumerate()
                .map(|(i, ts)| c(&format!("c{i}"), &ts.iter().map(|t| TAGS[*t]).collect::<Vec<_>>()))
                .collect();
            let cons: Vec<Constraint> = cons.iter()
                .map(|(d, t)| if *d { Constraint::dislike(TAGS[*t]) } else { Constraint::require(TAGS[*t]) })
                .collect();
            let got = apply_constraints(&cands, &cons);
            let mut expect = Vec::new();
            for cand in &cands {
                let mut ok = true;
                for k in &cons {
                    let has = cand.tags.contains(&k.tag);
                    if (k.kind == ConstraintKind::Dislike && has) || (k.kind == ConstraintKind::Require && !has) {
                        ok = false;
                    }
                }
                if ok { expect.push(cand.clone()); }
            }
            prop_assert_eq!(got, expect);
        }
    }
}
