//! Brute-force recounts of every metric plus random input generators, shared
//! by the proptests and the acceptance run. Nothing here calls the metric
//! code under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use dualtrack_core::router::Mode;
use dualtrack_harness::activity::{ActivityEvent, AnnotatedSession, EventKind, SessionTurn, TurnRecord};
use dualtrack_harness::corpus::ToolCall;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// --- oracles ---------------------------------------------------------------

pub fn dispatch(decisions: &[Mode], labels: &[Mode]) -> Option<f64> {
    let mut hits = 0usize;
    for i in 0..labels.len() {
        if decisions[i] == labels[i] {
            hits += 1;
        }
    }
    if labels.is_empty() {
        None
    } else {
        Some(hits as f64 / labels.len() as f64)
    }
}

fn canon(v: &str) -> String {
    let spaced: String = v.chars().map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' }).collect();
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn call_key(c: &ToolCall) -> (String, Vec<(String, String)>) {
    let mut args: Vec<(String, String)> = c.args.iter().map(|(k, v)| (k.clone(), canon(v))).collect();
    args.sort();
    (c.tool.clone(), args)
}

fn same_set(a: &[ToolCall], b: &[ToolCall]) -> bool {
    let ka: Vec<_> = a.iter().map(call_key).collect();
    let kb: Vec<_> = b.iter().map(call_key).collect();
    ka.iter().all(|x| kb.contains(x)) && kb.iter().all(|x| ka.contains(x))
}

pub fn success(cases: &[(Vec<ToolCall>, Vec<Vec<ToolCall>>)]) -> Option<f64> {
    let mut n = 0usize;
    let mut hits = 0usize;
    for (invoked, variants) in cases {
        if variants.is_empty() {
            continue;
        }
        n += 1;
        let mut ok = false;
        for v in variants {
            if same_set(invoked, v) {
                ok = true;
            }
        }
        if ok {
            hits += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some(hits as f64 / n as f64)
    }
}

fn squash(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn fidelity(cases: &[(String, Vec<String>)]) -> Option<f64> {
    let mut n = 0usize;
    let mut hits = 0usize;
    for (response, points) in cases {
        if points.is_empty() {
            continue;
        }
        n += 1;
        let r = squash(response);
        if r.is_empty() {
            continue;
        }
        let mut all = true;
        for p in points {
            if !r.contains(&squash(p)) {
                all = false;
            }
        }
        if all {
            hits += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some(hits as f64 / n as f64)
    }
}

/// Sessions keyed by (user, ordinal); an event's ordinal is the number of
/// over-gap steps before it in its user's timeline.
pub fn segment(events: &[ActivityEvent], gap_minutes: u64) -> Vec<(String, Vec<ActivityEvent>)> {
    let gap = gap_minutes * 60_000;
    let users: BTreeSet<&str> = events.iter().map(|e| e.user_id.as_str()).collect();
    let mut out = Vec::new();
    for u in users {
        let mut mine: Vec<&ActivityEvent> = events.iter().filter(|e| e.user_id == u).collect();
        mine.sort_by_key(|e| e.timestamp_ms);
        let mut groups: BTreeMap<usize, Vec<ActivityEvent>> = BTreeMap::new();
        for j in 0..mine.len() {
            let mut ordinal = 0;
            for k in 1..=j {
                if mine[k].timestamp_ms - mine[k - 1].timestamp_ms > gap {
                    ordinal += 1;
                }
            }
            groups.entry(ordinal).or_default().push(mine[j].clone());
        }
        for (_, g) in groups {
            out.push((u.to_string(), g));
        }
    }
    out
}

pub fn avg_turns(sessions: &[(String, Vec<ActivityEvent>)]) -> Option<f64> {
    if sessions.is_empty() {
        return None;
    }
    let mut turns = 0usize;
    for (_, evs) in sessions {
        for e in evs {
            if e.event_kind == EventKind::Turn {
                turns += 1;
            }
        }
    }
    Some(turns as f64 / sessions.len() as f64)
}

pub fn retention(events: &[ActivityEvent], day: u64) -> Option<f64> {
    let users: BTreeSet<&str> = events.iter().map(|e| e.user_id.as_str()).collect();
    let active = |u: &str, d: u64| {
        events.iter().any(|e| {
            e.user_id == u
                && e.event_kind == EventKind::Turn
                && e.timestamp_ms >= d * 86_400_000
                && e.timestamp_ms < (d + 1) * 86_400_000
        })
    };
    let mut base = 0usize;
    let mut kept = 0usize;
    for u in users {
        if active(u, day) {
            base += 1;
            if active(u, day + 7) {
                kept += 1;
            }
        }
    }
    if base == 0 {
        None
    } else {
        Some(100.0 * kept as f64 / base as f64)
    }
}

pub fn gtr(records: &[TurnRecord], base_ms: u64, per_token_ms: u64) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let mut good = 0usize;
    for r in records {
        if r.terminated || r.negative_sentiment || r.requery {
            continue;
        }
        if r.explicit_positive || r.dwell_ms > base_ms + per_token_ms * r.length_tokens {
            good += 1;
        }
    }
    Some(good as f64 / records.len() as f64)
}

pub fn completion(sessions: &[AnnotatedSession]) -> Option<f64> {
    let mut n = 0usize;
    let mut done = 0usize;
    for s in sessions {
        if s.tier < 2 {
            continue;
        }
        n += 1;
        let mut anchor = None;
        for (i, t) in s.turns.iter().enumerate() {
            if t.deliverable {
                anchor = Some(i);
            }
        }
        let Some(a) = anchor else { continue };
        let mut clicked = false;
        for t in &s.turns[a..] {
            clicked |= t.service_click;
        }
        let mut corrected = false;
        for i in a + 1..=a + 2 {
            if i < s.turns.len() && s.turns[i].correction {
                corrected = true;
            }
        }
        if clicked || !corrected {
            done += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some(done as f64 / n as f64)
    }
}

// --- generators ------------------------------------------------------------

const MODES: [Mode; 3] = [Mode::Chat, Mode::Tool, Mode::Agent];

pub fn modes(r: &mut ChaCha8Rng) -> (Vec<Mode>, Vec<Mode>) {
    let n = r.random_range(0..=100);
    let labels: Vec<Mode> = (0..n).map(|_| MODES[r.random_range(0..3)]).collect();
    let decisions = labels.iter().map(|m| if r.random_bool(0.8) { *m } else { MODES[r.random_range(0..3)] }).collect();
    (decisions, labels)
}

const VALUES: &[&str] = &["Tokyo", "tokyo", "TOKYO!", "Paris", "new york", "New  York", "Onsen", "friday"];

fn call(r: &mut ChaCha8Rng) -> ToolCall {
    let tool = ["weather", "hotel_book", "search"][r.random_range(0..3)];
    let mut args = BTreeMap::new();
    for k in ["city", "date", "type"] {
        if r.random_bool(0.5) {
            args.insert(k.to_string(), VALUES[r.random_range(0..VALUES.len())].to_string());
        }
    }
    ToolCall { tool: tool.into(), args }
}

fn restyle(c: &ToolCall, r: &mut ChaCha8Rng) -> ToolCall {
    let mut c = c.clone();
    for v in c.args.values_mut() {
        if r.random_bool(0.5) {
            *v = format!(" {}.", v.to_uppercase());
        }
    }
    c
}

pub fn success_cases(r: &mut ChaCha8Rng) -> Vec<(Vec<ToolCall>, Vec<Vec<ToolCall>>)> {
    let n = r.random_range(0..=100);
    (0..n)
        .map(|_| {
            let variants: Vec<Vec<ToolCall>> =
                (0..r.random_range(0..3)).map(|_| (0..r.random_range(1..4)).map(|_| call(r)).collect()).collect();
            let invoked = match (variants.is_empty(), r.random_range(0..3)) {
                (false, 0) => {
                    let v = &variants[r.random_range(0..variants.len())];
                    let mut calls: Vec<ToolCall> = v.iter().map(|c| restyle(c, r)).collect();
                    calls.reverse();
                    calls
                }
                _ => (0..r.random_range(0..4)).map(|_| call(r)).collect(),
            };
            (invoked, variants)
        })
        .collect()
}

const WORDS: &[&str] = &["Wagyu", "Beef", "sushi", "arena", "game", "TOKYO", "flight", "basketball"];

fn phrase(r: &mut ChaCha8Rng, max: usize) -> String {
    let mut s = String::new();
    for i in 0..r.random_range(0..=max) {
        if i > 0 {
            s.push_str(if r.random_bool(0.2) { "  " } else { " " });
        }
        s.push_str(WORDS[r.random_range(0..WORDS.len())]);
    }
    s
}

pub fn fidelity_cases(r: &mut ChaCha8Rng) -> Vec<(String, Vec<String>)> {
    let n = r.random_range(0..=100);
    (0..n)
        .map(|_| {
            let response = phrase(r, 12);
            let points =
                (0..r.random_range(0..3))
                    .map(|_| {
                        if r.random_bool(0.3) {
                            phrase(r, 2)
                        } else {
                            WORDS[r.random_range(0..WORDS.len())].to_string()
                        }
                    })
                    .collect();
            (response, points)
        })
        .collect()
}

const KINDS: [EventKind; 5] =
    [EventKind::Turn, EventKind::Click, EventKind::Share, EventKind::Like, EventKind::Terminate];

/// Up to 100 events over five users and about three weeks, with bursts and
/// pauses on both sides of the 30-minute gap.
pub fn activity(r: &mut ChaCha8Rng) -> Vec<ActivityEvent> {
    let n = r.random_range(0..=100);
    let mut clock: BTreeMap<usize, u64> = BTreeMap::new();
    (0..n)
        .map(|_| {
            let u = r.random_range(0..5);
            let step = match r.random_range(0..4) {
                0 => 0,
                1 => r.random_range(0..=30) * 60_000,
                2 => r.random_range(25..=40) * 60_000,
                _ => r.random_range(0..3 * 86_400_000),
            };
            let t = clock.entry(u).or_insert(r.random_range(0..2 * 86_400_000));
            *t += step;
            ActivityEvent::new(&format!("user{u}"), *t, KINDS[r.random_range(0..KINDS.len())])
        })
        .collect()
}

pub fn turn_records(r: &mut ChaCha8Rng) -> Vec<TurnRecord> {
    let n = r.random_range(0..=100);
    (0..n)
        .map(|_| TurnRecord {
            dwell_ms: r.random_range(0..8_000),
            length_tokens: r.random_range(0..100),
            explicit_positive: r.random_bool(0.2),
            terminated: r.random_bool(0.1),
            negative_sentiment: r.random_bool(0.1),
            requery: r.random_bool(0.1),
        })
        .collect()
}

pub fn annotated_sessions(r: &mut ChaCha8Rng) -> Vec<AnnotatedSession> {
    let n = r.random_range(0..=100);
    (0..n)
        .map(|_| AnnotatedSession {
            tier: r.random_range(1..=3),
            turns: (0..r.random_range(0..8))
                .map(|_| SessionTurn {
                    deliverable: r.random_bool(0.3),
                    service_click: r.random_bool(0.1),
                    correction: r.random_bool(0.25),
                })
                .collect(),
        })
        .collect()
}
