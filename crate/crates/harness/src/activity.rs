//! Online engagement metrics over activity logs: session segmentation,
//! seven-day retention, good-turn rate and the task-completion proxy.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const DAY_MS: u64 = 86_400_000;
pub const DEFAULT_GAP_MINUTES: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Turn,
    Click,
    Share,
    Like,
    Terminate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityEvent {
    pub user_id: String,
    pub timestamp_ms: u64,
    pub event_kind: EventKind,
    #[serde(default)]
    pub extra: String,
}

impl ActivityEvent {
    pub fn new(user: &str, timestamp_ms: u64, kind: EventKind) -> Self {
        Self { user_id: user.into(), timestamp_ms, event_kind: kind, extra: String::new() }
    }
}

/// Read `user_id,timestamp_ms,event_kind,extra` rows; timestamps must not
/// decrease within a user.
pub fn read_activity_csv(reader: impl Read) -> Result<Vec<ActivityEvent>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<ActivityEvent> = Vec::new();
    let mut last: BTreeMap<String, u64> = BTreeMap::new();
    for row in rdr.deserialize() {
        let e: ActivityEvent = row?;
        if let Some(&prev) = last.get(&e.user_id) {
            if e.timestamp_ms < prev {
                return Err(HarnessError::Activity(format!(
                    "user '{}' goes back in time at {} (previous {prev})",
                    e.user_id, e.timestamp_ms
                )));
            }
        }
        last.insert(e.user_id.clone(), e.timestamp_ms);
        out.push(e);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivitySession {
    pub user_id: String,
    pub events: Vec<ActivityEvent>,
}

impl ActivitySession {
    pub fn turns(&self) -> usize {
        self.events.iter().filter(|e| e.event_kind == EventKind::Turn).count()
    }
}

/// Split each user's events wherever two consecutive events are more than
/// `gap_minutes` apart. Users come out in id order.
pub fn segment_sessions(events: &[ActivityEvent], gap_minutes: u64) -> Vec<ActivitySession> {
    let gap = gap_minutes * 60_000;
    let mut by_user: BTreeMap<&str, Vec<&ActivityEvent>> = BTreeMap::new();
    for e in events {
        by_user.entry(&e.user_id).or_default().push(e);
    }
    let mut out = Vec::new();
    for (user, mut evs) in by_user {
        evs.sort_by_key(|e| e.timestamp_ms);
        let mut current: Vec<ActivityEvent> = Vec::new();
        for e in evs {
            if current.last().is_some_and(|p| e.timestamp_ms - p.timestamp_ms > gap) {
                out.push(ActivitySession { user_id: user.into(), events: std::mem::take(&mut current) });
            }
            current.push(e.clone());
        }
        if !current.is_empty() {
            out.push(ActivitySession { user_id: user.into(), events: current });
        }
    }
    out
}

pub fn avg_turns(sessions: &[ActivitySession]) -> Option<f64> {
    if sessions.is_empty() {
        return None;
    }
    Some(sessions.iter().map(ActivitySession::turns).sum::<usize>() as f64 / sessions.len() as f64)
}

fn active_users(events: &[ActivityEvent], day: u64) -> BTreeSet<&str> {
    events
        .iter()
        .filter(|e| e.event_kind == EventKind::Turn && e.timestamp_ms / DAY_MS == day)
        .map(|e| e.user_id.as_str())
        .collect()
}

/// Percentage of users with a turn on day `day_t` who also have one on
/// day `day_t + 7`. `None` when nobody was active on day `day_t`.
pub fn retention7(events: &[ActivityEvent], day_t: u64) -> Option<f64> {
    let start = active_users(events, day_t);
    if start.is_empty() {
        return None;
    }
    let later = active_users(events, day_t + 7);
    Some(100.0 * start.intersection(&later).count() as f64 / start.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtrConfig {
    pub base_ms: u64,
    pub per_token_ms: u64,
}

impl Default for GtrConfig {
    fn default() -> Self {
        Self { base_ms: 1_500, per_token_ms: 40 }
    }
}

impl GtrConfig {
    pub fn threshold(&self, length_tokens: u64) -> u64 {
        self.base_ms + self.per_token_ms * length_tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub dwell_ms: u64,
    pub length_tokens: u64,
    pub explicit_positive: bool,
    pub terminated: bool,
    pub negative_sentiment: bool,
    pub requery: bool,
}

impl TurnRecord {
    pub fn is_good(&self, cfg: &GtrConfig) -> bool {
        let engaged = self.dwell_ms > cfg.threshold(self.length_tokens) || self.explicit_positive;
        engaged && !(self.terminated || self.negative_sentiment || self.requery)
    }
}

pub fn gtr(records: &[TurnRecord], cfg: &GtrConfig) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    Some(records.iter().filter(|r| r.is_good(cfg)).count() as f64 / records.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTurn {
    pub deliverable: bool,
    pub service_click: bool,
    pub correction: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSession {
    pub tier: u8,
    pub turns: Vec<SessionTurn>,
}

pub const ACCEPTANCE_WINDOW_TURNS: usize = 2;

impl AnnotatedSession {
    /// Anchored on the last deliverable: a service-card click at or after it,
    /// or no correction in the next two turns. No deliverable, no completion.
    pub fn completed(&self) -> bool {
        let Some(anchor) = self.turns.iter().rposition(|t| t.deliverable) else {
            return false;
        };
        if self.turns[anchor..].iter().any(|t| t.service_click) {
            return true;
        }
        let window = &self.turns[anchor + 1..(anchor + 1 + ACCEPTANCE_WINDOW_TURNS).min(self.turns.len())];
        !window.iter().any(|t| t.correction)
    }
}

/// Completion share over tier-2/3 sessions.
pub fn task_completion_proxy(sessions: &[AnnotatedSession]) -> Option<f64> {
    let scored: Vec<_> = sessions.iter().filter(|s| s.tier >= 2).collect();
    if scored.is_empty() {
        return None;
    }
    Some(scored.iter().filter(|s| s.completed()).count() as f64 / scored.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(user: &str, ms: u64) -> ActivityEvent {
        ActivityEvent::new(user, ms, EventKind::Turn)
    }

    #[test]
    fn thirty_minute_gap_splits() {
        let m = 60_000;
        let s = segment_sessions(&[turn("u", 0), turn("u", 10 * m), turn("u", 50 * m)], DEFAULT_GAP_MINUTES);
        let stamps: Vec<Vec<u64>> = s.iter().map(|x| x.events.iter().map(|e| e.timestamp_ms / m).collect()).collect();
        assert_eq!(stamps, vec![vec![0, 10], vec![50]]);
        // Exactly thirty minutes stays together.
        assert_eq!(segment_sessions(&[turn("u", 0), turn("u", 30 * m)], 30).len(), 1);
    }

    #[test]
    fn engineered_average_of_twelve_and_a_half() {
        // Two sessions of 10 and 15 turns, an hour apart.
        let mut log: Vec<ActivityEvent> = (0..10).map(|i| turn("u", i * 60_000)).collect();
        log.extend((0..15).map(|i| turn("u", 3_600_000 * 2 + i * 60_000)));
        let avg = avg_turns(&segment_sessions(&log, 30)).unwrap();
        assert!((avg - 12.5).abs() < 0.01);
    }

    #[test]
    fn retention_examples() {
        let d = DAY_MS;
        let log = [
            turn("a", 3 * d),
            turn("b", 3 * d + 5),
            turn("c", 3 * d + 9),
            turn("b", 10 * d),
            turn("c", 10 * d),
            turn("d", 10 * d),
        ];
        let r = retention7(&log, 3).unwrap();
        assert!((r - 66.7).abs() < 0.05, "{r}");
        let disjoint = [turn("a", 0), turn("b", 7 * d)];
        assert_eq!(retention7(&disjoint, 0), Some(0.0));
        assert_eq!(retention7(&disjoint, 1), None);
        // Clicks alone do not make a user active.
        let clicks = [ActivityEvent::new("a", 0, EventKind::Click)];
        assert_eq!(retention7(&clicks, 0), None);
    }

    #[test]
    fn cohort_of_thirty_four_point_two_percent() {
        // 342 of 1000 day-0 users return on day 7.
        let mut log: Vec<ActivityEvent> = (0..1000).map(|i| turn(&format!("u{i}"), i)).collect();
        log.extend((0..342).map(|i| turn(&format!("u{i}"), 7 * DAY_MS + i)));
        let r = retention7(&log, 0).unwrap();
        assert!((r - 34.2).abs() < 0.05);
    }

    #[test]
    fn gtr_rules() {
        let cfg = GtrConfig::default();
        let long = TurnRecord {
            dwell_ms: 5_000,
            length_tokens: 20,
            explicit_positive: false,
            terminated: false,
            negative_sentiment: false,
            requery: false,
        };
        assert!(long.is_good(&cfg));
        let clicked_then_requery = TurnRecord { dwell_ms: 0, explicit_positive: true, requery: true, ..long };
        assert!(!clicked_then_requery.is_good(&cfg));
        let short = TurnRecord { dwell_ms: 2_300, ..long };
        assert!(!short.is_good(&cfg));
        assert_eq!(gtr(&[long, short], &cfg), Some(0.5));
    }

    #[test]
    fn completion_window_is_two_turns() {
        let d = SessionTurn { deliverable: true, ..Default::default() };
        let fix = SessionTurn { correction: true, ..Default::default() };
        let click = SessionTurn { service_click: true, ..Default::default() };
        let idle = SessionTurn::default();
        let s = |turns: Vec<SessionTurn>| AnnotatedSession { tier: 3, turns };
        assert!(s(vec![d, click]).completed());
        assert!(!s(vec![d, fix]).completed());
        assert!(s(vec![d, idle, idle, fix]).completed());
        assert!(!s(vec![idle]).completed());
        let chat = AnnotatedSession { tier: 1, turns: vec![idle] };
        assert_eq!(task_completion_proxy(std::slice::from_ref(&chat)), None);
        assert_eq!(task_completion_proxy(&[chat, s(vec![d, fix]), s(vec![d])]), Some(0.5));
    }

    #[test]
    fn csv_round_trip_and_ordering() {
        let ok = "user_id,timestamp_ms,event_kind,extra\na,10,turn,\na,20,click,card-1\nb,5,terminate,\n";
        let log = read_activity_csv(ok.as_bytes()).unwrap();
        assert_eq!(log[1].event_kind, EventKind::Click);
        assert_eq!(log[1].extra, "card-1");
        let bad = "user_id,timestamp_ms,event_kind,extra\na,20,turn,\na,10,turn,\n";
        assert!(matches!(read_activity_csv(bad.as_bytes()), Err(HarnessError::Activity(_))));
    }
}
