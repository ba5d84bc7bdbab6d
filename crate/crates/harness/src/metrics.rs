//! Offline benchmark metrics: dispatch precision, execution success,
//! response fidelity and latency percentiles.
//!
//! Fractions come back as `Option<f64>`; `None` flags an undefined metric
//! (nothing to score).

use std::collections::BTreeSet;

use dualtrack_core::router::Mode;
use dualtrack_core::text::normalize;

use crate::corpus::ToolCall;
use crate::error::{HarnessError, Result};

fn fraction(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hits as f64 / n as f64)
}

/// Share of turns whose routed mode matches its label.
pub fn dispatch_precision(decisions: &[Mode], labels: &[Mode]) -> Result<Option<f64>> {
    if decisions.len() != labels.len() {
        return Err(HarnessError::LengthMismatch { left: decisions.len(), right: labels.len() });
    }
    let hits = decisions.iter().zip(labels).filter(|(d, l)| d == l).count();
    Ok(fraction(hits, labels.len()))
}

fn canonical_set(calls: &[ToolCall]) -> BTreeSet<ToolCall> {
    calls.iter().map(ToolCall::canonical).collect()
}

/// Whether the invoked calls, as a canonical set, equal any acceptable variant.
pub fn case_succeeds(invoked: &[ToolCall], variants: &[Vec<ToolCall>]) -> bool {
    let got = canonical_set(invoked);
    variants.iter().any(|v| canonical_set(v) == got)
}

/// Success over cases that carry execution ground truth; others are skipped.
pub fn success_rate(cases: &[(Vec<ToolCall>, Vec<Vec<ToolCall>>)]) -> Option<f64> {
    let scored: Vec<_> = cases.iter().filter(|(_, gt)| !gt.is_empty()).collect();
    let hits = scored.iter().filter(|(inv, gt)| case_succeeds(inv, gt)).count();
    fraction(hits, scored.len())
}

/// Every key point appears, normalized, inside the normalized response.
pub fn response_hits(response: &str, key_points: &[String]) -> bool {
    let r = normalize(response);
    !r.is_empty() && key_points.iter().all(|k| r.contains(&normalize(k)))
}

/// Hit rate over cases with key points; cases without any are skipped.
pub fn fidelity(cases: &[(String, Vec<String>)]) -> Option<f64> {
    let scored: Vec<_> = cases.iter().filter(|(_, k)| !k.is_empty()).collect();
    let hits = scored.iter().filter(|(r, k)| response_hits(r, k)).count();
    fraction(hits, scored.len())
}

/// Nearest-rank percentile: the smallest value with at least `p` percent of
/// samples at or below it.
pub fn percentile(values: &[u64], p: f64) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}
