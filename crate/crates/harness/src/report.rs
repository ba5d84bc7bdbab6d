//! The benchmark report and its text rendering.

use std::fmt::Write as _;

use dualtrack_core::router::Mode;
use serde::{Deserialize, Serialize};

use crate::metrics::percentile;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub mean: Option<f64>,
    pub p50: Option<u64>,
    pub p95: Option<u64>,
    pub p99: Option<u64>,
    pub max: Option<u64>,
}

impl LatencySummary {
    pub fn of(values: &[u64]) -> Self {
        let mean = (!values.is_empty()).then(|| values.iter().sum::<u64>() as f64 / values.len() as f64);
        Self {
            samples: values.len(),
            mean,
            p50: percentile(values, 50.0),
            p95: percentile(values, 95.0),
            p99: percentile(values, 99.0),
            max: values.iter().max().copied(),
        }
    }

    pub fn is_monotone(&self) -> bool {
        let ps = [self.p50, self.p95, self.p99, self.max];
        ps.windows(2).all(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => a <= b,
            (None, None) => true,
            _ => false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnMeasure {
    pub routed: Mode,
    pub expected: Mode,
    pub ttft_ms: u64,
    pub e2e_ms: u64,
    /// No task, or its task completed.
    pub successful: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseVerdict {
    pub case_id: String,
    pub turns: Vec<TurnMeasure>,
    pub routing_ok: bool,
    /// `None` when the case carries no execution ground truth.
    pub execution_ok: Option<bool>,
    /// `None` when the case carries no key points.
    pub fidelity_ok: Option<bool>,
    pub task_statuses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub cases: usize,
    pub turns: usize,
    pub budget_ms: u64,
    pub dispatch_precision: Option<f64>,
    pub dispatch_precision_unambiguous: Option<f64>,
    pub success_rate: Option<f64>,
    pub fidelity: Option<f64>,
    /// Share of tier-2/3 turns answered within the budget.
    pub ttft_within_budget: Option<f64>,
    pub ttft: LatencySummary,
    pub e2e_all: LatencySummary,
    pub e2e_successful: LatencySummary,
    pub checks: Vec<InvariantCheck>,
    pub per_case: Vec<CaseVerdict>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{:.1}%", 100.0 * x))
}

fn ms(v: Option<u64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl MetricsReport {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ =
            writeln!(s, "cases {}  turns {}  seed {}  budget {} ms", self.cases, self.turns, self.seed, self.budget_ms);
        let _ = writeln!(s, "{:<34} {:>10}", "metric", "value");
        for (name, v) in [
            ("dispatch precision", self.dispatch_precision),
            ("dispatch precision (unambiguous)", self.dispatch_precision_unambiguous),
            ("success rate", self.success_rate),
            ("response fidelity", self.fidelity),
            ("ttft within budget (tier 2/3)", self.ttft_within_budget),
        ] {
            let _ = writeln!(s, "{name:<34} {:>10}", pct(v));
        }
        let _ =
            writeln!(s, "{:<16} {:>8} {:>8} {:>8} {:>8} {:>10}", "latency (ms)", "p50", "p95", "p99", "max", "mean");
        for (name, l) in [("ttft", &self.ttft), ("e2e all", &self.e2e_all), ("e2e successful", &self.e2e_successful)] {
            let mean = l.mean.map_or_else(|| "-".to_string(), |m| format!("{m:.1}"));
            let _ = writeln!(
                s,
                "{name:<16} {:>8} {:>8} {:>8} {:>8} {:>10}",
                ms(l.p50),
                ms(l.p95),
                ms(l.p99),
                ms(l.max),
                mean
            );
        }
        for c in &self.checks {
            let _ = writeln!(s, "[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_nothing_is_undefined_but_monotone() {
        let l = LatencySummary::of(&[]);
        assert_eq!(l.p50, None);
        assert!(l.is_monotone());
        let l = LatencySummary::of(&[5, 1, 9, 3]);
        assert_eq!((l.p50, l.max), (Some(3), Some(9)));
        assert!(l.is_monotone());
    }
}
