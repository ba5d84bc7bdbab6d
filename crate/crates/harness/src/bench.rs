//! Corpus replay under the virtual clock.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use dualtrack_core::augmentation::{builtin_descriptors, Args};
use dualtrack_core::perception::{FrameDescriptor, ModalityPayload};
use dualtrack_core::router::Mode;
use dualtrack_core::slow_track::{ExecutionTrace, StepState, TaskStatus};
use dualtrack_core::{Engine, EngineConfig};
use serde_json::Value;

use crate::corpus::{validate_corpus, BenchmarkCase, ToolCall};
use crate::error::Result;
use crate::metrics::{case_succeeds, dispatch_precision, response_hits};
use crate::report::{CaseVerdict, InvariantCheck, LatencySummary, MetricsReport, TurnMeasure};

/// Audio plus a camera frame, so every turn pays the perception charge.
pub fn spoken_turn(text: &str) -> Vec<ModalityPayload> {
    let frame: FrameDescriptor =
        [("subject".to_string(), "user".to_string()), ("action".to_string(), "talking".to_string())].into();
    vec![ModalityPayload::audio(text), ModalityPayload::video(vec![frame])]
}

fn call_of(tool: &str, args: &Args) -> ToolCall {
    let args = args
        .iter()
        .map(|(k, v)| {
            let s = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), s)
        })
        .collect();
    ToolCall { tool: tool.into(), args }
}

/// Step durations and critical-path length of a completed task whose graph
/// has two steps that may run side by side and that never waited on the user.
fn parallel_witness(trace: &ExecutionTrace) -> Option<Witness> {
    let g = trace.graph.as_ref()?;
    if !trace.clarifications.is_empty() || trace.status != TaskStatus::Completed {
        return None;
    }
    let ids: Vec<u32> = g.steps.iter().map(|s| s.step_id).collect();
    let mut reach: BTreeSet<(u32, u32)> = g.edges.clone();
    loop {
        let extra: Vec<(u32, u32)> = reach
            .iter()
            .flat_map(|&(a, b)| reach.iter().filter(move |&&(c, _)| c == b).map(move |&(_, d)| (a, d)))
            .filter(|e| !reach.contains(e))
            .collect();
        if extra.is_empty() {
            break;
        }
        reach.extend(extra);
    }
    let independent = ids
        .iter()
        .enumerate()
        .any(|(i, a)| ids[i + 1..].iter().any(|b| !reach.contains(&(*a, *b)) && !reach.contains(&(*b, *a))));
    if !independent {
        return None;
    }
    let durations: BTreeMap<u32, u64> = g
        .steps
        .iter()
        .map(|s| match (s.state, s.started_at, s.ended_at) {
            (StepState::Done, Some(a), Some(b)) => Some((s.step_id, b - a)),
            _ => None,
        })
        .collect::<Option<_>>()?;
    // Step ids are topologically ordered: references only point backwards.
    let mut finish: BTreeMap<u32, u64> = BTreeMap::new();
    for (&id, &d) in &durations {
        let start = g.edges.iter().filter(|(_, c)| *c == id).map(|(p, _)| finish[p]).max().unwrap_or(0);
        finish.insert(id, start + d);
    }
    Some(Witness {
        makespan: trace.makespan(),
        critical_path: finish.values().copied().max().unwrap_or(0),
        durations: durations.into_values().collect(),
    })
}

struct Witness {
    makespan: u64,
    critical_path: u64,
    durations: Vec<u64>,
}

struct CaseRun {
    verdict: CaseVerdict,
    invoked: Vec<ToolCall>,
    response: String,
    routed: Vec<Mode>,
    witnesses: Vec<Witness>,
}

async fn run_case(engine: &Arc<Engine>, case: &BenchmarkCase) -> Result<CaseRun> {
    let user = format!("{}-user", case.case_id);
    for (k, v) in &case.profile {
        engine.memory().set_profile(&user, k, v);
    }
    let session = engine.open_session(&user, dualtrack_core::engine::DEFAULT_PERSONA)?;
    let mut receipts = Vec::new();
    let mut e2e = Vec::new();
    for turn in &case.turns {
        let r = engine.turn(&session, spoken_turn(&turn.text), None).await?;
        engine.settle().await;
        let last = engine.transcript(&session)?.last().map(|e| e.timestamp).unwrap_or(r.accepted_at);
        e2e.push(last - r.accepted_at);
        receipts.push(r);
    }
    let tasks = engine.tasks(&session)?;
    let transcript = engine.transcript(&session)?;
    engine.close_session(&session).await?;

    let status_of_turn: BTreeMap<u64, TaskStatus> =
        tasks.iter().filter_map(|t| t.trace.as_ref().map(|tr| (t.turn_seq, tr.status))).collect();
    let mut invoked = Vec::new();
    let mut witnesses = Vec::new();
    let mut statuses = Vec::new();
    for t in &tasks {
        let Some(trace) = &t.trace else {
            statuses.push("unfinished".to_string());
            continue;
        };
        statuses.push(trace.status.as_str().to_string());
        invoked.extend(trace.invocations.iter().map(|i| call_of(&i.tool, &i.args)));
        witnesses.extend(parallel_witness(trace));
    }
    let response = transcript
        .iter()
        .filter(|e| e.kind == dualtrack_core::state::EntryKind::Deliverable)
        .map(|e| e.content.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let routed: Vec<Mode> = receipts.iter().map(|r| r.routing.mode).collect();
    let turns = receipts
        .iter()
        .zip(&case.routing_gt)
        .zip(e2e)
        .map(|((r, expected), e2e_ms)| TurnMeasure {
            routed: r.routing.mode,
            expected: *expected,
            ttft_ms: r.ttft_ms(),
            e2e_ms,
            successful: status_of_turn.get(&r.turn_seq).is_none_or(|s| *s == TaskStatus::Completed),
        })
        .collect();
    let execution_ok = (!case.execution_gt.is_empty()).then(|| case_succeeds(&invoked, &case.execution_gt));
    let fidelity_ok = (!case.response_gt.is_empty()).then(|| response_hits(&response, &case.response_gt));
    Ok(CaseRun {
        verdict: CaseVerdict {
            case_id: case.case_id.clone(),
            turns,
            routing_ok: routed == case.routing_gt,
            execution_ok,
            fidelity_ok,
            task_statuses: statuses,
        },
        invoked,
        response,
        routed,
        witnesses,
    })
}

fn share(flags: impl Iterator<Item = bool>) -> Option<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for f in flags {
        n += 1;
        hit += f as usize;
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

fn check(name: &str, passed: bool, detail: String) -> InvariantCheck {
    InvariantCheck { name: name.into(), passed, detail }
}

/// Replay every case on a fresh session of one engine, inside the current
/// (paused) runtime.
pub async fn run_bench_async(corpus: &[BenchmarkCase], cfg: &EngineConfig, seed: u64) -> Result<MetricsReport> {
    validate_corpus(corpus, &builtin_descriptors())?;
    let cfg = EngineConfig { seed, ..cfg.clone() };
    let engine = Engine::builder(cfg.clone()).build()?;
    let mut runs = Vec::with_capacity(corpus.len());
    for case in corpus {
        runs.push(run_case(&engine, case).await?);
    }

    let routed: Vec<Mode> = runs.iter().flat_map(|r| r.routed.iter().copied()).collect();
    let labels: Vec<Mode> = corpus.iter().flat_map(|c| c.routing_gt.iter().copied()).collect();
    let (routed_u, labels_u): (Vec<Mode>, Vec<Mode>) = runs
        .iter()
        .zip(corpus)
        .filter(|(_, c)| c.tags.unambiguous)
        .flat_map(|(r, c)| r.routed.iter().copied().zip(c.routing_gt.iter().copied()))
        .unzip();
    let sr_cases: Vec<_> = runs.iter().zip(corpus).map(|(r, c)| (r.invoked.clone(), c.execution_gt.clone())).collect();
    let fid_cases: Vec<_> = runs.iter().zip(corpus).map(|(r, c)| (r.response.clone(), c.response_gt.clone())).collect();

    let turns: Vec<&TurnMeasure> = runs.iter().flat_map(|r| r.verdict.turns.iter()).collect();
    let ttft: Vec<u64> = turns.iter().map(|t| t.ttft_ms).collect();
    let e2e: Vec<u64> = turns.iter().map(|t| t.e2e_ms).collect();
    let e2e_ok: Vec<u64> = turns.iter().filter(|t| t.successful).map(|t| t.e2e_ms).collect();
    let tiered: Vec<&&TurnMeasure> = turns.iter().filter(|t| t.expected.tier() >= 2).collect();
    let over: Vec<u64> = tiered.iter().filter(|t| t.ttft_ms > cfg.budget_ms).map(|t| t.ttft_ms).collect();

    let mut report = MetricsReport {
        seed,
        cases: corpus.len(),
        turns: turns.len(),
        budget_ms: cfg.budget_ms,
        dispatch_precision: dispatch_precision(&routed, &labels)?,
        dispatch_precision_unambiguous: dispatch_precision(&routed_u, &labels_u)?,
        success_rate: crate::metrics::success_rate(&sr_cases),
        fidelity: crate::metrics::fidelity(&fid_cases),
        ttft_within_budget: share(tiered.iter().map(|t| t.ttft_ms <= cfg.budget_ms)),
        ttft: LatencySummary::of(&ttft),
        e2e_all: LatencySummary::of(&e2e),
        e2e_successful: LatencySummary::of(&e2e_ok),
        checks: Vec::new(),
        per_case: Vec::new(),
    };

    let mut checks = vec![check(
        "ttft_budget_tier23",
        over.is_empty(),
        format!("{} of {} tier-2/3 turns over {} ms", over.len(), tiered.len(), cfg.budget_ms),
    )];
    let monotone = [&report.ttft, &report.e2e_all, &report.e2e_successful].iter().all(|l| l.is_monotone());
    checks.push(check("percentiles_monotone", monotone, "p50 <= p95 <= p99 <= max".into()));
    let fractions = [
        report.dispatch_precision,
        report.dispatch_precision_unambiguous,
        report.success_rate,
        report.fidelity,
        report.ttft_within_budget,
    ];
    let in_range = fractions.iter().flatten().all(|f| (0.0..=1.0).contains(f));
    checks.push(check("fractions_in_unit_interval", in_range, "every rate within [0, 1]".into()));
    let witnesses: Vec<&Witness> = runs.iter().flat_map(|r| r.witnesses.iter()).collect();
    let slow = witnesses
        .iter()
        .filter(|w| {
            let sum: u64 = w.durations.iter().sum();
            let min = w.durations.iter().min().copied().unwrap_or(0);
            w.makespan > sum - min + 1
        })
        .count();
    checks.push(check(
        "parallelism_witness",
        slow == 0,
        format!("{slow} of {} parallel-eligible tasks slower than serialized sum minus shortest step", witnesses.len()),
    ));
    let off_path = witnesses.iter().filter(|w| w.makespan.abs_diff(w.critical_path) > 1).count();
    checks.push(check(
        "makespan_is_critical_path",
        off_path == 0,
        format!("{off_path} of {} parallel-eligible tasks off their critical path by more than 1 ms", witnesses.len()),
    ));
    report.checks = checks;
    report.per_case = runs.into_iter().map(|r| r.verdict).collect();
    Ok(report)
}

/// Replay the corpus on a private paused current-thread runtime.
pub fn run_bench(corpus: &[BenchmarkCase], cfg: &EngineConfig, seed: u64) -> Result<MetricsReport> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_time()
        .start_paused(true)
        .build()
        .map_err(|e| crate::error::HarnessError::io("tokio runtime", e))?;
    rt.block_on(run_bench_async(corpus, cfg, seed))
}
