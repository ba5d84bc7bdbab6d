//! Acceptance run: one pass/fail line per criterion, nonzero exit on any
//! failure. Runs under `cargo test` as its own target.

mod oracles;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use dualtrack_core::augmentation::{
    ArgSpec, Delegator, DelegatorConfig, LatencyModel, ToolDescriptor, ToolRegistry, ValueType,
};
use dualtrack_core::config::LatencyProfile;
use dualtrack_core::evolution::{branch_text, distill, fold_task, unfold};
use dualtrack_core::router::{validate_decision, Mode, PlanItem};
use dualtrack_core::slow_track::{
    AgentProfile, Executor, ExecutorConfig, ProfileRegistry, ReferenceGenerator, StepState, TaskRequest, TaskScope,
    TaskStatus, TemplatePlanner,
};
use dualtrack_core::state::{EntryKind, TraceItem};
use dualtrack_core::{Clock, Engine, EngineConfig, Error, PerceptionMode, SessionId, TaskId};
use dualtrack_harness::activity::{self, ActivityEvent, EventKind, GtrConfig, DAY_MS};
use dualtrack_harness::{bundled_corpus, metrics, run_bench, spoken_turn, MetricsReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn paused_runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_time().start_paused(true).build().unwrap()
}

fn heavy_tail() -> EngineConfig {
    EngineConfig { latency_profile: LatencyProfile::HeavyTail, ..Default::default() }
}

// 1 -------------------------------------------------------------------------

fn ttft_budget(heavy: &MetricsReport, elapsed: Duration) -> Outcome {
    let cfg = heavy_tail();
    // Independent check that the configured tail is as heavy as required.
    let model = LatencyModel::Lognormal { mu: cfg.heavy_tail_mu, sigma: cfg.heavy_tail_sigma };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut draws: Vec<u64> = (0..100_000).map(|_| model.sample(&mut rng).unwrap()).collect();
    draws.sort_unstable();
    let p99 = draws[draws.len() * 99 / 100];
    ensure(p99 >= 10_000, format!("tool latency p99 {p99} ms < 10000"))?;
    let over: Vec<u64> =
        heavy.per_case.iter().flat_map(|c| c.turns.iter()).map(|t| t.ttft_ms).filter(|t| *t > 500).collect();
    ensure(heavy.cases == 200, format!("{} cases", heavy.cases))?;
    ensure(over.is_empty(), format!("{} turns over 500 ms: {over:?}", over.len()))?;
    ensure(elapsed < Duration::from_secs(30), format!("bench took {elapsed:?}"))?;
    Ok(format!(
        "{} turns, max ttft {} ms, tool p99 {p99} ms, {:.1}s wall",
        heavy.turns,
        heavy.ttft.max.unwrap_or(0),
        elapsed.as_secs_f64()
    ))
}

// 2 -------------------------------------------------------------------------

fn perception_charge(mode: PerceptionMode) -> u64 {
    paused_runtime().block_on(async {
        let cfg = EngineConfig { perception: mode, ..Default::default() };
        let fixed = cfg.router_latency_ms + cfg.responder_latency_ms;
        let e = Engine::builder(cfg).build().unwrap();
        let s = e.open_session("u", "companion").unwrap();
        e.turn(&s, spoken_turn("hello there"), None).await.unwrap();
        e.settle().await;
        let t = e.transcript(&s).unwrap();
        let reply = t.iter().rev().find(|x| x.kind == EntryKind::Turn).unwrap();
        reply.timestamp - t[0].timestamp - fixed
    })
}

fn perception_ablation(decoupled: &MetricsReport) -> Outcome {
    let d = perception_charge(PerceptionMode::Decoupled);
    let m = perception_charge(PerceptionMode::Monolithic);
    ensure(d.abs_diff(480) <= 1, format!("decoupled charge {d}"))?;
    ensure(m.abs_diff(2_100) <= 1, format!("monolithic charge {m}"))?;
    let mono =
        run_bench(&bundled_corpus(), &EngineConfig { perception: PerceptionMode::Monolithic, ..heavy_tail() }, 42)
            .map_err(|e| e.to_string())?;
    let (pd, pm) = (decoupled.e2e_all.p50.unwrap(), mono.e2e_all.p50.unwrap());
    ensure(pm >= pd + 1_600, format!("p50 e2e decoupled {pd} monolithic {pm}"))?;
    Ok(format!("charges {d}/{m} ms, p50 e2e {pd} -> {pm} ms (+{})", pm - pd))
}

// 3 -------------------------------------------------------------------------

fn graph_tool(id: &str, ms: u64) -> ToolDescriptor {
    ToolDescriptor {
        tool_id: id.into(),
        description: String::new(),
        arg_schema: (1..=8).map(|i| (format!("d{i}"), ArgSpec::optional(ValueType::Any))).collect(),
        result_schema: [("summary".to_string(), ArgSpec::required(ValueType::String))].into_iter().collect(),
        latency_model: LatencyModel::Fixed { ms },
        failure_rate: 0.0,
        endpoint: None,
    }
}

fn profiles(ids: &[&str]) -> ProfileRegistry {
    let mut p = ProfileRegistry::new();
    for id in ids {
        p.register(AgentProfile::new(id, "acceptance profile", &[])).unwrap();
    }
    p
}

fn executor(registry: ToolRegistry, profiles: ProfileRegistry, planner: TemplatePlanner) -> Executor {
    Executor {
        registry: Arc::new(registry),
        profiles: Arc::new(profiles),
        planner: Arc::new(planner),
        generator: Arc::new(ReferenceGenerator),
        delegator: Arc::new(Delegator::new(DelegatorConfig { depth_cap: 2, global_cap: 64 })),
        clock: Clock::virtual_start(),
        cfg: ExecutorConfig { concurrency: 8, ..ExecutorConfig::default() },
    }
}

fn critical_path(durations: &[u64], edges: &BTreeSet<(u32, u32)>) -> u64 {
    let mut finish = vec![0u64; durations.len() + 1];
    for i in 1..=durations.len() {
        let start = edges.iter().filter(|(_, c)| *c as usize == i).map(|(p, _)| finish[*p as usize]).max();
        finish[i] = start.unwrap_or(0) + durations[i - 1];
    }
    finish.into_iter().max().unwrap()
}

fn parallelism(heavy: &MetricsReport) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0u64;
    for g in 0..500 {
        let n = rng.random_range(1..=8u32);
        let durations: Vec<u64> = (0..n).map(|_| rng.random_range(1..2_000)).collect();
        let edges: BTreeSet<(u32, u32)> =
            (1..=n).flat_map(|c| (1..c).map(move |p| (p, c))).filter(|_| rng.random_bool(0.35)).collect();
        let registry = ToolRegistry::new();
        for (i, d) in durations.iter().enumerate() {
            registry.register(graph_tool(&format!("t{}", i + 1), *d)).unwrap();
        }
        let items = (1..=n)
            .map(|i| PlanItem {
                step: i,
                tool: format!("t{i}"),
                args: edges
                    .iter()
                    .filter(|(_, c)| *c == i)
                    .map(|(p, _)| (format!("d{p}"), json!(format!("$step{p}"))))
                    .collect(),
            })
            .collect();
        let ex = executor(
            registry,
            profiles(&["Graph", "Generalist"]),
            TemplatePlanner::new().with_fixed_plan("Graph", items),
        );
        let req = TaskRequest { profile: Some("Graph".into()), ..TaskRequest::new("run the graph") };
        let out = paused_runtime().block_on(ex.run_task(&req, &TaskScope::detached(TaskId::new(format!("g{g}")))));
        ensure(out.trace.status == TaskStatus::Completed, format!("graph {g} status {:?}", out.trace.status))?;
        let diff = out.trace.makespan().abs_diff(critical_path(&durations, &edges));
        worst = worst.max(diff);
        ensure(
            diff <= 1,
            format!(
                "graph {g}: makespan {} vs critical path {}",
                out.trace.makespan(),
                critical_path(&durations, &edges)
            ),
        )?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    let corpus_check = heavy.checks.iter().find(|c| c.name == "makespan_is_critical_path").unwrap();
    ensure(corpus_check.passed, corpus_check.detail.clone())?;
    Ok(format!(
        "500 graphs, worst deviation {worst} ms, {:.1}s wall; corpus: {}",
        elapsed.as_secs_f64(),
        corpus_check.detail
    ))
}

// 4 -------------------------------------------------------------------------

fn no_deadlock() -> Outcome {
    let registry = ToolRegistry::new();
    registry.register(graph_tool("quick", 300)).unwrap();
    let mut stall = graph_tool("stall", 0);
    stall.latency_model = LatencyModel::Stall;
    registry.register(stall).unwrap();
    let outer = vec![
        PlanItem { step: 1, tool: "quick".into(), args: Default::default() },
        PlanItem {
            step: 2,
            tool: "agent:Staller".into(),
            args: [("task".to_string(), json!("wait forever"))].into_iter().collect(),
        },
        PlanItem { step: 3, tool: "quick".into(), args: [("d1".to_string(), json!("$step1"))].into_iter().collect() },
    ];
    let inner = vec![PlanItem { step: 1, tool: "stall".into(), args: Default::default() }];
    let planner = TemplatePlanner::new().with_fixed_plan("Graph", outer).with_fixed_plan("Staller", inner);
    let ex = Arc::new(executor(registry, profiles(&["Graph", "Staller", "Generalist"]), planner));
    let timeout = ex.cfg.step_timeout_ms;
    let outs = paused_runtime().block_on(async {
        let mut handles = Vec::new();
        for i in 0..20 {
            let ex = ex.clone();
            handles.push(tokio::spawn(async move {
                let req = TaskRequest { profile: Some("Graph".into()), ..TaskRequest::new("x") };
                ex.run_task(&req, &TaskScope::detached(TaskId::new(format!("s{i}")))).await
            }));
        }
        let mut outs = Vec::new();
        for h in handles {
            outs.push(h.await.unwrap());
        }
        outs
    });
    for o in &outs {
        let g = o.trace.graph.as_ref().unwrap();
        ensure(o.trace.status == TaskStatus::PartialFailure, format!("{:?}", o.trace.status))?;
        ensure(
            g.step(1).unwrap().state == StepState::Done && g.step(3).unwrap().state == StepState::Done,
            "sibling not done",
        )?;
        ensure(g.step(2).unwrap().state == StepState::Failed, "stalled branch not failed")?;
        ensure(o.trace.makespan() <= timeout, format!("makespan {}", o.trace.makespan()))?;
    }
    ensure(ex.delegator.live() == 0, "sub-agents still live")?;
    Ok(format!("{} tasks partial_failure within {timeout} ms, siblings done", outs.len()))
}

// 5 -------------------------------------------------------------------------

const TASK_TURNS: &[&str] = &[
    "Plan a trip to Tokyo",
    "What's the weather in Paris",
    "Draw a picture of a cat",
    "How is Tesla stock doing",
    "What's on my calendar friday",
    "Compose a song about the sea",
    "Search for sourdough bread",
    "What's the weather in Rome and my calendar for monday",
    "I need dining advice, recommend a restaurant in Osaka",
    "Plan a trip to Kyoto and book a ryokan",
];

fn exactly_once() -> Outcome {
    paused_runtime().block_on(async {
        let e = Engine::builder(EngineConfig::default()).fault_injection(11).build().map_err(|e| e.to_string())?;
        let mut sessions: Vec<SessionId> = Vec::new();
        for i in 0..100 {
            let s = e.open_session(&format!("u{i}"), "companion").unwrap();
            // Rotate so sessions interleave different task shapes.
            for k in 0..TASK_TURNS.len() {
                e.say(&s, TASK_TURNS[(i + k) % TASK_TURNS.len()]).await.unwrap();
            }
            sessions.push(s);
        }
        e.settle().await;
        let (mut tasks_total, mut dups) = (0usize, 0u64);
        for s in &sessions {
            let t = e.transcript(s).unwrap();
            let tasks = e.tasks(s).unwrap();
            tasks_total += tasks.len();
            dups += e.bus().duplicate_count(s);
            for task in &tasks {
                let ds: Vec<_> = t
                    .iter()
                    .filter(|x| {
                        x.kind == EntryKind::Deliverable
                            && x.source_event_id
                                .as_ref()
                                .is_some_and(|id| id.as_str().starts_with(&format!("{}#", task.task_id)))
                    })
                    .collect();
                ensure(ds.len() == 1, format!("{}: {} deliverables", task.task_id.as_str(), ds.len()))?;
                // The turn's fast reply; an earlier task may land in between.
                let bridge = t
                    .iter()
                    .find(|x| x.seq > task.turn_seq && matches!(x.kind, EntryKind::Bridge | EntryKind::Turn))
                    .ok_or_else(|| format!("{}: no first reply", task.task_id))?;
                ensure(
                    bridge.kind == EntryKind::Bridge,
                    format!("{}: first reply is {:?}", task.task_id, bridge.kind),
                )?;
                ensure(bridge.seq < ds[0].seq, "deliverable before bridge")?;
            }
            let total = t.iter().filter(|x| x.kind == EntryKind::Deliverable).count();
            ensure(total == tasks.len(), format!("{} deliverables for {} tasks", total, tasks.len()))?;
        }
        ensure(tasks_total == 1_000, format!("{tasks_total} tasks"))?;
        ensure(dups >= 1_000, format!("only {dups} duplicates dropped"))?;
        Ok(format!("{tasks_total} tasks over {} sessions, {dups} duplicate events dropped", sessions.len()))
    })
}

// 6 -------------------------------------------------------------------------

fn constraint_fusion() -> Outcome {
    paused_runtime().block_on(async {
        let e = Engine::builder(EngineConfig::default()).build().unwrap();
        e.memory().set_profile("u1", "Hobby", "Basketball");
        e.memory().set_profile("u1", "Dislikes", "Raw Fish");
        let s = e.open_session("u1", "companion").unwrap();
        e.turn(&s, spoken_turn("Exhausted... Plan a trip to Tokyo"), None).await.unwrap();
        e.settle().await;
        let t = e.transcript(&s).unwrap();
        let d = t.iter().find(|x| x.kind == EntryKind::Deliverable).ok_or("no deliverable")?;
        ensure(d.content.contains("Wagyu Beef"), format!("deliverable: {}", d.content))?;
        let trace = e.tasks(&s).unwrap()[0].trace.clone().unwrap();
        let removed: Vec<String> = trace.fusions.iter().flat_map(|f| f.removed.iter().map(|c| c.0.clone())).collect();
        ensure(removed == ["Sushi Omakase"], format!("removed {removed:?}"))?;
        e.say(&s, "thanks, that looks great").await.unwrap();
        let episode = e.close_session(&s).await.unwrap().ok_or("no episode")?;
        let nugget = distill(&episode)
            .into_iter()
            .find(|n| n.statement.to_lowercase().contains("dislikes raw fish"))
            .ok_or("no raw fish nugget")?;
        ensure(nugget.provenance == episode.episode_id, "provenance mismatch")?;
        Ok(format!("selected Wagyu Beef, removed {removed:?}, nugget '{}'", nugget.statement))
    })
}

// 7 -------------------------------------------------------------------------

fn metric_oracles() -> Outcome {
    let mut r = oracles::rng(7);
    for i in 0..100 {
        let (d, l) = oracles::modes(&mut r);
        ensure(
            metrics::dispatch_precision(&d, &l).unwrap() == oracles::dispatch(&d, &l),
            format!("dispatch input {i}"),
        )?;
        let c = oracles::success_cases(&mut r);
        ensure(metrics::success_rate(&c) == oracles::success(&c), format!("success input {i}"))?;
        let c = oracles::fidelity_cases(&mut r);
        ensure(metrics::fidelity(&c) == oracles::fidelity(&c), format!("fidelity input {i}"))?;
        let log = oracles::activity(&mut r);
        let day = r.random_range(0..14);
        ensure(activity::retention7(&log, day) == oracles::retention(&log, day), format!("retention input {i}"))?;
        let got: Vec<_> = activity::segment_sessions(&log, 30).into_iter().map(|s| (s.user_id, s.events)).collect();
        ensure(got == oracles::segment(&log, 30), format!("segmentation input {i}"))?;
        let recs = oracles::turn_records(&mut r);
        ensure(
            activity::gtr(&recs, &GtrConfig::default()) == oracles::gtr(&recs, 1_500, 40),
            format!("gtr input {i}"),
        )?;
        let s = oracles::annotated_sessions(&mut r);
        ensure(activity::task_completion_proxy(&s) == oracles::completion(&s), format!("completion input {i}"))?;
    }
    let turn = |u: &str, day: u64| ActivityEvent::new(u, day * DAY_MS + 3_600_000, EventKind::Turn);
    let log = [turn("a", 1), turn("b", 1), turn("c", 1), turn("b", 8), turn("c", 8), turn("d", 8)];
    let ret = activity::retention7(&log, 1).ok_or("retention undefined")?;
    ensure((ret - 66.7).abs() <= 0.05, format!("retention {ret}"))?;
    Ok(format!("7 metrics x 100 random inputs equal their recounts; retention example {ret:.1}%"))
}

// 8 -------------------------------------------------------------------------

const DECISION: &str = r#"{
  "thought": "User requests travel plan -> Tier-3",
  "mode": "agent",
  "routing_target": "TravelPlanner",
  "plan": [
    {"step": 1, "tool": "flight_search", "args": {"dest": "Tokyo"}},
    {"step": 2, "tool": "hotel_book", "args": {"type": "Onsen"}}
  ]
}"#;

fn routing(heavy: &MetricsReport) -> Outcome {
    ensure(
        heavy.dispatch_precision_unambiguous == Some(1.0),
        format!("P_disp {:?}", heavy.dispatch_precision_unambiguous),
    )?;
    let valid = [
        DECISION.to_string(),
        r#"{"thought": "greeting -> Tier-1", "mode": "chat"}"#.to_string(),
        r#"{"thought": "weather lookup -> Tier-2", "mode": "tool", "plan": [{"step": 1, "tool": "weather", "args": {"city": "Beijing"}}]}"#.to_string(),
    ];
    for raw in &valid {
        let d = validate_decision(raw).map_err(|e| format!("{raw}: {e}"))?;
        let again = validate_decision(&d.to_json()).map_err(|e| e.to_string())?;
        ensure(again == d, "round trip changed the decision")?;
    }
    let first = validate_decision(DECISION).unwrap();
    ensure(first.mode == Mode::Agent && first.plan.as_ref().map(Vec::len) == Some(2), "figure payload misparsed")?;
    // Each payload with the text the reported offset must fall inside.
    let malformed = [
        (r#"{"mode": "fly"}"#, r#""fly""#),
        (r#"{"mode": "agent", "thought": "x"}"#, "}"),
        ("{\n  \"mode\": \"chat\",\n  \"thought\": 7\n}", "7"),
        (r#"{"mode": "chat", "plan": ["#, "["),
    ];
    for (raw, culprit) in malformed {
        let start = raw.rfind(culprit).unwrap();
        let span = start..=start + culprit.len();
        match validate_decision(raw) {
            Err(Error::SchemaViolation { offset, .. }) => {
                ensure(span.contains(&offset), format!("{raw}: offset {offset} outside {span:?}"))?
            }
            other => return Err(format!("{raw} accepted or wrong error: {other:?}")),
        }
    }
    Ok(format!(
        "P_disp unambiguous 1.0 over {} cases; {} payloads round-trip; {} malformed rejected with offsets",
        heavy.per_case.len(),
        valid.len(),
        malformed.len()
    ))
}

// 9 -------------------------------------------------------------------------

fn folding() -> Outcome {
    paused_runtime().block_on(async {
        let e = Engine::builder(EngineConfig::default()).build().unwrap();
        let s = e.open_session("u", "companion").unwrap();
        let task = TaskId::new("branch-1");
        let mut items = Vec::new();
        let mut total = 0;
        let mut step = 1;
        while total < 900 {
            let msg = format!("upstream returned 502 while fetching page {step}; retrying with backoff. ").repeat(5);
            let payload =
                json!({"tool": "search", "args": {"query": "x"}, "error": {"kind": "backend", "message": msg}});
            let item = TraceItem::new(Some(task.clone()), Some(step), payload.to_string());
            total += item.token_estimate;
            e.store().push_trace(&s, item.clone()).unwrap();
            items.push(item);
            step += 1;
        }
        e.store().push_trace(&s, TraceItem::new(None, None, "unrelated note")).unwrap();
        let before = e.snapshot(&s).unwrap().working_memory_tokens();
        let out =
            fold_task(e.store(), &s, &task, 60, e.archive()).map_err(|e| e.to_string())?.ok_or("nothing folded")?;
        let after = e.snapshot(&s).unwrap().working_memory_tokens();
        ensure(out.branch.original_tokens >= 900, format!("branch only {} tokens", out.branch.original_tokens))?;
        ensure(out.branch.folded_tokens <= 60, format!("folded to {}", out.branch.folded_tokens))?;
        let raw = unfold(e.archive(), out.branch.archive_ref).map_err(|e| e.to_string())?;
        ensure(raw.as_bytes() == branch_text(&items).as_bytes(), "unfold differs")?;
        ensure(after < before, format!("working memory {before} -> {after}"))?;
        Ok(format!(
            "{} -> {} tokens, unfold byte-identical, working memory {before} -> {after}",
            out.branch.original_tokens, out.branch.folded_tokens
        ))
    })
}

// 10 ------------------------------------------------------------------------

fn determinism(first: &MetricsReport) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let second = run_bench(&bundled_corpus(), &heavy_tail(), 42).map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    std::fs::write(&a, first.to_json()).unwrap();
    std::fs::write(&b, second.to_json()).unwrap();
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    ensure(ba == bb, "reports differ")?;
    Ok(format!("two seed-42 reports identical ({} bytes)", ba.len()))
}

fn main() {
    let started = Instant::now();
    let heavy = run_bench(&bundled_corpus(), &heavy_tail(), 42).expect("bench runs");
    let bench_time = started.elapsed();

    let results: Vec<(&str, Outcome)> = vec![
        ("ttft-budget", ttft_budget(&heavy, bench_time)),
        ("perception-ablation", perception_ablation(&heavy)),
        ("parallelism", parallelism(&heavy)),
        ("no-deadlock", no_deadlock()),
        ("exactly-once", exactly_once()),
        ("constraint-fusion", constraint_fusion()),
        ("metric-oracles", metric_oracles()),
        ("routing", routing(&heavy)),
        ("folding", folding()),
        ("determinism", determinism(&heavy)),
    ];

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {name:<20} {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name:<20} {why}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
