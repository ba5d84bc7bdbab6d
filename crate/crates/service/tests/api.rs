use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use dualtrack_core::{Engine, EngineConfig};
use dualtrack_service::{live_engine, router};
use serde_json::{json, Value};

struct Server {
    base: String,
    engine: Arc<Engine>,
    http: reqwest::Client,
}

async fn start(cfg: EngineConfig) -> Server {
    let engine = live_engine(cfg).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(engine.clone());
    tokio::spawn(async move { axum_serve(listener, app).await });
    Server { base: format!("http://{addr}"), engine, http: reqwest::Client::new() }
}

async fn axum_serve(listener: tokio::net::TcpListener, app: axum::Router) {
    axum::serve(listener, app).await.unwrap();
}

impl Server {
    async fn open(&self, persona: &str) -> reqwest::Response {
        self.http
            .post(format!("{}/sessions", self.base))
            .json(&json!({ "user_id": "u1", "persona_id": persona }))
            .send()
            .await
            .unwrap()
    }

    async fn session(&self) -> String {
        let r = self.open("companion").await;
        assert_eq!(r.status(), 201);
        r.json::<Value>().await.unwrap()["session_id"].as_str().unwrap().to_string()
    }

    async fn post_turn(&self, s: &str, text: &str, client_turn_id: Option<&str>) -> reqwest::Response {
        let mut body = json!({ "payloads": [{ "modality": "text", "text": text }] });
        if let Some(c) = client_turn_id {
            body["client_turn_id"] = json!(c);
        }
        self.http.post(format!("{}/sessions/{s}/turns", self.base)).json(&body).send().await.unwrap()
    }

    async fn turn(&self, s: &str, text: &str) -> Value {
        let r = self.post_turn(s, text, None).await;
        assert_eq!(r.status(), 200);
        r.json().await.unwrap()
    }

    async fn transcript(&self, s: &str) -> Vec<Value> {
        self.http.get(format!("{}/sessions/{s}/transcript", self.base)).send().await.unwrap().json().await.unwrap()
    }

    async fn stream(&self, s: &str, from_seq: &str) -> Sse {
        let r = self.http.get(format!("{}/sessions/{s}/stream?from_seq={from_seq}", self.base)).send().await.unwrap();
        assert_eq!(r.status(), 200);
        Sse { resp: r, buf: String::new() }
    }
}

#[derive(Debug, Clone)]
struct Frame {
    event: String,
    id: Option<String>,
    data: Value,
}

/// Minimal server-sent-events reader.
struct Sse {
    resp: reqwest::Response,
    buf: String,
}

impl Sse {
    async fn next(&mut self) -> Option<Frame> {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                let mut f = Frame { event: "message".into(), id: None, data: Value::Null };
                let mut data = String::new();
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("event:") {
                        f.event = v.trim().to_string();
                    } else if let Some(v) = line.strip_prefix("id:") {
                        f.id = Some(v.trim().to_string());
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim_start());
                    }
                }
                if data.is_empty() {
                    continue; // keep-alive comment
                }
                f.data = serde_json::from_str(&data).unwrap();
                return Some(f);
            }
            let chunk = tokio::time::timeout(Duration::from_secs(30), self.resp.chunk()).await.expect("stream stalled");
            match chunk.unwrap() {
                Some(bytes) => self.buf.push_str(&String::from_utf8_lossy(&bytes)),
                None => return None,
            }
        }
    }

    async fn until(&mut self, mut pred: impl FnMut(&Frame) -> bool) -> Vec<Frame> {
        let mut seen = Vec::new();
        while let Some(f) = self.next().await {
            let stop = pred(&f);
            seen.push(f);
            if stop {
                return seen;
            }
        }
        panic!("stream ended early after {seen:?}");
    }
}

fn is_kind(f: &Frame, kind: &str) -> bool {
    (f.event == "entry" || f.event == "clarification") && f.data["kind"] == kind
}

#[tokio::test(flavor = "multi_thread")]
async fn healthz_answers() {
    let srv = start(EngineConfig::default()).await;
    let v: Value = srv.http.get(format!("{}/healthz", srv.base)).send().await.unwrap().json().await.unwrap();
    assert_eq!(v["status"], "ok");
}

#[tokio::test(flavor = "multi_thread")]
async fn open_session_starts_with_an_empty_transcript() {
    let srv = start(EngineConfig::default()).await;
    let s = srv.session().await;
    assert!(srv.transcript(&s).await.is_empty());
    let plan: Vec<Value> =
        srv.http.get(format!("{}/sessions/{s}/plan", srv.base)).send().await.unwrap().json().await.unwrap();
    assert!(plan.is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_persona_is_a_client_error_naming_it() {
    let srv = start(EngineConfig::default()).await;
    let r = srv.open("ghost-persona").await;
    assert!(r.status().is_client_error(), "{}", r.status());
    let body: Value = r.json().await.unwrap();
    assert!(body["error"].as_str().unwrap().contains("ghost-persona"), "{body}");
}

#[tokio::test(flavor = "multi_thread")]
async fn hundred_opens_give_distinct_ids() {
    let srv = start(EngineConfig::default()).await;
    let mut ids = std::collections::BTreeSet::new();
    for _ in 0..100 {
        ids.insert(srv.session().await);
    }
    assert_eq!(ids.len(), 100);
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_session_is_not_found() {
    let srv = start(EngineConfig::default()).await;
    assert_eq!(srv.post_turn("nope", "hello", None).await.status(), 404);
    let r = srv.http.get(format!("{}/sessions/nope/transcript", srv.base)).send().await.unwrap();
    assert_eq!(r.status(), 404);
    let r = srv.http.get(format!("{}/sessions/nope/plan", srv.base)).send().await.unwrap();
    assert_eq!(r.status(), 404);
}

#[tokio::test(flavor = "multi_thread")]
async fn greeting_routes_to_chat() {
    let srv = start(EngineConfig::default()).await;
    let s = srv.session().await;
    let r = srv.turn(&s, "hello").await;
    assert_eq!(r["routing"]["mode"], "chat");
    assert!(r["accepted_at"].as_u64().is_some());
}

#[tokio::test(flavor = "multi_thread")]
async fn trip_request_bridges_on_the_stream_within_budget_then_delivers() {
    let srv = start(EngineConfig::default()).await;
    let s = srv.session().await;
    let mut feed = srv.stream(&s, "0").await;
    let r = srv.turn(&s, "Plan a trip to Tokyo").await;
    assert_eq!(r["routing"]["mode"], "agent");
    assert_eq!(r["routing"]["routing_target"], "TravelPlanner");
    let accepted = r["accepted_at"].as_u64().unwrap();

    let frames = feed.until(|f| is_kind(f, "bridge")).await;
    let bridge = &frames.last().unwrap().data;
    assert!(bridge["timestamp"].as_u64().unwrap() - accepted <= 500, "{bridge}");
    let rest = feed.until(|f| is_kind(f, "deliverable")).await;
    let plans: Vec<&Frame> = frames.iter().chain(&rest).filter(|f| f.event == "plan").collect();
    assert!(!plans.is_empty());
    assert!(plans.iter().all(|p| p.data["task_id"] == r["task_id"]));
    assert!(plans.iter().any(|p| p.data["steps"].as_array().is_some_and(|s| !s.is_empty())));
}

#[tokio::test(flavor = "multi_thread")]
async fn duplicate_client_turn_id_replays_the_same_body() {
    let srv = start(EngineConfig::default()).await;
    let s = srv.session().await;
    let a = srv.post_turn(&s, "hello", Some("c-1")).await.text().await.unwrap();
    let before = srv.transcript(&s).await;
    let b = srv.post_turn(&s, "hello", Some("c-1")).await.text().await.unwrap();
    assert_eq!(a, b);
    assert_eq!(srv.transcript(&s).await, before);
}

#[tokio::test(flavor = "multi_thread")]
async fn closed_session_rejects_turns() {
    let srv = start(EngineConfig::default()).await;
    let s = srv.session().await;
    srv.turn(&s, "hello").await;
    let r = srv.http.delete(format!("{}/sessions/{s}", srv.base)).send().await.unwrap();
    assert_eq!(r.status(), 200);
    assert_eq!(srv.post_turn(&s, "hello again", None).await.status(), 409);
}

#[tokio::test(flavor = "multi_thread")]
async fn stream_replays_existing_entries_then_tails() {
    let srv = start(EngineConfig::default()).await;
    let s = srv.session().await;
    srv.turn(&s, "hello").await;
    srv.turn(&s, "how are you").await;
    srv.engine.settle().await;
    let mut feed = srv.stream(&s, "0").await;
    let mut seqs = Vec::new();
    for _ in 0..4 {
        let f = feed.next().await.unwrap();
        assert_eq!(f.event, "entry");
        seqs.push(f.data["seq"].as_u64().unwrap());
        assert_eq!(f.id.as_deref(), Some(seqs.last().unwrap().to_string().as_str()));
    }
    assert_eq!(seqs, [0, 1, 2, 3]);
    srv.turn(&s, "nice to meet you").await;
    let f = feed.next().await.unwrap();
    assert_eq!(f.data["seq"], 4);
    assert_eq!(f.data["role"], "user");
}

#[tokio::test(flavor = "multi_thread")]
async fn reconnect_mid_task_loses_and_repeats_nothing() {
    let srv = start(EngineConfig::default()).await;
    let s = srv.session().await;
    let mut first = srv.stream(&s, "0").await;
    srv.turn(&s, "Plan a trip to Tokyo").await;
    let a = first.until(|f| is_kind(f, "bridge")).await;
    drop(first);
    let last = a.iter().filter_map(|f| f.id.as_deref()).next_back().unwrap().parse::<u64>().unwrap();

    let mut second = srv.stream(&s, &(last + 1).to_string()).await;
    let b = second.until(|f| is_kind(f, "deliverable")).await;

    let entries: Vec<&Frame> = a.iter().chain(&b).filter(|f| f.event != "plan").collect();
    let seqs: Vec<u64> = entries.iter().map(|f| f.data["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());
    let mut census: BTreeMap<String, usize> = BTreeMap::new();
    for f in entries.iter().filter(|f| is_kind(f, "deliverable")) {
        *census.entry(f.data["source_event_id"].as_str().unwrap().to_string()).or_default() += 1;
    }
    assert_eq!(census.len(), 1);
    assert!(census.values().all(|n| *n == 1));
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_from_seq_sends_an_error_frame_then_closes() {
    let srv = start(EngineConfig::default()).await;
    let s = srv.session().await;
    for bad in ["5", "abc"] {
        let mut feed = srv.stream(&s, bad).await;
        let f = feed.next().await.unwrap();
        assert_eq!(f.event, "error");
        assert!(f.data["error"].as_str().unwrap().contains(bad));
        assert!(feed.next().await.is_none());
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn clarification_frames_are_tagged_and_answered_by_a_turn() {
    let srv = start(EngineConfig::default()).await;
    let s = srv.session().await;
    let mut feed = srv.stream(&s, "0").await;
    let r = srv.turn(&s, "find that video from last month").await;
    let frames = feed.until(|f| f.event == "clarification").await;
    assert_eq!(frames.last().unwrap().data["kind"], "clarification");
    let answer = srv.turn(&s, "the cooking one").await;
    assert_eq!(answer["answered_clarification"], r["task_id"]);
    let rest = feed.until(|f| is_kind(f, "deliverable")).await;
    assert!(rest.last().unwrap().data["content"].as_str().unwrap().to_lowercase().contains("cooking"));
}

#[tokio::test(flavor = "multi_thread")]
async fn restart_with_the_same_log_restores_identical_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EngineConfig { log_dir: Some(dir.path().to_path_buf()), ..Default::default() };
    let srv = start(cfg.clone()).await;
    let s = srv.session().await;
    srv.turn(&s, "hello").await;
    srv.turn(&s, "what's the weather in Paris").await;
    srv.engine.settle().await;
    let before = srv.transcript(&s).await;
    assert!(before.len() >= 5);

    let again = start(cfg).await;
    assert_eq!(again.transcript(&s).await, before);
    let mut feed = again.stream(&s, "0").await;
    for want in &before {
        let f = feed.next().await.unwrap();
        assert_eq!(&f.data, want);
    }
}
