//! The dual-track engine: one object owning sessions, the bus and both tracks.
//!
//! [`Engine::turn`] runs the Fast Track inline (perceive, read context,
//! classify, reply) and returns once the first response is in the
//! transcript. Tool and agent turns additionally spawn a Slow Track task
//! whose events reach the transcript through the session's integration
//! consumer. [`Engine::settle`] waits until no task is running and every
//! published event has been integrated.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{oneshot, watch, OnceCell};

use crate::augmentation::{Delegator, DelegatorConfig, LatencyModel, ToolRegistry};
use crate::backend::HttpTextBackend;
use crate::bus::{integrate, Bus, EventKind, EventSink, FaultyEmitter, PlanBoard, PlanSnapshot, TaskEmitter};
use crate::clock::{Clock, Millis};
use crate::config::{BackendKind, EngineConfig, LatencyProfile};
use crate::error::{Error, Result};
use crate::evolution::{fold_task, log_episode, Archive, Episode, EpisodeStore};
use crate::fast_track::{
    bridge_text, race_deadline, resume_text, BackendResponder, Budgeted, Responder, ResponseKind, ResponsePlan,
    TemplateResponder, FALLBACK_ACK,
};
use crate::ids::{IdGen, SessionId, TaskId};
use crate::perception::{HttpPerceptor, ModalityPayload, PerceptionGateway, Perceptor, RequestObject, StubPerceptor};
use crate::router::{classify_total, Classifier, Mode, ModelClassifier, RoutingDecision, RuleClassifier};
use crate::slow_track::{
    constraints_from_memory, ClarificationOutcome, Clarifier, ExecutionTrace, Executor, ExecutorConfig, Generator,
    Planner, ProfileRegistry, ReferenceGenerator, TaskRequest, TaskScope, TaskStatus, TemplatePlanner, TraceWriter,
};
use crate::state::{
    AgentMemory, ContextBundle, EntryDraft, EntryKind, MemoryStore, Persona, SessionState, SessionStore, TraceItem,
    TranscriptEntry,
};

/// Persona registered when the builder is given no memory store.
pub const DEFAULT_PERSONA: &str = "companion";

fn default_persona() -> Persona {
    Persona {
        name: "Mia".into(),
        descriptor: "attentive everyday companion".into(),
        traits: vec!["glad".into(), "curious".into()],
    }
}

/// What the caller learns when a turn has been answered on the Fast Track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnReceipt {
    pub session_id: SessionId,
    pub client_turn_id: Option<String>,
    /// Transcript seq of the user entry.
    pub turn_seq: u64,
    pub accepted_at: Millis,
    pub routing: RoutingDecision,
    pub first_response: ResponsePlan,
    pub task_id: Option<TaskId>,
    /// The turn resumed a task waiting on a clarification.
    pub answered_clarification: Option<TaskId>,
}

impl TurnReceipt {
    pub fn ttft_ms(&self) -> Millis {
        self.first_response.produced_at.saturating_sub(self.accepted_at)
    }
}

/// One Slow Track task and, once finished, its trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRecord {
    pub task_id: TaskId,
    pub turn_seq: u64,
    pub started_at: Millis,
    pub trace: Option<ExecutionTrace>,
}

struct PendingQuestion {
    task: TaskId,
    reply: oneshot::Sender<ClarificationOutcome>,
    non_answers: u32,
}

#[derive(Default)]
struct Records {
    decisions: Vec<(u64, RoutingDecision)>,
    tasks: Vec<TaskRecord>,
}

struct SessionRuntime {
    turn_lock: tokio::sync::Mutex<()>,
    task_counter: AtomicU64,
    records: Mutex<Records>,
    desk: Mutex<VecDeque<PendingQuestion>>,
    integrated: watch::Sender<usize>,
    consumer: Mutex<Option<tokio::task::JoinHandle<()>>>,
}

impl SessionRuntime {
    fn new() -> Self {
        Self {
            turn_lock: tokio::sync::Mutex::new(()),
            task_counter: AtomicU64::new(0),
            records: Mutex::default(),
            desk: Mutex::default(),
            integrated: watch::channel(0).0,
            consumer: Mutex::default(),
        }
    }
}

/// Running-task counter; tasks parked on a clarification do not count.
#[derive(Clone)]
struct Activity(Arc<watch::Sender<usize>>);

impl Activity {
    fn enter(&self) {
        self.0.send_modify(|n| *n += 1);
    }

    fn leave(&self) {
        self.0.send_modify(|n| *n -= 1);
    }
}

struct DeskClarifier {
    runtime: Arc<SessionRuntime>,
    activity: Activity,
}

#[async_trait]
impl Clarifier for DeskClarifier {
    async fn ask(&self, task: &TaskId, _step_id: u32, _question: &str) -> ClarificationOutcome {
        let (tx, rx) = oneshot::channel();
        self.runtime.desk.lock().push_back(PendingQuestion { task: task.clone(), reply: tx, non_answers: 0 });
        self.activity.leave();
        let outcome = rx.await.unwrap_or(ClarificationOutcome::Abandoned);
        self.activity.enter();
        outcome
    }
}

struct StoreTraces {
    store: Arc<SessionStore>,
    session: SessionId,
}

impl TraceWriter for StoreTraces {
    fn write(&self, item: TraceItem) {
        if let Err(e) = self.store.push_trace(&self.session, item) {
            tracing::warn!(session = %self.session, "dropping trace item: {e}");
        }
    }
}

pub struct EngineBuilder {
    cfg: EngineConfig,
    clock: Option<Clock>,
    registry: Option<Arc<ToolRegistry>>,
    profiles: Option<Arc<ProfileRegistry>>,
    planner: Option<Arc<dyn Planner>>,
    generator: Option<Arc<dyn Generator>>,
    classifier: Option<Arc<dyn Classifier>>,
    responder: Option<Arc<dyn Responder>>,
    perceptor: Option<Arc<dyn Perceptor>>,
    memory: Option<Arc<MemoryStore>>,
    ids: Option<IdGen>,
    fault_seed: Option<u64>,
}

impl EngineBuilder {
    pub fn new(cfg: EngineConfig) -> Self {
        Self {
            cfg,
            clock: None,
            registry: None,
            profiles: None,
            planner: None,
            generator: None,
            classifier: None,
            responder: None,
            perceptor: None,
            memory: None,
            ids: None,
            fault_seed: None,
        }
    }

    pub fn clock(mut self, clock: Clock) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn registry(mut self, registry: Arc<ToolRegistry>) -> Self {
        self.registry = Some(registry);
        self
    }

    pub fn profiles(mut self, profiles: Arc<ProfileRegistry>) -> Self {
        self.profiles = Some(profiles);
        self
    }

    pub fn planner(mut self, planner: Arc<dyn Planner>) -> Self {
        self.planner = Some(planner);
        self
    }

    pub fn generator(mut self, generator: Arc<dyn Generator>) -> Self {
        self.generator = Some(generator);
        self
    }

    pub fn classifier(mut self, classifier: Arc<dyn Classifier>) -> Self {
        self.classifier = Some(classifier);
        self
    }

    pub fn responder(mut self, responder: Arc<dyn Responder>) -> Self {
        self.responder = Some(responder);
        self
    }

    pub fn perceptor(mut self, perceptor: Arc<dyn Perceptor>) -> Self {
        self.perceptor = Some(perceptor);
        self
    }

    pub fn memory(mut self, memory: Arc<MemoryStore>) -> Self {
        self.memory = Some(memory);
        self
    }

    pub fn session_ids(mut self, ids: IdGen) -> Self {
        self.ids = Some(ids);
        self
    }

    /// Route task events through a [`FaultyEmitter`] seeded with `seed`.
    pub fn fault_injection(mut self, seed: u64) -> Self {
        self.fault_seed = Some(seed);
        self
    }

    pub fn build(self) -> Result<Arc<Engine>> {
        let cfg = self.cfg;
        cfg.validate()?;
        let clock = self.clock.unwrap_or_else(Clock::virtual_start);
        let http = cfg.backend == BackendKind::Http;

        let registry = self.registry.unwrap_or_else(|| Arc::new(ToolRegistry::with_builtins()));
        if cfg.latency_profile == LatencyProfile::HeavyTail {
            let model = LatencyModel::Lognormal { mu: cfg.heavy_tail_mu, sigma: cfg.heavy_tail_sigma };
            for d in registry.catalog() {
                registry.set_latency(&d.tool_id, model)?;
            }
        }
        let profiles = self.profiles.unwrap_or_else(|| Arc::new(ProfileRegistry::with_defaults()));
        let planner = self.planner.unwrap_or_else(|| Arc::new(TemplatePlanner::new()));
        let generator = self.generator.unwrap_or_else(|| Arc::new(ReferenceGenerator));

        let classifier: Arc<dyn Classifier> = match (self.classifier, &cfg.classifier_url) {
            (Some(c), _) => c,
            (None, Some(url)) if http => Arc::new(ModelClassifier::new(
                Arc::new(HttpTextBackend::new(url.clone())),
                profiles.profiles().iter().map(|p| p.profile_id.clone()).collect(),
                registry.catalog().into_iter().map(|d| d.tool_id).collect(),
            )),
            (None, _) => Arc::new(RuleClassifier::new(profiles.clone(), cfg.generalist_profile.clone())),
        };
        let responder: Arc<dyn Responder> = match (self.responder, &cfg.responder_url) {
            (Some(r), _) => r,
            (None, Some(url)) if http => Arc::new(BackendResponder::new(Arc::new(HttpTextBackend::new(url.clone())))),
            (None, _) => Arc::new(TemplateResponder::new(clock, cfg.responder_latency_ms)),
        };
        let perceptor: Arc<dyn Perceptor> = match (self.perceptor, &cfg.perceptor_url) {
            (Some(p), _) => p,
            (None, Some(url)) if http => Arc::new(HttpPerceptor::new(url.clone())),
            (None, _) => Arc::new(StubPerceptor),
        };
        let gateway = PerceptionGateway::new(perceptor, cfg.perception)
            .with_latencies(cfg.perception_decoupled_ms, cfg.perception_monolithic_ms);

        let memory = match self.memory {
            Some(m) => m,
            None => {
                let m = MemoryStore::new();
                m.register_persona(DEFAULT_PERSONA, AgentMemory::new(default_persona())?);
                Arc::new(m)
            }
        };
        let ids = self.ids.unwrap_or_else(|| IdGen::sequential("session-"));
        let mut store = SessionStore::new(memory.clone(), ids, clock);
        let mut bus = Bus::new();
        if let Some(dir) = &cfg.log_dir {
            store = store.with_log_dir(dir)?;
            bus = bus.with_log_dir(dir)?;
        }
        let archive = match &cfg.archive_path {
            Some(p) => Archive::open(p)?,
            None => Archive::in_memory(),
        };

        let executor = Executor {
            registry,
            profiles,
            planner,
            generator,
            delegator: Arc::new(Delegator::new(DelegatorConfig {
                depth_cap: cfg.delegation_depth_cap,
                global_cap: cfg.subtask_global_cap,
            })),
            clock,
            cfg: ExecutorConfig {
                concurrency: cfg.task_concurrency,
                step_timeout_ms: cfg.step_timeout_ms,
                ambiguity_min_candidates: cfg.ambiguity_min_candidates,
                ambiguity_margin: cfg.ambiguity_margin,
                run_seed: cfg.seed,
                generalist_profile: cfg.generalist_profile.clone(),
            },
        };

        Ok(Arc::new(Engine {
            cfg,
            clock,
            store: Arc::new(store),
            memory,
            bus: Arc::new(bus),
            board: Arc::new(PlanBoard::new()),
            gateway,
            classifier,
            responder,
            executor: Arc::new(executor),
            archive: Arc::new(archive),
            sessions: Mutex::default(),
            idempotency: Mutex::default(),
            fault_seed: self.fault_seed,
            activity: Activity(Arc::new(watch::channel(0).0)),
        }))
    }
}

type TurnCell = Arc<OnceCell<TurnReceipt>>;

pub struct Engine {
    cfg: EngineConfig,
    clock: Clock,
    store: Arc<SessionStore>,
    memory: Arc<MemoryStore>,
    bus: Arc<Bus>,
    board: Arc<PlanBoard>,
    gateway: PerceptionGateway,
    classifier: Arc<dyn Classifier>,
    responder: Arc<dyn Responder>,
    executor: Arc<Executor>,
    archive: Arc<Archive>,
    sessions: Mutex<HashMap<SessionId, Arc<SessionRuntime>>>,
    idempotency: Mutex<HashMap<(SessionId, String), TurnCell>>,
    fault_seed: Option<u64>,
    activity: Activity,
}

/// Outcome of the Fast Track pipeline for one turn, before budgeting.
struct FastReply {
    request: RequestObject,
    decision: RoutingDecision,
    kind: ResponseKind,
    text: String,
    answered: Option<TaskId>,
}

impl Engine {
    pub fn builder(cfg: EngineConfig) -> EngineBuilder {
        EngineBuilder::new(cfg)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn store(&self) -> &Arc<SessionStore> {
        &self.store
    }

    pub fn memory(&self) -> &Arc<MemoryStore> {
        &self.memory
    }

    pub fn bus(&self) -> &Arc<Bus> {
        &self.bus
    }

    pub fn board(&self) -> &Arc<PlanBoard> {
        &self.board
    }

    pub fn executor(&self) -> &Arc<Executor> {
        &self.executor
    }

    pub fn archive(&self) -> &Arc<Archive> {
        &self.archive
    }

    fn runtime(&self, session: &SessionId) -> Result<Arc<SessionRuntime>> {
        self.sessions.lock().get(session).cloned().ok_or_else(|| Error::SessionNotFound(session.clone()))
    }

    fn attach(self: &Arc<Self>, session: &SessionId) -> Result<()> {
        self.bus.open_session(session)?;
        let runtime = Arc::new(SessionRuntime::new());
        let mut sub = self.bus.subscribe(session)?;
        let engine = Arc::downgrade(self);
        let rt = runtime.clone();
        let handle = tokio::spawn(async move {
            loop {
                let ev = sub.next().await;
                let Some(engine) = engine.upgrade() else { return };
                if let Err(e) = integrate(&ev, &engine.store, &engine.board, engine.cfg.surface_artifacts) {
                    tracing::warn!(event = %ev.event_id, "integration failed: {e}");
                }
                rt.integrated.send_modify(|n| *n += 1);
            }
        });
        *runtime.consumer.lock() = Some(handle);
        self.sessions.lock().insert(session.clone(), runtime);
        Ok(())
    }

    pub fn open_session(self: &Arc<Self>, user_id: &str, persona_id: &str) -> Result<SessionId> {
        let state = self.store.create_session(user_id, persona_id)?;
        self.attach(&state.session_id)?;
        Ok(state.session_id)
    }

    /// Reload sessions persisted under `dir` by an earlier engine.
    pub fn restore(self: &Arc<Self>, dir: &Path) -> Result<Vec<SessionId>> {
        self.store.restore(dir)?;
        let mut restored = Vec::new();
        for id in self.store.session_ids() {
            if !self.sessions.lock().contains_key(&id) {
                self.attach(&id)?;
                restored.push(id);
            }
        }
        Ok(restored)
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        self.store.session_ids()
    }

    pub fn snapshot(&self, session: &SessionId) -> Result<SessionState> {
        self.store.snapshot(session)
    }

    pub fn transcript(&self, session: &SessionId) -> Result<Vec<TranscriptEntry>> {
        self.store.transcript_from(session, 0)
    }

    pub fn plan(&self, session: &SessionId) -> Vec<PlanSnapshot> {
        self.board.snapshot(session)
    }

    pub fn decisions(&self, session: &SessionId) -> Result<Vec<(u64, RoutingDecision)>> {
        Ok(self.runtime(session)?.records.lock().decisions.clone())
    }

    pub fn tasks(&self, session: &SessionId) -> Result<Vec<TaskRecord>> {
        Ok(self.runtime(session)?.records.lock().tasks.clone())
    }

    /// Tasks currently waiting on the user.
    pub fn pending_clarifications(&self, session: &SessionId) -> Result<Vec<TaskId>> {
        Ok(self.runtime(session)?.desk.lock().iter().map(|q| q.task.clone()).collect())
    }

    /// Typed-text convenience for [`Engine::turn`].
    pub async fn say(self: &Arc<Self>, session: &SessionId, text: &str) -> Result<TurnReceipt> {
        self.turn(session, vec![ModalityPayload::text(text)], None).await
    }

    /// Handle one user turn. Repeating a `client_turn_id` returns the first
    /// receipt without re-running the turn.
    pub async fn turn(
        self: &Arc<Self>,
        session: &SessionId,
        payloads: Vec<ModalityPayload>,
        client_turn_id: Option<String>,
    ) -> Result<TurnReceipt> {
        let Some(key) = client_turn_id.clone() else {
            return self.run_turn(session, payloads, None).await;
        };
        let cell = self.idempotency.lock().entry((session.clone(), key.clone())).or_default().clone();
        let receipt = cell.get_or_try_init(|| self.run_turn(session, payloads, Some(key))).await?;
        Ok(receipt.clone())
    }

    async fn run_turn(
        self: &Arc<Self>,
        session: &SessionId,
        payloads: Vec<ModalityPayload>,
        client_turn_id: Option<String>,
    ) -> Result<TurnReceipt> {
        let runtime = self.runtime(session)?;
        if self.store.is_closed(session)? {
            return Err(Error::SessionClosed(session.clone()));
        }
        let _turn = runtime.turn_lock.lock().await;
        // Validate and learn the utterance before anything is recorded.
        let preview = crate::perception::normalize(&payloads, session)?;
        let accepted_at = self.clock.now_ms();
        let turn_seq = self.store.append_transcript(session, EntryDraft::user(&preview.utterance))?;
        let deadline = accepted_at + self.cfg.budget_ms;

        let pipeline = self.fast_reply(session, &runtime, &payloads);
        let (first_response, reply) = match race_deadline(&self.clock, deadline, pipeline).await {
            Budgeted::OnTime(reply) => {
                let entry_kind = if reply.kind == ResponseKind::Direct { EntryKind::Turn } else { EntryKind::Bridge };
                self.store.append_transcript(session, EntryDraft::assistant(entry_kind, &reply.text))?;
                (self.plan_now(reply.kind, reply.text.clone()), Some(reply))
            }
            Budgeted::Failed(e) => {
                tracing::warn!(session = %session, "fast track failed: {e}");
                let plan = self.plan_now(ResponseKind::FallbackAck, FALLBACK_ACK.into());
                self.store.append_transcript(session, EntryDraft::assistant(EntryKind::Bridge, FALLBACK_ACK))?;
                (plan, None)
            }
            Budgeted::Late(rest) => {
                let plan = self.plan_now(ResponseKind::FallbackAck, FALLBACK_ACK.into());
                self.store.append_transcript(session, EntryDraft::assistant(EntryKind::Bridge, FALLBACK_ACK))?;
                let reply = match rest.await {
                    Ok(reply) => {
                        let kind = if reply.kind == ResponseKind::Direct { EntryKind::Turn } else { EntryKind::Bridge };
                        self.store.append_transcript(session, EntryDraft::assistant(kind, &reply.text))?;
                        Some(reply)
                    }
                    Err(e) => {
                        tracing::warn!(session = %session, "late fast track failed: {e}");
                        None
                    }
                };
                (plan, reply)
            }
        };

        let (decision, request, answered) = match reply {
            Some(r) => (r.decision, Some(r.request), r.answered),
            None => (RoutingDecision::chat("fast track unavailable", 0.0), None, None),
        };
        self.store.push_trace(session, TraceItem::new(None, None, decision.to_json()))?;
        runtime.records.lock().decisions.push((turn_seq, decision.clone()));

        let task_id = match (&request, decision.mode) {
            (Some(request), Mode::Tool | Mode::Agent) if answered.is_none() => {
                Some(self.spawn_task(session, &runtime, turn_seq, request.clone(), decision.clone())?)
            }
            _ => None,
        };
        Ok(TurnReceipt {
            session_id: session.clone(),
            client_turn_id,
            turn_seq,
            accepted_at,
            routing: decision,
            first_response,
            task_id,
            answered_clarification: answered,
        })
    }

    fn plan_now(&self, kind: ResponseKind, text: String) -> ResponsePlan {
        ResponsePlan { kind, text, deadline_ms: self.cfg.budget_ms, produced_at: self.clock.now_ms() }
    }

    async fn fast_reply(
        &self,
        session: &SessionId,
        runtime: &SessionRuntime,
        payloads: &[ModalityPayload],
    ) -> Result<FastReply> {
        let request = self.gateway.perceive(payloads, session, &self.clock).await?;
        let context = self.store.read_context(session, self.cfg.context_budget_tokens)?;
        let decision = classify_total(self.classifier.as_ref(), &request, &context).await;
        self.clock.sleep_ms(self.cfg.router_latency_ms).await;

        // A pending clarification takes the first chat turn as its answer;
        // enough non-chat turns in a row give up on it.
        {
            let mut desk = runtime.desk.lock();
            if let Some(front) = desk.front_mut() {
                if decision.mode == Mode::Chat {
                    let q = desk.pop_front().expect("front exists");
                    let _ = q.reply.send(ClarificationOutcome::Answered(request.utterance.clone()));
                    return Ok(FastReply {
                        request,
                        decision,
                        kind: ResponseKind::Bridge,
                        text: resume_text(),
                        answered: Some(q.task),
                    });
                }
                front.non_answers += 1;
                if front.non_answers >= self.cfg.clarification_max_turns {
                    let q = desk.pop_front().expect("front exists");
                    let _ = q.reply.send(ClarificationOutcome::Abandoned);
                }
            }
        }

        let (kind, text) = match decision.mode {
            Mode::Chat => {
                let persona = self.persona_of(session)?;
                let text = self.responder.respond(&request, &context, &persona).await?;
                (ResponseKind::Direct, text)
            }
            Mode::Tool | Mode::Agent => (ResponseKind::Bridge, bridge_text(&request, &decision)),
        };
        Ok(FastReply { request, decision, kind, text, answered: None })
    }

    fn persona_of(&self, session: &SessionId) -> Result<Persona> {
        let persona_id = self.store.snapshot(session)?.persona_id;
        self.memory
            .agent(&persona_id)
            .map(|a| a.persona)
            .ok_or_else(|| Error::Config(format!("unknown persona '{persona_id}'")))
    }

    fn spawn_task(
        self: &Arc<Self>,
        session: &SessionId,
        runtime: &Arc<SessionRuntime>,
        turn_seq: u64,
        request: RequestObject,
        decision: RoutingDecision,
    ) -> Result<TaskId> {
        let n = runtime.task_counter.fetch_add(1, Ordering::SeqCst) + 1;
        let task_id = TaskId::new(format!("{session}-t{n}"));
        self.bus.register_task(session, &task_id)?;
        self.store.add_pending(session, &task_id)?;
        let started_at = self.clock.now_ms();
        runtime.records.lock().tasks.push(TaskRecord { task_id: task_id.clone(), turn_seq, started_at, trace: None });

        let state = self.store.snapshot(session)?;
        let user = self.memory.user(&state.user_id);
        let constraints = constraints_from_memory(&user.profile, &user.history);
        let context: ContextBundle = self.store.read_context(session, self.cfg.context_budget_tokens)?;
        let context_slice = context.entries.iter().map(|e| e.content.clone()).collect();

        self.activity.enter();
        let engine = self.clone();
        let runtime = runtime.clone();
        let session = session.clone();
        let tid = task_id.clone();
        tokio::spawn(async move {
            let emitter = TaskEmitter::new(engine.bus.clone(), engine.clock, session.clone(), tid.clone());
            let sink: Box<dyn EventSink> = match engine.fault_seed {
                Some(seed) => Box::new(FaultyEmitter::new(emitter, seed)),
                None => Box::new(emitter),
            };
            let clarifier = DeskClarifier { runtime: runtime.clone(), activity: engine.activity.clone() };
            let traces = StoreTraces { store: engine.store.clone(), session: session.clone() };
            let scope = TaskScope {
                task_id: tid.clone(),
                sink: sink.as_ref(),
                clarifier: &clarifier,
                traces: &traces,
                constraints,
                context,
                context_slice,
                depth: 0,
            };
            let req = TaskRequest { utterance: request.utterance.clone(), decision: Some(decision), profile: None };
            let outcome = engine.executor.run_task(&req, &scope).await;
            let status = outcome.trace.status;
            let kind = match status {
                TaskStatus::Completed | TaskStatus::PartialFailure => EventKind::Final,
                TaskStatus::Failed | TaskStatus::Abandoned => EventKind::Failure,
            };
            sink.emit(
                kind,
                json!({
                    "text": outcome.deliverable.text,
                    "status": status,
                    "modality": outcome.deliverable.modality,
                }),
            );
            if let Some(cap) = engine.cfg.fold_cap_tokens {
                if let Err(e) = fold_task(&engine.store, &session, &tid, cap, &engine.archive) {
                    tracing::warn!(task = %tid, "fold failed: {e}");
                }
            }
            if let Some(rec) = runtime.records.lock().tasks.iter_mut().find(|r| r.task_id == tid) {
                rec.trace = Some(outcome.trace);
            }
            engine.activity.leave();
        });
        Ok(task_id)
    }

    /// Wait until no task is running (tasks parked on a clarification
    /// excepted) and every published event has been integrated.
    pub async fn settle(&self) {
        loop {
            let mut active = self.activity.0.subscribe();
            let _ = active.wait_for(|n| *n == 0).await;
            let runtimes: Vec<(SessionId, Arc<SessionRuntime>)> =
                self.sessions.lock().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            for (id, rt) in &runtimes {
                let published = self.bus.events(id).map(|e| e.len()).unwrap_or(0);
                let mut rx = rt.integrated.subscribe();
                let _ = rx.wait_for(|n| *n >= published).await;
            }
            tokio::task::yield_now().await;
            let quiet = *self.activity.0.borrow() == 0
                && runtimes
                    .iter()
                    .all(|(id, rt)| *rt.integrated.borrow() >= self.bus.events(id).map(|e| e.len()).unwrap_or(0));
            if quiet {
                return;
            }
        }
    }

    /// Slice the whole session into an episode.
    pub fn episode(&self, session: &SessionId) -> Result<Episode> {
        let state = self.store.snapshot(session)?;
        let runtime = self.runtime(session)?;
        let records = runtime.records.lock();
        let traces: Vec<(u64, ExecutionTrace)> =
            records.tasks.iter().filter_map(|r| r.trace.clone().map(|t| (r.turn_seq, t))).collect();
        log_episode(&state, 0..state.next_seq(), &records.decisions, &traces)
    }

    /// Abandon open clarifications, let tasks finish, close the session and
    /// log its episode when it holds at least one completed turn.
    pub async fn close_session(&self, session: &SessionId) -> Result<Option<Episode>> {
        let runtime = self.runtime(session)?;
        for q in runtime.desk.lock().drain(..) {
            let _ = q.reply.send(ClarificationOutcome::Abandoned);
        }
        self.settle().await;
        self.store.close_session(session)?;
        let episode = self.episode(session).ok();
        if let (Some(ep), Some(dir)) = (&episode, &self.cfg.episodes_dir) {
            EpisodeStore::open(dir)?.save(ep)?;
        }
        Ok(episode)
    }

    /// Per-session counters, keyed by name.
    pub fn stats(&self, session: &SessionId) -> BTreeMap<&'static str, u64> {
        let mut out = BTreeMap::new();
        out.insert("events", self.bus.events(session).map(|e| e.len() as u64).unwrap_or(0));
        out.insert("duplicates", self.bus.duplicate_count(session));
        if let Ok(rt) = self.runtime(session) {
            out.insert("integrated", *rt.integrated.borrow() as u64);
            out.insert("tasks", rt.records.lock().tasks.len() as u64);
        }
        out
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        for rt in self.sessions.lock().values() {
            if let Some(h) = rt.consumer.lock().take() {
                h.abort();
            }
        }
    }
}
