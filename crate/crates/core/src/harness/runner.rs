//! The run loop. Each step is a resumable sequence of phases whose progress
//! is read back from the log, so a run killed at any point continues from
//! the last durable event.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::policy::{probe_confidence, random_draw, Policy};
use super::state::{AgentState, StateError};
use super::{Instance, LabelSpace, PhaseMark, RunMetrics};
use crate::events::{
    ClarificationEvent, DialogueEvent, Event, EventLog, EventLogError, FeedbackEvent,
    MetricsSnapshotEvent, PredictionEvent, PredictionStage, QueryIssuedEvent, Retrieved,
    RunControl, RunStarted,
};
use crate::hgka::{
    apply_clarification, extract_assertions, integrate_feedback, ExtractContext, HgkaError,
    IntegrationHost, IntegrationParams, IntegrationReport,
};
use crate::igs::{
    assess_confidence, build_query, clarification_text, decide_intervention, plan_query,
    run_self_dialogue, CaseContext, ConflictPair, CostTable, IgsError, Intervention, Query,
    QueryKind, QueryPayload,
};
use crate::kr::{
    KnowledgeItem, KnowledgeWriter, KrError, KrMutation, Repository, ScoredItem, ScoringParams,
    Source,
};
use crate::llm::{parse_choice, ChatRequest, LlmError, LlmProvider};
use crate::oracle::{Oracle, OracleError, OracleFeedback, OracleRequest};
use crate::prompts::{PromptError, PromptSet, Vars};
use crate::similarity::{cosine, Embedder, SimilarityParams};
use crate::Timepoint;

/// How handling time per case is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AhtModel {
    /// Fixed cost per agent model call and per unit of query cost.
    Synthetic {
        base_s: f64,
        per_llm_call_s: f64,
        per_cost_unit_s: f64,
    },
    WallClock,
}

impl Default for AhtModel {
    fn default() -> Self {
        AhtModel::Synthetic {
            base_s: 30.0,
            per_llm_call_s: 3.0,
            per_cost_unit_s: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub labels: LabelSpace,
    pub budget: u64,
    pub costs: CostTable,
    pub scoring: ScoringParams,
    pub similarity: SimilarityParams,
    pub policy: Policy,
    /// Show status and validation age next to knowledge in prompts.
    pub temporal_annotations: bool,
    pub max_candidates: usize,
    pub aht: AhtModel,
    pub snapshot_every: u64,
    #[serde(default)]
    pub phases: Vec<PhaseMark>,
    pub feedback_source: Source,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            labels: LabelSpace::binary_match(),
            budget: 0,
            costs: CostTable::uniform(),
            scoring: ScoringParams::default(),
            similarity: SimilarityParams::default(),
            policy: Policy::default(),
            temporal_annotations: true,
            max_candidates: 10,
            aht: AhtModel::default(),
            snapshot_every: 50,
            phases: Vec::new(),
            feedback_source: Source::Human,
        }
    }
}

impl RunParams {
    pub fn validate(&self) -> Result<(), String> {
        self.labels.validate()?;
        self.scoring.validate().map_err(|e| e.to_string())?;
        self.similarity.validate()?;
        self.costs.validate()?;
        self.policy.validate()?;
        if self.snapshot_every == 0 {
            return Err("snapshot_every must be at least 1".into());
        }
        if self.max_candidates == 0 {
            return Err("max_candidates must be at least 1".into());
        }
        Ok(())
    }

    /// Full configuration without temporal scoring: no decay, outdated items
    /// weigh as much as valid ones, and prompts carry no age annotations.
    pub fn without_temporal(mut self) -> Self {
        self.scoring.lambda = 0.0;
        self.scoring.w_po = 1.0;
        self.temporal_annotations = false;
        self
    }
}

#[derive(Clone)]
pub struct Providers {
    pub llm: Arc<dyn LlmProvider>,
    pub oracle: Arc<dyn Oracle>,
    pub embedder: Arc<dyn Embedder>,
    pub prompts: Arc<PromptSet>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Log(#[from] EventLogError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Kr(#[from] KrError),
    #[error("step {ordinal} aborted: {error}")]
    Aborted { ordinal: u64, error: String },
    #[error("invalid run parameters: {0}")]
    Params(String),
    #[error("stream: {0}")]
    Stream(String),
}

/// Provider-side failure inside a step.
#[derive(Debug, Error)]
enum StepFailure {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("embedding failed: {0}")]
    Similarity(#[from] crate::similarity::SimilarityError),
    #[error(transparent)]
    Run(#[from] RunError),
}

impl From<IgsError> for StepFailure {
    fn from(e: IgsError) -> Self {
        match e {
            IgsError::Llm(e) => StepFailure::Llm(e),
            IgsError::Prompt(e) => StepFailure::Prompt(e),
        }
    }
}

impl From<super::policy::ProbeError> for StepFailure {
    fn from(e: super::policy::ProbeError) -> Self {
        match e {
            super::policy::ProbeError::Llm(e) => StepFailure::Llm(e),
            super::policy::ProbeError::Prompt(e) => StepFailure::Prompt(e),
        }
    }
}

impl From<KrError> for StepFailure {
    fn from(e: KrError) -> Self {
        StepFailure::Run(RunError::Kr(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub ordinal: u64,
    pub label: String,
    pub queried: Option<QueryKind>,
    pub handling_s: f64,
}

pub struct Runner {
    params: RunParams,
    providers: Providers,
    log: EventLog,
    state: AgentState,
    stream: Vec<Instance>,
    step_clock: Option<(u64, Instant)>,
}

impl std::fmt::Debug for Runner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runner")
            .field("run_id", &self.state.run_id())
            .field("log", &self.log)
            .finish()
    }
}

impl Runner {
    /// Starts a run on an empty log: writes the start record and seeds KR₀.
    pub fn start(
        run_id: &str,
        params: RunParams,
        providers: Providers,
        mut log: EventLog,
        stream: Vec<Instance>,
        seed: Vec<KnowledgeItem>,
        config: Value,
    ) -> Result<Runner, RunError> {
        params.validate().map_err(RunError::Params)?;
        super::validate_stream(&stream).map_err(RunError::Stream)?;
        if !log.is_empty() {
            return Err(RunError::Params("a new run needs an empty log".into()));
        }
        let started = RunStarted {
            run_id: run_id.to_string(),
            labels: params.labels.clone(),
            budget: params.budget,
            phases: params.phases.clone(),
            prompt_version: providers.prompts.version.clone(),
            config,
        };
        let mut state = AgentState::default();
        let ev = Event::RunControl(RunControl::Started(started));
        let rec = log.append(0, &ev)?;
        state.apply_event(rec.seq, rec.ts, &ev)?;
        let mut runner = Runner {
            params,
            providers,
            log,
            state,
            stream,
            step_clock: None,
        };
        for item in seed {
            runner.seed_item(item)?;
        }
        Ok(runner)
    }

    /// Continues a run from its log. The stream must be the one it started on.
    pub fn resume(
        params: RunParams,
        providers: Providers,
        log: EventLog,
        stream: Vec<Instance>,
    ) -> Result<Runner, RunError> {
        params.validate().map_err(RunError::Params)?;
        super::validate_stream(&stream).map_err(RunError::Stream)?;
        let state = AgentState::replay(log.records())?;
        if state.started.is_none() {
            return Err(RunError::Stream("log has no start record".into()));
        }
        let mut runner = Runner {
            params,
            providers,
            log,
            state,
            stream,
            step_clock: None,
        };
        let from_seq = runner.log.next_seq();
        runner.emit(
            runner.state.now,
            Event::RunControl(RunControl::Resumed { from_seq }),
        )?;
        Ok(runner)
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut EventLog {
        &mut self.log
    }

    pub fn params(&self) -> &RunParams {
        &self.params
    }

    pub fn run_id(&self) -> &str {
        self.state.run_id()
    }

    pub fn metrics(&self) -> RunMetrics {
        self.state.metrics()
    }

    pub fn into_log(self) -> EventLog {
        self.log
    }

    fn emit(&mut self, ts: Timepoint, ev: Event) -> Result<(), RunError> {
        let rec = self.log.append(ts, &ev)?;
        let seq = rec.seq;
        self.state.apply_event(seq, ts, &ev)?;
        Ok(())
    }

    /// Next instance to work on: the open step's, else the first unseen one.
    pub fn next_instance(&self) -> Option<&Instance> {
        if let Some(p) = &self.state.partial {
            return self
                .stream
                .iter()
                .find(|i| i.ordinal == p.instance.ordinal)
                .or(Some(&p.instance));
        }
        self.stream
            .iter()
            .find(|i| i.ordinal > self.state.last_ordinal)
    }

    pub fn is_done(&self) -> bool {
        self.state.finished || self.next_instance().is_none()
    }

    /// Runs up to `n` steps; returns how many finished.
    pub fn advance(&mut self, n: u64) -> Result<u64, RunError> {
        let mut done = 0;
        while done < n {
            let Some(inst) = self.next_instance().cloned() else {
                break;
            };
            self.step(&inst)?;
            done += 1;
        }
        Ok(done)
    }

    /// Runs the rest of the stream and closes the run.
    pub fn run_to_end(&mut self) -> Result<RunMetrics, RunError> {
        self.advance(u64::MAX)?;
        self.finish()
    }

    pub fn finish(&mut self) -> Result<RunMetrics, RunError> {
        if !self.state.finished {
            if self.state.last_snapshot_processed < self.state.steps.len() as u64
                || self.state.steps.is_empty()
            {
                self.snapshot()?;
            }
            let processed = self.state.steps.len() as u64;
            self.emit(
                self.state.now,
                Event::RunControl(RunControl::Finished { processed }),
            )?;
        }
        Ok(self.metrics())
    }

    fn snapshot(&mut self) -> Result<(), RunError> {
        let metrics = self.metrics();
        let ordinal = self.state.steps.last().map_or(0, |s| s.ordinal);
        self.emit(
            self.state.now,
            Event::MetricsSnapshot(MetricsSnapshotEvent { ordinal, metrics }),
        )
    }

    /// One instance, from wherever its step left off.
    pub fn step(&mut self, inst: &Instance) -> Result<StepOutcome, RunError> {
        let open = self.state.partial.as_ref().map(|p| p.instance.ordinal);
        match open {
            Some(o) if o != inst.ordinal => {
                return Err(RunError::Stream(format!(
                    "step {o} is open; cannot start {}",
                    inst.ordinal
                )))
            }
            None if inst.ordinal <= self.state.last_ordinal => {
                return Err(RunError::Stream(format!(
                    "instance {} was already processed",
                    inst.ordinal
                )))
            }
            _ => {}
        }
        if !matches!(self.step_clock, Some((o, _)) if o == inst.ordinal) {
            self.step_clock = Some((inst.ordinal, Instant::now()));
        }
        if open.is_none() {
            self.emit(inst.ts, Event::InstanceSeen(inst.clone()))?;
        }
        match self.step_phases(inst) {
            Ok(out) => Ok(out),
            Err(StepFailure::Run(e)) => Err(e),
            Err(e) => {
                let error = e.to_string();
                tracing::error!(ordinal = inst.ordinal, %error, "step aborted");
                self.emit(
                    inst.ts,
                    Event::RunControl(RunControl::StepAborted {
                        ordinal: inst.ordinal,
                        error: error.clone(),
                    }),
                )?;
                Err(RunError::Aborted {
                    ordinal: inst.ordinal,
                    error,
                })
            }
        }
    }

    fn partial(&self) -> &super::state::PartialStep {
        self.state.partial.as_ref().expect("a step is open")
    }

    fn step_phases(&mut self, inst: &Instance) -> Result<StepOutcome, StepFailure> {
        let now = inst.ts;
        if self.partial().preliminary.is_none() {
            let pred = self.predict(inst, now)?;
            self.emit(now, Event::Prediction(pred))?;
        }
        if self.partial().reflection.is_none() {
            let d = self.reflect(inst, now)?;
            self.emit(now, Event::Dialogue(d))?;
        }
        let p = self.partial();
        let refl = p.reflection.clone().expect("reflected");
        if refl.decision == Intervention::QueryExpert && p.query.is_none() && !p.query_closed {
            let q = self.formulate(inst, &refl, now)?;
            self.emit(
                now,
                Event::QueryIssued(QueryIssuedEvent {
                    ordinal: inst.ordinal,
                    primary: true,
                    query: q,
                }),
            )?;
        }
        let p = self.partial();
        if let (Some(q), None, false) = (p.query.clone(), &p.feedback, p.query_closed) {
            self.ask(inst, &q, true, now)?;
        }
        let p = self.partial();
        if p.feedback.is_some() && !p.integration_started {
            self.integrate_primary(inst, now)?;
        }
        while let Some(c) = self.partial().open_clarification().cloned() {
            if c.feedback.is_none() {
                self.ask(inst, &c.query, false, now)?;
                continue;
            }
            let fb = c.feedback.clone().expect("checked");
            self.resolve(inst, &c.query, &fb, now)?;
        }
        self.finalize(inst, now)
    }

    fn knowledge_line(&self, item: &KnowledgeItem, now: Timepoint) -> String {
        if self.params.temporal_annotations {
            format!(
                "- {} | {} | validated {}s ago | {}",
                item.kid,
                item.status_label(),
                now - item.ts_validated,
                item.content.text
            )
        } else {
            format!("- {} | {}", item.kid, item.content.text)
        }
    }

    fn render_knowledge(&self, kids: &[Retrieved], now: Timepoint) -> String {
        let lines: Vec<String> = kids
            .iter()
            .filter_map(|r| self.state.repo.get(&r.kid))
            .map(|item| self.knowledge_line(item, now))
            .collect();
        if lines.is_empty() {
            "(none)".into()
        } else {
            lines.join("\n")
        }
    }

    fn retrieved_items(&self, kids: &[Retrieved]) -> Vec<ScoredItem> {
        kids.iter()
            .filter_map(|r| {
                self.state.repo.get(&r.kid).map(|item| ScoredItem {
                    item: item.clone(),
                    w_s: 0.0,
                    s_t: 0.0,
                    s_r: 0.0,
                    composite: r.composite,
                })
            })
            .collect()
    }

    /// Retrieval plus one model call. Zero-score items never reach the prompt.
    fn predict(&mut self, inst: &Instance, now: Timepoint) -> Result<PredictionEvent, StepFailure> {
        let text = inst.render();
        let embedder = self.providers.embedder.clone();
        let query_vec = embedder.embed(&text)?;
        let mut failed = None;
        let mut relevance = |item: &KnowledgeItem| match embedder
            .embed(&item.content.text)
            .and_then(|v| cosine(&query_vec, &v))
        {
            Ok(s) => s,
            Err(e) => {
                failed = Some(e);
                0.0
            }
        };
        let scoring = self.params.scoring;
        // A resumed step must not count usage twice.
        let selected = if self.partial().usage_recorded {
            self.state
                .repo
                .score_subset(&mut relevance, now, &scoring)?
        } else {
            self.retrieve_subset(&mut relevance, now, &scoring)?
        };
        if let Some(e) = failed {
            return Err(e.into());
        }
        let retrieved: Vec<Retrieved> = selected
            .iter()
            .filter(|s| s.composite > 0.0)
            .map(|s| Retrieved {
                kid: s.item.kid.clone(),
                composite: s.composite,
            })
            .collect();
        let knowledge = self.render_knowledge(&retrieved, now);
        let labels = &self.params.labels;
        let r = self.providers.prompts.predict.render(
            &Vars::new()
                .set("labels", labels.labels.join(", "))
                .set("instance", text)
                .set("knowledge", knowledge),
        )?;
        let reply = self
            .providers
            .llm
            .complete(&ChatRequest::new(r.system, r.user))?
            .text;
        let (label, parse_fallback) = match parse_choice(&reply, &labels.labels) {
            Ok(i) => (labels.labels[i].clone(), false),
            Err(e) => {
                tracing::warn!(ordinal = inst.ordinal, %e, "prediction unparseable, using default label");
                (labels.fallback_label().to_string(), true)
            }
        };
        let reasoning = reply
            .split_once('\n')
            .map(|(_, rest)| rest.trim().to_string())
            .filter(|r| !r.is_empty())
            .unwrap_or_else(|| reply.trim().to_string());
        Ok(PredictionEvent {
            ordinal: inst.ordinal,
            instance_id: inst.id.clone(),
            stage: PredictionStage::Preliminary,
            label,
            reasoning,
            retrieved,
            handling_s: None,
            source: "policy".into(),
            parse_fallback,
        })
    }

    fn label_query_affordable(&self) -> bool {
        self.state
            .ledger
            .can_afford(self.params.costs.cost(QueryKind::AskLabel))
    }

    fn reflect(&mut self, inst: &Instance, now: Timepoint) -> Result<DialogueEvent, StepFailure> {
        let pred = self.partial().preliminary.clone().expect("predicted");
        let mut ev = DialogueEvent {
            ordinal: inst.ordinal,
            policy: self.params.policy.name().into(),
            dialogue: None,
            confidence: None,
            probe: None,
            decision: Intervention::PredictOnly,
            kind: None,
            conflict: None,
            llm_calls: 0,
        };
        let ask_label = |ev: &mut DialogueEvent| {
            ev.decision = Intervention::QueryExpert;
            ev.kind = Some(QueryKind::AskLabel);
        };
        match self.params.policy.clone() {
            Policy::Static => {}
            Policy::Random { rate, seed } => {
                if random_draw(seed, inst.ordinal) < rate && self.label_query_affordable() {
                    ask_label(&mut ev);
                }
            }
            Policy::Uncertainty { theta } => {
                let knowledge = self.render_knowledge(&pred.retrieved, now);
                let p = probe_confidence(
                    &inst.render(),
                    &pred.label,
                    &knowledge,
                    &self.providers.prompts,
                    &*self.providers.llm,
                )?;
                ev.llm_calls = 1;
                ev.probe = Some(p);
                if p < theta && self.label_query_affordable() {
                    ask_label(&mut ev);
                }
            }
            Policy::Reflective {
                allowed_kinds,
                resolve_conflicts,
            } => {
                let knowledge = self.render_knowledge(&pred.retrieved, now);
                let ctx = CaseContext {
                    instance: inst,
                    label: &pred.label,
                    reasoning: &pred.reasoning,
                    knowledge: &knowledge,
                };
                let prompts = &self.providers.prompts;
                let llm = &*self.providers.llm;
                let dialogue = run_self_dialogue(&ctx, prompts, llm)?;
                let conf = assess_confidence(&dialogue, prompts, llm)?;
                let mut allowed = if allowed_kinds.is_empty() {
                    QueryKind::ALL.to_vec()
                } else {
                    allowed_kinds
                };
                if !resolve_conflicts {
                    allowed.retain(|k| *k != QueryKind::AskClarification);
                }
                let items = self.retrieved_items(&pred.retrieved);
                let (kind, conflict) = plan_query(&dialogue, &items, &allowed);
                let decision =
                    decide_intervention(conf, &self.state.ledger, self.params.costs.cost(kind));
                ev.llm_calls = dialogue.pairs.len() as u32 + 1;
                ev.dialogue = Some(dialogue);
                ev.confidence = Some(conf);
                ev.decision = decision;
                if decision == Intervention::QueryExpert {
                    ev.kind = Some(kind);
                    ev.conflict = conflict;
                }
            }
        }
        Ok(ev)
    }

    fn next_qid(&self) -> String {
        format!("{}-q{:05}", self.run_id(), self.state.queries_issued + 1)
    }

    fn formulate(
        &self,
        inst: &Instance,
        refl: &DialogueEvent,
        now: Timepoint,
    ) -> Result<Query, StepFailure> {
        let pred = self.partial().preliminary.clone().expect("predicted");
        let knowledge = self.render_knowledge(&pred.retrieved, now);
        let ctx = CaseContext {
            instance: inst,
            label: &pred.label,
            reasoning: &pred.reasoning,
            knowledge: &knowledge,
        };
        let kind = refl.kind.unwrap_or(QueryKind::AskLabel);
        Ok(build_query(
            self.next_qid(),
            kind,
            refl.conflict.clone(),
            &ctx,
            refl.dialogue.as_ref(),
            &self.params.costs,
            &self.providers.prompts,
            now,
        )?)
    }

    /// Asks the oracle. Timeouts and oracle failures close the query without
    /// charge; the step goes on with what it has.
    fn ask(
        &mut self,
        inst: &Instance,
        q: &Query,
        primary: bool,
        now: Timepoint,
    ) -> Result<(), StepFailure> {
        let req = OracleRequest {
            instance: inst,
            query: q,
            now,
        };
        let oracle = self.providers.oracle.clone();
        let ev = match oracle.answer(&req) {
            Ok(fb) => match fb.check(q.kind) {
                Ok(()) => Event::FeedbackReceived(FeedbackEvent {
                    ordinal: inst.ordinal,
                    primary,
                    kind: q.kind,
                    cost: q.cost,
                    feedback: OracleFeedback {
                        qid: q.qid.clone(),
                        ..fb
                    },
                }),
                Err(reason) => Event::RunControl(RunControl::QueryFailed {
                    ordinal: inst.ordinal,
                    qid: q.qid.clone(),
                    error: reason,
                }),
            },
            Err(OracleError::Timeout(_)) => Event::RunControl(RunControl::QueryExpired {
                ordinal: inst.ordinal,
                qid: q.qid.clone(),
            }),
            Err(e) => {
                tracing::warn!(qid = %q.qid, %e, "oracle failed");
                Event::RunControl(RunControl::QueryFailed {
                    ordinal: inst.ordinal,
                    qid: q.qid.clone(),
                    error: e.to_string(),
                })
            }
        };
        self.emit(now, ev)?;
        Ok(())
    }

    fn integration_params(&self, allow_clarifications: bool) -> IntegrationParams {
        IntegrationParams {
            tau_sim: self.params.similarity.tau_sim,
            max_candidates: self.params.max_candidates,
            resolve_conflicts: self.params.policy.resolves_conflicts(),
            allow_clarifications: allow_clarifications
                && self.params.policy.allows_clarifications(),
            source: self.params.feedback_source,
        }
    }

    fn integrate_primary(&mut self, inst: &Instance, now: Timepoint) -> Result<(), StepFailure> {
        let p = self.partial();
        let q = p.query.clone().expect("feedback has a query");
        let fb = p.feedback.clone().expect("checked by caller");
        if q.kind == QueryKind::AskClarification {
            return self.resolve(inst, &q, &fb, now);
        }
        self.extract_and_integrate(inst, &q, &fb, now, true)
    }

    fn extract_and_integrate(
        &mut self,
        inst: &Instance,
        q: &Query,
        fb: &OracleFeedback,
        now: Timepoint,
        allow_clarifications: bool,
    ) -> Result<(), StepFailure> {
        let preliminary = self
            .partial()
            .preliminary
            .as_ref()
            .map(|p| p.label.clone())
            .unwrap_or_default();
        let providers = self.providers.clone();
        let labels = self.params.labels.clone();
        let ctx = ExtractContext {
            instance: inst,
            preliminary: &preliminary,
            query: q,
            labels: &labels,
        };
        let assertions = match extract_assertions(fb, &ctx, &providers.prompts, &*providers.llm) {
            Ok(a) => a,
            Err(HgkaError::EmptyFeedback(qid)) => {
                return self.record_skipped(inst, now, "empty feedback", &qid);
            }
            Err(e) => return Err(hgka_failure(e)),
        };
        let params = self.integration_params(allow_clarifications);
        let report = integrate_feedback(
            self,
            &assertions,
            now,
            &*providers.llm,
            &*providers.embedder,
            &providers.prompts,
            &params,
        )
        .map_err(hgka_failure)?;
        self.after_report(inst, now, report)
    }

    fn after_report(
        &mut self,
        inst: &Instance,
        now: Timepoint,
        report: IntegrationReport,
    ) -> Result<(), StepFailure> {
        if !report.skipped.is_empty() {
            self.emit(
                now,
                Event::RunControl(RunControl::IntegrationSkipped {
                    ordinal: inst.ordinal,
                    skipped: report.skipped,
                }),
            )?;
        }
        Ok(())
    }

    fn record_skipped(
        &mut self,
        inst: &Instance,
        now: Timepoint,
        reason: &str,
        payload: &str,
    ) -> Result<(), StepFailure> {
        self.after_report(
            inst,
            now,
            IntegrationReport {
                skipped: vec![crate::hgka::Skipped {
                    reason: reason.into(),
                    payload: payload.into(),
                }],
                ..Default::default()
            },
        )
    }

    /// Records the expert's resolution, applies it, then integrates any new
    /// knowledge in the answer without raising further clarifications.
    fn resolve(
        &mut self,
        inst: &Instance,
        q: &Query,
        fb: &OracleFeedback,
        now: Timepoint,
    ) -> Result<(), StepFailure> {
        let pair = q
            .payload
            .conflict
            .clone()
            .expect("clarifications carry a conflict pair");
        let resolution = fb
            .resolution()
            .unwrap_or(crate::oracle::Resolution::ConditionalOnly);
        self.emit(
            now,
            Event::Clarification(ClarificationEvent {
                ordinal: inst.ordinal,
                qid: q.qid.clone(),
                pair: pair.clone(),
                resolution,
            }),
        )?;
        let fb = OracleFeedback {
            resolution: Some(resolution),
            ..fb.clone()
        };
        let (_, report) = match apply_clarification(self, &pair, &fb, now) {
            Ok(r) => r,
            Err(HgkaError::Kr(e)) => {
                return self.record_skipped(inst, now, &e.to_string(), &fb.text);
            }
            Err(e) => return Err(hgka_failure(e)),
        };
        self.after_report(inst, now, report)?;
        if crate::oracle::Resolution::from_text(&fb.text).is_some() && fb.text.lines().count() <= 1
        {
            return Ok(());
        }
        self.extract_and_integrate(inst, q, &fb, now, false)
    }

    fn finalize(&mut self, inst: &Instance, now: Timepoint) -> Result<StepOutcome, StepFailure> {
        let p = self.partial().clone();
        let pre = p.preliminary.clone().expect("predicted");
        let queried = p.query.as_ref().map(|q| q.kind);
        let expert_label = match (&p.query, &p.feedback) {
            (Some(q), Some(fb)) if q.kind == QueryKind::AskLabel => fb.label.clone(),
            _ => None,
        };
        let handling_s = self.handling_time(inst.ordinal, &p);
        let (label, source) = match expert_label {
            Some(l) => (l, "expert"),
            None => (pre.label.clone(), "policy"),
        };
        self.emit(
            now,
            Event::Prediction(PredictionEvent {
                ordinal: inst.ordinal,
                instance_id: inst.id.clone(),
                stage: PredictionStage::Final,
                label: label.clone(),
                reasoning: pre.reasoning,
                retrieved: Vec::new(),
                handling_s: Some(handling_s),
                source: source.into(),
                parse_fallback: pre.parse_fallback,
            }),
        )?;
        self.step_clock = None;
        let processed = self.state.steps.len() as u64;
        if processed - self.state.last_snapshot_processed >= self.params.snapshot_every {
            self.snapshot()?;
        }
        Ok(StepOutcome {
            ordinal: inst.ordinal,
            label,
            queried,
            handling_s,
        })
    }

    fn handling_time(&self, ordinal: u64, p: &super::state::PartialStep) -> f64 {
        let synthetic = |base: f64, call: f64, unit: f64| {
            base + call * f64::from(p.agent_llm_calls()) + unit * p.cost_units as f64
        };
        match self.params.aht {
            AhtModel::Synthetic {
                base_s,
                per_llm_call_s,
                per_cost_unit_s,
            } => synthetic(base_s, per_llm_call_s, per_cost_unit_s),
            AhtModel::WallClock => match self.step_clock {
                Some((o, t)) if o == ordinal => t.elapsed().as_secs_f64(),
                _ => {
                    let AhtModel::Synthetic {
                        base_s,
                        per_llm_call_s,
                        per_cost_unit_s,
                    } = AhtModel::default()
                    else {
                        unreachable!()
                    };
                    synthetic(base_s, per_llm_call_s, per_cost_unit_s)
                }
            },
        }
    }

    /// Budget not yet committed to clarifications that are still open.
    fn outstanding_cost(&self) -> u64 {
        self.state.partial.as_ref().map_or(0, |p| {
            p.clarifications
                .iter()
                .filter(|c| c.feedback.is_none() && !c.closed)
                .map(|c| u64::from(c.query.cost))
                .sum()
        })
    }
}

fn hgka_failure(e: HgkaError) -> StepFailure {
    match e {
        HgkaError::Llm(e) => StepFailure::Llm(e),
        HgkaError::Prompt(e) => StepFailure::Prompt(e),
        HgkaError::Kr(e) => StepFailure::Run(RunError::Kr(e)),
        HgkaError::Similarity(e) => StepFailure::Similarity(e),
        HgkaError::EmptyFeedback(q) => {
            StepFailure::Run(RunError::Stream(format!("empty feedback for {q}")))
        }
    }
}

impl KnowledgeWriter for Runner {
    fn kr(&self) -> &Repository {
        &self.state.repo
    }

    fn commit(&mut self, at: Timepoint, m: KrMutation) -> Result<(), KrError> {
        self.emit(at, Event::KrMutation(m)).map_err(|e| match e {
            RunError::Kr(e) => e,
            other => KrError::Storage(other.to_string()),
        })
    }
}

impl IntegrationHost for Runner {
    fn issue_clarification(
        &mut self,
        pair: ConflictPair,
        now: Timepoint,
    ) -> Result<Option<Query>, HgkaError> {
        let cost = self.params.costs.cost(QueryKind::AskClarification);
        let committed = self.state.ledger.spent + self.outstanding_cost() + u64::from(cost);
        if committed > self.state.ledger.total {
            return Ok(None);
        }
        let p = self.partial();
        let inst = p.instance.clone();
        let pre = p.preliminary.clone();
        let instance_text = inst.render();
        let prompt = clarification_text(&pair, &instance_text, &self.providers.prompts)?;
        let q = Query {
            qid: self.next_qid(),
            kind: QueryKind::AskClarification,
            cost,
            payload: QueryPayload {
                instance_id: inst.id.clone(),
                ordinal: inst.ordinal,
                instance_text,
                preliminary: pre.as_ref().map(|p| p.label.clone()).unwrap_or_default(),
                reasoning: pre.map(|p| p.reasoning).unwrap_or_default(),
                dialogue: String::new(),
                gaps: Vec::new(),
                conflict: Some(pair),
                prompt,
            },
            issued_at: now,
        };
        self.emit(
            now,
            Event::QueryIssued(QueryIssuedEvent {
                ordinal: inst.ordinal,
                primary: false,
                query: q.clone(),
            }),
        )
        .map_err(|e| HgkaError::Kr(KrError::Storage(e.to_string())))?;
        Ok(Some(q))
    }
}
