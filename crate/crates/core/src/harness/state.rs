//! Agent state as a fold over the run log.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{Instance, RunMetrics, StepRecord};
use crate::events::{
    DialogueEvent, Event, EventRecord, PredictionEvent, PredictionStage, RunControl, RunStarted,
};
use crate::igs::{BudgetLedger, ConflictPair, Query, QueryKind};
use crate::kr::{KrError, KrMutation, Repository};
use crate::oracle::OracleFeedback;
use crate::Timepoint;

/// A clarification raised during integration and what became of it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClarificationState {
    pub query: Query,
    pub feedback: Option<OracleFeedback>,
    /// Resolution recorded; mutations may follow.
    pub resolved: bool,
    /// Expired or failed without an answer.
    pub closed: bool,
}

impl ClarificationState {
    pub fn pair(&self) -> &ConflictPair {
        self.query
            .payload
            .conflict
            .as_ref()
            .expect("clarifications carry a conflict pair")
    }
}

/// The step in progress, rebuilt from its events.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialStep {
    pub instance: Instance,
    pub preliminary: Option<PredictionEvent>,
    pub reflection: Option<DialogueEvent>,
    pub query: Option<Query>,
    pub feedback: Option<OracleFeedback>,
    /// The primary query expired or failed.
    pub query_closed: bool,
    /// Something was written after the primary feedback.
    pub integration_started: bool,
    pub clarifications: Vec<ClarificationState>,
    pub cost_units: u64,
    /// Usage counts for the preliminary retrieval are already logged.
    pub usage_recorded: bool,
}

impl PartialStep {
    fn new(instance: Instance) -> Self {
        Self {
            instance,
            preliminary: None,
            reflection: None,
            query: None,
            feedback: None,
            query_closed: false,
            integration_started: false,
            clarifications: Vec::new(),
            cost_units: 0,
            usage_recorded: false,
        }
    }

    pub fn agent_llm_calls(&self) -> u32 {
        u32::from(self.preliminary.is_some()) + self.reflection.as_ref().map_or(0, |r| r.llm_calls)
    }

    /// Unresolved clarification that is still worth asking.
    pub fn open_clarification(&self) -> Option<&ClarificationState> {
        self.clarifications
            .iter()
            .find(|c| !c.resolved && !c.closed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentState {
    pub started: Option<RunStarted>,
    pub repo: Repository,
    pub ledger: BudgetLedger,
    pub steps: Vec<StepRecord>,
    pub partial: Option<PartialStep>,
    pub queries_by_kind: BTreeMap<QueryKind, u64>,
    pub queries_issued: u64,
    pub last_ordinal: u64,
    pub last_snapshot_processed: u64,
    pub snapshots: Vec<(u64, RunMetrics)>,
    pub now: Timepoint,
    pub finished: bool,
    pub aborted_steps: u64,
    pub last_seq: u64,
}

impl Default for AgentState {
    fn default() -> Self {
        Self {
            started: None,
            repo: Repository::new(""),
            ledger: BudgetLedger::new(0),
            steps: Vec::new(),
            partial: None,
            queries_by_kind: BTreeMap::new(),
            queries_issued: 0,
            last_ordinal: 0,
            last_snapshot_processed: 0,
            snapshots: Vec::new(),
            now: 0,
            finished: false,
            aborted_steps: 0,
            last_seq: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("malformed event at seq {seq}: {reason}")]
    Malformed { seq: u64, reason: String },
    #[error("event at seq {seq} does not fit the run state: {reason}")]
    OutOfOrder { seq: u64, reason: String },
    #[error(transparent)]
    Kr(#[from] KrError),
}

impl AgentState {
    pub fn run_id(&self) -> &str {
        self.started.as_ref().map_or("", |s| s.run_id.as_str())
    }

    /// Rebuilds the state from a complete or partial log.
    pub fn replay(records: &[EventRecord]) -> Result<AgentState, StateError> {
        let mut st = AgentState::default();
        for rec in records {
            st.apply_record(rec)?;
        }
        Ok(st)
    }

    pub fn apply_record(&mut self, rec: &EventRecord) -> Result<(), StateError> {
        let ev = rec.decode().map_err(|e| StateError::Malformed {
            seq: rec.seq,
            reason: e.to_string(),
        })?;
        self.apply_event(rec.seq, rec.ts, &ev)
    }

    /// Applies an already decoded event; `seq` must follow the last one.
    pub fn apply_event(&mut self, seq: u64, ts: Timepoint, ev: &Event) -> Result<(), StateError> {
        if seq != self.last_seq + 1 {
            return Err(StateError::OutOfOrder {
                seq,
                reason: format!("expected seq {}", self.last_seq + 1),
            });
        }
        self.apply(seq, ts, ev)?;
        self.last_seq = seq;
        Ok(())
    }

    fn partial_mut(&mut self, seq: u64, what: &str) -> Result<&mut PartialStep, StateError> {
        self.partial.as_mut().ok_or_else(|| StateError::OutOfOrder {
            seq,
            reason: format!("{what} outside a step"),
        })
    }

    fn apply(&mut self, seq: u64, ts: Timepoint, ev: &Event) -> Result<(), StateError> {
        self.now = self.now.max(ts);
        match ev {
            Event::RunControl(RunControl::Started(s)) => {
                self.repo = Repository::new(s.run_id.clone());
                self.ledger = BudgetLedger::new(s.budget);
                self.started = Some(s.clone());
            }
            Event::RunControl(RunControl::Finished { .. }) => self.finished = true,
            Event::RunControl(RunControl::Resumed { .. }) => {}
            Event::RunControl(RunControl::IntegrationSkipped { .. }) => {}
            Event::RunControl(RunControl::StepAborted { .. }) => self.aborted_steps += 1,
            Event::RunControl(RunControl::QueryExpired { qid, .. })
            | Event::RunControl(RunControl::QueryFailed { qid, .. }) => {
                let p = self.partial_mut(seq, "query closure")?;
                if p.query.as_ref().is_some_and(|q| &q.qid == qid) {
                    p.query_closed = true;
                } else if let Some(c) = p.clarifications.iter_mut().find(|c| &c.query.qid == qid) {
                    c.closed = true;
                }
            }
            Event::InstanceSeen(inst) => {
                if self.partial.is_some() {
                    return Err(StateError::OutOfOrder {
                        seq,
                        reason: "new instance while a step is open".into(),
                    });
                }
                if inst.ordinal <= self.last_ordinal {
                    return Err(StateError::OutOfOrder {
                        seq,
                        reason: format!("ordinal {} does not increase", inst.ordinal),
                    });
                }
                self.last_ordinal = inst.ordinal;
                self.partial = Some(PartialStep::new(inst.clone()));
            }
            Event::Prediction(p) => match p.stage {
                PredictionStage::Preliminary => {
                    self.partial_mut(seq, "prediction")?.preliminary = Some(p.clone());
                }
                PredictionStage::Final => {
                    let part = self.partial.take().ok_or_else(|| StateError::OutOfOrder {
                        seq,
                        reason: "final prediction outside a step".into(),
                    })?;
                    self.steps.push(StepRecord {
                        ordinal: part.instance.ordinal,
                        truth: part.instance.truth.clone(),
                        predicted: p.label.clone(),
                        handling_s: p.handling_s.unwrap_or(0.0),
                    });
                }
            },
            Event::Dialogue(d) => self.partial_mut(seq, "dialogue")?.reflection = Some(d.clone()),
            Event::QueryIssued(q) => {
                self.queries_issued += 1;
                let p = self.partial_mut(seq, "query")?;
                if q.primary {
                    p.query = Some(q.query.clone());
                    p.query_closed = false;
                } else {
                    p.integration_started = true;
                    if let Some(c) = p
                        .clarifications
                        .iter_mut()
                        .find(|c| c.query.qid == q.query.qid)
                    {
                        c.closed = false;
                    } else {
                        p.clarifications.push(ClarificationState {
                            query: q.query.clone(),
                            feedback: None,
                            resolved: false,
                            closed: false,
                        });
                    }
                }
            }
            Event::FeedbackReceived(f) => {
                let p = self
                    .partial
                    .as_mut()
                    .ok_or_else(|| StateError::OutOfOrder {
                        seq,
                        reason: "feedback outside a step".into(),
                    })?;
                let query = if f.primary {
                    p.feedback = Some(f.feedback.clone());
                    p.query.clone()
                } else {
                    let c = p
                        .clarifications
                        .iter_mut()
                        .find(|c| c.query.qid == f.feedback.qid);
                    c.map(|c| {
                        c.feedback = Some(f.feedback.clone());
                        c.query.clone()
                    })
                };
                let query = query.ok_or_else(|| StateError::OutOfOrder {
                    seq,
                    reason: format!("feedback for unknown query {}", f.feedback.qid),
                })?;
                p.cost_units += u64::from(query.cost);
                self.ledger
                    .charge(&query, ts)
                    .map_err(|e| StateError::OutOfOrder {
                        seq,
                        reason: e.to_string(),
                    })?;
                *self.queries_by_kind.entry(query.kind).or_insert(0) += 1;
            }
            Event::KrMutation(m) => {
                self.repo.apply(m)?;
                if let Some(p) = self.partial.as_mut() {
                    if matches!(m, KrMutation::Usage { .. }) && p.preliminary.is_none() {
                        p.usage_recorded = true;
                    }
                    if p.feedback.is_some() {
                        p.integration_started = true;
                    }
                }
            }
            Event::Clarification(c) => {
                let p = self.partial_mut(seq, "clarification")?;
                p.integration_started = true;
                if let Some(cs) = p.clarifications.iter_mut().find(|x| x.query.qid == c.qid) {
                    cs.resolved = true;
                }
            }
            Event::MetricsSnapshot(m) => {
                self.last_snapshot_processed = m.metrics.processed;
                self.snapshots.push((m.ordinal, m.metrics.clone()));
            }
        }
        Ok(())
    }

    pub fn metrics(&self) -> RunMetrics {
        let (labels, phases) = match &self.started {
            Some(s) => (s.labels.clone(), s.phases.clone()),
            None => (super::LabelSpace::binary_match(), Vec::new()),
        };
        RunMetrics::from_steps(
            &labels,
            &phases,
            &self.steps,
            self.queries_by_kind.clone(),
            self.ledger.total,
            self.ledger.spent,
        )
    }
}
