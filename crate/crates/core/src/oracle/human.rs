use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FeedbackSource, Oracle, OracleError, OracleFeedback, OracleRequest, Resolution};
use crate::igs::{Query, QueryKind};
use crate::Timepoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendingStatus {
    Pending,
    Answered,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub run_id: String,
    pub query: Query,
    pub instance_fields: BTreeMap<String, String>,
    pub dialogue: String,
    pub labels: Vec<String>,
    pub enqueued_at: Timepoint,
    pub status: PendingStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<OracleFeedback>,
    /// Arrival order across the queue.
    pub seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerSubmission {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub resolution: Option<Resolution>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueueError {
    #[error("unknown query {0}")]
    UnknownQid(String),
    #[error("query {qid} is already {status:?}")]
    Conflict { qid: String, status: PendingStatus },
    #[error("invalid answer: {0}")]
    Invalid(String),
}

#[derive(Default)]
struct QueueState {
    items: BTreeMap<String, PendingQuery>,
    next_seq: u64,
}

/// Shared queue between the run loops and the HTTP handlers. Each entry makes
/// exactly one terminal transition, decided by compare-and-set under the lock.
#[derive(Default)]
pub struct QueryQueue {
    state: Mutex<QueueState>,
    changed: Condvar,
}

impl QueryQueue {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Adds a pending entry. An expired entry with the same qid is replaced;
    /// a pending one is left as it is.
    pub fn enqueue(
        &self,
        run_id: &str,
        query: &Query,
        instance_fields: BTreeMap<String, String>,
        labels: &[String],
        now: Timepoint,
    ) {
        let mut st = self.state.lock().expect("queue lock");
        if let Some(existing) = st.items.get(&query.qid) {
            if existing.status != PendingStatus::Expired {
                return;
            }
        }
        st.next_seq += 1;
        let seq = st.next_seq;
        st.items.insert(
            query.qid.clone(),
            PendingQuery {
                run_id: run_id.to_string(),
                query: query.clone(),
                instance_fields,
                dialogue: query.payload.dialogue.clone(),
                labels: labels.to_vec(),
                enqueued_at: now,
                status: PendingStatus::Pending,
                feedback: None,
                seq,
            },
        );
        self.changed.notify_all();
    }

    pub fn get(&self, qid: &str) -> Option<PendingQuery> {
        self.state
            .lock()
            .expect("queue lock")
            .items
            .get(qid)
            .cloned()
    }

    /// Pending entries, oldest first, optionally for one run.
    pub fn pending(&self, run_id: Option<&str>) -> Vec<PendingQuery> {
        let st = self.state.lock().expect("queue lock");
        let mut v: Vec<PendingQuery> = st
            .items
            .values()
            .filter(|p| p.status == PendingStatus::Pending)
            .filter(|p| run_id.is_none_or(|r| p.run_id == r))
            .cloned()
            .collect();
        v.sort_by_key(|p| p.seq);
        v
    }

    pub fn submit(
        &self,
        qid: &str,
        answer: AnswerSubmission,
    ) -> Result<OracleFeedback, QueueError> {
        let mut st = self.state.lock().expect("queue lock");
        let entry = st
            .items
            .get_mut(qid)
            .ok_or_else(|| QueueError::UnknownQid(qid.to_string()))?;
        if entry.status != PendingStatus::Pending {
            return Err(QueueError::Conflict {
                qid: qid.to_string(),
                status: entry.status,
            });
        }
        if let Some(l) = &answer.label {
            if !entry.labels.contains(l) {
                return Err(QueueError::Invalid(format!(
                    "{l:?} is not a label of this run"
                )));
            }
        }
        let fb = OracleFeedback {
            qid: qid.to_string(),
            text: answer.text,
            label: answer.label,
            answered_at: entry.enqueued_at,
            source: FeedbackSource::Human,
            resolution: answer.resolution,
        };
        fb.check(entry.query.kind).map_err(QueueError::Invalid)?;
        if entry.query.kind == QueryKind::AskClarification && fb.resolution().is_none() {
            return Err(QueueError::Invalid(
                "pick a resolution for the clarification".into(),
            ));
        }
        entry.status = PendingStatus::Answered;
        entry.feedback = Some(fb.clone());
        self.changed.notify_all();
        Ok(fb)
    }

    /// Blocks until the entry is answered or `timeout` passes; on timeout the
    /// entry is expired unless an answer won the race.
    pub fn wait(&self, qid: &str, timeout: Duration) -> Result<OracleFeedback, OracleError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.state.lock().expect("queue lock");
        loop {
            let entry = st
                .items
                .get_mut(qid)
                .ok_or_else(|| OracleError::Unavailable(format!("query {qid} is not queued")))?;
            match entry.status {
                PendingStatus::Answered => {
                    return Ok(entry
                        .feedback
                        .clone()
                        .expect("answered entries carry feedback"))
                }
                PendingStatus::Expired => return Err(OracleError::Timeout(qid.to_string())),
                PendingStatus::Pending => {}
            }
            let now = Instant::now();
            if now >= deadline {
                entry.status = PendingStatus::Expired;
                self.changed.notify_all();
                return Err(OracleError::Timeout(qid.to_string()));
            }
            st = self
                .changed
                .wait_timeout(st, deadline - now)
                .expect("queue lock")
                .0;
        }
    }
}

pub struct HumanOracle {
    queue: Arc<QueryQueue>,
    run_id: String,
    labels: Vec<String>,
    timeout: Duration,
}

impl HumanOracle {
    pub fn new(
        queue: Arc<QueryQueue>,
        run_id: &str,
        labels: Vec<String>,
        timeout: Duration,
    ) -> Self {
        Self {
            queue,
            run_id: run_id.to_string(),
            labels,
            timeout,
        }
    }
}

impl Oracle for HumanOracle {
    fn answer(&self, req: &OracleRequest<'_>) -> Result<OracleFeedback, OracleError> {
        self.queue.enqueue(
            &self.run_id,
            req.query,
            req.instance.fields.clone(),
            &self.labels,
            req.now,
        );
        let mut fb = self.queue.wait(&req.query.qid, self.timeout)?;
        fb.answered_at = req.now;
        Ok(fb)
    }
}
