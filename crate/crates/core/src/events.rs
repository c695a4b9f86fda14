//! Append-only run log. Every state change of a run is one [`EventRecord`];
//! agent state, the repository, the ledger and the metrics are folds over it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::harness::{Instance, LabelSpace, PhaseMark, RunMetrics};
use crate::hgka::Skipped;
use crate::igs::{ConfidenceLevel, ConflictPair, Intervention, Query, QueryKind, SelfDialogue};
use crate::kr::{Kid, KrMutation};
use crate::oracle::{OracleFeedback, Resolution};
use crate::Timepoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    InstanceSeen,
    Prediction,
    Dialogue,
    QueryIssued,
    FeedbackReceived,
    KrMutation,
    Clarification,
    MetricsSnapshot,
    RunControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub ts: Timepoint,
    pub kind: EventKind,
    pub payload: Value,
}

impl EventRecord {
    pub fn decode(&self) -> Result<Event, serde_json::Error> {
        let wrapped = serde_json::json!({ "kind": self.kind, "payload": self.payload });
        serde_json::from_value(wrapped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionStage {
    Preliminary,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub kid: Kid,
    pub composite: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEvent {
    pub ordinal: u64,
    pub instance_id: String,
    pub stage: PredictionStage,
    pub label: String,
    pub reasoning: String,
    #[serde(default)]
    pub retrieved: Vec<Retrieved>,
    /// Set on the final prediction only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handling_s: Option<f64>,
    /// Where the final label came from: `policy` or `expert`.
    pub source: String,
    #[serde(default)]
    pub parse_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueEvent {
    pub ordinal: u64,
    pub policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue: Option<SelfDialogue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<ConfidenceLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<f64>,
    pub decision: Intervention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<QueryKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflict: Option<ConflictPair>,
    /// Model calls spent on this decision.
    pub llm_calls: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryIssuedEvent {
    pub ordinal: u64,
    /// False for clarifications raised during integration.
    pub primary: bool,
    pub query: Query,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub ordinal: u64,
    pub primary: bool,
    pub kind: QueryKind,
    pub cost: u32,
    pub feedback: OracleFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationEvent {
    pub ordinal: u64,
    pub qid: String,
    pub pair: ConflictPair,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshotEvent {
    pub ordinal: u64,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStarted {
    pub run_id: String,
    pub labels: LabelSpace,
    pub budget: u64,
    #[serde(default)]
    pub phases: Vec<PhaseMark>,
    pub prompt_version: String,
    /// Snapshot of the configuration the run was created with.
    #[serde(default)]
    pub config: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "control", rename_all = "snake_case")]
pub enum RunControl {
    Started(RunStarted),
    Resumed {
        from_seq: u64,
    },
    QueryExpired {
        ordinal: u64,
        qid: String,
    },
    QueryFailed {
        ordinal: u64,
        qid: String,
        error: String,
    },
    StepAborted {
        ordinal: u64,
        error: String,
    },
    IntegrationSkipped {
        ordinal: u64,
        skipped: Vec<Skipped>,
    },
    Finished {
        processed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    InstanceSeen(Instance),
    Prediction(PredictionEvent),
    Dialogue(DialogueEvent),
    QueryIssued(QueryIssuedEvent),
    FeedbackReceived(FeedbackEvent),
    KrMutation(KrMutation),
    Clarification(ClarificationEvent),
    MetricsSnapshot(MetricsSnapshotEvent),
    RunControl(RunControl),
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self {
            Event::InstanceSeen(_) => EventKind::InstanceSeen,
            Event::Prediction(_) => EventKind::Prediction,
            Event::Dialogue(_) => EventKind::Dialogue,
            Event::QueryIssued(_) => EventKind::QueryIssued,
            Event::FeedbackReceived(_) => EventKind::FeedbackReceived,
            Event::KrMutation(_) => EventKind::KrMutation,
            Event::Clarification(_) => EventKind::Clarification,
            Event::MetricsSnapshot(_) => EventKind::MetricsSnapshot,
            Event::RunControl(_) => EventKind::RunControl,
        }
    }

    pub fn encode(&self, seq: u64, ts: Timepoint) -> EventRecord {
        let mut v = serde_json::to_value(self).expect("events serialize");
        let payload = v.get_mut("payload").map(Value::take).unwrap_or(Value::Null);
        EventRecord {
            seq,
            ts,
            kind: self.kind(),
            payload,
        }
    }
}

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("sequence violation: expected seq {expected}, got {found}")]
    SequenceViolation { expected: u64, found: u64 },
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("{path}:{line}: {reason}")]
    Corrupt {
        path: String,
        line: usize,
        reason: String,
    },
}

fn storage(e: std::io::Error) -> EventLogError {
    EventLogError::Storage(e.to_string())
}

type Observer = Box<dyn FnMut(&EventRecord) + Send>;

/// In-memory log with an optional line-delimited file behind it. A record is
/// written and flushed before `append` returns.
pub struct EventLog {
    records: Vec<EventRecord>,
    file: Option<File>,
    path: Option<PathBuf>,
    observer: Option<Observer>,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog")
            .field("len", &self.records.len())
            .field("path", &self.path)
            .finish()
    }
}

impl Default for EventLog {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self {
            records: Vec::new(),
            file: None,
            path: None,
            observer: None,
        }
    }

    /// Creates a new log file; fails if one exists.
    pub fn create(path: &Path) -> Result<Self, EventLogError> {
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| EventLogError::Storage(format!("{}: {e}", path.display())))?;
        Ok(Self {
            records: Vec::new(),
            file: Some(file),
            path: Some(path.to_path_buf()),
            observer: None,
        })
    }

    /// Opens an existing log for appending. A torn last line (no trailing
    /// newline, left by a crash mid-write) is cut off.
    pub fn open(path: &Path) -> Result<Self, EventLogError> {
        let (records, valid_len) = read_file(path)?;
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(path)
            .map_err(storage)?;
        file.set_len(valid_len).map_err(storage)?;
        file.seek(SeekFrom::End(0)).map_err(storage)?;
        Ok(Self {
            records,
            file: Some(file),
            path: Some(path.to_path_buf()),
            observer: None,
        })
    }

    /// Reads a log without opening it for writing.
    pub fn load(path: &Path) -> Result<Vec<EventRecord>, EventLogError> {
        read_file(path).map(|(r, _)| r)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn set_observer(&mut self, f: impl FnMut(&EventRecord) + Send + 'static) {
        self.observer = Some(Box::new(f));
    }

    pub fn next_seq(&self) -> u64 {
        self.records.len() as u64 + 1
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records with `seq >= from`; empty past the end.
    pub fn read(&self, from: u64) -> &[EventRecord] {
        let start = (from.max(1) - 1).min(self.records.len() as u64) as usize;
        &self.records[start..]
    }

    pub fn append(&mut self, ts: Timepoint, event: &Event) -> Result<&EventRecord, EventLogError> {
        let rec = event.encode(self.next_seq(), ts);
        self.append_record(rec)
    }

    /// Appends a pre-built record; its seq must be the next one.
    pub fn append_record(&mut self, rec: EventRecord) -> Result<&EventRecord, EventLogError> {
        let expected = self.next_seq();
        if rec.seq != expected {
            return Err(EventLogError::SequenceViolation {
                expected,
                found: rec.seq,
            });
        }
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_string(&rec).expect("records serialize");
            line.push('\n');
            f.write_all(line.as_bytes()).map_err(storage)?;
            f.flush().map_err(storage)?;
        }
        if let Some(obs) = self.observer.as_mut() {
            obs(&rec);
        }
        self.records.push(rec);
        Ok(self.records.last().expect("just pushed"))
    }
}

fn read_file(path: &Path) -> Result<(Vec<EventRecord>, u64), EventLogError> {
    let f =
        File::open(path).map_err(|e| EventLogError::Storage(format!("{}: {e}", path.display())))?;
    let mut reader = BufReader::new(f);
    let mut records = Vec::new();
    let mut valid_len = 0u64;
    let mut line = String::new();
    let mut n = 0usize;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(storage)?;
        if read == 0 {
            break;
        }
        n += 1;
        if !line.ends_with('\n') {
            tracing::warn!(path = %path.display(), line = n, "dropping torn final record");
            break;
        }
        if line.trim().is_empty() {
            valid_len += read as u64;
            continue;
        }
        let rec: EventRecord = serde_json::from_str(&line).map_err(|e| EventLogError::Corrupt {
            path: path.display().to_string(),
            line: n,
            reason: e.to_string(),
        })?;
        let expected = records.len() as u64 + 1;
        if rec.seq != expected {
            return Err(EventLogError::SequenceViolation {
                expected,
                found: rec.seq,
            });
        }
        records.push(rec);
        valid_len += read as u64;
    }
    Ok((records, valid_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: u64) -> Event {
        Event::RunControl(RunControl::Resumed { from_seq: id })
    }

    #[test]
    fn encode_decode_round_trip() {
        let e = Event::RunControl(RunControl::StepAborted {
            ordinal: 3,
            error: "boom".into(),
        });
        let rec = e.encode(1, 10);
        assert_eq!(rec.kind, EventKind::RunControl);
        assert_eq!(rec.payload["control"], "step_aborted");
        assert_eq!(rec.decode().unwrap(), e);
    }

    #[test]
    fn dense_sequence_and_read_from() {
        let mut log = EventLog::in_memory();
        for i in 0..5 {
            log.append(i, &ev(i as u64)).unwrap();
        }
        assert_eq!(
            log.read(3).iter().map(|r| r.seq).collect::<Vec<_>>(),
            vec![3, 4, 5]
        );
        assert!(log.read(99).is_empty());
        assert_eq!(log.read(0).len(), 5);
        let bad = ev(0).encode(9, 0);
        assert!(matches!(
            log.append_record(bad),
            Err(EventLogError::SequenceViolation {
                expected: 6,
                found: 9
            })
        ));
    }

    #[test]
    fn file_round_trip_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        {
            let mut log = EventLog::create(&path).unwrap();
            for i in 0..3 {
                log.append(i, &ev(i as u64)).unwrap();
            }
        }
        assert!(EventLog::create(&path).is_err());
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":4,\"ts\":0,\"ki").unwrap();
        drop(f);
        let mut log = EventLog::open(&path).unwrap();
        assert_eq!(log.len(), 3);
        log.append(9, &ev(9)).unwrap();
        let back = EventLog::load(&path).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back[3].ts, 9);
    }

    #[test]
    fn observer_sees_appends() {
        let seen = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let s2 = seen.clone();
        let mut log = EventLog::in_memory();
        log.set_observer(move |r| s2.lock().unwrap().push(r.seq));
        log.append(0, &ev(1)).unwrap();
        log.append(0, &ev(2)).unwrap();
        assert_eq!(*seen.lock().unwrap(), vec![1, 2]);
    }
}
