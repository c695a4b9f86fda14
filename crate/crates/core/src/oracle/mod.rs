//! The expert oracle: scripted ground truth, an LLM-simulated expert, and a
//! live human answering through a query queue.

mod human;
mod llm;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use human::{
    AnswerSubmission, HumanOracle, PendingQuery, PendingStatus, QueryQueue, QueueError,
};
pub use llm::LlmOracle;
pub use scripted::{
    ClarificationScript, PhaseVersion, ScriptedOracle, ScriptedOracleTable, TruthRecord,
};

use crate::harness::Instance;
use crate::igs::{Query, QueryKind};
use crate::llm::{parse_choice, LlmError};
use crate::Timepoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    Scripted,
    Llm,
    Human,
}

/// Outcome an expert picks for a clarification question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// The new item replaces the old one everywhere.
    SupersedeGenerally,
    /// The new item is an exception; the old one stays under review.
    ConditionalOnly,
    /// The old item still holds.
    KeepOld,
}

impl Resolution {
    pub const ALL: [Resolution; 3] = [
        Resolution::SupersedeGenerally,
        Resolution::ConditionalOnly,
        Resolution::KeepOld,
    ];
    pub const OPTIONS: [&'static str; 3] = [
        "new supersedes old generally",
        "conditional only",
        "keep old",
    ];

    /// Reads a resolution out of free text; `None` if nothing recognizable.
    pub fn from_text(text: &str) -> Option<Resolution> {
        parse_choice(text, &Self::OPTIONS)
            .ok()
            .map(|i| Self::ALL[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFeedback {
    pub qid: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub answered_at: Timepoint,
    pub source: FeedbackSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
}

impl OracleFeedback {
    /// Label answers carry a label; every other kind carries text.
    pub fn check(&self, kind: QueryKind) -> Result<(), String> {
        match kind {
            QueryKind::AskLabel if self.label.is_none() => {
                Err(format!("{}: a label answer must name a label", self.qid))
            }
            QueryKind::AskClarification if self.resolution.is_some() => Ok(()),
            QueryKind::AskLabel => Ok(()),
            _ if self.text.trim().is_empty() => {
                Err(format!("{}: answer text must not be empty", self.qid))
            }
            _ => Ok(()),
        }
    }

    pub fn resolution(&self) -> Option<Resolution> {
        self.resolution
            .or_else(|| Resolution::from_text(&self.text))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleRequest<'a> {
    pub instance: &'a Instance,
    pub query: &'a Query,
    pub now: Timepoint,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("no ground truth for instance {0}")]
    MissingGroundTruth(String),
    #[error("oracle unavailable: {0}")]
    Unavailable(String),
    #[error("query {0} timed out")]
    Timeout(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

pub trait Oracle: Send + Sync {
    fn answer(&self, req: &OracleRequest<'_>) -> Result<OracleFeedback, OracleError>;

    /// Called when a run resumes with this query unanswered.
    fn reissue(&self, req: &OracleRequest<'_>) -> Result<OracleFeedback, OracleError> {
        self.answer(req)
    }
}

impl<O: Oracle + ?Sized> Oracle for std::sync::Arc<O> {
    fn answer(&self, req: &OracleRequest<'_>) -> Result<OracleFeedback, OracleError> {
        (**self).answer(req)
    }

    fn reissue(&self, req: &OracleRequest<'_>) -> Result<OracleFeedback, OracleError> {
        (**self).reissue(req)
    }
}
