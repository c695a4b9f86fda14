use std::fmt;

use serde::{Deserialize, Serialize};

use super::KrError;
use crate::Timepoint;

pub type Kid = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentKind {
    Rule,
    Explanation,
    Fact,
    Exemplar,
}

impl ContentKind {
    pub const ALL: [ContentKind; 4] = [
        ContentKind::Rule,
        ContentKind::Explanation,
        ContentKind::Fact,
        ContentKind::Exemplar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContentKind::Rule => "rule",
            ContentKind::Explanation => "explanation",
            ContentKind::Fact => "fact",
            ContentKind::Exemplar => "exemplar",
        }
    }

    pub fn parse(s: &str) -> Option<ContentKind> {
        ContentKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

/// A stored case: the instance as the agent saw it, its label and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarPayload {
    pub instance_snapshot: String,
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeContent {
    pub kind: ContentKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplar: Option<ExemplarPayload>,
}

impl KnowledgeContent {
    pub fn rule(text: impl Into<String>) -> Self {
        Self::plain(ContentKind::Rule, text)
    }

    pub fn explanation(text: impl Into<String>) -> Self {
        Self::plain(ContentKind::Explanation, text)
    }

    pub fn fact(text: impl Into<String>) -> Self {
        Self::plain(ContentKind::Fact, text)
    }

    pub fn exemplar(text: impl Into<String>, payload: ExemplarPayload) -> Self {
        Self {
            kind: ContentKind::Exemplar,
            text: text.into(),
            exemplar: Some(payload),
        }
    }

    fn plain(kind: ContentKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
            exemplar: None,
        }
    }

    pub fn validate(&self) -> Result<(), KrError> {
        if self.text.trim().is_empty() {
            return Err(KrError::ContentInvalid("text is empty".into()));
        }
        match (self.kind, &self.exemplar) {
            (ContentKind::Exemplar, None) => Err(KrError::ContentInvalid(
                "exemplar content requires an exemplar payload".into(),
            )),
            (ContentKind::Exemplar, Some(_)) => Ok(()),
            (_, Some(_)) => Err(KrError::ContentInvalid(format!(
                "{} content must not carry an exemplar payload",
                self.kind.as_str()
            ))),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    Valid,
    PotentiallyOutdated,
    Superseded,
}

impl Status {
    pub const ALL: [Status; 3] = [
        Status::Valid,
        Status::PotentiallyOutdated,
        Status::Superseded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Valid => "Valid",
            Status::PotentiallyOutdated => "PotentiallyOutdated",
            Status::Superseded => "Superseded",
        }
    }

    pub fn parse(s: &str) -> Option<Status> {
        Status::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Human,
    LlmOracle,
    SelfDerived,
}

/// How a new assertion relates to an existing item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Contradicts,
    Supersedes,
    Updates,
    Consistent,
    Ambiguous,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::Contradicts,
        Relation::Supersedes,
        Relation::Updates,
        Relation::Consistent,
        Relation::Ambiguous,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Contradicts => "contradicts",
            Relation::Supersedes => "supersedes",
            Relation::Updates => "updates",
            Relation::Consistent => "consistent",
            Relation::Ambiguous => "ambiguous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ItemMeta {
    pub source: Option<Source>,
    pub usage_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superseded_by: Option<Kid>,
    #[serde(default)]
    pub links: Vec<Kid>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub kid: Kid,
    pub content: KnowledgeContent,
    pub ts_added: Timepoint,
    pub ts_validated: Timepoint,
    pub status: Status,
    pub meta: ItemMeta,
}

impl KnowledgeItem {
    /// Status line as shown to experts, e.g. `Superseded by Rule_123`.
    pub fn status_label(&self) -> String {
        match (&self.status, &self.meta.superseded_by) {
            (Status::Superseded, Some(by)) => format!("Superseded by {by}"),
            (st, _) => st.to_string(),
        }
    }
}

/// Why a status transition happened. Recorded verbatim in the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCause {
    pub relation: Relation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other_kid: Option<Kid>,
    #[serde(rename = "override", default)]
    pub override_: bool,
}

impl TransitionCause {
    pub fn new(relation: Relation, other_kid: Option<Kid>) -> Self {
        Self {
            relation,
            other_kid,
            override_: false,
        }
    }

    pub fn with_override(mut self) -> Self {
        self.override_ = true;
        self
    }
}

/// The status lattice. Superseded is terminal; PotentiallyOutdated can only be
/// re-validated by an explicit override (a clarification answer).
pub fn transition_allowed(from: Status, to: Status, override_: bool) -> bool {
    use Status::*;
    matches!(
        (from, to, override_),
        (Valid, PotentiallyOutdated, _)
            | (Valid, Superseded, _)
            | (PotentiallyOutdated, Superseded, _)
            | (PotentiallyOutdated, Valid, true)
    )
}
