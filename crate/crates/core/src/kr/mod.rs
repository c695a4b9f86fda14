//! Knowledge repository: item lifecycle, status lattice, scoring and retrieval.
//!
//! The repository is event-sourced. Every change is a [`KrMutation`]; callers
//! go through a [`KnowledgeWriter`], which validates the mutation against the
//! current state, hands it to its journal and only then applies it. Replaying
//! the journalled mutations in order rebuilds the same repository.

mod item;
mod scoring;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use item::{
    transition_allowed, ContentKind, ExemplarPayload, ItemMeta, Kid, KnowledgeContent,
    KnowledgeItem, Relation, Source, Status, TransitionCause,
};
pub use scoring::{
    composite_score, retrieval_order, select, ScoredItem, ScoringParams, SelectionMode,
};

use crate::events::{Event, EventRecord, RunControl};
use crate::Timepoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrError {
    #[error("invalid content: {0}")]
    ContentInvalid(String),
    #[error("unknown kid {0}")]
    UnknownKid(Kid),
    #[error("duplicate kid {0}")]
    DuplicateKid(Kid),
    #[error("invalid transition of {kid}: {from} -> {to}")]
    InvalidTransition { kid: Kid, from: Status, to: Status },
    #[error("superseding {kid} by {by} would create a supersession cycle")]
    SupersessionCycle { kid: Kid, by: Kid },
    #[error("clock skew on {kid}: now {now} is before ts_validated {validated}")]
    ClockSkew {
        kid: Kid,
        now: Timepoint,
        validated: Timepoint,
    },
    #[error("invalid scoring parameters: {0}")]
    InvalidParams(String),
    #[error("malformed event at seq {seq}: {reason}")]
    MalformedEvent { seq: u64, reason: String },
    #[error("non-monotone sequence: expected seq {expected}, found {found}")]
    NonMonotoneSequence { expected: u64, found: u64 },
    #[error("storage failure: {0}")]
    Storage(String),
}

/// One change to the repository, as journalled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum KrMutation {
    Add {
        item: KnowledgeItem,
        /// True when the kid came from the repository's counter.
        generated: bool,
    },
    Transition {
        kid: Kid,
        from: Status,
        to: Status,
        at: Timepoint,
        cause: TransitionCause,
    },
    Link {
        kid: Kid,
        other: Kid,
    },
    Annotate {
        kid: Kid,
        note: String,
    },
    Usage {
        kids: Vec<Kid>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Repository {
    run_id: String,
    next_counter: u64,
    items: BTreeMap<Kid, KnowledgeItem>,
}

impl Repository {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            next_counter: 1,
            items: BTreeMap::new(),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, kid: &str) -> Option<&KnowledgeItem> {
        self.items.get(kid)
    }

    pub fn items(&self) -> impl Iterator<Item = &KnowledgeItem> {
        self.items.values()
    }

    pub fn with_status(&self, status: Status) -> impl Iterator<Item = &KnowledgeItem> {
        self.items.values().filter(move |i| i.status == status)
    }

    /// Canonical serialization; two repositories are equal iff these bytes are.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("repository serializes")
    }

    fn next_kid(&self) -> Kid {
        if self.run_id.is_empty() {
            format!("k{:06}", self.next_counter)
        } else {
            format!("{}-k{:06}", self.run_id, self.next_counter)
        }
    }

    fn item(&self, kid: &str) -> Result<&KnowledgeItem, KrError> {
        self.items
            .get(kid)
            .ok_or_else(|| KrError::UnknownKid(kid.to_string()))
    }

    pub fn prepare_add(
        &self,
        content: KnowledgeContent,
        source: Source,
        now: Timepoint,
    ) -> Result<KrMutation, KrError> {
        content.validate()?;
        let item = KnowledgeItem {
            kid: self.next_kid(),
            content,
            ts_added: now,
            ts_validated: now,
            status: Status::Valid,
            meta: ItemMeta {
                source: Some(source),
                ..ItemMeta::default()
            },
        };
        Ok(KrMutation::Add {
            item,
            generated: true,
        })
    }

    /// Like [`Repository::prepare_add`] but with a caller-chosen kid, e.g. an
    /// identifier the expert gave.
    pub fn prepare_add_as(
        &self,
        kid: &str,
        content: KnowledgeContent,
        source: Source,
        now: Timepoint,
    ) -> Result<KrMutation, KrError> {
        if kid.trim().is_empty() {
            return Err(KrError::ContentInvalid("kid is empty".into()));
        }
        if self.items.contains_key(kid) {
            return Err(KrError::DuplicateKid(kid.to_string()));
        }
        match self.prepare_add(content, source, now)? {
            KrMutation::Add { mut item, .. } => {
                item.kid = kid.to_string();
                Ok(KrMutation::Add {
                    item,
                    generated: false,
                })
            }
            _ => unreachable!(),
        }
    }

    /// Seed items (KR0) keep their own kids and timestamps.
    pub fn prepare_seed(&self, item: KnowledgeItem) -> Result<KrMutation, KrError> {
        item.content.validate()?;
        if self.items.contains_key(&item.kid) {
            return Err(KrError::DuplicateKid(item.kid));
        }
        if item.ts_validated < item.ts_added {
            return Err(KrError::ContentInvalid(format!(
                "{}: ts_validated precedes ts_added",
                item.kid
            )));
        }
        if item.status == Status::Superseded {
            match &item.meta.superseded_by {
                Some(by) if self.items.contains_key(by) => {}
                _ => {
                    return Err(KrError::ContentInvalid(format!(
                        "{}: seeded as Superseded without an existing successor",
                        item.kid
                    )))
                }
            }
        }
        Ok(KrMutation::Add {
            item,
            generated: false,
        })
    }

    pub fn prepare_transition(
        &self,
        kid: &str,
        to: Status,
        now: Timepoint,
        cause: TransitionCause,
    ) -> Result<KrMutation, KrError> {
        let item = self.item(kid)?;
        if !transition_allowed(item.status, to, cause.override_) {
            return Err(KrError::InvalidTransition {
                kid: kid.to_string(),
                from: item.status,
                to,
            });
        }
        if now < item.ts_validated {
            return Err(KrError::ClockSkew {
                kid: kid.to_string(),
                now,
                validated: item.ts_validated,
            });
        }
        if to == Status::Superseded {
            let by = cause.other_kid.as_deref().ok_or_else(|| {
                KrError::ContentInvalid(format!("superseding {kid} requires the successor kid"))
            })?;
            self.item(by)?;
            if self.supersession_reaches(by, kid) {
                return Err(KrError::SupersessionCycle {
                    kid: kid.to_string(),
                    by: by.to_string(),
                });
            }
        }
        Ok(KrMutation::Transition {
            kid: kid.to_string(),
            from: item.status,
            to,
            at: now,
            cause,
        })
    }

    /// True if following superseded_by links from `start` reaches `target`.
    fn supersession_reaches(&self, start: &str, target: &str) -> bool {
        let mut seen = BTreeSet::new();
        let mut cur = Some(start.to_string());
        while let Some(k) = cur {
            if k == target {
                return true;
            }
            if !seen.insert(k.clone()) {
                return false;
            }
            cur = self
                .items
                .get(&k)
                .and_then(|i| i.meta.superseded_by.clone());
        }
        false
    }

    pub fn prepare_link(&self, kid: &str, other: &str) -> Result<KrMutation, KrError> {
        self.item(kid)?;
        self.item(other)?;
        Ok(KrMutation::Link {
            kid: kid.to_string(),
            other: other.to_string(),
        })
    }

    pub fn prepare_annotate(&self, kid: &str, note: &str) -> Result<KrMutation, KrError> {
        self.item(kid)?;
        Ok(KrMutation::Annotate {
            kid: kid.to_string(),
            note: note.to_string(),
        })
    }

    /// Scores every item and selects the retrieval subset. Read-only; usage
    /// counting happens in [`KnowledgeWriter::retrieve_subset`].
    pub fn score_subset(
        &self,
        mut relevance: impl FnMut(&KnowledgeItem) -> f64,
        now: Timepoint,
        params: &ScoringParams,
    ) -> Result<Vec<ScoredItem>, KrError> {
        let scored = self
            .items
            .values()
            .map(|item| composite_score(item, relevance(item), now, params))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(select(scored, params))
    }

    /// Applies a mutation after re-checking it against the current state.
    pub fn apply(&mut self, m: &KrMutation) -> Result<(), KrError> {
        match m {
            KrMutation::Add { item, generated } => {
                item.content.validate()?;
                if self.items.contains_key(&item.kid) {
                    return Err(KrError::DuplicateKid(item.kid.clone()));
                }
                if *generated {
                    self.next_counter += 1;
                }
                self.items.insert(item.kid.clone(), item.clone());
            }
            KrMutation::Transition {
                kid,
                from,
                to,
                at,
                cause,
            } => {
                let checked = self.prepare_transition(kid, *to, *at, cause.clone())?;
                if let KrMutation::Transition { from: actual, .. } = checked {
                    if actual != *from {
                        return Err(KrError::InvalidTransition {
                            kid: kid.clone(),
                            from: actual,
                            to: *to,
                        });
                    }
                }
                let item = self.items.get_mut(kid).expect("checked above");
                item.status = *to;
                item.ts_validated = *at;
                if *to == Status::Superseded {
                    item.meta.superseded_by = cause.other_kid.clone();
                }
            }
            KrMutation::Link { kid, other } => {
                self.item(other)?;
                let item = self
                    .items
                    .get_mut(kid)
                    .ok_or_else(|| KrError::UnknownKid(kid.clone()))?;
                if !item.meta.links.contains(other) {
                    item.meta.links.push(other.clone());
                }
            }
            KrMutation::Annotate { kid, note } => {
                let item = self
                    .items
                    .get_mut(kid)
                    .ok_or_else(|| KrError::UnknownKid(kid.clone()))?;
                item.meta.notes.push(note.clone());
            }
            KrMutation::Usage { kids } => {
                for kid in kids {
                    self.item(kid)?;
                }
                for kid in kids {
                    self.items.get_mut(kid).expect("checked").meta.usage_count += 1;
                }
            }
        }
        Ok(())
    }

    /// Rebuilds a repository from a run log (or any prefix of one).
    pub fn replay_from_log(events: &[EventRecord]) -> Result<Repository, KrError> {
        let mut repo = Repository {
            next_counter: 1,
            ..Default::default()
        };
        for (expected, rec) in (1..).zip(events) {
            if rec.seq != expected {
                return Err(KrError::NonMonotoneSequence {
                    expected,
                    found: rec.seq,
                });
            }
            let event = rec.decode().map_err(|e| KrError::MalformedEvent {
                seq: rec.seq,
                reason: e.to_string(),
            })?;
            match event {
                Event::RunControl(RunControl::Started(start)) => repo.run_id = start.run_id,
                Event::KrMutation(m) => repo.apply(&m).map_err(|e| KrError::MalformedEvent {
                    seq: rec.seq,
                    reason: e.to_string(),
                })?,
                _ => {}
            }
        }
        Ok(repo)
    }
}

/// Write access to a repository. `commit` must journal the mutation before
/// applying it; the provided operations validate first, so a failed call
/// leaves both the journal and the repository untouched.
pub trait KnowledgeWriter {
    fn kr(&self) -> &Repository;
    fn commit(&mut self, at: Timepoint, m: KrMutation) -> Result<(), KrError>;

    fn add_item(
        &mut self,
        content: KnowledgeContent,
        source: Source,
        now: Timepoint,
    ) -> Result<Kid, KrError> {
        let m = self.kr().prepare_add(content, source, now)?;
        let kid = match &m {
            KrMutation::Add { item, .. } => item.kid.clone(),
            _ => unreachable!(),
        };
        self.commit(now, m)?;
        Ok(kid)
    }

    fn add_item_as(
        &mut self,
        kid: &str,
        content: KnowledgeContent,
        source: Source,
        now: Timepoint,
    ) -> Result<Kid, KrError> {
        let m = self.kr().prepare_add_as(kid, content, source, now)?;
        self.commit(now, m)?;
        Ok(kid.to_string())
    }

    fn seed_item(&mut self, item: KnowledgeItem) -> Result<(), KrError> {
        let at = item.ts_added;
        let m = self.kr().prepare_seed(item)?;
        self.commit(at, m)
    }

    fn transition_status(
        &mut self,
        kid: &str,
        to: Status,
        now: Timepoint,
        cause: TransitionCause,
    ) -> Result<KnowledgeItem, KrError> {
        let m = self.kr().prepare_transition(kid, to, now, cause)?;
        self.commit(now, m)?;
        Ok(self
            .kr()
            .get(kid)
            .expect("transitioned item exists")
            .clone())
    }

    fn link(&mut self, kid: &str, other: &str, now: Timepoint) -> Result<(), KrError> {
        let m = self.kr().prepare_link(kid, other)?;
        self.commit(now, m)
    }

    fn annotate(&mut self, kid: &str, note: &str, now: Timepoint) -> Result<(), KrError> {
        let m = self.kr().prepare_annotate(kid, note)?;
        self.commit(now, m)
    }

    /// Scores, selects and bumps usage counts of the returned items.
    fn retrieve_subset(
        &mut self,
        relevance: &mut dyn FnMut(&KnowledgeItem) -> f64,
        now: Timepoint,
        params: &ScoringParams,
    ) -> Result<Vec<ScoredItem>, KrError> {
        let selected = self.kr().score_subset(relevance, now, params)?;
        if !selected.is_empty() {
            let kids = selected.iter().map(|s| s.item.kid.clone()).collect();
            self.commit(now, KrMutation::Usage { kids })?;
        }
        Ok(selected)
    }
}

/// A bare repository is its own writer with no journal.
impl KnowledgeWriter for Repository {
    fn kr(&self) -> &Repository {
        self
    }

    fn commit(&mut self, _at: Timepoint, m: KrMutation) -> Result<(), KrError> {
        self.apply(&m)
    }
}

/// Applies mutations to a scratch copy and remembers them, so a batch can be
/// checked in isolation and then committed to the real writer as a unit.
#[derive(Debug, Clone)]
pub struct Staged {
    repo: Repository,
    staged: Vec<(Timepoint, KrMutation)>,
}

impl Staged {
    pub fn new(base: &Repository) -> Self {
        Self {
            repo: base.clone(),
            staged: Vec::new(),
        }
    }

    pub fn into_mutations(self) -> Vec<(Timepoint, KrMutation)> {
        self.staged
    }
}

impl KnowledgeWriter for Staged {
    fn kr(&self) -> &Repository {
        &self.repo
    }

    fn commit(&mut self, at: Timepoint, m: KrMutation) -> Result<(), KrError> {
        self.repo.apply(&m)?;
        self.staged.push((at, m));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(text: &str) -> KnowledgeContent {
        KnowledgeContent::rule(text)
    }

    #[test]
    fn add_item_starts_valid_with_both_timestamps() {
        let mut repo = Repository::new("r1");
        let kid = repo
            .add_item(
                rule("Month/Year DOB match sufficient for PEP L3"),
                Source::Human,
                1000,
            )
            .unwrap();
        let item = repo.get(&kid).unwrap();
        assert_eq!(item.status, Status::Valid);
        assert_eq!(item.ts_added, 1000);
        assert_eq!(item.ts_validated, 1000);
        assert_eq!(item.meta.usage_count, 0);
    }

    #[test]
    fn empty_text_is_rejected() {
        let mut repo = Repository::new("r1");
        assert!(matches!(
            repo.add_item(rule("   "), Source::Human, 1),
            Err(KrError::ContentInvalid(_))
        ));
        assert!(repo.is_empty());
    }

    #[test]
    fn exemplar_payload_iff_exemplar_kind() {
        let payload = ExemplarPayload {
            instance_snapshot: "x".into(),
            label: "Match".into(),
            reason: "r".into(),
        };
        let mut bad = KnowledgeContent::rule("r");
        bad.exemplar = Some(payload.clone());
        assert!(bad.validate().is_err());
        let mut missing = KnowledgeContent::exemplar("e", payload);
        missing.exemplar = None;
        assert!(missing.validate().is_err());
    }

    #[test]
    fn same_timepoint_adds_get_distinct_kids() {
        let mut repo = Repository::new("r1");
        let a = repo.add_item(rule("a"), Source::Human, 5).unwrap();
        let b = repo.add_item(rule("b"), Source::Human, 5).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn supersede_links_and_revalidates() {
        let mut repo = Repository::new("r1");
        let old = repo.add_item(rule("old"), Source::Human, 10).unwrap();
        let new = repo.add_item(rule("new"), Source::Human, 20).unwrap();
        let item = repo
            .transition_status(
                &old,
                Status::Superseded,
                30,
                TransitionCause::new(Relation::Supersedes, Some(new.clone())),
            )
            .unwrap();
        assert_eq!(item.meta.superseded_by.as_deref(), Some(new.as_str()));
        assert_eq!(item.ts_validated, 30);
        assert_eq!(item.status_label(), format!("Superseded by {new}"));
    }

    #[test]
    fn superseded_is_terminal() {
        let mut repo = Repository::new("r1");
        let old = repo.add_item(rule("old"), Source::Human, 10).unwrap();
        let new = repo.add_item(rule("new"), Source::Human, 10).unwrap();
        repo.transition_status(
            &old,
            Status::Superseded,
            11,
            TransitionCause::new(Relation::Supersedes, Some(new)),
        )
        .unwrap();
        let err = repo
            .transition_status(
                &old,
                Status::Valid,
                12,
                TransitionCause::new(Relation::Consistent, None).with_override(),
            )
            .unwrap_err();
        assert!(matches!(err, KrError::InvalidTransition { .. }));
    }

    #[test]
    fn override_revalidates_potentially_outdated() {
        let mut repo = Repository::new("r1");
        let kid = repo.add_item(rule("old"), Source::Human, 10).unwrap();
        repo.transition_status(
            &kid,
            Status::PotentiallyOutdated,
            20,
            TransitionCause::new(Relation::Ambiguous, None),
        )
        .unwrap();
        let no_override = repo.transition_status(
            &kid,
            Status::Valid,
            30,
            TransitionCause::new(Relation::Consistent, None),
        );
        assert!(no_override.is_err());
        let item = repo
            .transition_status(
                &kid,
                Status::Valid,
                30,
                TransitionCause::new(Relation::Consistent, None).with_override(),
            )
            .unwrap();
        assert_eq!(item.status, Status::Valid);
        assert_eq!(item.ts_validated, 30);
    }

    #[test]
    fn supersession_cycles_are_rejected() {
        let mut repo = Repository::new("r1");
        let a = repo.add_item(rule("a"), Source::Human, 1).unwrap();
        let b = repo.add_item(rule("b"), Source::Human, 1).unwrap();
        repo.transition_status(
            &b,
            Status::Superseded,
            2,
            TransitionCause::new(Relation::Supersedes, Some(a.clone())),
        )
        .unwrap();
        let err = repo
            .transition_status(
                &a,
                Status::Superseded,
                3,
                TransitionCause::new(Relation::Supersedes, Some(b)),
            )
            .unwrap_err();
        assert!(matches!(err, KrError::SupersessionCycle { .. }));
        let self_loop = repo.transition_status(
            &a,
            Status::Superseded,
            3,
            TransitionCause::new(Relation::Supersedes, Some(a.clone())),
        );
        assert!(self_loop.is_err());
    }

    #[test]
    fn unknown_kid() {
        let mut repo = Repository::new("r1");
        assert!(matches!(
            repo.transition_status(
                "nope",
                Status::PotentiallyOutdated,
                1,
                TransitionCause::new(Relation::Contradicts, None)
            ),
            Err(KrError::UnknownKid(_))
        ));
    }

    #[test]
    fn retrieval_counts_usage_and_empty_repo_is_empty() {
        let mut repo = Repository::new("r1");
        let params = ScoringParams::default();
        assert!(repo
            .retrieve_subset(&mut |_| 1.0, 0, &params)
            .unwrap()
            .is_empty());
        let kid = repo.add_item(rule("a"), Source::Human, 0).unwrap();
        let got = repo.retrieve_subset(&mut |_| 0.5, 10, &params).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(repo.get(&kid).unwrap().meta.usage_count, 1);
    }

    #[test]
    fn staged_batch_leaves_base_untouched() {
        let mut repo = Repository::new("r1");
        repo.add_item(rule("a"), Source::Human, 0).unwrap();
        let mut staged = Staged::new(&repo);
        staged.add_item(rule("b"), Source::Human, 1).unwrap();
        assert_eq!(repo.len(), 1);
        for (at, m) in staged.into_mutations() {
            repo.commit(at, m).unwrap();
        }
        assert_eq!(repo.len(), 2);
    }
}
