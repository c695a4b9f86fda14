//! Knowledge adaptation from expert feedback: assertion extraction, relation
//! classification, integration with conflict handling, and clarifications.

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{Instance, LabelSpace};
use crate::igs::{ConflictPair, Query, QueryKind};
use crate::kr::{
    ContentKind, ExemplarPayload, Kid, KnowledgeContent, KnowledgeWriter, KrError, Relation,
    Source, Staged, Status, TransitionCause,
};
use crate::llm::{option_letter, parse_choice, ChatRequest, LlmError, LlmProvider};
use crate::oracle::{OracleFeedback, Resolution};
use crate::prompts::{PromptError, PromptSet, Vars};
use crate::similarity::{Embedder, SimilarityError};
use crate::Timepoint;

#[derive(Debug, Error)]
pub enum HgkaError {
    #[error("feedback for {0} is empty")]
    EmptyFeedback(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Kr(#[from] KrError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub qid: String,
    pub excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub kind: ContentKind,
    pub text: String,
    /// Identifier the expert attached, used as the kid when it is free.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplar: Option<ExemplarPayload>,
    pub derived_from: Provenance,
}

impl Assertion {
    pub fn content(&self) -> KnowledgeContent {
        KnowledgeContent {
            kind: self.kind,
            text: self.text.clone(),
            exemplar: self.exemplar.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractContext<'a> {
    pub instance: &'a Instance,
    pub preliminary: &'a str,
    pub query: &'a Query,
    pub labels: &'a LabelSpace,
}

fn excerpt(text: &str) -> String {
    let t: String = text.chars().take(200).collect();
    t.trim().to_string()
}

fn exemplar_payload(ctx: &ExtractContext<'_>, label: &str, reason: &str) -> ExemplarPayload {
    ExemplarPayload {
        instance_snapshot: ctx.instance.render(),
        label: label.to_string(),
        reason: reason.to_string(),
    }
}

/// Parses `N. [kind] text` / `N. [kind:Id] text` lines. `None` when nothing
/// parses; `Some(vec![])` for an explicit `NONE`.
pub fn parse_assertion_lines(reply: &str) -> Option<Vec<(ContentKind, Option<String>, String)>> {
    static LINE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = LINE.get_or_init(|| {
        Regex::new(r"^\s*\d+\s*[.)]\s*\[\s*([A-Za-z]+)\s*(?::\s*([^\]]+?)\s*)?\]\s*(.+?)\s*$")
            .expect("valid regex")
    });
    if reply.trim().eq_ignore_ascii_case("none") {
        return Some(Vec::new());
    }
    let items: Vec<_> = reply
        .lines()
        .filter_map(|l| re.captures(l))
        .filter_map(|c| {
            let kind = ContentKind::parse(&c[1])?;
            Some((
                kind,
                c.get(2).map(|m| m.as_str().to_string()),
                c[3].to_string(),
            ))
        })
        .collect();
    (!items.is_empty()).then_some(items)
}

/// Label answers become one exemplar directly; other feedback goes through
/// the extraction prompt, falling back to one verbatim explanation.
pub fn extract_assertions(
    feedback: &OracleFeedback,
    ctx: &ExtractContext<'_>,
    prompts: &PromptSet,
    llm: &dyn LlmProvider,
) -> Result<Vec<Assertion>, HgkaError> {
    let provenance = Provenance {
        qid: feedback.qid.clone(),
        excerpt: excerpt(&feedback.text),
    };
    if ctx.query.kind == QueryKind::AskLabel {
        if let Some(label) = &feedback.label {
            let reason = if feedback.text.trim().is_empty() {
                format!("expert label {label}")
            } else {
                feedback.text.trim().to_string()
            };
            let one_line = ctx.instance.render().replace('\n', "; ");
            return Ok(vec![Assertion {
                kind: ContentKind::Exemplar,
                text: format!("Case ({one_line}) is {label}."),
                ref_id: None,
                exemplar: Some(exemplar_payload(ctx, label, &reason)),
                derived_from: provenance,
            }]);
        }
    }
    if feedback.text.trim().is_empty() {
        return Err(HgkaError::EmptyFeedback(feedback.qid.clone()));
    }
    let kinds = ContentKind::ALL.map(|k| k.as_str()).join(", ");
    let r = prompts.extract.render(
        &Vars::new()
            .set("feedback", feedback.text.clone())
            .set("instance", ctx.instance.render())
            .set("label", ctx.preliminary)
            .set("query", ctx.query.payload.prompt.clone())
            .set("kinds", kinds),
    )?;
    let req = ChatRequest::new(r.system, r.user).with_schema_hint(prompts.extract_schema.clone());
    let reply = llm.complete(&req)?.text;
    let Some(lines) = parse_assertion_lines(&reply) else {
        tracing::warn!(qid = %feedback.qid, "extraction unparseable, keeping feedback verbatim");
        return Ok(vec![Assertion {
            kind: ContentKind::Explanation,
            text: feedback.text.trim().to_string(),
            ref_id: None,
            exemplar: None,
            derived_from: provenance,
        }]);
    };
    Ok(lines
        .into_iter()
        .map(|(kind, ref_id, text)| {
            let exemplar = (kind == ContentKind::Exemplar).then(|| {
                let label = feedback
                    .label
                    .clone()
                    .or_else(|| {
                        parse_choice(&text, &ctx.labels.labels)
                            .ok()
                            .map(|i| ctx.labels.labels[i].clone())
                    })
                    .unwrap_or_else(|| ctx.preliminary.to_string());
                exemplar_payload(ctx, &label, &text)
            });
            Assertion {
                kind,
                text,
                ref_id,
                exemplar,
                derived_from: provenance.clone(),
            }
        })
        .collect())
}

fn normalized(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn relation_options() -> String {
    Relation::ALL
        .iter()
        .enumerate()
        .map(|(i, r)| format!("[{}] {}", option_letter(i), r.as_str()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Identical texts are consistent without a model call; unparseable answers
/// are ambiguous.
pub fn classify_relation(
    new_text: &str,
    old_text: &str,
    prompts: &PromptSet,
    llm: &dyn LlmProvider,
) -> Result<Relation, HgkaError> {
    if normalized(new_text) == normalized(old_text) {
        return Ok(Relation::Consistent);
    }
    let r = prompts.compare.render(
        &Vars::new()
            .set("new", new_text)
            .set("old", old_text)
            .set("options", relation_options()),
    )?;
    let reply = llm.complete(&ChatRequest::new(r.system, r.user))?.text;
    let labels = Relation::ALL.map(|r| r.as_str());
    Ok(match parse_choice(&reply, &labels) {
        Ok(i) => Relation::ALL[i],
        Err(_) => Relation::Ambiguous,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationParams {
    pub tau_sim: f64,
    pub max_candidates: usize,
    /// Off reproduces the "no conflict resolution" ablation: items are added
    /// but never compared.
    pub resolve_conflicts: bool,
    pub allow_clarifications: bool,
    pub source: Source,
}

impl Default for IntegrationParams {
    fn default() -> Self {
        Self {
            tau_sim: 0.35,
            max_candidates: 10,
            resolve_conflicts: true,
            allow_clarifications: true,
            source: Source::Human,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub reason: String,
    pub payload: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationReport {
    pub new_kids: Vec<Kid>,
    pub superseded: Vec<(Kid, Kid)>,
    pub flagged_outdated: Vec<Kid>,
    pub linked: Vec<(Kid, Kid)>,
    pub relations: Vec<(Kid, Kid, Relation, f64)>,
    pub clarifications: Vec<Query>,
    pub skipped: Vec<Skipped>,
}

/// What integration needs from its caller besides repository writes.
pub trait IntegrationHost: KnowledgeWriter {
    /// Issues a clarification if the budget has room for it.
    fn issue_clarification(
        &mut self,
        pair: ConflictPair,
        now: Timepoint,
    ) -> Result<Option<Query>, HgkaError>;
}

struct Planned {
    report: IntegrationReport,
    clarify: Vec<ConflictPair>,
}

#[allow(clippy::too_many_arguments)]
fn plan_assertion(
    staged: &mut Staged,
    assertion: &Assertion,
    siblings: &[Kid],
    now: Timepoint,
    llm: &dyn LlmProvider,
    embedder: &dyn Embedder,
    prompts: &PromptSet,
    params: &IntegrationParams,
) -> Result<Planned, HgkaError> {
    let mut report = IntegrationReport::default();
    let mut clarify = Vec::new();
    let content = assertion.content();
    let kid = match assertion.ref_id.as_deref() {
        Some(id) if staged.kr().get(id).is_none() => {
            staged.add_item_as(id, content.clone(), params.source, now)?
        }
        _ => staged.add_item(content.clone(), params.source, now)?,
    };
    report.new_kids.push(kid.clone());
    if !params.resolve_conflicts {
        return Ok(Planned { report, clarify });
    }
    let new_vec = embedder.embed(&content.text)?;
    let mut candidates = Vec::new();
    for item in staged.kr().items() {
        if item.kid == kid || item.status == Status::Superseded || siblings.contains(&item.kid) {
            continue;
        }
        let s = crate::similarity::cosine(&new_vec, &embedder.embed(&item.content.text)?)?;
        if s > params.tau_sim {
            candidates.push((s, item.kid.clone(), item.content.text.clone()));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    candidates.truncate(params.max_candidates);
    for (sim, old_kid, old_text) in candidates {
        let relation = classify_relation(&content.text, &old_text, prompts, llm)?;
        report
            .relations
            .push((kid.clone(), old_kid.clone(), relation, sim));
        let old_status = staged.kr().get(&old_kid).map(|i| i.status);
        let cause = TransitionCause::new(relation, Some(kid.clone()));
        match relation {
            Relation::Supersedes | Relation::Updates => {
                staged.transition_status(&old_kid, Status::Superseded, now, cause)?;
                staged.link(&kid, &old_kid, now)?;
                report.superseded.push((old_kid, kid.clone()));
            }
            Relation::Contradicts => {
                if old_status == Some(Status::Valid) {
                    staged.transition_status(&old_kid, Status::PotentiallyOutdated, now, cause)?;
                    report.flagged_outdated.push(old_kid);
                }
            }
            Relation::Consistent => {
                staged.link(&kid, &old_kid, now)?;
                staged.link(&old_kid, &kid, now)?;
                report.linked.push((kid.clone(), old_kid));
            }
            Relation::Ambiguous => {
                if old_status == Some(Status::Valid) {
                    staged.transition_status(&old_kid, Status::PotentiallyOutdated, now, cause)?;
                    report.flagged_outdated.push(old_kid.clone());
                }
                clarify.push(ConflictPair {
                    old_kid,
                    old_text,
                    new_kid: kid.clone(),
                    new_text: content.text.clone(),
                });
            }
        }
    }
    Ok(Planned { report, clarify })
}

fn merge(into: &mut IntegrationReport, from: IntegrationReport) {
    into.new_kids.extend(from.new_kids);
    into.superseded.extend(from.superseded);
    into.flagged_outdated.extend(from.flagged_outdated);
    into.linked.extend(from.linked);
    into.relations.extend(from.relations);
    into.clarifications.extend(from.clarifications);
    into.skipped.extend(from.skipped);
}

/// Adds each assertion and resolves it against similar existing items. Each
/// assertion is planned on a scratch copy and committed as a unit; a
/// repository error skips that assertion only. Model errors abort.
#[allow(clippy::too_many_arguments)]
pub fn integrate_feedback(
    host: &mut dyn IntegrationHost,
    assertions: &[Assertion],
    now: Timepoint,
    llm: &dyn LlmProvider,
    embedder: &dyn Embedder,
    prompts: &PromptSet,
    params: &IntegrationParams,
) -> Result<IntegrationReport, HgkaError> {
    let mut report = IntegrationReport::default();
    let mut siblings: Vec<Kid> = Vec::new();
    for a in assertions {
        let mut staged = Staged::new(host.kr());
        let planned = match plan_assertion(
            &mut staged,
            a,
            &siblings,
            now,
            llm,
            embedder,
            prompts,
            params,
        ) {
            Ok(p) => p,
            Err(HgkaError::Kr(e)) => {
                report.skipped.push(Skipped {
                    reason: e.to_string(),
                    payload: a.text.clone(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        for (at, m) in staged.into_mutations() {
            host.commit(at, m)?;
        }
        siblings.extend(planned.report.new_kids.iter().cloned());
        merge(&mut report, planned.report);
        for pair in planned.clarify {
            let issued = if params.allow_clarifications {
                host.issue_clarification(pair.clone(), now)?
            } else {
                None
            };
            match issued {
                Some(q) => report.clarifications.push(q),
                None => report.skipped.push(Skipped {
                    reason: if params.allow_clarifications {
                        "no budget for clarification".into()
                    } else {
                        "clarification depth reached".into()
                    },
                    payload: serde_json::to_string(&pair).expect("pair serializes"),
                }),
            }
        }
    }
    Ok(report)
}

/// Applies an expert's clarification choice to the conflicting pair. Without
/// a recognizable choice the new item is treated as a conditional exception.
pub fn apply_clarification(
    host: &mut dyn IntegrationHost,
    pair: &ConflictPair,
    feedback: &OracleFeedback,
    now: Timepoint,
) -> Result<(Resolution, IntegrationReport), HgkaError> {
    let resolution = feedback.resolution().unwrap_or(Resolution::ConditionalOnly);
    let mut report = IntegrationReport::default();
    let Some(old) = host.kr().get(&pair.old_kid).cloned() else {
        return Err(KrError::UnknownKid(pair.old_kid.clone()).into());
    };
    if old.status == Status::Superseded {
        report.skipped.push(Skipped {
            reason: format!("{} is already superseded", old.kid),
            payload: feedback.text.clone(),
        });
        return Ok((resolution, report));
    }
    match resolution {
        Resolution::SupersedeGenerally => {
            host.transition_status(
                &old.kid,
                Status::Superseded,
                now,
                TransitionCause::new(Relation::Supersedes, Some(pair.new_kid.clone())),
            )?;
            host.link(&pair.new_kid, &old.kid, now)?;
            report
                .superseded
                .push((old.kid.clone(), pair.new_kid.clone()));
        }
        Resolution::ConditionalOnly => {
            if old.status == Status::Valid {
                host.transition_status(
                    &old.kid,
                    Status::PotentiallyOutdated,
                    now,
                    TransitionCause::new(Relation::Ambiguous, Some(pair.new_kid.clone())),
                )?;
                report.flagged_outdated.push(old.kid.clone());
            }
            host.annotate(
                &old.kid,
                &format!(
                    "does not apply where {} applies: {}",
                    pair.new_kid,
                    feedback.text.trim()
                ),
                now,
            )?;
            host.link(&old.kid, &pair.new_kid, now)?;
            report.linked.push((old.kid.clone(), pair.new_kid.clone()));
        }
        Resolution::KeepOld => {
            if old.status == Status::PotentiallyOutdated {
                host.transition_status(
                    &old.kid,
                    Status::Valid,
                    now,
                    TransitionCause::new(Relation::Consistent, Some(pair.new_kid.clone()))
                        .with_override(),
                )?;
            }
            host.link(&old.kid, &pair.new_kid, now)?;
            report.linked.push((old.kid.clone(), pair.new_kid.clone()));
        }
    }
    Ok((resolution, report))
}

/// Host over a bare repository with a fixed clarification allowance, for
/// tests and offline tools.
pub struct SimpleHost<'a> {
    pub repo: &'a mut crate::kr::Repository,
    pub clarifications_left: u32,
    pub issued: u32,
    pub prompts: &'a PromptSet,
    pub instance_text: String,
}

impl KnowledgeWriter for SimpleHost<'_> {
    fn kr(&self) -> &crate::kr::Repository {
        self.repo
    }

    fn commit(&mut self, _at: Timepoint, m: crate::kr::KrMutation) -> Result<(), KrError> {
        self.repo.apply(&m)
    }
}

impl IntegrationHost for SimpleHost<'_> {
    fn issue_clarification(
        &mut self,
        pair: ConflictPair,
        now: Timepoint,
    ) -> Result<Option<Query>, HgkaError> {
        if self.clarifications_left == 0 {
            return Ok(None);
        }
        self.clarifications_left -= 1;
        self.issued += 1;
        let prompt = crate::igs::clarification_text(&pair, &self.instance_text, self.prompts)?;
        Ok(Some(Query {
            qid: format!("clarify-{}", self.issued),
            kind: QueryKind::AskClarification,
            cost: 1,
            payload: crate::igs::QueryPayload {
                instance_id: String::new(),
                ordinal: 0,
                instance_text: self.instance_text.clone(),
                preliminary: String::new(),
                reasoning: String::new(),
                dialogue: String::new(),
                gaps: Vec::new(),
                conflict: Some(pair),
                prompt,
            },
            issued_at: now,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kr::Repository;
    use crate::llm::ScriptedLlm;
    use crate::similarity::HashTfEmbedder;

    #[test]
    fn assertion_line_parsing() {
        let r = parse_assertion_lines(
            "1. [exemplar] Case A is a True Match.\n2) [rule:Pol_X] Policy Pol_X: day difference ok.\nnoise",
        )
        .unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].0, ContentKind::Rule);
        assert_eq!(r[1].1.as_deref(), Some("Pol_X"));
        assert_eq!(parse_assertion_lines("NONE"), Some(vec![]));
        assert_eq!(parse_assertion_lines("free prose"), None);
        assert_eq!(parse_assertion_lines("1. [opinion] x"), None);
    }

    #[test]
    fn identical_texts_skip_the_model() {
        let llm = ScriptedLlm::new();
        let p = PromptSet::builtin();
        assert_eq!(
            classify_relation("Exact  pinyin match", "exact pinyin match", &p, &llm).unwrap(),
            Relation::Consistent
        );
    }

    #[test]
    fn unparseable_relation_is_ambiguous() {
        let mut llm = ScriptedLlm::new();
        llm.respond_matching("task:compare", "hard to tell");
        let p = PromptSet::builtin();
        assert_eq!(
            classify_relation("a b", "c d", &p, &llm).unwrap(),
            Relation::Ambiguous
        );
    }

    fn assertion(text: &str) -> Assertion {
        Assertion {
            kind: ContentKind::Rule,
            text: text.into(),
            ref_id: None,
            exemplar: None,
            derived_from: Provenance {
                qid: "q".into(),
                excerpt: text.into(),
            },
        }
    }

    #[test]
    fn unrelated_assertion_is_only_added() {
        let mut repo = Repository::new("t");
        repo.add_item(
            KnowledgeContent::rule("Malay patronymics may be absent."),
            Source::Human,
            0,
        )
        .unwrap();
        let before = repo.clone();
        let p = PromptSet::builtin();
        let mut host = SimpleHost {
            repo: &mut repo,
            clarifications_left: 1,
            issued: 0,
            prompts: &p,
            instance_text: String::new(),
        };
        let report = integrate_feedback(
            &mut host,
            &[assertion(
                "Residential address must correlate at street level.",
            )],
            5,
            &ScriptedLlm::new(),
            &HashTfEmbedder,
            &p,
            &IntegrationParams::default(),
        )
        .unwrap();
        assert_eq!(report.new_kids.len(), 1);
        assert!(report.relations.is_empty());
        for item in before.items() {
            assert_eq!(repo.get(&item.kid), Some(item));
        }
    }

    #[test]
    fn consistent_duplicate_adds_links_but_no_transition() {
        let mut repo = Repository::new("t");
        let text = "Exact pinyin match is required for Chinese names.";
        let old = repo
            .add_item(KnowledgeContent::rule(text), Source::Human, 0)
            .unwrap();
        let p = PromptSet::builtin();
        let mut host = SimpleHost {
            repo: &mut repo,
            clarifications_left: 0,
            issued: 0,
            prompts: &p,
            instance_text: String::new(),
        };
        let report = integrate_feedback(
            &mut host,
            &[assertion(text)],
            5,
            &ScriptedLlm::new(),
            &HashTfEmbedder,
            &p,
            &IntegrationParams::default(),
        )
        .unwrap();
        assert!(report.superseded.is_empty() && report.flagged_outdated.is_empty());
        let new = &report.new_kids[0];
        assert!(repo.get(&old).unwrap().meta.links.contains(new));
        assert_eq!(repo.get(&old).unwrap().status, Status::Valid);
    }
}
