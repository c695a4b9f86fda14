//! Scenario fixtures run end to end through the runner with scripted
//! providers. Fixture names follow the scenario, not the data source.

mod common;

use common::scenarios::*;
use common::*;
use hitl_core::events::{Event, PredictionStage};
use hitl_core::harness::RunParams;
use hitl_core::igs::{ConfidenceLevel, QueryKind};
use hitl_core::kr::{ContentKind, Status};
use hitl_core::oracle::{ClarificationScript, Resolution};

#[test]
fn pinyin_supersession_marks_old_rule_superseded() {
    let r = scenarios::pinyin_supersession();

    let repo = &r.state().repo;
    let new = repo.get("Rule_123").expect("new rule stored under its id");
    assert_eq!(new.status, Status::Valid);
    assert_eq!(new.content.kind, ContentKind::Rule);
    assert_eq!(new.ts_added, MAY_5);

    let old = repo.get("Rule_045").expect("old rule kept");
    assert_eq!(old.status, Status::Superseded);
    assert_eq!(old.meta.superseded_by.as_deref(), Some("Rule_123"));
    assert_eq!(old.status_label(), "Superseded by Rule_123");
    assert_eq!(old.ts_validated, MAY_5);
    assert!(new.meta.links.iter().any(|k| k == "Rule_045"));

    let ev = events(&r);
    let issued: Vec<_> = ev
        .iter()
        .filter_map(|e| match e {
            Event::QueryIssued(q) => Some(q.query.kind),
            _ => None,
        })
        .collect();
    assert_eq!(issued, vec![QueryKind::AskRules]);
    assert_eq!(r.state().ledger.spent, 1);
}

#[test]
fn conditional_pinyin_rule_asks_one_clarification() {
    let r = scenarios::conditional_pinyin();

    let ev = events(&r);
    let clarifications: Vec<_> = ev
        .iter()
        .filter_map(|e| match e {
            Event::QueryIssued(q) if q.query.kind == QueryKind::AskClarification => Some(&q.query),
            _ => None,
        })
        .collect();
    assert_eq!(clarifications.len(), 1);
    let q = clarifications[0];
    assert!(
        q.payload.prompt.contains("outdated in all cases"),
        "{}",
        q.payload.prompt
    );
    assert!(q.payload.prompt.contains("Rule_045"));
    assert!(q.payload.prompt.contains("Rule_124"));
    let pair = q.payload.conflict.as_ref().expect("pair attached");
    assert_eq!(
        (pair.old_kid.as_str(), pair.new_kid.as_str()),
        ("Rule_045", "Rule_124")
    );

    let resolved: Vec<_> = ev
        .iter()
        .filter_map(|e| match e {
            Event::Clarification(c) => Some(c.resolution),
            _ => None,
        })
        .collect();
    assert_eq!(resolved, vec![Resolution::ConditionalOnly]);

    let old = r.state().repo.get("Rule_045").unwrap();
    assert_eq!(old.status, Status::PotentiallyOutdated);
    assert!(old.meta.superseded_by.is_none());
    assert!(!old.meta.notes.is_empty());
    assert_eq!(
        r.state().repo.get("Rule_124").unwrap().status,
        Status::Valid
    );
    assert_eq!(r.state().ledger.spent, 2);
}

#[test]
fn pinyin_clarification_answered_generally_supersedes() {
    let llm = scripted_llm(&pinyin_script(
        "1. [rule:Rule_124] Allow minor pinyin variations for common names like 'Zhang/Zang' if DOB is exact.",
        "[E] ambiguous",
    ));
    let mut t = table("pinyin-3", "Match", CONDITIONAL_PINYIN);
    t.clarifications.push(ClarificationScript {
        old_pattern: None,
        new_pattern: None,
        response: "[A] the new rule replaces the old one everywhere.".into(),
        resolution: None,
    });
    let r = run_one(
        RunParams {
            budget: 5,
            ..Default::default()
        },
        llm,
        t,
        name_case("pinyin-3", "Zhang Min", "Zang Min"),
        vec![rule(
            "Rule_045",
            "Exact pinyin match required for Chinese names.",
            APRIL_10,
        )],
    );
    let old = r.state().repo.get("Rule_045").unwrap();
    assert_eq!(old.status_label(), "Superseded by Rule_124");
}

#[test]
fn conditional_pinyin_without_budget_for_clarification_stays_outdated() {
    let llm = scripted_llm(&pinyin_script(
        "1. [rule:Rule_124] Allow minor pinyin variations for common names like 'Zhang/Zang' if DOB is exact.",
        "[E] ambiguous",
    ));
    let r = run_one(
        RunParams {
            budget: 1,
            ..Default::default()
        },
        llm,
        table("pinyin-4", "Match", CONDITIONAL_PINYIN),
        name_case("pinyin-4", "Zhang Min", "Zang Min"),
        vec![rule(
            "Rule_045",
            "Exact pinyin match required for Chinese names.",
            APRIL_10,
        )],
    );
    let kinds: Vec<_> = events(&r)
        .into_iter()
        .filter_map(|e| match e {
            Event::QueryIssued(q) => Some(q.query.kind),
            _ => None,
        })
        .collect();
    assert_eq!(kinds, vec![QueryKind::AskRules]);
    assert_eq!(
        r.state().repo.get("Rule_045").unwrap().status,
        Status::PotentiallyOutdated
    );
    assert_eq!(r.state().ledger.spent, 1);
}

#[test]
fn malay_name_feedback_yields_exemplar_and_policy() {
    let r = scenarios::malay_name();

    let repo = &r.state().repo;
    let added: Vec<_> = repo.items().filter(|i| i.ts_added == MAY_5).collect();
    assert_eq!(added.len(), 2, "{added:#?}");
    let exemplar = added
        .iter()
        .find(|i| i.content.kind == ContentKind::Exemplar)
        .expect("exemplar added");
    let payload = exemplar.content.exemplar.as_ref().expect("payload");
    assert_eq!(payload.label, "Match");
    assert!(payload
        .instance_snapshot
        .contains("Siti Aishah binti Hamid"));
    let policy = repo
        .get("Pol_Update_DOB_PEP3_v2_20250515")
        .expect("policy stored under its id");
    assert_eq!(policy.content.kind, ContentKind::Rule);
    assert_eq!(policy.status, Status::Valid);

    assert_eq!(
        repo.get("Rule_102").unwrap().status_label(),
        "Superseded by Pol_Update_DOB_PEP3_v2_20250515"
    );
    assert_eq!(repo.get("Rule_078").unwrap().status, Status::Valid);
}

#[test]
fn self_dialogue_for_missing_nationality_asks_for_rules() {
    let llm = scripted_llm(&[
        (r"\[task:predict\]", "Match\nNames are identical ignoring spacing and the DOB matches exactly."),
        (
            r"(?s)\[task:reflect\].*Question: Identify any implicit assumptions",
            "Assumed missing nationality does not rule out a match. uncertainty: current policy on handling missing nationality information in watchlist hits",
        ),
        (r"\[task:reflect\]", "Name and DOB agree."),
        (r"\[task:confidence\]", "[B] Moderate confidence with specific uncertainties."),
        (r"\[task:extract\]", "NONE"),
    ]);
    let inst = instance(
        "nationality-1",
        1,
        MAY_5,
        "Match",
        &[
            ("user_name", "Li Xiaoming"),
            ("user_dob", "1985-03-12"),
            ("hit_name", "Li Xiao Ming"),
            ("hit_dob", "1985-03-12"),
            ("hit_nationality", "Unknown"),
        ],
    );
    let r = run_one(
        RunParams {
            budget: 3,
            ..Default::default()
        },
        llm,
        table(
            "nationality-1",
            "Match",
            "Missing nationality on a hit does not block a match when name and DOB agree.",
        ),
        inst,
        vec![],
    );
    let ev = events(&r);
    let d = ev
        .iter()
        .find_map(|e| match e {
            Event::Dialogue(d) => Some(d),
            _ => None,
        })
        .expect("dialogue recorded");
    let dialogue = d.dialogue.as_ref().expect("reflective policy");
    assert_eq!(dialogue.pairs.len(), 9);
    assert!(dialogue.pairs[4]
        .question
        .contains("my preliminary judgment is Match"));
    assert_eq!(
        dialogue.gaps,
        vec![
            "current policy on handling missing nationality information in watchlist hits"
                .to_string()
        ]
    );
    assert_eq!(d.confidence, Some(ConfidenceLevel::Moderate));
    assert_eq!(d.kind, Some(QueryKind::AskRules));

    let q = ev
        .iter()
        .find_map(|e| match e {
            Event::QueryIssued(q) => Some(&q.query),
            _ => None,
        })
        .expect("query issued");
    assert!(q.payload.prompt.contains("Li Xiao Ming"));
    assert!(q.payload.prompt.contains("missing nationality"));
    assert!(q
        .payload
        .dialogue
        .contains("Q2: Identify any implicit assumptions"));
    assert_eq!(q.cost, 1);
    let finals: Vec<_> = ev
        .iter()
        .filter_map(|e| match e {
            Event::Prediction(p) if p.stage == PredictionStage::Final => Some(p.label.as_str()),
            _ => None,
        })
        .collect();
    assert_eq!(finals, vec!["Match"]);
}

#[test]
fn high_confidence_predicts_without_asking() {
    let llm = scripted_llm(&[
        (r"\[task:predict\]", "Match\nIdentical."),
        (r"\[task:reflect\]", "Everything agrees."),
        (r"\[task:confidence\]", "[A] High"),
    ]);
    let r = run_one(
        RunParams {
            budget: 3,
            ..Default::default()
        },
        llm,
        table("plain-1", "Match", "unused"),
        name_case("plain-1", "Ana Lima", "Ana Lima"),
        vec![],
    );
    assert_eq!(r.state().ledger.spent, 0);
    assert_eq!(r.state().queries_issued, 0);
}
