//! Guidance solicitation: self-dialogue, confidence, the intervention trigger,
//! query formulation and budget accounting.

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::Instance;
use crate::kr::{Kid, ScoredItem};
use crate::llm::{format_choice, parse_choice, ChatRequest, ChoiceFormat, LlmError, LlmProvider};
use crate::prompts::{PromptError, PromptSet, Vars};
use crate::Timepoint;

/// Marker that flags a sentence of a self-dialogue answer as a gap.
pub const GAP_MARKER: &str = "uncertainty:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConfidenceLevel {
    High,
    Moderate,
    Low,
}

impl ConfidenceLevel {
    pub const ALL: [ConfidenceLevel; 3] = [
        ConfidenceLevel::High,
        ConfidenceLevel::Moderate,
        ConfidenceLevel::Low,
    ];
    pub const LABELS: [&'static str; 3] = ["High", "Moderate", "Low"];

    pub fn as_str(self) -> &'static str {
        Self::LABELS[self as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryKind {
    AskLabel,
    AskExplanation,
    AskRules,
    AskClarification,
}

impl QueryKind {
    pub const ALL: [QueryKind; 4] = [
        QueryKind::AskLabel,
        QueryKind::AskExplanation,
        QueryKind::AskRules,
        QueryKind::AskClarification,
    ];

    /// Formulation priority, highest first.
    pub const PRIORITY: [QueryKind; 4] = [
        QueryKind::AskClarification,
        QueryKind::AskRules,
        QueryKind::AskLabel,
        QueryKind::AskExplanation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryKind::AskLabel => "AskLabel",
            QueryKind::AskExplanation => "AskExplanation",
            QueryKind::AskRules => "AskRules",
            QueryKind::AskClarification => "AskClarification",
        }
    }

    pub fn parse(s: &str) -> Option<QueryKind> {
        QueryKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTable {
    #[serde(rename = "AskLabel")]
    pub label: u32,
    #[serde(rename = "AskExplanation")]
    pub explanation: u32,
    #[serde(rename = "AskRules")]
    pub rules: u32,
    #[serde(rename = "AskClarification")]
    pub clarification: u32,
}

impl CostTable {
    pub fn uniform() -> Self {
        Self {
            label: 1,
            explanation: 1,
            rules: 1,
            clarification: 1,
        }
    }

    /// Label 1, explanation 2, rules 3, clarification 2.
    pub fn cuad() -> Self {
        Self {
            label: 1,
            explanation: 2,
            rules: 3,
            clarification: 2,
        }
    }

    /// JSON object keyed by query kind name.
    pub fn load(path: &Path) -> Result<Self, String> {
        let src = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let t: CostTable =
            serde_json::from_str(&src).map_err(|e| format!("{}: {e}", path.display()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), String> {
        if QueryKind::ALL.iter().any(|k| self.cost(*k) == 0) {
            return Err("query costs must be positive".into());
        }
        Ok(())
    }

    pub fn cost(&self, kind: QueryKind) -> u32 {
        match kind {
            QueryKind::AskLabel => self.label,
            QueryKind::AskExplanation => self.explanation,
            QueryKind::AskRules => self.rules,
            QueryKind::AskClarification => self.clarification,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictPair {
    pub old_kid: Kid,
    pub old_text: String,
    pub new_kid: Kid,
    pub new_text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryPayload {
    pub instance_id: String,
    pub ordinal: u64,
    pub instance_text: String,
    pub preliminary: String,
    pub reasoning: String,
    #[serde(default)]
    pub dialogue: String,
    #[serde(default)]
    pub gaps: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflict: Option<ConflictPair>,
    /// Expert-facing question text.
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub qid: String,
    pub kind: QueryKind,
    pub cost: u32,
    pub payload: QueryPayload,
    pub issued_at: Timepoint,
}

impl Query {
    pub fn check(&self, costs: &CostTable) -> Result<(), String> {
        if self.cost != costs.cost(self.kind) {
            return Err(format!("{}: cost does not match the cost table", self.qid));
        }
        if self.payload.conflict.is_some() != (self.kind == QueryKind::AskClarification) {
            return Err(format!(
                "{}: conflict pair must be present exactly for clarifications",
                self.qid
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("charging {cost} for {qid} would exceed the budget ({spent}/{total} spent)")]
    BudgetExceeded {
        qid: String,
        cost: u32,
        spent: u64,
        total: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub qid: String,
    pub kind: QueryKind,
    pub cost: u32,
    pub at: Timepoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub total: u64,
    pub spent: u64,
    pub entries: Vec<LedgerEntry>,
}

impl BudgetLedger {
    pub fn new(total: u64) -> Self {
        Self {
            total,
            spent: 0,
            entries: Vec::new(),
        }
    }

    pub fn remaining(&self) -> u64 {
        self.total - self.spent
    }

    pub fn can_afford(&self, cost: u32) -> bool {
        self.spent + u64::from(cost) <= self.total
    }

    pub fn charge(&mut self, query: &Query, at: Timepoint) -> Result<(), BudgetError> {
        if !self.can_afford(query.cost) {
            return Err(BudgetError::BudgetExceeded {
                qid: query.qid.clone(),
                cost: query.cost,
                spent: self.spent,
                total: self.total,
            });
        }
        self.spent += u64::from(query.cost);
        self.entries.push(LedgerEntry {
            qid: query.qid.clone(),
            kind: query.kind,
            cost: query.cost,
            at,
        });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfDialogue {
    pub pairs: Vec<QaPair>,
    pub gaps: Vec<String>,
    pub rendered: String,
}

impl SelfDialogue {
    pub fn from_pairs(pairs: Vec<QaPair>) -> Self {
        let gaps = pairs.iter().flat_map(|p| extract_gaps(&p.answer)).collect();
        let rendered = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| format!("Q{n}: {}\nA{n}: {}", p.question, p.answer, n = i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        Self {
            pairs,
            gaps,
            rendered,
        }
    }
}

/// Text following each `uncertainty:` marker up to the end of its line.
pub fn extract_gaps(answer: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in answer.lines() {
        let lower = line.to_lowercase();
        let mut from = 0;
        while let Some(pos) = lower[from..].find(GAP_MARKER) {
            let start = from + pos + GAP_MARKER.len();
            let end = lower[start..]
                .find(GAP_MARKER)
                .map(|p| start + p)
                .unwrap_or(line.len());
            let gap = line[start..end].trim();
            if !gap.is_empty() {
                out.push(gap.to_string());
            }
            from = end;
        }
    }
    out
}

/// Context a dialogue or query is built from.
#[derive(Debug, Clone, Copy)]
pub struct CaseContext<'a> {
    pub instance: &'a Instance,
    pub label: &'a str,
    pub reasoning: &'a str,
    /// Rendered knowledge excerpt as shown in the prediction prompt.
    pub knowledge: &'a str,
}

#[derive(Debug, Error)]
pub enum IgsError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn call(llm: &dyn LlmProvider, system: String, user: String) -> Result<String, LlmError> {
    Ok(llm.complete(&ChatRequest::new(system, user))?.text)
}

/// One LLM call per reflective question; each call sees the prior answers.
pub fn run_self_dialogue(
    ctx: &CaseContext<'_>,
    prompts: &PromptSet,
    llm: &dyn LlmProvider,
) -> Result<SelfDialogue, IgsError> {
    let instance = ctx.instance.render();
    let mut pairs: Vec<QaPair> = Vec::with_capacity(prompts.questions.len());
    for q in &prompts.questions {
        let question = q.render_text(&Vars::new().set("label", ctx.label))?;
        let prior = if pairs.is_empty() {
            "(none)".to_string()
        } else {
            SelfDialogue::from_pairs(pairs.clone()).rendered
        };
        let r = prompts.reflect.render(
            &Vars::new()
                .set("question", question.clone())
                .set("instance", instance.clone())
                .set("label", ctx.label)
                .set("reasoning", ctx.reasoning)
                .set("knowledge", ctx.knowledge)
                .set("prior", prior),
        )?;
        let answer = call(llm, r.system, r.user)?;
        pairs.push(QaPair { question, answer });
    }
    Ok(SelfDialogue::from_pairs(pairs))
}

pub fn confidence_options() -> String {
    const DESC: [&str; 3] = [
        "High confidence",
        "Moderate confidence with specific uncertainties",
        "Low confidence",
    ];
    (0..3)
        .map(|i| format!("[{}] {}", crate::llm::option_letter(i), DESC[i]))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Unparseable answers count as Low.
pub fn assess_confidence(
    dialogue: &SelfDialogue,
    prompts: &PromptSet,
    llm: &dyn LlmProvider,
) -> Result<ConfidenceLevel, IgsError> {
    let r = prompts.confidence.render(
        &Vars::new()
            .set("dialogue", dialogue.rendered.clone())
            .set("options", confidence_options()),
    )?;
    let text = call(llm, r.system, r.user)?;
    Ok(match parse_choice(&text, &ConfidenceLevel::LABELS) {
        Ok(i) => ConfidenceLevel::ALL[i],
        Err(e) => {
            tracing::warn!(%e, "confidence answer unparseable, treating as Low");
            ConfidenceLevel::Low
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intervention {
    PredictOnly,
    QueryExpert,
}

pub fn decide_intervention(
    conf: ConfidenceLevel,
    ledger: &BudgetLedger,
    next_cost: u32,
) -> Intervention {
    match conf {
        ConfidenceLevel::Moderate | ConfidenceLevel::Low if ledger.can_afford(next_cost) => {
            Intervention::QueryExpert
        }
        _ => Intervention::PredictOnly,
    }
}

fn has_any(text: &str, words: &[&str]) -> bool {
    words.iter().any(|w| text.contains(w))
}

/// Query kinds a gap calls for, before priority is applied.
pub fn classify_gap(gap: &str) -> Option<QueryKind> {
    let g = gap.to_lowercase();
    if has_any(&g, &["conflict", "contradict", "inconsistent"]) {
        return Some(QueryKind::AskClarification);
    }
    if has_any(
        &g,
        &["rule", "policy", "outdated", "guideline", "regulation"],
    ) {
        return Some(QueryKind::AskRules);
    }
    if has_any(
        &g,
        &[
            "label",
            "ambiguous",
            "which class",
            "classification",
            "category",
        ],
    ) {
        return Some(QueryKind::AskLabel);
    }
    if has_any(&g, &["justif", "explain", "evidence", "reason", "why"]) {
        return Some(QueryKind::AskExplanation);
    }
    None
}

/// Finds an older/newer pair of knowledge items named in a conflict gap.
pub fn conflict_in_gaps(gaps: &[String], knowledge: &[ScoredItem]) -> Option<ConflictPair> {
    static KID: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = KID.get_or_init(|| Regex::new(r"[A-Za-z0-9_\-]+").expect("valid regex"));
    for gap in gaps {
        if classify_gap(gap) != Some(QueryKind::AskClarification) {
            continue;
        }
        let mut named: Vec<&ScoredItem> = Vec::new();
        for tok in re.find_iter(gap) {
            if let Some(s) = knowledge.iter().find(|s| s.item.kid == tok.as_str()) {
                if !named.iter().any(|n| n.item.kid == s.item.kid) {
                    named.push(s);
                }
            }
        }
        if named.len() >= 2 {
            let (a, b) = (&named[0].item, &named[1].item);
            let (old, new) = if (a.ts_added, &a.kid) <= (b.ts_added, &b.kid) {
                (a, b)
            } else {
                (b, a)
            };
            return Some(ConflictPair {
                old_kid: old.kid.clone(),
                old_text: old.content.text.clone(),
                new_kid: new.kid.clone(),
                new_text: new.content.text.clone(),
            });
        }
    }
    None
}

/// Picks the query kind for a set of gaps. Empty or unrecognized gaps ask for
/// the label; kinds outside `allowed` are skipped in priority order.
pub fn choose_kind(gaps: &[String], has_conflict: bool, allowed: &[QueryKind]) -> QueryKind {
    let mut wanted: Vec<QueryKind> = gaps.iter().filter_map(|g| classify_gap(g)).collect();
    if !has_conflict {
        wanted.retain(|k| *k != QueryKind::AskClarification);
    }
    if wanted.is_empty() {
        wanted.push(QueryKind::AskLabel);
    }
    let allowed_here = |k: &QueryKind| allowed.is_empty() || allowed.contains(k);
    QueryKind::PRIORITY
        .into_iter()
        .find(|k| wanted.contains(k) && allowed_here(k))
        .or_else(|| {
            QueryKind::PRIORITY
                .into_iter()
                .rev()
                .find(|k| *k != QueryKind::AskClarification && allowed_here(k))
        })
        .unwrap_or(QueryKind::AskLabel)
}

/// Kind and conflict pair the next query would have.
pub fn plan_query(
    dialogue: &SelfDialogue,
    knowledge: &[ScoredItem],
    allowed: &[QueryKind],
) -> (QueryKind, Option<ConflictPair>) {
    let conflict = conflict_in_gaps(&dialogue.gaps, knowledge);
    let kind = choose_kind(&dialogue.gaps, conflict.is_some(), allowed);
    let conflict = conflict.filter(|_| kind == QueryKind::AskClarification);
    (kind, conflict)
}

/// Renders a query of `kind` for the case.
#[allow(clippy::too_many_arguments)]
pub fn build_query(
    qid: String,
    kind: QueryKind,
    conflict: Option<ConflictPair>,
    ctx: &CaseContext<'_>,
    dialogue: Option<&SelfDialogue>,
    costs: &CostTable,
    prompts: &PromptSet,
    now: Timepoint,
) -> Result<Query, PromptError> {
    let instance_text = ctx.instance.render();
    let gaps = dialogue.map(|d| d.gaps.clone()).unwrap_or_default();
    let case = Vars::new()
        .set("instance", instance_text.clone())
        .set("label", ctx.label)
        .set("reasoning", ctx.reasoning)
        .set(
            "gaps",
            if gaps.is_empty() {
                "(none)".to_string()
            } else {
                gaps.join("; ")
            },
        );
    let prompt = match (kind, &conflict) {
        (QueryKind::AskClarification, Some(c)) => clarification_text(c, &instance_text, prompts)?,
        (QueryKind::AskLabel, _) => prompts.query_label.render_text(&case)?,
        (QueryKind::AskExplanation, _) => prompts.query_explanation.render_text(&case)?,
        _ => prompts.query_rules.render_text(&case)?,
    };
    Ok(Query {
        qid,
        kind,
        cost: costs.cost(kind),
        payload: QueryPayload {
            instance_id: ctx.instance.id.clone(),
            ordinal: ctx.instance.ordinal,
            instance_text,
            preliminary: ctx.label.to_string(),
            reasoning: ctx.reasoning.to_string(),
            dialogue: dialogue.map(|d| d.rendered.clone()).unwrap_or_default(),
            gaps,
            conflict,
            prompt,
        },
        issued_at: now,
    })
}

pub fn clarification_text(
    pair: &ConflictPair,
    instance_text: &str,
    prompts: &PromptSet,
) -> Result<String, PromptError> {
    prompts.clarify.render_text(
        &Vars::new()
            .set("new_kid", pair.new_kid.clone())
            .set("new_text", pair.new_text.clone())
            .set("old_kid", pair.old_kid.clone())
            .set("old_text", pair.old_text.clone())
            .set("instance", instance_text),
    )
}

/// Counts queries per kind, for reports.
pub fn count_by_kind<'a>(
    queries: impl IntoIterator<Item = &'a QueryKind>,
) -> BTreeMap<QueryKind, u64> {
    let mut m = BTreeMap::new();
    for k in queries {
        *m.entry(*k).or_insert(0) += 1;
    }
    m
}

pub fn confidence_option_text(level: ConfidenceLevel) -> String {
    format_choice(
        &ConfidenceLevel::LABELS,
        level as usize,
        ChoiceFormat::Bracketed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedLlm;

    fn ledger(total: u64, spent: u64) -> BudgetLedger {
        BudgetLedger {
            total,
            spent,
            entries: Vec::new(),
        }
    }

    #[test]
    fn trigger_table() {
        use ConfidenceLevel::*;
        for b in 0..6u64 {
            for s in 0..=b {
                for c in 1..4u32 {
                    let l = ledger(b, s);
                    let fits = s + u64::from(c) <= b;
                    assert_eq!(decide_intervention(High, &l, c), Intervention::PredictOnly);
                    for conf in [Moderate, Low] {
                        let want = if fits {
                            Intervention::QueryExpert
                        } else {
                            Intervention::PredictOnly
                        };
                        assert_eq!(decide_intervention(conf, &l, c), want);
                    }
                }
            }
        }
        assert_eq!(
            decide_intervention(Moderate, &ledger(5, 3), 2),
            Intervention::QueryExpert
        );
        assert_eq!(
            decide_intervention(Low, &ledger(5, 4), 2),
            Intervention::PredictOnly
        );
    }

    fn q(kind: QueryKind, cost: u32) -> Query {
        Query {
            qid: "q".into(),
            kind,
            cost,
            payload: QueryPayload {
                instance_id: "i".into(),
                ordinal: 1,
                instance_text: String::new(),
                preliminary: "Match".into(),
                reasoning: String::new(),
                dialogue: String::new(),
                gaps: vec![],
                conflict: None,
                prompt: String::new(),
            },
            issued_at: 0,
        }
    }

    #[test]
    fn charge_until_exceeded() {
        let mut l = BudgetLedger::new(3);
        l.charge(&q(QueryKind::AskLabel, 1), 0).unwrap();
        l.charge(&q(QueryKind::AskExplanation, 2), 0).unwrap();
        assert_eq!(l.spent, 3);
        assert!(matches!(
            l.charge(&q(QueryKind::AskLabel, 1), 0),
            Err(BudgetError::BudgetExceeded { .. })
        ));
        assert_eq!(l.entries.len(), 2);
    }

    #[test]
    fn cost_tables() {
        for k in QueryKind::ALL {
            assert_eq!(CostTable::uniform().cost(k), 1);
        }
        let c = CostTable::cuad();
        assert_eq!(QueryKind::ALL.map(|k| c.cost(k)), [1, 2, 3, 2]);
    }

    #[test]
    fn gap_extraction() {
        let a = "I know the spacing rule. uncertainty: I lack an explicit rule for missing nationality.\nFine otherwise.";
        assert_eq!(
            extract_gaps(a),
            vec!["I lack an explicit rule for missing nationality."]
        );
        assert!(extract_gaps("all clear").is_empty());
        assert_eq!(extract_gaps("Uncertainty: a uncertainty: b").len(), 2);
    }

    #[test]
    fn kind_priority() {
        let g = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(
            choose_kind(
                &g(&[
                    "lack certainty regarding the current policy on handling missing nationality"
                ]),
                false,
                &[]
            ),
            QueryKind::AskRules
        );
        assert_eq!(choose_kind(&[], false, &[]), QueryKind::AskLabel);
        assert_eq!(
            choose_kind(
                &g(&["cannot explain why", "the label is ambiguous"]),
                false,
                &[]
            ),
            QueryKind::AskLabel
        );
        assert_eq!(
            choose_kind(&g(&["conflict between a and b", "missing rule"]), true, &[]),
            QueryKind::AskClarification
        );
        assert_eq!(
            choose_kind(
                &g(&["conflict between a and b", "missing rule"]),
                false,
                &[]
            ),
            QueryKind::AskRules
        );
        assert_eq!(
            choose_kind(&g(&["missing rule"]), false, &[QueryKind::AskLabel]),
            QueryKind::AskLabel
        );
    }

    #[test]
    fn confidence_parsing_with_fallback() {
        let p = PromptSet::builtin();
        let d = SelfDialogue::from_pairs(vec![]);
        for (reply, want) in [
            (
                "[B] Moderate confidence with specific uncertainties",
                ConfidenceLevel::Moderate,
            ),
            ("High", ConfidenceLevel::High),
            ("zzz qqq", ConfidenceLevel::Low),
        ] {
            let mut llm = ScriptedLlm::new();
            llm.respond_matching("task:confidence", reply);
            assert_eq!(assess_confidence(&d, &p, &llm).unwrap(), want);
        }
    }

    #[test]
    fn option_text_round_trips() {
        for l in ConfidenceLevel::ALL {
            assert_eq!(
                parse_choice(&confidence_option_text(l), &ConfidenceLevel::LABELS),
                Ok(l as usize)
            );
        }
    }
}
