//! Deterministic stand-in for the base model on the synthetic rule task. It
//! can only classify through rules (or stored cases) that appear in its
//! prompt, and it notices missing, stale and conflicting rules when asked.

use std::collections::BTreeSet;

use regex::Regex;

use crate::llm::{ChatRequest, ChatResponse, LlmError, LlmProvider, ProviderMeta};

#[derive(Debug, Clone, PartialEq)]
pub struct RulePolicyLlm {
    pub labels: Vec<String>,
    pub fallback: String,
    /// Rules validated longer ago than this are reported as possibly outdated.
    pub stale_after_s: i64,
}

#[derive(Debug, Clone, PartialEq)]
struct KnowledgeLine {
    kid: String,
    status: Option<String>,
    age_s: Option<i64>,
    text: String,
}

#[derive(Debug, Clone, PartialEq)]
struct RuleLine<'a> {
    line: &'a KnowledgeLine,
    rule_id: String,
    markers: Vec<String>,
    label: String,
}

fn section<'a>(text: &'a str, tag: &str) -> &'a str {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    text.find(&open)
        .and_then(|s| {
            let from = s + open.len();
            text[from..]
                .find(&close)
                .map(|e| text[from..from + e].trim())
        })
        .unwrap_or("")
}

fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn rule_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(R\d+): ((?:[a-z]+ )+)indicate ([A-Za-z][A-Za-z\- ]*?)\.?(?:$|\n)")
            .expect("valid regex")
    })
}

fn parse_knowledge(block: &str) -> Vec<KnowledgeLine> {
    block
        .lines()
        .filter_map(|l| l.strip_prefix("- "))
        .map(|l| {
            let parts: Vec<&str> = l.splitn(4, " | ").collect();
            if parts.len() == 4 {
                let age = parts[2]
                    .trim_start_matches("validated ")
                    .trim_end_matches("s ago")
                    .parse()
                    .ok();
                KnowledgeLine {
                    kid: parts[0].to_string(),
                    status: Some(parts[1].to_string()),
                    age_s: age,
                    text: parts[3].to_string(),
                }
            } else {
                let (kid, text) = l.split_once(" | ").unwrap_or(("", l));
                KnowledgeLine {
                    kid: kid.to_string(),
                    status: None,
                    age_s: None,
                    text: text.to_string(),
                }
            }
        })
        .collect()
}

fn as_rule(line: &KnowledgeLine) -> Option<RuleLine<'_>> {
    let text = format!("{}\n", line.text.trim());
    let c = rule_re().captures(&text)?;
    Some(RuleLine {
        line,
        rule_id: c[1].to_string(),
        markers: c[2].split_whitespace().map(str::to_string).collect(),
        label: c[3].trim().to_string(),
    })
}

fn applicable<'a>(lines: &'a [KnowledgeLine], instance: &BTreeSet<String>) -> Vec<RuleLine<'a>> {
    lines
        .iter()
        .filter_map(as_rule)
        .filter(|r| r.markers.iter().any(|m| instance.contains(m)))
        .collect()
}

impl RulePolicyLlm {
    pub fn new(labels: Vec<String>, fallback: String, stale_after_s: i64) -> Self {
        Self {
            labels,
            fallback,
            stale_after_s,
        }
    }

    fn predict(&self, user: &str) -> String {
        let instance = words(section(user, "instance"));
        let lines = parse_knowledge(section(user, "knowledge"));
        if let Some(r) = applicable(&lines, &instance).first() {
            return format!("{}\nApplied {} ({}).", r.label, r.line.kid, r.rule_id);
        }
        let case_re = Regex::new(r"^Case \((.*)\) is (.+?)\.$").expect("valid regex");
        let mut best: Option<(usize, &KnowledgeLine, String)> = None;
        for l in &lines {
            if let Some(c) = case_re.captures(l.text.trim()) {
                let mut stored = words(&c[1]);
                stored.remove("text");
                let overlap = stored.intersection(&instance).count();
                if overlap > 0 && best.as_ref().is_none_or(|b| overlap > b.0) {
                    best = Some((overlap, l, c[2].to_string()));
                }
            }
        }
        match best {
            Some((_, l, label)) if self.labels.contains(&label) => {
                format!("{label}\nClosest stored case is {}.", l.kid)
            }
            _ => format!("{}\nNo stored knowledge applies.", self.fallback),
        }
    }

    fn reflect(&self, user: &str) -> String {
        let question = user
            .rsplit_once("Question:")
            .map(|(_, q)| q.trim().to_lowercase())
            .unwrap_or_default();
        let instance = words(section(user, "instance"));
        let lines = parse_knowledge(section(user, "knowledge"));
        let rules = applicable(&lines, &instance);
        if question.contains("familiarity") {
            return match rules.first() {
                Some(r) => format!("Stored rule {} covers this case.", r.line.kid),
                None => "No stored rule covers these terms. uncertainty: I lack an explicit rule for this case.".into(),
            };
        }
        if question.contains("potentially outdated") {
            let Some(r) = rules.first() else {
                return "There is no applicable knowledge to date.".into();
            };
            let stale = r.line.age_s.is_some_and(|a| a > self.stale_after_s);
            let flagged = r.line.status.as_deref() == Some("PotentiallyOutdated");
            return if stale || flagged {
                format!(
                    "uncertainty: the rule {} was validated {}s ago and may be outdated.",
                    r.line.kid,
                    r.line.age_s.unwrap_or_default()
                )
            } else if r.line.age_s.is_some() {
                format!("Rule {} was validated recently.", r.line.kid)
            } else {
                "No validation dates are shown.".into()
            };
        }
        if question.contains("how consistent") {
            for (i, a) in rules.iter().enumerate() {
                if let Some(b) = rules[i + 1..]
                    .iter()
                    .find(|b| b.rule_id == a.rule_id && b.label != a.label)
                {
                    return format!(
                        "uncertainty: {} and {} conflict on this case.",
                        a.line.kid, b.line.kid
                    );
                }
            }
            return "The judgment agrees with the stored items.".into();
        }
        "Nothing further.".into()
    }

    fn confidence(&self, user: &str) -> String {
        let d = section(user, "dialogue").to_lowercase();
        if d.contains("uncertainty: i lack") {
            "[C] Low confidence".into()
        } else if d.contains("uncertainty:") {
            "[B] Moderate confidence with specific uncertainties".into()
        } else {
            "[A] High confidence".into()
        }
    }

    fn extract(&self, user: &str) -> String {
        let fb = format!("{}\n", section(user, "feedback"));
        let out: Vec<String> = fb
            .lines()
            .filter_map(|l| {
                rule_re()
                    .captures(&format!("{}\n", l.trim()))
                    .map(|c| c[0].trim().to_string())
            })
            .enumerate()
            .map(|(i, r)| format!("{}. [rule] {}", i + 1, r))
            .collect();
        if out.is_empty() {
            "NONE".into()
        } else {
            out.join("\n")
        }
    }

    fn compare(&self, user: &str) -> String {
        let new = format!("{}\n", section(user, "new"));
        let old = format!("{}\n", section(user, "old"));
        match (rule_re().captures(&new), rule_re().captures(&old)) {
            (Some(n), Some(o)) if n[1] == o[1] && n[3].trim() != o[3].trim() => {
                "[B] supersedes".into()
            }
            _ => "[D] consistent".into(),
        }
    }

    fn probe(&self, user: &str) -> String {
        let instance = words(section(user, "instance"));
        let lines = parse_knowledge(section(user, "knowledge"));
        if applicable(&lines, &instance).is_empty() {
            "0.2".into()
        } else {
            "0.9".into()
        }
    }
}

impl LlmProvider for RulePolicyLlm {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let user = req.user_text();
        let text = match req.task_tag() {
            "[task:predict]" => self.predict(user),
            "[task:reflect]" => self.reflect(user),
            "[task:confidence]" => self.confidence(user),
            "[task:extract]" => self.extract(user),
            "[task:compare]" => self.compare(user),
            "[task:probe]" => self.probe(user),
            other => {
                return Err(LlmError::ScriptMiss {
                    fingerprint: crate::llm::fingerprint(req),
                    excerpt: other.chars().take(60).collect(),
                })
            }
        };
        Ok(ChatResponse {
            text,
            provider_meta: ProviderMeta::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{PromptSet, Vars};

    fn llm() -> RulePolicyLlm {
        RulePolicyLlm::new(
            vec!["Match".into(), "Non-Match".into()],
            "Non-Match".into(),
            1000,
        )
    }

    fn predict(knowledge: &str) -> String {
        let p = PromptSet::builtin();
        let r = p
            .predict
            .render(
                &Vars::new()
                    .set("labels", "Match, Non-Match")
                    .set("instance", "text: albara lomot brinelo")
                    .set("knowledge", knowledge),
            )
            .unwrap();
        llm()
            .complete(&ChatRequest::new(r.system, r.user))
            .unwrap()
            .text
    }

    #[test]
    fn predicts_only_from_applicable_rules() {
        assert!(predict("(none)").starts_with("Non-Match"));
        let k = "- k1 | Valid | validated 5s ago | R01: brinara brinelo indicate Non-Match\n- k2 | Valid | validated 9s ago | R00: albara albelo indicate Match";
        assert!(predict(k).starts_with("Non-Match\nApplied k1"));
        let k = "- k2 | Valid | validated 9s ago | R00: albara albelo indicate Match";
        assert!(predict(k).starts_with("Match"));
        let k = "- k3 | R00: albara albelo indicate Match";
        assert!(predict(k).starts_with("Match"));
    }

    #[test]
    fn stored_cases_by_overlap() {
        let k = "- k1 | Valid | validated 5s ago | Case (text: albara lomot) is Match.";
        assert!(predict(k).starts_with("Match"));
    }

    fn reflect(question: &str, knowledge: &str) -> String {
        let p = PromptSet::builtin();
        let r = p
            .reflect
            .render(
                &Vars::new()
                    .set("question", question)
                    .set("instance", "text: albara")
                    .set("label", "Match")
                    .set("reasoning", "")
                    .set("knowledge", knowledge)
                    .set("prior", ""),
            )
            .unwrap();
        llm()
            .complete(&ChatRequest::new(r.system, r.user))
            .unwrap()
            .text
    }

    #[test]
    fn gaps_for_missing_stale_and_conflicting_rules() {
        let q = PromptSet::builtin();
        let qs: Vec<String> = q
            .questions
            .iter()
            .map(|t| t.render_text(&Vars::new().set("label", "Match")).unwrap())
            .collect();
        let fam = qs.iter().find(|q| q.contains("familiarity")).unwrap();
        let stale = qs
            .iter()
            .find(|q| q.contains("potentially outdated"))
            .unwrap();
        let cons = qs.iter().find(|q| q.contains("how consistent")).unwrap();
        assert!(reflect(fam, "(none)").contains("uncertainty: I lack an explicit rule"));
        let old = "- k1 | Valid | validated 5000s ago | R00: albara indicate Match";
        assert!(reflect(stale, old).contains("uncertainty: the rule k1"));
        let fresh = "- k1 | Valid | validated 5s ago | R00: albara indicate Match";
        assert!(!reflect(stale, fresh).contains("uncertainty"));
        let both = "- k2 | R00: albara indicate Non-Match\n- k1 | R00: albara indicate Match";
        assert!(reflect(cons, both).contains("uncertainty: k2 and k1 conflict"));
    }

    #[test]
    fn extract_and_compare() {
        let p = PromptSet::builtin();
        let r = p
            .extract
            .render(
                &Vars::new()
                    .set("feedback", "R03: dorvara dorvelo indicate Non-Match")
                    .set("instance", "")
                    .set("label", "")
                    .set("query", "")
                    .set("kinds", ""),
            )
            .unwrap();
        let out = llm()
            .complete(&ChatRequest::new(r.system, r.user))
            .unwrap()
            .text;
        assert_eq!(out, "1. [rule] R03: dorvara dorvelo indicate Non-Match");
        let r = p
            .compare
            .render(
                &Vars::new()
                    .set("new", "R03: dorvara indicate Non-Match")
                    .set("old", "R03: dorvara indicate Match")
                    .set("options", ""),
            )
            .unwrap();
        assert!(llm()
            .complete(&ChatRequest::new(r.system, r.user))
            .unwrap()
            .text
            .contains("supersedes"));
    }
}
