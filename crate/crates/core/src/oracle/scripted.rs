use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{FeedbackSource, Oracle, OracleError, OracleFeedback, OracleRequest, Resolution};
use crate::harness::PhaseMark;
use crate::igs::QueryKind;

pub type PhaseVersion = PhaseMark;

/// One line of a ground-truth file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rule_ids: Vec<String>,
}

/// Scripted answer to a clarification whose old and new texts match the
/// given patterns (absent pattern matches anything).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationScript {
    #[serde(default)]
    pub old_pattern: Option<String>,
    #[serde(default)]
    pub new_pattern: Option<String>,
    pub response: String,
    #[serde(default)]
    pub resolution: Option<Resolution>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedOracleTable {
    #[serde(default)]
    pub truth: BTreeMap<String, TruthRecord>,
    /// Canonical rule texts per oracle version.
    #[serde(default)]
    pub rule_texts: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    pub phases: Vec<PhaseVersion>,
    /// Explanation template per label; `{label}` and `{rules}` are filled in.
    #[serde(default)]
    pub explanations: BTreeMap<String, String>,
    #[serde(default)]
    pub clarifications: Vec<ClarificationScript>,
}

impl ScriptedOracleTable {
    pub fn load(path: &Path) -> Result<Self, String> {
        let src = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&src).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Merges a line-delimited truth file into the table.
    pub fn load_truth(&mut self, path: &Path) -> Result<(), String> {
        let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let r: TruthRecord = serde_json::from_str(&line)
                .map_err(|e| format!("{}:{}: {e}", path.display(), n + 1))?;
            self.truth.insert(r.id.clone(), r);
        }
        Ok(())
    }

    pub fn version_for(&self, ordinal: u64) -> &str {
        self.phases
            .iter()
            .rev()
            .find(|p| p.start_ordinal <= ordinal)
            .or_else(|| self.phases.first())
            .map(|p| p.version.as_str())
            .unwrap_or("v1")
    }

    fn rule_text(&self, version: &str, rule_id: &str) -> Option<&str> {
        self.rule_texts
            .get(version)
            .and_then(|m| m.get(rule_id))
            .or_else(|| {
                self.phases
                    .first()
                    .and_then(|p| self.rule_texts.get(&p.version))
                    .and_then(|m| m.get(rule_id))
            })
            .map(String::as_str)
    }

    /// Pure function of the table, the instance and the query.
    pub fn scripted_answer(&self, req: &OracleRequest<'_>) -> Result<OracleFeedback, OracleError> {
        let q = req.query;
        let mut fb = OracleFeedback {
            qid: q.qid.clone(),
            text: String::new(),
            label: None,
            answered_at: req.now,
            source: FeedbackSource::Scripted,
            resolution: None,
        };
        if q.kind == QueryKind::AskClarification {
            let pair = q.payload.conflict.as_ref();
            let hit = self.clarifications.iter().find(|c| {
                let ok = |pat: &Option<String>, text: Option<&str>| match (pat, text) {
                    (None, _) => true,
                    (Some(p), Some(t)) => Regex::new(p).map(|re| re.is_match(t)).unwrap_or(false),
                    (Some(_), None) => false,
                };
                ok(&c.old_pattern, pair.map(|p| p.old_text.as_str()))
                    && ok(&c.new_pattern, pair.map(|p| p.new_text.as_str()))
            });
            match hit {
                Some(c) => {
                    fb.text = c.response.clone();
                    fb.resolution = c.resolution.or_else(|| Resolution::from_text(&c.response));
                }
                None => {
                    fb.text = "[B] conditional only".into();
                    fb.resolution = Some(Resolution::ConditionalOnly);
                }
            }
            return Ok(fb);
        }
        let truth = self
            .truth
            .get(&req.instance.id)
            .ok_or_else(|| OracleError::MissingGroundTruth(req.instance.id.clone()))?;
        let version = self.version_for(req.instance.ordinal);
        let rules: Vec<&str> = truth
            .rule_ids
            .iter()
            .filter_map(|r| self.rule_text(version, r))
            .collect();
        match q.kind {
            QueryKind::AskLabel => {
                fb.label = Some(truth.label.clone());
                fb.text = format!("The correct label is {}.", truth.label);
            }
            QueryKind::AskRules => {
                fb.text = if rules.is_empty() {
                    format!("No specific rule applies; this case is {}.", truth.label)
                } else {
                    rules.join("\n")
                };
            }
            QueryKind::AskExplanation => {
                let joined = if rules.is_empty() {
                    "the overall evidence".to_string()
                } else {
                    rules.join(" ")
                };
                fb.text = match self.explanations.get(&truth.label) {
                    Some(t) => t
                        .replace("{label}", &truth.label)
                        .replace("{rules}", &joined),
                    None => format!("This case is {} because of {joined}", truth.label),
                };
            }
            QueryKind::AskClarification => unreachable!("handled above"),
        }
        Ok(fb)
    }
}

pub struct ScriptedOracle {
    pub table: ScriptedOracleTable,
}

impl ScriptedOracle {
    pub fn new(table: ScriptedOracleTable) -> Self {
        Self { table }
    }
}

impl Oracle for ScriptedOracle {
    fn answer(&self, req: &OracleRequest<'_>) -> Result<OracleFeedback, OracleError> {
        self.table.scripted_answer(req)
    }
}
