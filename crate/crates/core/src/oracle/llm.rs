use std::collections::BTreeMap;
use std::sync::Arc;

use super::ScriptedOracleTable;
use super::{FeedbackSource, Oracle, OracleError, OracleFeedback, OracleRequest, Resolution};
use crate::igs::QueryKind;
use crate::llm::{ChatRequest, LlmProvider};
use crate::prompts::{PromptSet, Vars};

/// Expert simulated by an LLM with a persona prompt that may change per
/// phase. Label questions are answered from the ground-truth table.
pub struct LlmOracle {
    llm: Arc<dyn LlmProvider>,
    table: ScriptedOracleTable,
    /// Prompt set per phase version; `default` is used for unknown versions.
    prompts: BTreeMap<String, PromptSet>,
    default: PromptSet,
    labels: Vec<String>,
}

impl LlmOracle {
    pub fn new(
        llm: Arc<dyn LlmProvider>,
        table: ScriptedOracleTable,
        prompts: BTreeMap<String, PromptSet>,
        default: PromptSet,
        labels: Vec<String>,
    ) -> Self {
        Self {
            llm,
            table,
            prompts,
            default,
            labels,
        }
    }
}

impl Oracle for LlmOracle {
    fn answer(&self, req: &OracleRequest<'_>) -> Result<OracleFeedback, OracleError> {
        if req.query.kind == QueryKind::AskLabel {
            let mut fb = self.table.scripted_answer(req)?;
            fb.source = FeedbackSource::Llm;
            return Ok(fb);
        }
        let version = self.table.version_for(req.instance.ordinal);
        let prompts = self.prompts.get(version).unwrap_or(&self.default);
        let r = prompts
            .oracle
            .render(
                &Vars::new()
                    .set("kind", req.query.kind.as_str())
                    .set("instance", req.query.payload.instance_text.clone())
                    .set("query", req.query.payload.prompt.clone())
                    .set("dialogue", req.query.payload.dialogue.clone())
                    .set("labels", self.labels.join(", ")),
            )
            .map_err(|e| OracleError::Unavailable(e.to_string()))?;
        let text = self.llm.complete(&ChatRequest::new(r.system, r.user))?.text;
        if text.trim().is_empty() {
            return Err(OracleError::Unavailable(
                "oracle model returned no text".into(),
            ));
        }
        let resolution = (req.query.kind == QueryKind::AskClarification)
            .then(|| Resolution::from_text(&text))
            .flatten();
        Ok(OracleFeedback {
            qid: req.query.qid.clone(),
            text,
            label: None,
            answered_at: req.now,
            source: FeedbackSource::Llm,
            resolution,
        })
    }
}
