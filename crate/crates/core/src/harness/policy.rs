//! Query policies: the reflective policy and the active-learning baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::igs::QueryKind;
use crate::llm::{ChatRequest, LlmError, LlmProvider};
use crate::prompts::{PromptError, PromptSet, Vars};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Policy {
    /// Self-dialogue, confidence and gap-driven query formulation.
    Reflective {
        /// Empty means every kind.
        #[serde(default)]
        allowed_kinds: Vec<QueryKind>,
        #[serde(default = "yes")]
        resolve_conflicts: bool,
    },
    /// Asks for the label of each instance with probability `rate`.
    Random { rate: f64, seed: u64 },
    /// Asks for the label when a one-call probability probe is below `theta`.
    Uncertainty { theta: f64 },
    /// Never asks.
    Static,
}

fn yes() -> bool {
    true
}

impl Default for Policy {
    fn default() -> Self {
        Policy::Reflective {
            allowed_kinds: Vec::new(),
            resolve_conflicts: true,
        }
    }
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Reflective { .. } => "reflective",
            Policy::Random { .. } => "random",
            Policy::Uncertainty { .. } => "uncertainty",
            Policy::Static => "static",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Policy::Random { rate, .. } if !(0.0..=1.0).contains(rate) => {
                Err(format!("random rate {rate} not in [0,1]"))
            }
            Policy::Uncertainty { theta } if !(0.0..=1.0).contains(theta) => {
                Err(format!("uncertainty theta {theta} not in [0,1]"))
            }
            Policy::Reflective { allowed_kinds, .. }
                if !allowed_kinds.is_empty()
                    && allowed_kinds
                        .iter()
                        .all(|k| *k == QueryKind::AskClarification) =>
            {
                Err("allowed_kinds needs at least one primary query kind".into())
            }
            _ => Ok(()),
        }
    }

    /// Conflict resolution on integration; off for the ablation.
    pub fn resolves_conflicts(&self) -> bool {
        match self {
            Policy::Reflective {
                resolve_conflicts, ..
            } => *resolve_conflicts,
            _ => true,
        }
    }

    pub fn allows_clarifications(&self) -> bool {
        match self {
            Policy::Reflective {
                allowed_kinds,
                resolve_conflicts,
            } => {
                *resolve_conflicts
                    && (allowed_kinds.is_empty()
                        || allowed_kinds.contains(&QueryKind::AskClarification))
            }
            _ => true,
        }
    }

    /// Labels-only ablation.
    pub fn labels_only() -> Policy {
        Policy::Reflective {
            allowed_kinds: vec![QueryKind::AskLabel],
            resolve_conflicts: true,
        }
    }

    pub fn without_conflict_resolution() -> Policy {
        Policy::Reflective {
            allowed_kinds: Vec::new(),
            resolve_conflicts: false,
        }
    }
}

/// Seeded per-instance draw, independent of how many draws came before.
pub fn random_draw(seed: u64, ordinal: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ordinal.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.random::<f64>()
}

/// Parses the first number in the probe answer; anything else counts as 0.
pub fn parse_probability(text: &str) -> f64 {
    static NUM: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = NUM.get_or_init(|| regex::Regex::new(r"\d+(?:\.\d+)?").expect("valid regex"));
    re.find(text)
        .and_then(|m| m.as_str().parse::<f64>().ok())
        .filter(|p| (0.0..=1.0).contains(p))
        .unwrap_or(0.0)
}

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

pub fn probe_confidence(
    instance: &str,
    label: &str,
    knowledge: &str,
    prompts: &PromptSet,
    llm: &dyn LlmProvider,
) -> Result<f64, ProbeError> {
    let r = prompts.probe.render(
        &Vars::new()
            .set("instance", instance)
            .set("label", label)
            .set("knowledge", knowledge),
    )?;
    Ok(parse_probability(
        &llm.complete(&ChatRequest::new(r.system, r.user))?.text,
    ))
}
