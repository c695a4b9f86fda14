//! Run configuration: TOML file, then `HITL_*` environment overrides, then
//! command-line flags. Everything is validated before a run is created.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{
    load_stream, AhtModel, Instance, LabelSpace, Policy, Providers, RulePolicyLlm, RunParams,
};
use crate::igs::CostTable;
use crate::kr::{KnowledgeItem, ScoringParams, SelectionMode, Source};
use crate::llm::{HttpLlm, HttpLlmConfig, LlmProvider, ScriptedLlm};
use crate::oracle::{
    HumanOracle, LlmOracle, Oracle, QueryQueue, ScriptedOracle, ScriptedOracleTable, TruthRecord,
};
use crate::prompts::PromptSet;
use crate::similarity::{CachedEmbedder, Embedder, HashTfEmbedder, HttpEmbedder, SimilarityParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub w_po: f64,
    pub lambda_per_day: f64,
    pub tau_score: f64,
    pub n_top: usize,
    pub mode: SelectionMode,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            w_po: 0.5,
            lambda_per_day: 0.01,
            tau_score: 0.0,
            n_top: 5,
            mode: SelectionMode::TopN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityConfig {
    pub tau_sim: f64,
    pub embedder: EmbedderKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub dim: usize,
    pub token_env: Option<String>,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            tau_sim: SimilarityParams::default().tau_sim,
            embedder: EmbedderKind::Hash,
            endpoint: None,
            model: None,
            dim: crate::similarity::FALLBACK_DIM,
            token_env: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    /// Deterministic rule-following stand-in (no network).
    Mock,
    /// Replays a script file.
    Scripted,
    /// OpenAI-compatible endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub kind: LlmKind,
    pub script: Option<PathBuf>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// Mock only: age after which a rule is reported as possibly outdated.
    pub stale_after_s: i64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            kind: LlmKind::Mock,
            script: None,
            base_url: None,
            model: None,
            api_key_env: "HITL_LLM_API_KEY".into(),
            timeout_ms: 60_000,
            max_retries: 3,
            max_in_flight: 4,
            stale_after_s: 15_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Scripted,
    Llm,
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub kind: OracleKind,
    /// Scripted oracle table (JSON). Without it, labels come from the stream.
    pub table: Option<PathBuf>,
    /// Extra line-delimited truth records.
    pub truth: Option<PathBuf>,
    /// Human oracle: seconds before an unanswered query expires.
    pub timeout_s: u64,
    /// LLM oracle: prompt directory per phase version.
    pub personas: BTreeMap<String, PathBuf>,
    /// LLM oracle: its own model; defaults to the agent's.
    pub llm: Option<LlmConfig>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            kind: OracleKind::Scripted,
            table: None,
            truth: None,
            timeout_s: 3600,
            personas: BTreeMap::new(),
            llm: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    Uniform,
    Cuad,
}

impl std::str::FromStr for CostMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(CostMode::Uniform),
            "cuad" => Ok(CostMode::Cuad),
            other => Err(format!("unknown cost mode {other:?} (uniform or cuad)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: Option<String>,
    /// Signed so that a negative value is reported instead of wrapping.
    pub budget: i64,
    pub cost_mode: CostMode,
    /// Custom per-kind costs; overrides `cost_mode`.
    pub cost_table: Option<PathBuf>,
    pub seed: u64,
    pub stream: Option<PathBuf>,
    pub kr0: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub labels: Option<LabelSpace>,
    /// Prompt directory; the built-in set when absent.
    pub prompts: Option<PathBuf>,
    /// Number of reflective questions used, from the top of the set.
    pub questions: Option<usize>,
    pub snapshot_every: u64,
    pub temporal_annotations: bool,
    pub max_candidates: usize,
    pub feedback_source: Option<Source>,
    pub scoring: ScoringConfig,
    pub similarity: SimilarityConfig,
    pub policy: Policy,
    pub llm: LlmConfig,
    pub oracle: OracleConfig,
    pub aht: AhtModel,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: None,
            budget: 0,
            cost_mode: CostMode::Uniform,
            cost_table: None,
            seed: 7,
            stream: None,
            kr0: None,
            log: None,
            labels: None,
            prompts: None,
            questions: None,
            snapshot_every: 50,
            temporal_annotations: true,
            max_candidates: 10,
            feedback_source: None,
            scoring: ScoringConfig::default(),
            similarity: SimilarityConfig::default(),
            policy: Policy::default(),
            llm: LlmConfig::default(),
            oracle: OracleConfig::default(),
            aht: AhtModel::default(),
        }
    }
}

/// Flag values from the command line. `None` leaves the setting alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub budget: Option<i64>,
    pub cost_mode: Option<CostMode>,
    pub seed: Option<u64>,
    pub stream: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub llm: Option<LlmKind>,
    pub oracle: Option<OracleKind>,
    pub oracle_table: Option<PathBuf>,
    pub run_id: Option<String>,
    pub policy: Option<Policy>,
}

fn parse_env<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| ConfigError::Invalid(format!("{name}={value:?}: {e}")))
}

fn parse_kind<T: for<'de> Deserialize<'de>>(name: &str, value: &str) -> Result<T, ConfigError> {
    serde_json::from_value(serde_json::Value::String(value.trim().to_ascii_lowercase()))
        .map_err(|e| ConfigError::Invalid(format!("{name}={value:?}: {e}")))
}

impl RunConfig {
    pub fn from_toml(src: &str) -> Result<RunConfig, ConfigError> {
        toml::from_str(src).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&src)
    }

    /// Applies `HITL_*` variables from `vars`.
    pub fn apply_env(
        &mut self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        for (k, v) in vars {
            match k.as_str() {
                "HITL_BUDGET" => self.budget = parse_env(&k, &v)?,
                "HITL_COST_MODE" => self.cost_mode = parse_env(&k, &v)?,
                "HITL_SEED" => self.seed = parse_env(&k, &v)?,
                "HITL_STREAM" => self.stream = Some(v.into()),
                "HITL_LOG" => self.log = Some(v.into()),
                "HITL_LLM" => self.llm.kind = parse_kind(&k, &v)?,
                "HITL_LLM_BASE_URL" => self.llm.base_url = Some(v),
                "HITL_LLM_MODEL" => self.llm.model = Some(v),
                "HITL_ORACLE" => self.oracle.kind = parse_kind(&k, &v)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(b) = o.budget {
            self.budget = b;
        }
        if let Some(c) = o.cost_mode {
            self.cost_mode = c;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.stream {
            self.stream = Some(p.clone());
        }
        if let Some(p) = &o.log {
            self.log = Some(p.clone());
        }
        if let Some(k) = o.llm {
            self.llm.kind = k;
        }
        if let Some(k) = o.oracle {
            self.oracle.kind = k;
        }
        if let Some(p) = &o.oracle_table {
            self.oracle.table = Some(p.clone());
        }
        if let Some(r) = &o.run_id {
            self.run_id = Some(r.clone());
        }
        if let Some(p) = &o.policy {
            self.policy = p.clone();
        }
    }

    /// File, then environment, then flags.
    pub fn resolve(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: &Overrides,
    ) -> Result<RunConfig, ConfigError> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_env(env)?;
        cfg.apply_overrides(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.budget < 0 {
            return invalid(format!("budget must be >= 0, got {}", self.budget));
        }
        if self.llm.kind == LlmKind::Scripted && self.llm.script.is_none() {
            return invalid("llm.kind = scripted needs llm.script");
        }
        if self.llm.kind == LlmKind::Http && self.llm.base_url.is_none() {
            return invalid("llm.kind = http needs llm.base_url");
        }
        if self.similarity.embedder == EmbedderKind::Http && self.similarity.endpoint.is_none() {
            return invalid("similarity.embedder = http needs similarity.endpoint");
        }
        if self.questions == Some(0) {
            return invalid("questions must be at least 1");
        }
        self.run_params(
            self.labels.clone().unwrap_or_else(LabelSpace::binary_match),
            CostTable::uniform(),
        )
        .validate()
        .map_err(ConfigError::Invalid)
    }

    pub fn costs(&self) -> Result<CostTable, ConfigError> {
        if let Some(p) = &self.cost_table {
            let t = CostTable::load(p).map_err(ConfigError::Io)?;
            t.validate().map_err(ConfigError::Invalid)?;
            return Ok(t);
        }
        Ok(match self.cost_mode {
            CostMode::Uniform => CostTable::uniform(),
            CostMode::Cuad => CostTable::cuad(),
        })
    }

    fn run_params(&self, labels: LabelSpace, costs: CostTable) -> RunParams {
        RunParams {
            labels,
            budget: self.budget.max(0) as u64,
            costs,
            scoring: ScoringParams {
                w_po: self.scoring.w_po,
                lambda: ScoringParams::per_day(self.scoring.lambda_per_day),
                tau_score: self.scoring.tau_score,
                n_top: self.scoring.n_top,
                mode: self.scoring.mode,
            },
            similarity: SimilarityParams {
                tau_sim: self.similarity.tau_sim,
            },
            policy: self.policy.clone(),
            temporal_annotations: self.temporal_annotations,
            max_candidates: self.max_candidates,
            aht: self.aht,
            snapshot_every: self.snapshot_every,
            phases: Vec::new(),
            feedback_source: self.feedback_source.unwrap_or(match self.oracle.kind {
                OracleKind::Llm => Source::LlmOracle,
                _ => Source::Human,
            }),
        }
    }

    pub fn prompts(&self) -> Result<PromptSet, ConfigError> {
        let p = match &self.prompts {
            Some(dir) => {
                PromptSet::load_dir(dir).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            None => PromptSet::builtin(),
        };
        Ok(match self.questions {
            Some(n) => p.with_question_count(n),
            None => p,
        })
    }

    fn build_llm(
        cfg: &LlmConfig,
        labels: &LabelSpace,
    ) -> Result<Arc<dyn LlmProvider>, ConfigError> {
        Ok(match cfg.kind {
            LlmKind::Mock => Arc::new(RulePolicyLlm::new(
                labels.labels.clone(),
                labels.fallback_label().to_string(),
                cfg.stale_after_s,
            )),
            LlmKind::Scripted => {
                let path = cfg.script.as_ref().expect("validated");
                Arc::new(ScriptedLlm::load(path).map_err(ConfigError::Io)?)
            }
            LlmKind::Http => {
                let http = HttpLlmConfig {
                    base_url: cfg.base_url.clone().expect("validated"),
                    model: cfg.model.clone().unwrap_or_default(),
                    api_key: std::env::var(&cfg.api_key_env).ok(),
                    timeout_ms: cfg.timeout_ms,
                    max_retries: cfg.max_retries,
                    max_in_flight: cfg.max_in_flight,
                    ..HttpLlmConfig::default()
                };
                Arc::new(HttpLlm::new(http).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
        })
    }

    fn build_embedder(&self) -> Result<Arc<dyn Embedder>, ConfigError> {
        Ok(match self.similarity.embedder {
            EmbedderKind::Hash => Arc::new(CachedEmbedder::new(HashTfEmbedder)),
            EmbedderKind::Http => {
                let token = self
                    .similarity
                    .token_env
                    .as_ref()
                    .and_then(|v| std::env::var(v).ok());
                let e = HttpEmbedder::new(
                    self.similarity.endpoint.clone().expect("validated"),
                    self.similarity.model.clone(),
                    token,
                    self.similarity.dim,
                    Duration::from_millis(self.llm.timeout_ms),
                )
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Arc::new(CachedEmbedder::new(e))
            }
        })
    }

    fn oracle_table(&self, stream: &[Instance]) -> Result<ScriptedOracleTable, ConfigError> {
        let mut table = match &self.oracle.table {
            Some(p) => ScriptedOracleTable::load(p).map_err(ConfigError::Io)?,
            None => ScriptedOracleTable::default(),
        };
        if let Some(p) = &self.oracle.truth {
            table.load_truth(p).map_err(ConfigError::Io)?;
        }
        for inst in stream {
            table
                .truth
                .entry(inst.id.clone())
                .or_insert_with(|| TruthRecord {
                    id: inst.id.clone(),
                    label: inst.truth.clone(),
                    rule_ids: Vec::new(),
                });
        }
        Ok(table)
    }

    /// Builds everything a run needs. `queue` is required for a human oracle.
    pub fn build(
        &self,
        run_id: &str,
        queue: Option<Arc<QueryQueue>>,
    ) -> Result<Built, ConfigError> {
        let stream = match &self.stream {
            Some(p) => load_stream(p).map_err(ConfigError::Io)?,
            None => Vec::new(),
        };
        self.build_with(run_id, queue, stream)
    }

    /// As [`RunConfig::build`] with the stream supplied by the caller.
    pub fn build_with(
        &self,
        run_id: &str,
        queue: Option<Arc<QueryQueue>>,
        stream: Vec<Instance>,
    ) -> Result<Built, ConfigError> {
        self.validate()?;
        let labels = match &self.labels {
            Some(l) => l.clone(),
            None => infer_labels(&stream),
        };
        labels.validate().map_err(ConfigError::Invalid)?;
        for inst in &stream {
            if labels.index_of(&inst.truth).is_none() {
                return invalid(format!(
                    "instance {} has unknown label {:?}",
                    inst.id, inst.truth
                ));
            }
        }
        let seed = match &self.kr0 {
            Some(p) => load_seed(p)?,
            None => Vec::new(),
        };
        let table = self.oracle_table(&stream)?;
        let mut params = self.run_params(labels.clone(), self.costs()?);
        params.phases = table.phases.clone();
        params.validate().map_err(ConfigError::Invalid)?;
        let prompts = Arc::new(self.prompts()?);
        let llm = Self::build_llm(&self.llm, &labels)?;
        let oracle: Arc<dyn Oracle> = match self.oracle.kind {
            OracleKind::Scripted => Arc::new(ScriptedOracle::new(table)),
            OracleKind::Llm => {
                let ocfg = self.oracle.llm.clone().unwrap_or_else(|| self.llm.clone());
                let ollm = Self::build_llm(&ocfg, &labels)?;
                let mut personas = BTreeMap::new();
                for (version, dir) in &self.oracle.personas {
                    let p = PromptSet::load_dir(dir)
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                    personas.insert(version.clone(), p);
                }
                Arc::new(LlmOracle::new(
                    ollm,
                    table,
                    personas,
                    (*prompts).clone(),
                    labels.labels.clone(),
                ))
            }
            OracleKind::Human => {
                let Some(q) = queue else {
                    return invalid("a human oracle needs the service's query queue");
                };
                Arc::new(HumanOracle::new(
                    q,
                    run_id,
                    labels.labels.clone(),
                    Duration::from_secs(self.oracle.timeout_s),
                ))
            }
        };
        Ok(Built {
            params,
            providers: Providers {
                llm,
                oracle,
                embedder: self.build_embedder()?,
                prompts,
            },
            stream,
            seed,
        })
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

pub struct Built {
    pub params: RunParams,
    pub providers: Providers,
    pub stream: Vec<Instance>,
    pub seed: Vec<KnowledgeItem>,
}

/// Labels in order of first appearance; Match/Non-Match when that is the set.
pub fn infer_labels(stream: &[Instance]) -> LabelSpace {
    let mut labels: Vec<String> = Vec::new();
    for i in stream {
        if !labels.contains(&i.truth) {
            labels.push(i.truth.clone());
        }
    }
    let binary = LabelSpace::binary_match();
    if labels.iter().all(|l| binary.labels.contains(l)) {
        return binary;
    }
    LabelSpace::new(labels)
}

/// KR₀: a JSON array of items or one item per line.
pub fn load_seed(path: &Path) -> Result<Vec<KnowledgeItem>, ConfigError> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    if src.trim_start().starts_with('[') {
        return serde_json::from_str(&src)
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())));
    }
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| ConfigError::Invalid(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_file_env_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "budget = 10\nseed = 1\ncost_mode = \"cuad\"\n[policy]\ntype = \"static\"\n",
        )
        .unwrap();
        let env = vec![
            ("HITL_BUDGET".to_string(), "20".to_string()),
            ("HITL_SEED".into(), "2".into()),
        ];
        let flags = Overrides {
            budget: Some(30),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(Some(&path), env, &flags).unwrap();
        assert_eq!(cfg.budget, 30);
        assert_eq!(cfg.seed, 2);
        assert_eq!(cfg.cost_mode, CostMode::Cuad);
        assert_eq!(cfg.policy, Policy::Static);
    }

    #[test]
    fn negative_budget_is_rejected() {
        let flags = Overrides {
            budget: Some(-1),
            ..Default::default()
        };
        assert!(matches!(
            RunConfig::resolve(None, Vec::new(), &flags),
            Err(ConfigError::Invalid(_))
        ));
        let env = vec![("HITL_BUDGET".to_string(), "lots".to_string())];
        assert!(RunConfig::resolve(None, env, &Overrides::default()).is_err());
    }

    #[test]
    fn unknown_keys_and_bad_params_are_rejected() {
        assert!(RunConfig::from_toml("budgt = 3").is_err());
        let mut c = RunConfig::default();
        c.scoring.w_po = 2.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.llm.kind = LlmKind::Http;
        assert!(c.validate().is_err());
    }

    #[test]
    fn label_inference() {
        let inst = |t: &str| Instance {
            id: t.into(),
            ordinal: 1,
            ts: 0,
            fields: Default::default(),
            truth: t.into(),
        };
        assert_eq!(infer_labels(&[inst("Match")]), LabelSpace::binary_match());
        assert_eq!(infer_labels(&[inst("b"), inst("a")]).labels, vec!["b", "a"]);
    }
}
