#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use hitl_core::events::{Event, EventLog};
use hitl_core::harness::{
    synthetic_task, GenConfig, GeneratedTask, Instance, Policy, Providers, RulePolicyLlm,
    RunParams, Runner,
};
use hitl_core::kr::{ItemMeta, KnowledgeContent, KnowledgeItem, Source, Status};
use hitl_core::llm::{LlmProvider, ScriptedLlm};
use hitl_core::oracle::{Oracle, ScriptedOracle, ScriptedOracleTable};
use hitl_core::prompts::PromptSet;
use hitl_core::similarity::{CachedEmbedder, HashTfEmbedder};
use hitl_core::Timepoint;

pub mod scenarios;

pub const DAY: Timepoint = 86_400;

pub fn instance(
    id: &str,
    ordinal: u64,
    ts: Timepoint,
    truth: &str,
    fields: &[(&str, &str)],
) -> Instance {
    Instance {
        id: id.into(),
        ordinal,
        ts,
        fields: fields
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect::<BTreeMap<_, _>>(),
        truth: truth.into(),
    }
}

pub fn rule(kid: &str, text: &str, ts: Timepoint) -> KnowledgeItem {
    KnowledgeItem {
        kid: kid.into(),
        content: KnowledgeContent::rule(text),
        ts_added: ts,
        ts_validated: ts,
        status: Status::Valid,
        meta: ItemMeta {
            source: Some(Source::Human),
            ..Default::default()
        },
    }
}

pub fn providers(llm: impl LlmProvider + 'static, oracle: impl Oracle + 'static) -> Providers {
    Providers {
        llm: Arc::new(llm),
        oracle: Arc::new(oracle),
        embedder: Arc::new(CachedEmbedder::new(HashTfEmbedder)),
        prompts: Arc::new(PromptSet::builtin()),
    }
}

pub fn scripted_oracle(table: ScriptedOracleTable) -> ScriptedOracle {
    ScriptedOracle::new(table)
}

pub fn scripted_llm(entries: &[(&str, &str)]) -> ScriptedLlm {
    let mut llm = ScriptedLlm::new();
    for (p, r) in entries {
        llm.respond_matching(p, *r);
    }
    llm
}

pub fn events(r: &Runner) -> Vec<Event> {
    r.log()
        .records()
        .iter()
        .map(|rec| rec.decode().expect("decodes"))
        .collect()
}

pub fn synthetic_providers(task: &GeneratedTask) -> Providers {
    providers(
        RulePolicyLlm::new(
            vec!["Match".into(), "Non-Match".into()],
            "Non-Match".into(),
            15_000,
        ),
        ScriptedOracle::new(task.oracle.clone()),
    )
}

pub fn synthetic_params(task: &GeneratedTask, budget: u64, policy: Policy) -> RunParams {
    RunParams {
        budget,
        policy,
        phases: task.phases.clone(),
        ..Default::default()
    }
}

pub fn synthetic(drift_at: Option<u64>) -> GeneratedTask {
    synthetic_task(&GenConfig::default(), drift_at)
}

pub fn start(
    run_id: &str,
    params: RunParams,
    providers: Providers,
    task: &GeneratedTask,
    log: EventLog,
) -> Runner {
    Runner::start(
        run_id,
        params,
        providers,
        log,
        task.stream.clone(),
        vec![],
        serde_json::Value::Null,
    )
    .expect("run starts")
}

/// Accuracy over steps with ordinal > `after`.
pub fn accuracy_after(r: &Runner, after: u64) -> f64 {
    let tail: Vec<_> = r
        .state()
        .steps
        .iter()
        .filter(|s| s.ordinal > after)
        .collect();
    tail.iter().filter(|s| s.truth == s.predicted).count() as f64 / tail.len().max(1) as f64
}
