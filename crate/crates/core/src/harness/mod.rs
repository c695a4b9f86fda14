//! Streaming evaluation: instances, the run loop, query policies, metrics
//! and the synthetic drift task.

mod drift;
mod instance;
mod metrics;
mod policy;
mod runner;
mod state;
mod synthetic;

pub use drift::{
    hidden_rules, make_drift_stream, synthetic_task, GenConfig, GeneratedTask, HiddenRule,
    InvalidPhaseSpec, PhaseSpec,
};
pub use instance::{load_stream, validate_stream, write_jsonl, Instance, LabelSpace};
pub use metrics::{
    compute_metrics, Confusion, PhaseMark, PhaseMetrics, Rates, RunMetrics, StepRecord,
};
pub use policy::{parse_probability, probe_confidence, random_draw, Policy, ProbeError};
pub use runner::{AhtModel, Providers, RunError, RunParams, Runner, StepOutcome};
pub use state::{AgentState, ClarificationState, PartialStep, StateError};
pub use synthetic::RulePolicyLlm;
