//! Test-time learning with budgeted expert guidance.
//!
//! An agent classifies a stream of instances. For each one it predicts with
//! help from a temporally scored knowledge repository, reflects on its own
//! answer through a fixed set of questions, and, when it is not confident and
//! budget remains, asks an expert oracle a typed question. Expert feedback is
//! parsed into knowledge items and merged into the repository with conflict
//! detection (supersession, outdating, clarification).
//!
//! Every state change is an [`events::EventRecord`] in an append-only log, so
//! a run can be replayed bit-for-bit from its log.

pub mod config;
pub mod events;
pub mod harness;
pub mod hgka;
pub mod igs;
pub mod kr;
pub mod llm;
pub mod oracle;
pub mod prompts;
pub mod report;
pub mod service;
pub mod similarity;

/// Logical time in integer seconds.
pub type Timepoint = i64;

pub const SECONDS_PER_DAY: f64 = 86_400.0;
