//! Temporally informed scoring: validity weight x recency x relevance.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{KnowledgeItem, KrError, Status};
use crate::{Timepoint, SECONDS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    TopN,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    /// Validity weight of a PotentiallyOutdated item.
    pub w_po: f64,
    /// Recency decay per second.
    pub lambda: f64,
    pub tau_score: f64,
    pub n_top: usize,
    pub mode: SelectionMode,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            w_po: 0.5,
            lambda: Self::per_day(0.01),
            tau_score: 0.0,
            n_top: 5,
            mode: SelectionMode::TopN,
        }
    }
}

impl ScoringParams {
    /// Converts a per-day decay rate into the per-second rate used for scoring.
    pub fn per_day(lambda_per_day: f64) -> f64 {
        lambda_per_day / SECONDS_PER_DAY
    }

    pub fn validate(&self) -> Result<(), KrError> {
        if !(0.0..=1.0).contains(&self.w_po) {
            return Err(KrError::InvalidParams(format!(
                "w_po {} not in [0,1]",
                self.w_po
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(KrError::InvalidParams(format!(
                "lambda {} must be >= 0",
                self.lambda
            )));
        }
        if !(self.tau_score >= 0.0 && self.tau_score.is_finite()) {
            return Err(KrError::InvalidParams(format!(
                "tau_score {} must be >= 0",
                self.tau_score
            )));
        }
        if self.n_top == 0 {
            return Err(KrError::InvalidParams("n_top must be at least 1".into()));
        }
        Ok(())
    }

    pub fn validity_weight(&self, status: Status) -> f64 {
        match status {
            Status::Valid => 1.0,
            Status::PotentiallyOutdated => self.w_po,
            Status::Superseded => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item: KnowledgeItem,
    pub w_s: f64,
    pub s_t: f64,
    pub s_r: f64,
    pub composite: f64,
}

pub fn composite_score(
    item: &KnowledgeItem,
    s_r: f64,
    now: Timepoint,
    params: &ScoringParams,
) -> Result<ScoredItem, KrError> {
    if now < item.ts_validated {
        return Err(KrError::ClockSkew {
            kid: item.kid.clone(),
            now,
            validated: item.ts_validated,
        });
    }
    let s_r = s_r.clamp(0.0, 1.0);
    let w_s = params.validity_weight(item.status);
    let age = (now - item.ts_validated) as f64;
    let s_t = (-params.lambda * age).exp();
    Ok(ScoredItem {
        item: item.clone(),
        w_s,
        s_t,
        s_r,
        composite: w_s * s_t * s_r,
    })
}

/// Retrieval order: composite descending, then most recently validated, then kid.
pub fn retrieval_order(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.composite
        .total_cmp(&a.composite)
        .then_with(|| b.item.ts_validated.cmp(&a.item.ts_validated))
        .then_with(|| a.item.kid.cmp(&b.item.kid))
}

/// Sorts and selects according to `params.mode`. Threshold mode never returns
/// zero-score items, so Superseded knowledge cannot pass a zero threshold.
pub fn select(mut scored: Vec<ScoredItem>, params: &ScoringParams) -> Vec<ScoredItem> {
    scored.sort_by(retrieval_order);
    match params.mode {
        SelectionMode::TopN => {
            scored.truncate(params.n_top);
            scored
        }
        SelectionMode::Threshold => scored
            .into_iter()
            .filter(|s| s.composite > 0.0 && s.composite >= params.tau_score)
            .collect(),
    }
}
