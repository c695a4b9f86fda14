use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::LabelSpace;
use crate::igs::QueryKind;

/// Counts indexed `[truth][predicted]` over the label space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(labels: &[String]) -> Self {
        Self {
            labels: labels.to_vec(),
            counts: vec![vec![0; labels.len()]; labels.len()],
        }
    }

    /// Labels outside the space are ignored and reported as false.
    pub fn record(&mut self, truth: &str, predicted: &str) -> bool {
        let t = self.labels.iter().position(|l| l == truth);
        let p = self.labels.iter().position(|l| l == predicted);
        match (t, p) {
            (Some(t), Some(p)) => {
                self.counts[t][p] += 1;
                true
            }
            _ => false,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rates {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Sensitivity TP/(TP+FN) and specificity TN/(TN+FP) around `positive`, and
/// accuracy. Undefined ratios are `None`.
pub fn compute_metrics(confusion: &Confusion, positive: Option<usize>) -> Rates {
    let accuracy = ratio(confusion.correct(), confusion.total());
    let Some(p) = positive.filter(|_| confusion.labels.len() == 2) else {
        return Rates {
            accuracy,
            ..Rates::default()
        };
    };
    let n = 1 - p;
    let (tp, fn_) = (confusion.counts[p][p], confusion.counts[p][n]);
    let (tn, fp) = (confusion.counts[n][n], confusion.counts[n][p]);
    Rates {
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        accuracy,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub start_ordinal: u64,
    pub version: String,
    pub processed: u64,
    pub confusion: Confusion,
    #[serde(flatten)]
    pub rates: Rates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub processed: u64,
    pub confusion: Confusion,
    #[serde(flatten)]
    pub rates: Rates,
    pub per_phase: Vec<PhaseMetrics>,
    pub queries_by_kind: BTreeMap<QueryKind, u64>,
    pub budget_total: u64,
    pub budget_spent: u64,
    pub aht_proxy_s: Option<f64>,
}

/// One finished step as seen by the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub ordinal: u64,
    pub truth: String,
    pub predicted: String,
    pub handling_s: f64,
}

/// Phase boundary: instances from `start_ordinal` on belong to `version`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseMark {
    pub start_ordinal: u64,
    pub version: String,
}

impl RunMetrics {
    pub fn from_steps(
        labels: &LabelSpace,
        phases: &[PhaseMark],
        steps: &[StepRecord],
        queries_by_kind: BTreeMap<QueryKind, u64>,
        budget_total: u64,
        budget_spent: u64,
    ) -> RunMetrics {
        let positive = labels.positive_index();
        let mut confusion = Confusion::new(&labels.labels);
        let mut per_phase: Vec<PhaseMetrics> = phases
            .iter()
            .map(|p| PhaseMetrics {
                start_ordinal: p.start_ordinal,
                version: p.version.clone(),
                processed: 0,
                confusion: Confusion::new(&labels.labels),
                rates: Rates::default(),
            })
            .collect();
        let mut handling = 0.0;
        for s in steps {
            confusion.record(&s.truth, &s.predicted);
            handling += s.handling_s;
            if let Some(ph) = per_phase
                .iter_mut()
                .rev()
                .find(|p| p.start_ordinal <= s.ordinal)
            {
                ph.processed += 1;
                ph.confusion.record(&s.truth, &s.predicted);
            }
        }
        for ph in &mut per_phase {
            ph.rates = compute_metrics(&ph.confusion, positive);
        }
        let processed = steps.len() as u64;
        RunMetrics {
            processed,
            rates: compute_metrics(&confusion, positive),
            confusion,
            per_phase,
            queries_by_kind,
            budget_total,
            budget_spent,
            aht_proxy_s: (processed > 0).then(|| handling / processed as f64),
        }
    }
}
