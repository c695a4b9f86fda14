//! Experiment summaries: a fixed-width text table plus a JSON sidecar with
//! the same rows.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::harness::RunMetrics;
use crate::igs::QueryKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub rows: Vec<ReportRow>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.1}", x * 100.0))
}

fn kinds(m: &RunMetrics) -> String {
    let parts: Vec<String> = QueryKind::ALL
        .iter()
        .filter_map(|k| {
            m.queries_by_kind
                .get(k)
                .map(|n| format!("{}={n}", k.as_str()))
        })
        .collect();
    if parts.is_empty() {
        "-".into()
    } else {
        parts.join(" ")
    }
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |out: &mut String, cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&width).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            // First column left-aligned, numbers right-aligned.
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "{c:>w$}");
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(
        out,
        &header.iter().map(|h| h.to_string()).collect::<Vec<_>>(),
    );
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    line(out, &rule);
    for r in rows {
        line(out, r);
    }
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, metrics: RunMetrics) {
        self.rows.push(ReportRow {
            name: name.into(),
            metrics,
        });
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let m = &r.metrics;
                vec![
                    r.name.clone(),
                    m.processed.to_string(),
                    pct(m.rates.accuracy),
                    pct(m.rates.sensitivity),
                    pct(m.rates.specificity),
                    format!("{}/{}", m.budget_spent, m.budget_total),
                    m.aht_proxy_s
                        .map_or_else(|| "n/a".into(), |s| format!("{s:.1}")),
                    kinds(m),
                ]
            })
            .collect();
        table(
            &mut out,
            &[
                "run", "n", "acc%", "sens%", "spec%", "budget", "aht_s", "queries",
            ],
            &rows,
        );

        let phased: Vec<Vec<String>> = self
            .rows
            .iter()
            .filter(|r| r.metrics.per_phase.len() > 1)
            .flat_map(|r| {
                r.metrics.per_phase.iter().map(move |p| {
                    vec![
                        r.name.clone(),
                        p.version.clone(),
                        p.start_ordinal.to_string(),
                        p.processed.to_string(),
                        pct(p.rates.accuracy),
                        pct(p.rates.sensitivity),
                        pct(p.rates.specificity),
                    ]
                })
            })
            .collect();
        if !phased.is_empty() {
            out.push('\n');
            table(
                &mut out,
                &["run", "phase", "from", "n", "acc%", "sens%", "spec%"],
                &phased,
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `<stem>.txt` and `<stem>.json`.
    pub fn write(&self, stem: &Path) -> std::io::Result<()> {
        std::fs::write(stem.with_extension("txt"), self.render_text())?;
        std::fs::write(stem.with_extension("json"), self.to_json())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{LabelSpace, PhaseMark, StepRecord};

    fn metrics(pairs: &[(&str, &str)]) -> RunMetrics {
        let steps: Vec<StepRecord> = pairs
            .iter()
            .enumerate()
            .map(|(i, (t, p))| StepRecord {
                ordinal: i as u64 + 1,
                truth: t.to_string(),
                predicted: p.to_string(),
                handling_s: 30.0,
            })
            .collect();
        let phases = vec![
            PhaseMark {
                start_ordinal: 1,
                version: "v1".into(),
            },
            PhaseMark {
                start_ordinal: 3,
                version: "v2".into(),
            },
        ];
        let mut qbk = std::collections::BTreeMap::new();
        qbk.insert(QueryKind::AskRules, 2);
        RunMetrics::from_steps(&LabelSpace::binary_match(), &phases, &steps, qbk, 5, 2)
    }

    #[test]
    fn text_table_is_aligned() {
        let mut r = Report::new("demo");
        r.push(
            "full",
            metrics(&[
                ("Match", "Match"),
                ("Non-Match", "Match"),
                ("Match", "Match"),
            ]),
        );
        r.push("no-temporal-long-name", metrics(&[("Match", "Non-Match")]));
        let text = r.render_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "demo");
        assert!(lines[1].starts_with("run "));
        assert!(text.contains("66.7"));
        assert!(text.contains("2/5"));
        assert!(text.contains("AskRules=2"));
        let end = |l: &str, pat: &str| l.find(pat).unwrap() + pat.len();
        assert_eq!(end(lines[1], "acc%"), end(lines[3], "66.7"));
        assert_eq!(end(lines[1], "budget"), end(lines[4], "2/5"));
        assert!(text.contains("phase"));
    }

    #[test]
    fn json_round_trips() {
        let mut r = Report::new("x");
        r.push("a", metrics(&[("Match", "Match")]));
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        let dir = tempfile::tempdir().unwrap();
        r.write(&dir.path().join("out")).unwrap();
        assert!(dir.path().join("out.txt").exists());
        assert!(dir.path().join("out.json").exists());
    }
}
