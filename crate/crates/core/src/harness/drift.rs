//! Seeded stream generator with phase-wise label frequencies and rule
//! overrides, emitting the scripted oracle tables alongside the stream.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Instance, LabelSpace, PhaseMark};
use crate::oracle::{ScriptedOracleTable, TruthRecord};

const PREFIXES: [&str; 10] = [
    "alb", "brin", "cask", "dorv", "elm", "fenn", "gald", "harr", "isk", "jorv",
];
const SUFFIXES: [&str; 8] = ["ara", "elo", "iku", "osh", "umi", "anto", "eril", "ovan"];
const NOISE_HEADS: [&str; 8] = ["lo", "mi", "pa", "ru", "se", "ta", "vo", "wi"];
const NOISE_TAILS: [&str; 8] = ["den", "fal", "gor", "hup", "kin", "mot", "nes", "pil"];

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid phase spec: {0}")]
pub struct InvalidPhaseSpec(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub start_ordinal: u64,
    /// Sampling weight per label; absent labels weigh 0.
    pub label_frequency: BTreeMap<String, f64>,
    pub oracle_prompt_version: String,
    /// Rule id to the label it indicates from this phase on.
    #[serde(default)]
    pub rule_overrides: BTreeMap<String, String>,
}

impl PhaseSpec {
    pub fn uniform(start_ordinal: u64, version: &str, labels: &LabelSpace) -> Self {
        Self {
            start_ordinal,
            label_frequency: labels.labels.iter().map(|l| (l.clone(), 1.0)).collect(),
            oracle_prompt_version: version.to_string(),
            rule_overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: u64,
    pub seed: u64,
    pub labels: LabelSpace,
    pub n_rules: usize,
    pub markers_per_rule: usize,
    pub markers_per_instance: usize,
    pub noise_words: usize,
    pub seconds_per_step: i64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n: 500,
            seed: 7,
            labels: LabelSpace::binary_match(),
            n_rules: 10,
            markers_per_rule: 8,
            markers_per_instance: 3,
            noise_words: 5,
            seconds_per_step: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenRule {
    pub id: String,
    pub markers: Vec<String>,
    pub label: String,
}

impl HiddenRule {
    pub fn text(&self, label: &str) -> String {
        format!("{}: {} indicate {}", self.id, self.markers.join(" "), label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedTask {
    pub stream: Vec<Instance>,
    pub oracle: ScriptedOracleTable,
    pub rules: Vec<HiddenRule>,
    pub phases: Vec<PhaseMark>,
}

impl GeneratedTask {
    /// Rule governing an instance, by instance id.
    pub fn rule_of(&self, instance_id: &str) -> Option<&str> {
        self.oracle
            .truth
            .get(instance_id)
            .and_then(|t| t.rule_ids.first())
            .map(String::as_str)
    }
}

pub fn hidden_rules(cfg: &GenConfig) -> Vec<HiddenRule> {
    (0..cfg.n_rules)
        .map(|i| {
            let tag = if i < PREFIXES.len() {
                String::new()
            } else {
                ((b'a' + (i / PREFIXES.len()) as u8 % 26) as char).to_string()
            };
            HiddenRule {
                id: format!("R{i:02}"),
                markers: (0..cfg.markers_per_rule)
                    .map(|j| {
                        let tail = if j < SUFFIXES.len() {
                            SUFFIXES[j].to_string()
                        } else {
                            format!("{}{}", SUFFIXES[j % SUFFIXES.len()], j / SUFFIXES.len())
                        };
                        format!("{}{tag}{tail}", PREFIXES[i % PREFIXES.len()])
                    })
                    .collect(),
                label: cfg.labels.labels[i % cfg.labels.labels.len()].clone(),
            }
        })
        .collect()
}

fn noise_vocabulary() -> Vec<String> {
    NOISE_HEADS
        .iter()
        .flat_map(|h| NOISE_TAILS.iter().map(move |t| format!("{h}{t}")))
        .collect()
}

fn validate(
    phases: &[PhaseSpec],
    cfg: &GenConfig,
    rules: &[HiddenRule],
) -> Result<(), InvalidPhaseSpec> {
    let bad = |m: String| Err(InvalidPhaseSpec(m));
    cfg.labels.validate().map_err(InvalidPhaseSpec)?;
    if phases.is_empty() {
        return bad("at least one phase is required".into());
    }
    if cfg.markers_per_instance == 0 || cfg.markers_per_instance > cfg.markers_per_rule {
        return bad("markers_per_instance must be in 1..=markers_per_rule".into());
    }
    if cfg.n_rules < cfg.labels.labels.len() {
        return bad("need at least one rule per label".into());
    }
    if cfg.seconds_per_step <= 0 {
        return bad("seconds_per_step must be positive".into());
    }
    let mut versions: BTreeMap<&str, &BTreeMap<String, String>> = BTreeMap::new();
    for (i, p) in phases.iter().enumerate() {
        if i == 0 && p.start_ordinal != 1 {
            return bad("the first phase must start at ordinal 1".into());
        }
        if i > 0 && p.start_ordinal <= phases[i - 1].start_ordinal {
            return bad("phases must be ordered by increasing start_ordinal".into());
        }
        if p.label_frequency
            .values()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return bad(format!("phase {i}: weights must be finite and >= 0"));
        }
        if !p.label_frequency.values().any(|w| *w > 0.0) {
            return bad(format!("phase {i}: at least one weight must be positive"));
        }
        for l in p.label_frequency.keys() {
            if cfg.labels.index_of(l).is_none() {
                return bad(format!("phase {i}: unknown label {l}"));
            }
        }
        for (r, l) in &p.rule_overrides {
            if !rules.iter().any(|h| &h.id == r) {
                return bad(format!("phase {i}: unknown rule {r}"));
            }
            if cfg.labels.index_of(l).is_none() {
                return bad(format!("phase {i}: unknown label {l}"));
            }
        }
        for (l, w) in &p.label_frequency {
            if *w > 0.0 && !rules.iter().any(|h| effective(h, p) == l) {
                return bad(format!("phase {i}: no rule indicates {l}"));
            }
        }
        if let Some(prev) = versions.insert(&p.oracle_prompt_version, &p.rule_overrides) {
            if prev != &p.rule_overrides {
                return bad(format!(
                    "version {} is used with different rule overrides",
                    p.oracle_prompt_version
                ));
            }
        }
    }
    Ok(())
}

fn effective<'a>(rule: &'a HiddenRule, phase: &'a PhaseSpec) -> &'a str {
    phase
        .rule_overrides
        .get(&rule.id)
        .map(String::as_str)
        .unwrap_or(&rule.label)
}

/// Deterministic in `cfg.seed`. Each instance carries some markers of one
/// rule plus noise words; its truth is the label that rule indicates in the
/// instance's phase.
pub fn make_drift_stream(
    phases: &[PhaseSpec],
    cfg: &GenConfig,
) -> Result<GeneratedTask, InvalidPhaseSpec> {
    let rules = hidden_rules(cfg);
    validate(phases, cfg, &rules)?;
    let noise = noise_vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut oracle = ScriptedOracleTable::default();
    for p in phases {
        oracle.rule_texts.insert(
            p.oracle_prompt_version.clone(),
            rules
                .iter()
                .map(|r| (r.id.clone(), r.text(effective(r, p))))
                .collect(),
        );
    }
    let marks: Vec<PhaseMark> = phases
        .iter()
        .map(|p| PhaseMark {
            start_ordinal: p.start_ordinal,
            version: p.oracle_prompt_version.clone(),
        })
        .collect();
    oracle.phases = marks.clone();
    let mut stream = Vec::with_capacity(cfg.n as usize);
    for ordinal in 1..=cfg.n {
        let phase = phases
            .iter()
            .rev()
            .find(|p| p.start_ordinal <= ordinal)
            .expect("first phase starts at 1");
        let weights: Vec<(&String, f64)> = cfg
            .labels
            .labels
            .iter()
            .map(|l| (l, phase.label_frequency.get(l).copied().unwrap_or(0.0)))
            .collect();
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let mut x = rng.random::<f64>() * total;
        let mut label = weights
            .iter()
            .rev()
            .find(|(_, w)| *w > 0.0)
            .expect("validated")
            .0;
        for (l, w) in &weights {
            if *w > 0.0 && x < *w {
                label = l;
                break;
            }
            x -= w;
        }
        let candidates: Vec<&HiddenRule> = rules
            .iter()
            .filter(|r| effective(r, phase) == label)
            .collect();
        let rule = candidates[rng.random_range(0..candidates.len())];
        let mut words: Vec<String> = rule
            .markers
            .choose_multiple(&mut rng, cfg.markers_per_instance)
            .cloned()
            .collect();
        words.extend(noise.choose_multiple(&mut rng, cfg.noise_words).cloned());
        words.shuffle(&mut rng);
        let id = format!("s{ordinal:05}");
        oracle.truth.insert(
            id.clone(),
            TruthRecord {
                id: id.clone(),
                label: label.clone(),
                rule_ids: vec![rule.id.clone()],
            },
        );
        stream.push(Instance {
            id,
            ordinal,
            ts: ordinal as i64 * cfg.seconds_per_step,
            fields: BTreeMap::from([("text".to_string(), words.join(" "))]),
            truth: label.clone(),
        });
    }
    Ok(GeneratedTask {
        stream,
        oracle,
        rules,
        phases: marks,
    })
}

/// The standard task: one uniform phase, or two with rule `R00` inverted
/// from `drift_at` on.
pub fn synthetic_task(cfg: &GenConfig, drift_at: Option<u64>) -> GeneratedTask {
    let mut phases = vec![PhaseSpec::uniform(1, "v1", &cfg.labels)];
    if let Some(at) = drift_at {
        let rules = hidden_rules(cfg);
        let r0 = &rules[0];
        let flipped = cfg
            .labels
            .labels
            .iter()
            .find(|l| **l != r0.label)
            .expect("two labels")
            .clone();
        let mut p = PhaseSpec::uniform(at, "v2", &cfg.labels);
        p.rule_overrides.insert(r0.id.clone(), flipped);
        phases.push(p);
    }
    make_drift_stream(&phases, cfg).expect("standard phases are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(task: &GeneratedTask, from: u64, to: u64, label: &str) -> usize {
        task.stream
            .iter()
            .filter(|i| i.ordinal >= from && i.ordinal <= to && i.truth == label)
            .count()
    }

    #[test]
    fn uniform_phase_is_near_uniform() {
        let cfg = GenConfig {
            n: 2000,
            ..Default::default()
        };
        let t = synthetic_task(&cfg, None);
        let m = count(&t, 1, 2000, "Match") as f64;
        // 4 sigma for Binomial(2000, 0.5)
        assert!((m - 1000.0).abs() < 4.0 * (500.0f64).sqrt(), "{m}");
    }

    #[test]
    fn swapped_weights_swap_frequencies() {
        let cfg = GenConfig {
            n: 1000,
            ..Default::default()
        };
        let a = PhaseSpec {
            start_ordinal: 1,
            label_frequency: BTreeMap::from([("Match".into(), 0.8), ("Non-Match".into(), 0.2)]),
            oracle_prompt_version: "v1".into(),
            rule_overrides: BTreeMap::new(),
        };
        let mut b = a.clone();
        b.start_ordinal = 501;
        b.label_frequency = BTreeMap::from([("Match".into(), 0.2), ("Non-Match".into(), 0.8)]);
        b.oracle_prompt_version = "v2".into();
        let t = make_drift_stream(&[a, b], &cfg).unwrap();
        assert!(count(&t, 1, 500, "Match") > 340);
        assert!(count(&t, 501, 1000, "Match") < 160);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = GenConfig::default();
        let a = serde_json::to_string(&synthetic_task(&cfg, Some(250))).unwrap();
        let b = serde_json::to_string(&synthetic_task(&cfg, Some(250))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn drift_flips_rule_zero_only() {
        let t = synthetic_task(&GenConfig::default(), Some(250));
        assert_eq!(t.oracle.rule_texts["v1"]["R00"], t.rules[0].text("Match"));
        assert_eq!(
            t.oracle.rule_texts["v2"]["R00"],
            t.rules[0].text("Non-Match")
        );
        assert_eq!(
            t.oracle.rule_texts["v1"]["R01"],
            t.oracle.rule_texts["v2"]["R01"]
        );
        for i in &t.stream {
            if t.rule_of(&i.id) == Some("R00") {
                let want = if i.ordinal >= 250 {
                    "Non-Match"
                } else {
                    "Match"
                };
                assert_eq!(i.truth, want);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let cfg = GenConfig::default();
        let mut p = PhaseSpec::uniform(2, "v1", &cfg.labels);
        assert!(make_drift_stream(&[p.clone()], &cfg).is_err());
        p.start_ordinal = 1;
        p.label_frequency.values_mut().for_each(|w| *w = 0.0);
        assert!(make_drift_stream(&[p.clone()], &cfg).is_err());
        p.label_frequency.insert("Match".into(), -1.0);
        assert!(make_drift_stream(&[p], &cfg).is_err());
        assert!(make_drift_stream(&[], &cfg).is_err());
    }

    #[test]
    fn markers_are_distinct_across_rules() {
        let rules = hidden_rules(&GenConfig {
            n_rules: 25,
            ..Default::default()
        });
        let mut all: Vec<&String> = rules.iter().flat_map(|r| &r.markers).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
        let noise = noise_vocabulary();
        assert!(!all.iter().any(|m| noise.contains(m)));
    }
}
