use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Timepoint;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub ordinal: u64,
    pub ts: Timepoint,
    pub fields: BTreeMap<String, String>,
    /// Hidden label. Never rendered into a policy prompt.
    pub truth: String,
}

impl Instance {
    /// Field rendering shown to the policy, one `name: value` line per field.
    pub fn render(&self) -> String {
        self.fields
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub labels: Vec<String>,
    /// Positive class for sensitivity/specificity in binary mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive: Option<String>,
    /// Used when the policy answer cannot be parsed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

impl LabelSpace {
    pub fn new(labels: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            labels: labels.into_iter().map(Into::into).collect(),
            positive: None,
            fallback: None,
        }
    }

    /// Match / Non-Match with Match positive and Non-Match as the fallback.
    pub fn binary_match() -> Self {
        Self {
            labels: vec!["Match".into(), "Non-Match".into()],
            positive: Some("Match".into()),
            fallback: Some("Non-Match".into()),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.labels.len() < 2 {
            return Err("label space needs at least two labels".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.labels {
            if l.trim().is_empty() || !seen.insert(l) {
                return Err(format!("label {l:?} is empty or repeated"));
            }
        }
        for l in self.positive.iter().chain(&self.fallback) {
            if !self.labels.contains(l) {
                return Err(format!("{l:?} is not in the label space"));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn positive_index(&self) -> Option<usize> {
        match (&self.positive, self.labels.len()) {
            (Some(p), 2) => self.index_of(p),
            _ => None,
        }
    }

    pub fn fallback_label(&self) -> &str {
        self.fallback.as_deref().unwrap_or(&self.labels[0])
    }
}

pub fn load_stream(path: &Path) -> Result<Vec<Instance>, String> {
    let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out: Vec<Instance> = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance = serde_json::from_str(&line)
            .map_err(|e| format!("{}:{}: {e}", path.display(), n + 1))?;
        out.push(inst);
    }
    validate_stream(&out)?;
    Ok(out)
}

pub fn validate_stream(stream: &[Instance]) -> Result<(), String> {
    for w in stream.windows(2) {
        if w[1].ordinal <= w[0].ordinal {
            return Err(format!(
                "ordinals must increase: {} follows {}",
                w[1].ordinal, w[0].ordinal
            ));
        }
        if w[1].ts < w[0].ts {
            return Err(format!(
                "timestamps go backwards at ordinal {}",
                w[1].ordinal
            ));
        }
    }
    if let Some(first) = stream.first() {
        if first.ordinal == 0 {
            return Err("ordinals start at 1".into());
        }
    }
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        writeln!(f, "{}", serde_json::to_string(r).expect("row serializes"))?;
    }
    f.flush()
}
