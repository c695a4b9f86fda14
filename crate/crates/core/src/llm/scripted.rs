use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{
    fingerprint, ChatRequest, ChatResponse, Fingerprint, LlmError, LlmProvider, ProviderMeta,
};

/// One line of a script file: either an exact request fingerprint or a
/// regex matched against the canonical request text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<Fingerprint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub response: String,
}

/// Deterministic provider. Fingerprints are looked up first, then patterns in
/// file order; anything else is a [`LlmError::ScriptMiss`].
#[derive(Debug, Default)]
pub struct ScriptedLlm {
    by_fingerprint: HashMap<Fingerprint, String>,
    patterns: Vec<(Regex, String)>,
}

impl ScriptedLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, String> {
        let mut s = Self::new();
        for (i, e) in entries.into_iter().enumerate() {
            match (e.fingerprint, e.pattern) {
                (Some(fp), None) => {
                    s.by_fingerprint.insert(fp, e.response);
                }
                (None, Some(p)) => {
                    let re = Regex::new(&p).map_err(|err| format!("entry {}: {err}", i + 1))?;
                    s.patterns.push((re, e.response));
                }
                _ => {
                    return Err(format!(
                        "entry {}: exactly one of fingerprint or pattern is required",
                        i + 1
                    ))
                }
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let f = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut entries = Vec::new();
        for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ScriptEntry = serde_json::from_str(&line)
                .map_err(|e| format!("{}:{}: {e}", path.display(), n + 1))?;
            entries.push(e);
        }
        Self::from_entries(entries)
    }

    pub fn respond_to(&mut self, req: &ChatRequest, response: impl Into<String>) -> &mut Self {
        self.by_fingerprint
            .insert(fingerprint(req), response.into());
        self
    }

    pub fn respond_matching(&mut self, pattern: &str, response: impl Into<String>) -> &mut Self {
        self.patterns.push((
            Regex::new(pattern).expect("valid script pattern"),
            response.into(),
        ));
        self
    }
}

impl LlmProvider for ScriptedLlm {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let fp = fingerprint(req);
        let canonical = req.canonical();
        let text = self.by_fingerprint.get(&fp).cloned().or_else(|| {
            self.patterns
                .iter()
                .find(|(re, _)| re.is_match(&canonical))
                .map(|(_, r)| r.clone())
        });
        match text {
            Some(text) => Ok(ChatResponse {
                text,
                provider_meta: ProviderMeta::default(),
            }),
            None => Err(LlmError::ScriptMiss {
                fingerprint: fp,
                excerpt: canonical.chars().take(160).collect(),
            }),
        }
    }
}

/// Wraps a provider and keeps every exchange, so a live session can be saved
/// as a fingerprint script and replayed offline.
pub struct RecordingLlm<P> {
    inner: P,
    log: Mutex<Vec<ScriptEntry>>,
}

impl<P: LlmProvider> RecordingLlm<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<ScriptEntry> {
        self.log.lock().expect("recording lock").clone()
    }

    pub fn write_script(&self, out: &mut impl Write) -> std::io::Result<()> {
        for e in self.entries() {
            writeln!(
                out,
                "{}",
                serde_json::to_string(&e).expect("entry serializes")
            )?;
        }
        Ok(())
    }
}

impl<P: LlmProvider> LlmProvider for RecordingLlm<P> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let resp = self.inner.complete(req)?;
        self.log.lock().expect("recording lock").push(ScriptEntry {
            fingerprint: Some(fingerprint(req)),
            pattern: None,
            response: resp.text.clone(),
        });
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_lookup_and_miss() {
        let req = ChatRequest::new("[task:confidence]", "dialogue");
        let mut s = ScriptedLlm::new();
        s.respond_to(&req, "[A] High");
        assert_eq!(s.complete(&req).unwrap().text, "[A] High");
        let other = ChatRequest::new("[task:confidence]", "other");
        assert!(matches!(
            s.complete(&other),
            Err(LlmError::ScriptMiss { .. })
        ));
    }

    #[test]
    fn fingerprint_beats_pattern() {
        let req = ChatRequest::new("[task:predict]", "x");
        let mut s = ScriptedLlm::new();
        s.respond_matching(r"task:predict", "Non-Match");
        s.respond_to(&req, "Match");
        assert_eq!(s.complete(&req).unwrap().text, "Match");
        let other = ChatRequest::new("[task:predict]", "y");
        assert_eq!(s.complete(&other).unwrap().text, "Non-Match");
    }

    #[test]
    fn recorded_script_replays() {
        let mut base = ScriptedLlm::new();
        base.respond_matching(".", "ok");
        let rec = RecordingLlm::new(base);
        let req = ChatRequest::new("s", "u");
        rec.complete(&req).unwrap();
        let mut buf = Vec::new();
        rec.write_script(&mut buf).unwrap();
        let entries: Vec<ScriptEntry> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let replay = ScriptedLlm::from_entries(entries).unwrap();
        assert_eq!(replay.complete(&req).unwrap().text, "ok");
    }

    #[test]
    fn entry_needs_exactly_one_key() {
        let e = ScriptEntry {
            fingerprint: None,
            pattern: None,
            response: "x".into(),
        };
        assert!(ScriptedLlm::from_entries([e]).is_err());
    }
}
