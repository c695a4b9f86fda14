//! Completion contract for the agent's base model and the LLM-backed oracle.

mod http;
mod scripted;

use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpLlm, HttpLlmConfig};
pub use scripted::{RecordingLlm, ScriptEntry, ScriptedLlm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub turns: Vec<Turn>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_hint: Option<String>,
}

impl ChatRequest {
    /// Single user turn at temperature 0.
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            turns: vec![Turn {
                role: Role::User,
                text: user.into(),
            }],
            temperature: 0.0,
            max_tokens: 512,
            schema_hint: None,
        }
    }

    pub fn with_schema_hint(mut self, hint: impl Into<String>) -> Self {
        self.schema_hint = Some(hint.into());
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let fp = fingerprint(self);
        let bad = |msg: &str| {
            Err(LlmError::InvalidRequest {
                fingerprint: fp,
                message: msg.to_string(),
            })
        };
        match self.turns.last() {
            None => bad("request has no turns"),
            Some(t) if t.role != Role::User => bad("last turn must be from the user"),
            _ if !(self.temperature >= 0.0 && self.temperature.is_finite()) => {
                bad("temperature must be >= 0")
            }
            _ if self.max_tokens == 0 => bad("max_tokens must be positive"),
            _ => Ok(()),
        }
    }

    /// Text of the last user turn.
    pub fn user_text(&self) -> &str {
        self.turns.last().map(|t| t.text.as_str()).unwrap_or("")
    }

    /// First line of the system prompt, e.g. `[task:predict]`.
    pub fn task_tag(&self) -> &str {
        self.system.lines().next().unwrap_or("").trim()
    }

    /// Whitespace-normalized rendering in fixed field order; the input to
    /// [`fingerprint`] and to script patterns.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        out.push_str("system: ");
        out.push_str(&normalize_ws(&self.system));
        for t in &self.turns {
            out.push('\n');
            out.push_str(t.role.as_str());
            out.push_str(": ");
            out.push_str(&normalize_ws(&t.text));
        }
        out.push_str(&format!(
            "\ntemperature: {}\nmax_tokens: {}",
            self.temperature, self.max_tokens
        ));
        if let Some(h) = &self.schema_hint {
            out.push_str("\nschema: ");
            out.push_str(&normalize_ws(h));
        }
        out
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderMeta {
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_counts: Option<TokenCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub provider_meta: ProviderMeta,
}

/// 64-bit digest of a canonicalized request, shown as 16 hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub u64);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl std::str::FromStr for Fingerprint {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s.trim(), 16).map(Fingerprint)
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn fingerprint(req: &ChatRequest) -> Fingerprint {
    let digest = Sha256::digest(req.canonical().as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    Fingerprint(u64::from_be_bytes(head))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport error [{fingerprint}]: {message}")]
    Transport {
        fingerprint: Fingerprint,
        message: String,
    },
    #[error("timeout [{fingerprint}]")]
    Timeout { fingerprint: Fingerprint },
    #[error("rate limited [{fingerprint}]")]
    RateLimited { fingerprint: Fingerprint },
    #[error("provider refused [{fingerprint}]: {message}")]
    ProviderRefusal {
        fingerprint: Fingerprint,
        message: String,
    },
    #[error("no scripted response for [{fingerprint}]: {excerpt}")]
    ScriptMiss {
        fingerprint: Fingerprint,
        excerpt: String,
    },
    #[error("invalid request [{fingerprint}]: {message}")]
    InvalidRequest {
        fingerprint: Fingerprint,
        message: String,
    },
}

impl LlmError {
    pub fn fingerprint(&self) -> Fingerprint {
        match self {
            LlmError::Transport { fingerprint, .. }
            | LlmError::Timeout { fingerprint }
            | LlmError::RateLimited { fingerprint }
            | LlmError::ProviderRefusal { fingerprint, .. }
            | LlmError::ScriptMiss { fingerprint, .. }
            | LlmError::InvalidRequest { fingerprint, .. } => *fingerprint,
        }
    }
}

pub trait LlmProvider: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<P: LlmProvider + ?Sized> LlmProvider for std::sync::Arc<P> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }
}

impl<P: LlmProvider + ?Sized> LlmProvider for Box<P> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unparseable choice: {0:?}")]
pub struct Unparseable(pub String);

/// Output formats understood by [`parse_choice`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChoiceFormat {
    Bracketed,
    Bare,
}

pub fn option_letter(index: usize) -> char {
    (b'A' + index as u8) as char
}

pub fn format_choice(allowed: &[impl AsRef<str>], index: usize, format: ChoiceFormat) -> String {
    let label = allowed[index].as_ref();
    match format {
        ChoiceFormat::Bracketed => format!("[{}] {}", option_letter(index), label),
        ChoiceFormat::Bare => label.to_string(),
    }
}

fn words(s: &str) -> String {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Maps a free-text answer onto one of `allowed` and returns its index.
///
/// A bracketed option letter (`[B]`) wins. Otherwise the earliest whole-word,
/// case-insensitive occurrence of a label is taken, preferring the longer
/// label when two start at the same place (`Non-Match` over `Match`).
pub fn parse_choice(text: &str, allowed: &[impl AsRef<str>]) -> Result<usize, Unparseable> {
    static BRACKET: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = BRACKET.get_or_init(|| Regex::new(r"\[([A-Za-z])\]").expect("valid regex"));
    for cap in re.captures_iter(text) {
        let c = cap[1]
            .chars()
            .next()
            .expect("one char")
            .to_ascii_uppercase();
        let idx = (c as u8 - b'A') as usize;
        if idx < allowed.len() {
            return Ok(idx);
        }
    }
    let hay = format!(" {} ", words(text));
    let mut best: Option<(usize, usize, usize)> = None;
    for (i, label) in allowed.iter().enumerate() {
        let needle = words(label.as_ref());
        if needle.is_empty() {
            continue;
        }
        let padded = format!(" {needle} ");
        if let Some(pos) = hay.find(&padded) {
            let better = match best {
                None => true,
                Some((bp, blen, _)) => pos < bp || (pos == bp && needle.len() > blen),
            };
            if better {
                best = Some((pos, needle.len(), i));
            }
        }
    }
    best.map(|(_, _, i)| i)
        .ok_or_else(|| Unparseable(text.chars().take(80).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONF: [&str; 3] = ["High", "Moderate", "Low"];

    #[test]
    fn bracketed_letter() {
        assert_eq!(
            parse_choice("[B] Moderate confidence with specific uncertainties", &CONF),
            Ok(1)
        );
        assert_eq!(parse_choice("I pick [c]", &CONF), Ok(2));
    }

    #[test]
    fn bare_labels() {
        assert_eq!(parse_choice("HIGH", &CONF), Ok(0));
        assert!(parse_choice("cannot say", &CONF).is_err());
        assert!(parse_choice("highly unlikely", &CONF).is_err());
    }

    #[test]
    fn longest_label_at_same_position() {
        let labels = ["Match", "Non-Match"];
        assert_eq!(parse_choice("Non-Match", &labels), Ok(1));
        assert_eq!(parse_choice("non match, clearly", &labels), Ok(1));
        assert_eq!(parse_choice("Match. Not a non-match.", &labels), Ok(0));
    }

    #[test]
    fn round_trip() {
        for fmt in [ChoiceFormat::Bracketed, ChoiceFormat::Bare] {
            for i in 0..CONF.len() {
                assert_eq!(parse_choice(&format_choice(&CONF, i, fmt), &CONF), Ok(i));
            }
        }
    }

    #[test]
    fn fingerprint_ignores_whitespace_only_changes() {
        let a = ChatRequest::new("[task:predict]\nsys", "hello world");
        let b = ChatRequest::new("[task:predict]\nsys  ", "hello   world \n");
        let c = ChatRequest::new("[task:predict]\nsys", "hello worle");
        assert_eq!(fingerprint(&a), fingerprint(&a.clone()));
        assert_eq!(fingerprint(&a), fingerprint(&b));
        assert_ne!(fingerprint(&a), fingerprint(&c));
        assert_eq!(fingerprint(&a).to_string().len(), 16);
    }

    #[test]
    fn fingerprint_serde_round_trip() {
        let f = fingerprint(&ChatRequest::new("s", "u"));
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<Fingerprint>(&s).unwrap(), f);
    }

    #[test]
    fn request_validation() {
        let mut r = ChatRequest::new("s", "u");
        assert!(r.validate().is_ok());
        r.turns.push(Turn {
            role: Role::Assistant,
            text: "a".into(),
        });
        assert!(r.validate().is_err());
        r.turns.clear();
        assert!(r.validate().is_err());
    }
}
