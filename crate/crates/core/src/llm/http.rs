use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    fingerprint, ChatRequest, ChatResponse, LlmError, LlmProvider, ProviderMeta, TokenCounts,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpLlmConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
}

impl Default for HttpLlmConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key: None,
            timeout_ms: 60_000,
            max_retries: 3,
            backoff_base_ms: 500,
            max_in_flight: 4,
        }
    }
}

struct Gate {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut used = self.used.lock().expect("gate lock");
        while *used >= self.cap {
            used = self.freed.wait(used).expect("gate lock");
        }
        *used += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

/// OpenAI-compatible chat-completions client with bounded retries.
pub struct HttpLlm {
    cfg: HttpLlmConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

enum Attempt {
    Done(ChatResponse),
    Retry(LlmError),
    Fail(LlmError),
}

impl HttpLlm {
    pub fn new(cfg: HttpLlmConfig) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| e.to_string())?;
        let gate = Gate {
            cap: cfg.max_in_flight.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        };
        Ok(Self { cfg, client, gate })
    }

    fn body(&self, req: &ChatRequest) -> serde_json::Value {
        let mut system = req.system.clone();
        if let Some(h) = &req.schema_hint {
            system.push_str("\n\n");
            system.push_str(h);
        }
        let mut messages = vec![json!({ "role": "system", "content": system })];
        for t in &req.turns {
            messages.push(json!({ "role": t.role.as_str(), "content": t.text }));
        }
        json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }

    fn attempt(&self, req: &ChatRequest) -> Attempt {
        let fp = fingerprint(req);
        let url = format!(
            "{}/chat/completions",
            self.cfg.base_url.trim_end_matches('/')
        );
        let mut call = self.client.post(url).json(&self.body(req));
        if let Some(k) = &self.cfg.api_key {
            call = call.bearer_auth(k);
        }
        let started = Instant::now();
        let resp = match call.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(LlmError::Timeout { fingerprint: fp })
            }
            Err(e) => {
                return Attempt::Retry(LlmError::Transport {
                    fingerprint: fp,
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status();
        if status.as_u16() == 429 {
            return Attempt::Retry(LlmError::RateLimited { fingerprint: fp });
        }
        if status.is_server_error() {
            return Attempt::Retry(LlmError::Transport {
                fingerprint: fp,
                message: format!("HTTP {status}"),
            });
        }
        if !status.is_success() {
            let message = format!("HTTP {status}: {}", resp.text().unwrap_or_default());
            return Attempt::Fail(LlmError::ProviderRefusal {
                fingerprint: fp,
                message,
            });
        }
        let reply: WireReply = match resp.json() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(LlmError::Timeout { fingerprint: fp })
            }
            Err(e) => {
                return Attempt::Fail(LlmError::Transport {
                    fingerprint: fp,
                    message: format!("bad response body: {e}"),
                })
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        let Some(choice) = reply.choices.into_iter().next() else {
            return Attempt::Fail(LlmError::ProviderRefusal {
                fingerprint: fp,
                message: "no choices in response".into(),
            });
        };
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Attempt::Fail(LlmError::ProviderRefusal {
                fingerprint: fp,
                message: "content filtered".into(),
            });
        }
        Attempt::Done(ChatResponse {
            text: choice.message.content.unwrap_or_default(),
            provider_meta: ProviderMeta {
                latency_ms,
                token_counts: reply.usage.map(|u| TokenCounts {
                    prompt: u.prompt_tokens,
                    completion: u.completion_tokens,
                }),
            },
        })
    }
}

impl LlmProvider for HttpLlm {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.validate()?;
        let _slot = self.gate.enter();
        let mut tries = 0;
        loop {
            match self.attempt(req) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if tries >= self.cfg.max_retries => return Err(e),
                Attempt::Retry(e) => {
                    let wait = self.cfg.backoff_base_ms.saturating_mul(1 << tries.min(16));
                    tracing::warn!(error = %e, retry = tries + 1, wait_ms = wait, "retrying LLM call");
                    std::thread::sleep(Duration::from_millis(wait));
                    tries += 1;
                }
            }
        }
    }
}
