//! Chat backends: an HTTP chat-completion client with rate limiting and a
//! bounded in-flight window, and a deterministic scripted oracle that makes
//! whole pipeline runs reproducible offline.

use std::io::BufRead;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::LlmError;

pub trait ChatBackend: Send + Sync {
    fn complete_raw(&self, prompt: &str) -> Result<String, LlmError>;
}

/// Bounded window of concurrent requests. `acquire` blocks until a slot is
/// free; the returned guard releases it.
pub struct InflightGate {
    max: usize,
    state: Mutex<usize>,
    cv: Condvar,
}

impl InflightGate {
    pub fn new(max: usize) -> Self {
        InflightGate {
            max: max.max(1),
            state: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InflightGuard<'_> {
        let mut count = self.state.lock().unwrap();
        while *count >= self.max {
            count = self.cv.wait(count).unwrap();
        }
        *count += 1;
        InflightGuard { gate: self }
    }
}

pub struct InflightGuard<'a> {
    gate: &'a InflightGate,
}

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.gate.state.lock().unwrap();
        *count -= 1;
        self.gate.cv.notify_one();
    }
}

/// Token-bucket rate limiter; `acquire` sleeps until a token is available.
pub struct TokenBucket {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(requests_per_second: f64) -> Self {
        let rps = requests_per_second.max(1e-3);
        TokenBucket {
            capacity: rps.max(1.0),
            refill_per_sec: rps,
            state: Mutex::new((rps.max(1.0), Instant::now())),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let (ref mut tokens, ref mut last) = *state;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.refill_per_sec)
                    .min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    None
                } else {
                    Some(Duration::from_secs_f64((1.0 - *tokens) / self.refill_per_sec))
                }
            };
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d),
            }
        }
    }
}

/// HTTP chat-completion backend configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_rps")]
    pub requests_per_second: f64,
}

fn default_max_tokens() -> u32 {
    256
}

fn default_api_key_env() -> String {
    "CGR3_API_KEY".to_string()
}

fn default_max_in_flight() -> usize {
    4
}

fn default_rps() -> f64 {
    2.0
}

/// Chat-completion client POSTing `{model, messages, temperature,
/// max_tokens}` and reading `choices[0].message.content`.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    gate: InflightGate,
    bucket: TokenBucket,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    content: String,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let gate = InflightGate::new(config.max_in_flight);
        let bucket = TokenBucket::new(config.requests_per_second);
        HttpBackend {
            config,
            client: reqwest::blocking::Client::new(),
            gate,
            bucket,
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete_raw(&self, prompt: &str) -> Result<String, LlmError> {
        self.bucket.acquire();
        let _slot = self.gate.acquire();
        let api_key = std::env::var(&self.config.api_key_env).unwrap_or_default();
        let request = ChatRequest {
            model: &self.config.model,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut builder = self.client.post(&self.config.endpoint).json(&request);
        if !api_key.is_empty() {
            builder = builder.bearer_auth(api_key);
        }
        let response: ChatResponse = builder
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| LlmError::Transport {
                message: e.to_string(),
            })?;
        response
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Transport {
                message: "empty choices in chat response".to_string(),
            })
    }
}

/// One scripted rule; first matching rule wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Substring the prompt must contain; absent means match-any.
    #[serde(default, rename = "match")]
    pub matcher: Option<String>,
    #[serde(flatten)]
    pub action: ScriptAction,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptAction {
    /// Canned reply text.
    Reply(String),
    /// Built-in behavior by name.
    Rule(BuiltinRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinRule {
    /// Echo the candidate list of a ranking prompt unchanged as the final
    /// order: the identity re-ranker.
    EchoCandidates,
}

/// Deterministic scripted oracle: a list of rules over prompt substrings.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedBackend { rules }
    }

    /// Reply `reply` to any prompt containing `needle`.
    pub fn on(mut self, needle: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            matcher: Some(needle.into()),
            action: ScriptAction::Reply(reply.into()),
        });
        self
    }

    /// Identity re-ranking for every ranking prompt.
    pub fn echo_candidates(mut self) -> Self {
        self.rules.push(ScriptRule {
            matcher: Some("The list of candidate answers is [".into()),
            action: ScriptAction::Rule(BuiltinRule::EchoCandidates),
        });
        self
    }

    /// Loads JSON-lines rules: `{"match": "...", "reply": "..."}` or
    /// `{"match": "...", "rule": "echo_candidates"}`.
    pub fn from_jsonl(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path_str = path.as_ref().display().to_string();
        let file = std::fs::File::open(path.as_ref()).map_err(|e| LlmError::Transport {
            message: format!("cannot open script {path_str}: {e}"),
        })?;
        let mut rules = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| LlmError::Transport {
                message: format!("cannot read script {path_str}: {e}"),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rule: ScriptRule = serde_json::from_str(&line).map_err(|e| LlmError::Transport {
                message: format!("bad script rule in {path_str}: {e}"),
            })?;
            rules.push(rule);
        }
        Ok(ScriptedBackend { rules })
    }
}

/// Extracts `[...]` after `needle` in the prompt.
fn bracket_list_after<'a>(prompt: &'a str, needle: &str) -> Option<&'a str> {
    let start = prompt.find(needle)? + needle.len();
    let rest = &prompt[start..];
    let end = rest.find(']')?;
    Some(&rest[..end])
}

impl ChatBackend for ScriptedBackend {
    fn complete_raw(&self, prompt: &str) -> Result<String, LlmError> {
        for rule in &self.rules {
            let hit = match &rule.matcher {
                Some(needle) => prompt.contains(needle.as_str()),
                None => true,
            };
            if !hit {
                continue;
            }
            match &rule.action {
                ScriptAction::Reply(reply) => return Ok(reply.clone()),
                ScriptAction::Rule(BuiltinRule::EchoCandidates) => {
                    let list = bracket_list_after(prompt, "The list of candidate answers is [")
                        .ok_or_else(|| LlmError::NoScriptedReply {
                            prompt_prefix: prompt.chars().take(80).collect(),
                        })?;
                    return Ok(format!("The final order: [{list}]"));
                }
            }
        }
        Err(LlmError::NoScriptedReply {
            prompt_prefix: prompt.chars().take(80).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn scripted_first_match_wins() {
        let backend = ScriptedBackend::default()
            .on("alpha", "first")
            .on("alpha", "second");
        assert_eq!(backend.complete_raw("has alpha inside").unwrap(), "first");
        assert!(matches!(
            backend.complete_raw("nothing"),
            Err(LlmError::NoScriptedReply { .. })
        ));
    }

    #[test]
    fn echo_candidates_replays_the_list() {
        let backend = ScriptedBackend::default().echo_candidates();
        let reply = backend
            .complete_raw("... The list of candidate answers is [a, b, c]. ...")
            .unwrap();
        assert_eq!(reply, "The final order: [a, b, c]");
    }

    #[test]
    fn script_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        std::fs::write(
            &path,
            r#"{"match": "hello", "reply": "The possible answers: [x]"}
{"match": "The list of candidate answers is [", "rule": "echo_candidates"}
"#,
        )
        .unwrap();
        let backend = ScriptedBackend::from_jsonl(&path).unwrap();
        assert_eq!(
            backend.complete_raw("hello there").unwrap(),
            "The possible answers: [x]"
        );
        assert_eq!(
            backend
                .complete_raw("The list of candidate answers is [p, q].")
                .unwrap(),
            "The final order: [p, q]"
        );
    }

    #[test]
    fn inflight_gate_never_exceeds_window() {
        let gate = Arc::new(InflightGate::new(3));
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..32 {
            let gate = gate.clone();
            let current = current.clone();
            let peak = peak.clone();
            handles.push(std::thread::spawn(move || {
                let _slot = gate.acquire();
                let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(2));
                current.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }

    #[test]
    fn token_bucket_throttles() {
        let bucket = TokenBucket::new(50.0);
        let start = Instant::now();
        for _ in 0..60 {
            bucket.acquire();
        }
        // 60 requests at 50/s with a burst capacity of 50 needs >= ~0.2s
        assert!(start.elapsed() >= Duration::from_millis(150));
    }
}
