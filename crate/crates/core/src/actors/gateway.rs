//! Remote chat-completion gateway implementing both the policy and the judge
//! over HTTP, with bounded retries, exponential backoff, and a per-call
//! audit log.

use super::{ActorError, Judge, JudgeQuery, Policy, SamplingParams};
use crate::trajectory::{Action, State};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

/// Connection and retry settings for a chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Retries after the first attempt.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
}

fn default_api_key_env() -> String {
    "GRMFILTER_API_KEY".to_string()
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    500
}

/// What a gateway call was for; recorded in the audit log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPurpose {
    Policy,
    Grm,
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    timestamp_ms: u128,
    purpose: CallPurpose,
    prompt_hash: String,
    raw_response: &'a str,
}

/// Blocking HTTP client over a chat-completion-style endpoint.
pub struct Gateway {
    cfg: GatewayConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    audit: Option<Mutex<std::fs::File>>,
}

impl Gateway {
    pub fn new(cfg: GatewayConfig) -> Result<Self, ActorError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ActorError::PolicyBackend(e.to_string()))?;
        let api_key = std::env::var(&cfg.api_key_env).ok();
        let audit = match &cfg.audit_log {
            Some(path) => {
                let file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| {
                        ActorError::PolicyBackend(format!("audit log {}: {e}", path.display()))
                    })?;
                Some(Mutex::new(file))
            }
            None => None,
        };
        Ok(Gateway {
            cfg,
            api_key,
            client,
            audit,
        })
    }

    /// One chat completion with bounded retries and exponential backoff.
    /// Every attempt that yields a response body is audited.
    pub fn complete(
        &self,
        purpose: CallPurpose,
        prompt: &str,
        params: &SamplingParams,
        seed: Option<u64>,
    ) -> Result<String, ActorError> {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_response_len,
        });
        if let Some(seed) = seed {
            body["seed"] = json!(seed);
        }
        let mut last_err = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                let wait = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.try_once(&body) {
                Ok(raw) => {
                    self.audit(purpose, prompt, &raw);
                    match extract_content(&raw) {
                        Some(content) => return Ok(content),
                        None => last_err = format!("malformed completion response: {raw}"),
                    }
                }
                Err(e) => last_err = e,
            }
        }
        let err = format!(
            "gave up after {} attempts: {last_err}",
            self.cfg.retries + 1
        );
        match purpose {
            CallPurpose::Policy => Err(ActorError::PolicyBackend(err)),
            CallPurpose::Grm => Err(ActorError::JudgeBackend(err)),
        }
    }

    fn try_once(&self, body: &serde_json::Value) -> Result<String, String> {
        let mut req = self.client.post(&self.cfg.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.text().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {text}"));
        }
        Ok(text)
    }

    fn audit(&self, purpose: CallPurpose, prompt: &str, raw_response: &str) {
        let Some(audit) = &self.audit else { return };
        let record = AuditRecord {
            timestamp_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            purpose,
            prompt_hash: sha256_hex(prompt.as_bytes()),
            raw_response,
        };
        if let (Ok(mut file), Ok(line)) = (audit.lock(), serde_json::to_string(&record)) {
            let _ = writeln!(file, "{line}");
        }
    }
}

fn extract_content(raw: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(raw).ok()?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
}

/// Hex-encoded SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Policy backed by a gateway: N candidates are N independent completion
/// requests, never one n-best request.
pub struct GatewayPolicy {
    gateway: std::sync::Arc<Gateway>,
    params: SamplingParams,
}

impl GatewayPolicy {
    pub fn new(gateway: std::sync::Arc<Gateway>, params: SamplingParams) -> Self {
        GatewayPolicy { gateway, params }
    }

    fn render_prompt(state: &State) -> String {
        let mut prompt = state.initial_prompt.clone();
        for step in state.history() {
            prompt.push_str(&format!(
                "\n\n[assistant]\n{}\n[tool output]\n{}",
                step.action.raw_text, step.observation.raw_text
            ));
        }
        prompt.push_str("\n\n[assistant]\n");
        prompt
    }
}

impl Policy for GatewayPolicy {
    fn sample_candidates(
        &self,
        state: &State,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Action>, ActorError> {
        let prompt = Self::render_prompt(state);
        let mut actions = Vec::with_capacity(n);
        for k in 0..n {
            let child = crate::seeds::derive_path(seed, &[crate::seeds::stream::CANDIDATE, k as u64]);
            let text =
                self.gateway
                    .complete(CallPurpose::Policy, &prompt, &self.params, Some(child))?;
            actions.push(Action::parse(&text));
        }
        Ok(actions)
    }
}

/// Judge backed by a gateway; reads only the assembled prompt.
pub struct GatewayJudge {
    gateway: std::sync::Arc<Gateway>,
    params: SamplingParams,
}

impl GatewayJudge {
    pub fn new(gateway: std::sync::Arc<Gateway>, params: SamplingParams) -> Self {
        GatewayJudge { gateway, params }
    }
}

impl Judge for GatewayJudge {
    fn judge(&self, query: &JudgeQuery<'_>) -> Result<String, ActorError> {
        self.gateway
            .complete(CallPurpose::Grm, query.prompt(), &self.params, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Minimal one-shot HTTP server: answers `responses` in order, one per
    /// connection, then stops.
    fn spawn_server(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(rest) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = rest.trim().parse().unwrap_or(0);
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut payload = vec![0u8; content_length];
                reader.read_exact(&mut payload).unwrap();
                let mut stream = reader.into_inner();
                let reason = if status == 200 { "OK" } else { "Error" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\nContent-Length: {}\r\nContent-Type: application/json\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(response.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    fn completion_body(content: &str) -> String {
        serde_json::to_string(&json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        }))
        .unwrap()
    }

    fn cfg(endpoint: String, audit: Option<PathBuf>) -> GatewayConfig {
        GatewayConfig {
            endpoint,
            model: "judge-1".into(),
            api_key_env: "GRMFILTER_TEST_KEY_UNSET".into(),
            timeout_secs: 5,
            retries: 2,
            backoff_ms: 1,
            audit_log: audit,
        }
    }

    #[test]
    fn completes_and_audits() {
        let dir = tempfile::tempdir().unwrap();
        let audit_path = dir.path().join("audit.jsonl");
        let (endpoint, server) = spawn_server(vec![(200, completion_body("run_tests"))]);
        let gateway = Gateway::new(cfg(endpoint, Some(audit_path.clone()))).unwrap();
        let out = gateway
            .complete(CallPurpose::Policy, "prompt", &SamplingParams::default(), None)
            .unwrap();
        assert_eq!(out, "run_tests");
        server.join().unwrap();

        let audit = std::fs::read_to_string(&audit_path).unwrap();
        let record: serde_json::Value = serde_json::from_str(audit.lines().next().unwrap()).unwrap();
        assert_eq!(record["purpose"], "policy");
        assert_eq!(record["prompt_hash"], sha256_hex(b"prompt"));
        assert!(record["raw_response"].as_str().unwrap().contains("run_tests"));
    }

    #[test]
    fn retries_then_succeeds() {
        let (endpoint, server) = spawn_server(vec![
            (500, "{\"error\":\"overloaded\"}".into()),
            (500, "{\"error\":\"overloaded\"}".into()),
            (200, completion_body("ls")),
        ]);
        let gateway = Gateway::new(cfg(endpoint, None)).unwrap();
        let out = gateway
            .complete(CallPurpose::Grm, "p", &SamplingParams::default(), None)
            .unwrap();
        assert_eq!(out, "ls");
        server.join().unwrap();
    }

    #[test]
    fn exhausted_retries_abort() {
        let (endpoint, server) = spawn_server(vec![
            (500, "{}".into()),
            (500, "{}".into()),
            (500, "{}".into()),
        ]);
        let gateway = Gateway::new(cfg(endpoint, None)).unwrap();
        let err = gateway
            .complete(CallPurpose::Policy, "p", &SamplingParams::default(), None)
            .unwrap_err();
        assert!(matches!(err, ActorError::PolicyBackend(_)));
        server.join().unwrap();
    }

    #[test]
    fn gateway_policy_issues_n_independent_requests() {
        let responses: Vec<(u16, String)> = (0..5).map(|_| (200, completion_body("ls"))).collect();
        let (endpoint, server) = spawn_server(responses);
        let gateway = Arc::new(Gateway::new(cfg(endpoint, None)).unwrap());
        let policy = GatewayPolicy::new(gateway, SamplingParams::default());
        let state = State::new("t", "prompt");
        let actions = policy.sample_candidates(&state, 5, 7).unwrap();
        assert_eq!(actions.len(), 5);
        // The server accepted exactly 5 connections, or join would hang.
        server.join().unwrap();
    }
}
