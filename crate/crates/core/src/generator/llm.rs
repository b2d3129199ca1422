//! Direct generation through an external completion endpoint. One POST
//! with `{prompt, max_tokens}`; the reply's `text` field is the output.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompt::{template, DEFAULT_TEMPLATE_ID};
use crate::error::{Error, Result};

pub const ENV_ENDPOINT: &str = "CTRLTAB_LLM_ENDPOINT";
pub const ENV_KEY: &str = "CTRLTAB_LLM_KEY";
pub const ENV_TIMEOUT_MS: &str = "CTRLTAB_LLM_TIMEOUT_MS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmClientConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub template_id: String,
    pub max_tokens: usize,
    pub concurrency: usize,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            auth_env: ENV_KEY.to_string(),
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 500,
            template_id: DEFAULT_TEMPLATE_ID.to_string(),
            max_tokens: 128,
            concurrency: 4,
        }
    }
}

impl LlmClientConfig {
    /// Defaults overridden by `CTRLTAB_LLM_ENDPOINT` and `CTRLTAB_LLM_TIMEOUT_MS`.
    pub fn from_env() -> Result<Self> {
        let mut cfg = Self::default();
        if let Ok(url) = std::env::var(ENV_ENDPOINT) {
            cfg.endpoint = url;
        }
        if let Ok(ms) = std::env::var(ENV_TIMEOUT_MS) {
            cfg.timeout_ms =
                ms.parse().map_err(|_| Error::Config(format!("{ENV_TIMEOUT_MS} is not an integer: {ms}")))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint.is_empty() {
            return Err(Error::Config(format!("no LLM endpoint configured (set {ENV_ENDPOINT})")));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout must be positive".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be positive".into()));
        }
        template(&self.template_id)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LlmResponse {
    pub text: String,
    pub retries: u32,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct CompletionReply {
    text: String,
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub struct LlmClient {
    cfg: LlmClientConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl LlmClient {
    pub fn new(cfg: LlmClientConfig) -> Result<Self> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let token = std::env::var(&cfg.auth_env).ok().filter(|t| !t.is_empty());
        Ok(Self { cfg, agent, token })
    }

    pub fn config(&self) -> &LlmClientConfig {
        &self.cfg
    }

    fn attempt(&self, prompt: &str) -> std::result::Result<String, String> {
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req
            .send_json(CompletionRequest { prompt, max_tokens: self.cfg.max_tokens })
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(format!("HTTP {status}"));
        }
        let reply: CompletionReply = resp.body_mut().read_json().map_err(|e| format!("bad reply body: {e}"))?;
        Ok(reply.text)
    }

    /// One completion with exponential backoff between failed attempts.
    pub fn generate(&self, prompt: &str) -> Result<LlmResponse> {
        let hash = prompt_hash(prompt);
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (attempt - 1).min(16)));
            }
            info!("llm request prompt_sha256={hash} attempt={}", attempt + 1);
            match self.attempt(prompt) {
                Ok(text) => {
                    info!("llm response prompt_sha256={hash} chars={}", text.chars().count());
                    if text.trim().is_empty() {
                        return Err(Error::EmptyOutput);
                    }
                    return Ok(LlmResponse { text, retries: attempt });
                }
                Err(e) => {
                    warn!("llm request prompt_sha256={hash} failed: {e}");
                    last = e;
                }
            }
        }
        Err(Error::Transport { attempts: self.cfg.max_retries + 1, message: last })
    }

    /// Runs prompts with at most `concurrency` requests in flight. Results
    /// keep input order.
    pub fn generate_many(&self, prompts: &[String]) -> Vec<Result<LlmResponse>> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<LlmResponse>>>> = prompts.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|s| {
            for _ in 0..self.cfg.concurrency.min(prompts.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= prompts.len() {
                        break;
                    }
                    let r = self.generate(&prompts[i]);
                    *slots[i].lock().unwrap() = Some(r);
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect()
    }
}
