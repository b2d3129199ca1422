//! Adapter for externally computed learned metrics. The endpoint receives
//! `{metric, candidates, references}` and answers `{scores: [...]}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait ExternalScorer {
    fn name(&self) -> &str;
    /// One score per candidate.
    fn score(&self, candidates: &[String], references: &[String]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpScorerConfig {
    pub metric: String,
    pub endpoint: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

pub struct HttpScorer {
    cfg: HttpScorerConfig,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    metric: &'a str,
    candidates: &'a [String],
    references: &'a [String],
}

#[derive(Deserialize)]
struct ScoreReply {
    scores: Vec<f64>,
}

impl HttpScorer {
    pub fn new(cfg: HttpScorerConfig) -> Result<Self> {
        if cfg.endpoint.is_empty() || cfg.timeout_ms == 0 {
            return Err(Error::Config("scorer needs an endpoint and a positive timeout".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, agent })
    }

    fn attempt(&self, req: &ScoreRequest<'_>) -> std::result::Result<Vec<f64>, String> {
        let mut resp = self.agent.post(&self.cfg.endpoint).send_json(req).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(format!("HTTP {status}"));
        }
        let reply: ScoreReply = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        Ok(reply.scores)
    }
}

impl ExternalScorer for HttpScorer {
    fn name(&self) -> &str {
        &self.cfg.metric
    }

    fn score(&self, candidates: &[String], references: &[String]) -> Result<Vec<f64>> {
        let req = ScoreRequest { metric: &self.cfg.metric, candidates, references };
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms << (attempt - 1).min(16)));
            }
            match self.attempt(&req) {
                Ok(scores) if scores.len() == candidates.len() => return Ok(scores),
                Ok(scores) => {
                    return Err(Error::Invalid(format!("{} scores for {} candidates", scores.len(), candidates.len())))
                }
                Err(e) => last = e,
            }
        }
        Err(Error::Transport { attempts: self.cfg.max_retries + 1, message: last })
    }
}
