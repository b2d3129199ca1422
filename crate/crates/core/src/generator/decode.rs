use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Transformer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Beam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    pub max_output_len: usize,
    pub length_penalty: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { strategy: Strategy::Greedy, beam_width: 1, max_output_len: 64, length_penalty: 1.0 }
    }
}

impl GenerationConfig {
    pub fn beam(width: usize) -> Self {
        Self { strategy: Strategy::Beam, beam_width: width, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        if self.max_output_len == 0 {
            return Err(Error::Config("max_output_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// A finished or capped hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

impl Hypothesis {
    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&Vocabulary::EOS)
    }

    /// `sum(log p) / len^alpha`
    pub fn score(&self, length_penalty: f64) -> f64 {
        if self.tokens.is_empty() {
            return self.log_prob;
        }
        self.log_prob / (self.tokens.len() as f64).powf(length_penalty)
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Encoder states for `input`, reused by every decoding step.
pub fn encode_memory(model: &Transformer, input: &[usize]) -> Result<Tensor> {
    let mut g = Graph::new();
    let mem = model.encode(&mut g, input)?;
    Ok(g.value(mem).clone())
}

/// Log-probabilities of the next token after `prefix`.
pub fn next_log_probs(model: &Transformer, memory: &Tensor, prefix: &[usize]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let mem = g.constant(memory.clone());
    let mut ids = Vec::with_capacity(prefix.len() + 1);
    ids.push(Vocabulary::BOS);
    ids.extend_from_slice(prefix);
    let logits = model.decode(&mut g, mem, &ids)?;
    let t = g.value(logits);
    Ok(log_softmax(t.row(t.rows() - 1)))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn greedy(model: &Transformer, memory: &Tensor, max_len: usize) -> Result<Hypothesis> {
    let mut h = Hypothesis { tokens: Vec::new(), log_prob: 0.0 };
    while h.tokens.len() < max_len && !h.finished() {
        let lp = next_log_probs(model, memory, &h.tokens)?;
        let t = argmax(&lp);
        h.tokens.push(t);
        h.log_prob += lp[t];
    }
    Ok(h)
}

fn by_score(alpha: f64) -> impl Fn(&Hypothesis, &Hypothesis) -> Ordering {
    move |a, b| {
        b.score(alpha).partial_cmp(&a.score(alpha)).unwrap_or(Ordering::Equal).then_with(|| a.tokens.cmp(&b.tokens))
    }
}

/// Beam search ranked by length-normalised score with ties broken by token
/// ids. The result is the best of the finished hypotheses, those still
/// alive at the length cap, and the greedy path.
pub fn beam_search(model: &Transformer, memory: &Tensor, cfg: &GenerationConfig) -> Result<Hypothesis> {
    let width = cfg.beam_width;
    let alpha = cfg.length_penalty;
    let mut alive = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0 }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_output_len {
        let mut cands = Vec::with_capacity(alive.len() * width);
        for h in &alive {
            let lp = next_log_probs(model, memory, &h.tokens)?;
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].partial_cmp(&lp[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            for &t in order.iter().take(width) {
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                cands.push(Hypothesis { tokens, log_prob: h.log_prob + lp[t] });
            }
        }
        cands.sort_by(by_score(alpha));
        cands.truncate(width);
        alive.clear();
        for c in cands {
            if c.finished() {
                done.push(c);
            } else {
                alive.push(c);
            }
        }
        if alive.is_empty() {
            break;
        }
    }
    done.extend(alive);
    done.push(greedy(model, memory, cfg.max_output_len)?);
    done.sort_by(by_score(alpha));
    Ok(done.swap_remove(0))
}

/// Decodes output tokens for an encoded input. The result ends in EOS or
/// stops at `max_output_len`.
pub fn decode(model: &Transformer, input: &[usize], cfg: &GenerationConfig) -> Result<Vec<usize>> {
    Ok(decode_hypothesis(model, input, cfg)?.tokens)
}

pub fn decode_hypothesis(model: &Transformer, input: &[usize], cfg: &GenerationConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let memory = encode_memory(model, input)?;
    match cfg.strategy {
        Strategy::Greedy => greedy(model, &memory, cfg.max_output_len),
        Strategy::Beam => beam_search(model, &memory, cfg),
    }
}
