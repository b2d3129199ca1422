//! Knowledge retrieval: a denoising-autoencoder sentence encoder conditioned
//! on the table and highlights, a TF-IDF baseline, and top-n selection.

mod synthetic;
mod tfidf;

use std::cmp::Ordering;
use std::path::Path;

use log::warn;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{HighlightSet, KnowledgeSentence, PairRecord, SegmentOrder, Segments, Split, Table, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{
    load_checkpoint, save_checkpoint, train_loop, Graph, ModelConfig, ParameterSet, TrainConfig, TrainReport,
    Transformer, Var,
};

pub use synthetic::{synthetic_retrieval_corpus, SyntheticSpec};
pub use tfidf::{tfidf_retrieve, TfidfIndex};

pub const MODEL_KIND: &str = "retriever";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorruptedInput {
    pub token_ids: Vec<usize>,
    /// Sorted positions removed from the original.
    pub deletion_positions: Vec<usize>,
}

/// Deletes `round(ratio * len)` positions chosen uniformly without
/// replacement, always keeping at least one token.
pub fn corrupt<R: Rng + ?Sized>(tokens: &[usize], noise_ratio: f64, rng: &mut R) -> Result<CorruptedInput> {
    if !(0.0..1.0).contains(&noise_ratio) {
        return Err(Error::Config(format!("noise_ratio must be in [0, 1), got {noise_ratio}")));
    }
    let n = tokens.len();
    if n == 0 {
        return Ok(CorruptedInput { token_ids: Vec::new(), deletion_positions: Vec::new() });
    }
    let k = ((noise_ratio * n as f64).round() as usize).min(n - 1);
    let mut deletion_positions = sample(rng, n, k).into_vec();
    deletion_positions.sort_unstable();
    let mut drop = deletion_positions.iter().peekable();
    let mut token_ids = Vec::with_capacity(n - k);
    for (i, &t) in tokens.iter().enumerate() {
        if drop.peek() == Some(&&i) {
            drop.next();
        } else {
            token_ids.push(t);
        }
    }
    Ok(CorruptedInput { token_ids, deletion_positions })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceEmbedding {
    pub sentence_id: String,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub sentence_id: String,
    pub score: f64,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Descending score, ties by id, cut to `n`.
pub fn rank(mut results: Vec<RetrievalResult>, n: usize) -> Vec<RetrievalResult> {
    results.sort_by(|a, b| {
        b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.sentence_id.cmp(&b.sentence_id))
    });
    results.truncate(n);
    results
}

/// `|top-n ∩ truth| / min(n, |truth|)`; 1.0 when `truth` is empty.
pub fn recall_at_n(results: &[RetrievalResult], truth: &std::collections::BTreeSet<String>, n: usize) -> f64 {
    let denom = n.min(truth.len());
    if denom == 0 {
        return 1.0;
    }
    let hits = results.iter().take(n).filter(|r| truth.contains(&r.sentence_id)).count();
    hits as f64 / denom as f64
}

/// One training instance: knowledge sentence plus its table context.
#[derive(Clone, Debug)]
pub struct RetrieverExample {
    pub segments: Segments,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrieverModel {
    pub model: Transformer,
    pub vocab: Vocabulary,
}

impl RetrieverModel {
    pub fn new(vocab: Vocabulary, mut config: ModelConfig, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.len();
        Ok(Self { model: Transformer::new(config, seed)?, vocab })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// Segments for `[b : T : H]`, truncated to the input limit.
    pub fn segments(
        &self,
        sentence: Option<&KnowledgeSentence>,
        table: &Table,
        highlights: &HighlightSet,
    ) -> Result<Segments> {
        let kb: Vec<&KnowledgeSentence> = sentence.into_iter().collect();
        let mut seg = Segments::build(table, highlights, &kb)?;
        if seg.truncate_to(self.config().max_input_len) {
            warn!(
                "retriever input for table {} truncated to {} tokens",
                table.id,
                self.config().max_input_len
            );
        }
        Ok(seg)
    }

    /// Denoising reconstruction loss for one example. Only the knowledge
    /// segment is corrupted; the decoder sees nothing of the input but the
    /// mean-pooled encoder state.
    pub fn reconstruction_loss(
        &self,
        params: &ParameterSet,
        g: &mut Graph,
        seg: &Segments,
        noise_ratio: f64,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let clean = seg.encode(&self.vocab, SegmentOrder::Bth);
        let b_ids = self.vocab.encode(&seg.knowledge);
        let noisy_b = corrupt(&b_ids, noise_ratio, rng)?;
        let mut input = Vec::with_capacity(clean.len());
        input.push(Vocabulary::SEP_B);
        input.extend(&noisy_b.token_ids);
        input.push(Vocabulary::SEP_T);
        input.extend(self.vocab.encode(&seg.table));
        input.push(Vocabulary::SEP_H);
        input.extend(self.vocab.encode(&seg.highlights));

        let target = clean.content_ids();
        if target.len() != clean.l_b + clean.l_t + clean.l_h {
            return Err(Error::Invalid(format!(
                "reconstruction target has {} tokens, expected {}",
                target.len(),
                clean.l_b + clean.l_t + clean.l_h
            )));
        }
        if target.is_empty() {
            return Err(Error::Invalid("nothing to reconstruct".into()));
        }
        let mut dec_in = Vec::with_capacity(target.len());
        dec_in.push(Vocabulary::BOS);
        dec_in.extend(&target[..target.len() - 1]);

        let states = self.model.encode_with(g, params, &input)?;
        let pooled = g.mean_rows(states);
        assert_eq!(g.value(pooled).rows(), 1, "decoder context must be a single pooled vector");
        let logits = self.model.decode_with(g, params, pooled, &dec_in)?;
        g.cross_entropy(logits, &target, None, None)
    }

    fn pooled(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let states = self.model.encode(&mut g, ids)?;
        let pooled = g.mean_rows(states);
        Ok(g.value(pooled).data().to_vec())
    }

    /// Mean-pooled encoding of the clean `[b : T : H]`.
    pub fn embed_sentence(
        &self,
        sentence: &KnowledgeSentence,
        table: &Table,
        highlights: &HighlightSet,
    ) -> Result<SentenceEmbedding> {
        let seg = self.segments(Some(sentence), table, highlights)?;
        let ids = seg.encode(&self.vocab, SegmentOrder::Bth).token_ids;
        Ok(SentenceEmbedding { sentence_id: sentence.id.clone(), vector: self.pooled(&ids)? })
    }

    /// Mean-pooled encoding of `[ : T : H]` with an empty knowledge segment.
    pub fn embed_query(&self, table: &Table, highlights: &HighlightSet) -> Result<SentenceEmbedding> {
        let seg = self.segments(None, table, highlights)?;
        let ids = seg.encode(&self.vocab, SegmentOrder::Bth).token_ids;
        Ok(SentenceEmbedding { sentence_id: String::new(), vector: self.pooled(&ids)? })
    }

    /// Scores `candidates` against the query for `table`/`highlights`.
    pub fn retrieve_from(
        &self,
        table: &Table,
        highlights: &HighlightSet,
        candidates: &[&KnowledgeSentence],
        n: usize,
    ) -> Result<Vec<RetrievalResult>> {
        let q = self.embed_query(table, highlights)?;
        let mut results = Vec::with_capacity(candidates.len());
        for s in candidates {
            let e = self.embed_sentence(s, table, highlights)?;
            results.push(RetrievalResult { sentence_id: s.id.clone(), score: cosine(&q.vector, &e.vector) });
        }
        Ok(rank(results, n))
    }

    /// Top-n usable knowledge sentences of `pair`.
    pub fn retrieve_topn(&self, pair: &PairRecord, n: usize) -> Result<Vec<RetrievalResult>> {
        if n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        let kb: Vec<&KnowledgeSentence> = pair.kb.usable().collect();
        self.retrieve_from(&pair.table, &pair.highlights, &kb, n)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            MODEL_KIND,
            serde_json::to_value(self.config())?,
            self.vocab.tokens().to_vec(),
            &self.model.params,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = load_checkpoint(path)?;
        if header.model_kind != MODEL_KIND {
            return Err(Error::Checkpoint(format!("expected a {MODEL_KIND} checkpoint, got {}", header.model_kind)));
        }
        let config: ModelConfig = serde_json::from_value(header.config)?;
        let vocab = Vocabulary::from_tokens(header.vocab.iter().skip(crate::data::RESERVED_TOKENS.len()))?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        Ok(Self { model: Transformer::from_params(config, params)?, vocab })
    }
}

/// One example per usable knowledge sentence of every training pair.
pub fn retriever_examples(model: &RetrieverModel, pairs: &[PairRecord]) -> Result<Vec<RetrieverExample>> {
    let mut out = Vec::new();
    for p in pairs.iter().filter(|p| p.split == Split::Train) {
        for s in p.kb.usable() {
            out.push(RetrieverExample { segments: model.segments(Some(s), &p.table, &p.highlights)? });
        }
    }
    Ok(out)
}

/// Trains a fresh retriever on the train split of `pairs`.
pub fn train_retriever(
    pairs: &[PairRecord],
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(RetrieverModel, TrainReport)> {
    train_cfg.validate()?;
    let mut model = RetrieverModel::new(vocab, model_cfg, train_cfg.seed)?;
    let examples = retriever_examples(&model, pairs)?;
    if examples.is_empty() {
        return Err(Error::Invalid("no knowledge sentences in the train split".into()));
    }
    let frozen = model.clone();
    let noise = train_cfg.noise_ratio;
    let report = train_loop(
        &mut model.model.params,
        &examples,
        train_cfg,
        |p, ex, rng, g| frozen.reconstruction_loss(p, g, &ex.segments, noise, rng),
        on_epoch,
    )?;
    Ok((model, report))
}

/// Desk-scale default: one encoder and one decoder layer.
pub fn default_model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        d_model: 128,
        n_heads: 4,
        n_layers_enc: 1,
        n_layers_dec: 1,
        max_input_len: 256,
        max_output_len: 256,
        vocab_size,
    }
}
