//! Description generation: an encoder-decoder trained with teacher forcing
//! on `[H : T : B]`, greedy and beam decoding, prompt construction, and the
//! external completion adapter.

mod decode;
mod llm;
mod prompt;
mod toy;

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{
    detokenize, tokenize, KnowledgeSentence, LinearizedInput, PairRecord, SegmentOrder, Segments, Split, Vocabulary,
    RESERVED_TOKENS,
};
use crate::error::{Error, Result};
use crate::nn::{
    load_checkpoint, save_checkpoint, train_loop, Graph, ModelConfig, ParameterSet, TrainConfig, TrainReport,
    Transformer, Var,
};
use crate::retriever::{RetrieverModel, TfidfIndex};

pub use decode::{
    beam_search, decode, decode_hypothesis, encode_memory, greedy, next_log_probs, GenerationConfig, Hypothesis,
    Strategy,
};
pub use llm::{
    prompt_hash, LlmClient, LlmClientConfig, LlmResponse, ENV_ENDPOINT, ENV_KEY, ENV_TIMEOUT_MS,
};
pub use toy::{knowledge_task, memorization_pairs};
pub use prompt::{build_prompt, template, DEFAULT_TEMPLATE, DEFAULT_TEMPLATE_ID, INSTRUCTION, SLOTS};

pub const MODEL_KIND: &str = "generator";
pub const DEFAULT_N_KB: usize = 3;

/// How knowledge sentences are chosen for a pair.
#[derive(Clone, Copy, Debug)]
pub enum KbSelector<'a> {
    /// No knowledge segment.
    Nothing,
    /// Trained denoising retriever.
    Retriever(&'a RetrieverModel),
    /// TF-IDF over the pair's knowledge base, queried with the rendered
    /// table and highlights.
    Tfidf,
    /// The first usable sentences in stored order.
    Leading,
}

/// Picks up to `n` usable knowledge sentences of `pair`.
pub fn select_knowledge<'p>(
    pair: &'p PairRecord,
    selector: KbSelector<'_>,
    n: usize,
) -> Result<Vec<&'p KnowledgeSentence>> {
    let usable: Vec<&KnowledgeSentence> = pair.kb.usable().collect();
    if usable.is_empty() || n == 0 {
        return Ok(Vec::new());
    }
    let ids: Vec<String> = match selector {
        KbSelector::Nothing => return Ok(Vec::new()),
        KbSelector::Leading => return Ok(usable.into_iter().take(n).collect()),
        KbSelector::Retriever(r) => r.retrieve_topn(pair, n)?.into_iter().map(|h| h.sentence_id).collect(),
        KbSelector::Tfidf => {
            let docs: Vec<(String, &str)> = usable.iter().map(|s| (s.id.clone(), s.text.as_str())).collect();
            let seg = Segments::build(&pair.table, &pair.highlights, &[])?;
            let query: Vec<&String> = seg.highlights.iter().chain(&seg.table).collect();
            let query: Vec<&str> =
                query.into_iter().map(String::as_str).filter(|t| !crate::data::is_punctuation(t)).collect();
            TfidfIndex::build(&docs)?.query(&query, n).into_iter().map(|h| h.sentence_id).collect()
        }
    };
    Ok(ids.iter().filter_map(|id| pair.kb.get(id)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    pub model: Transformer,
    pub vocab: Vocabulary,
    pub use_bkg: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct StoredConfig {
    model: ModelConfig,
    use_bkg: bool,
}

/// Encoder input plus teacher-forcing target for one pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorExample {
    pub pair_id: String,
    pub input: LinearizedInput,
    /// Description tokens followed by EOS.
    pub target: Vec<usize>,
}

impl GeneratorModel {
    pub fn new(vocab: Vocabulary, mut config: ModelConfig, use_bkg: bool, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.len();
        Ok(Self { model: Transformer::new(config, seed)?, vocab, use_bkg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    /// `[H : T : B]` with an empty B segment when the model ignores
    /// knowledge. Over-long inputs lose B first, then T.
    pub fn linearize(&self, pair: &PairRecord, kb: &[&KnowledgeSentence]) -> Result<LinearizedInput> {
        let kb = if self.use_bkg { kb } else { &[] };
        let mut seg = Segments::build(&pair.table, &pair.highlights, kb)?;
        if seg.truncate_to(self.config().max_input_len) {
            warn!("generator input for pair {} truncated to {} tokens", pair.id, self.config().max_input_len);
        }
        Ok(seg.encode(&self.vocab, SegmentOrder::Htb))
    }

    pub fn example(&self, pair: &PairRecord, kb: &[&KnowledgeSentence]) -> Result<GeneratorExample> {
        let input = self.linearize(pair, kb)?;
        let mut target = self.vocab.encode(&tokenize(&pair.description));
        target.truncate(self.config().max_output_len - 1);
        target.push(Vocabulary::EOS);
        Ok(GeneratorExample { pair_id: pair.id.clone(), input, target })
    }

    /// Mean token cross-entropy of the target under teacher forcing.
    pub fn loss(&self, params: &ParameterSet, g: &mut Graph, ex: &GeneratorExample) -> Result<Var> {
        let memory = self.model.encode_with(g, params, &ex.input.token_ids)?;
        let logits = self.teacher_forced_logits(params, g, memory, &ex.target)?;
        g.cross_entropy(logits, &ex.target, None, None)
    }

    /// Decoder logits for `BOS + target[..-1]`.
    pub fn teacher_forced_logits(
        &self,
        params: &ParameterSet,
        g: &mut Graph,
        memory: Var,
        target: &[usize],
    ) -> Result<Var> {
        let mut dec_in = Vec::with_capacity(target.len());
        dec_in.push(Vocabulary::BOS);
        dec_in.extend_from_slice(&target[..target.len() - 1]);
        self.model.decode_with(g, params, memory, &dec_in)
    }

    pub fn decode(&self, input: &LinearizedInput, cfg: &GenerationConfig) -> Result<Vec<usize>> {
        decode(&self.model, &input.token_ids, cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let stored = StoredConfig { model: self.config().clone(), use_bkg: self.use_bkg };
        save_checkpoint(path, MODEL_KIND, serde_json::to_value(stored)?, self.vocab.tokens().to_vec(), &self.model.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = load_checkpoint(path)?;
        if header.model_kind != MODEL_KIND {
            return Err(Error::Checkpoint(format!("expected a {MODEL_KIND} checkpoint, got {}", header.model_kind)));
        }
        let stored: StoredConfig = serde_json::from_value(header.config)?;
        let vocab = Vocabulary::from_tokens(header.vocab.iter().skip(RESERVED_TOKENS.len()))?;
        if vocab.len() != stored.model.vocab_size {
            return Err(Error::Checkpoint("vocabulary size disagrees with config".into()));
        }
        Ok(Self { model: Transformer::from_params(stored.model, params)?, vocab, use_bkg: stored.use_bkg })
    }
}

/// Trains a generator on the train split. With `use_bkg` the top `n_kb`
/// sentences from `selector` fill the knowledge segment.
#[allow(clippy::too_many_arguments)]
pub fn train_generator(
    pairs: &[PairRecord],
    selector: KbSelector<'_>,
    n_kb: usize,
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
    use_bkg: bool,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(GeneratorModel, TrainReport)> {
    train_cfg.validate()?;
    if use_bkg && matches!(selector, KbSelector::Nothing) {
        return Err(Error::Config("a knowledge selector is required when knowledge is used".into()));
    }
    let mut model = GeneratorModel::new(vocab, model_cfg, use_bkg, train_cfg.seed)?;
    let mut examples = Vec::new();
    for p in pairs.iter().filter(|p| p.split == Split::Train) {
        let kb = if use_bkg { select_knowledge(p, selector, n_kb)? } else { Vec::new() };
        examples.push(model.example(p, &kb)?);
    }
    if examples.is_empty() {
        return Err(Error::Invalid("train split is empty".into()));
    }
    let frozen = model.clone();
    let report = train_loop(&mut model.model.params, &examples, train_cfg, |p, ex, _, g| frozen.loss(p, g, ex), on_epoch)?;
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeInfo {
    pub strategy: Strategy,
    pub beam_width: usize,
}

/// One generated description with the knowledge it was conditioned on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub pair_id: String,
    pub output: String,
    pub retrieved: Vec<String>,
    pub decode: DecodeInfo,
}

/// Retrieve, linearize, decode, detokenize.
pub fn generate_description(
    model: &GeneratorModel,
    selector: KbSelector<'_>,
    pair: &PairRecord,
    n_kb: usize,
    cfg: &GenerationConfig,
) -> Result<Generation> {
    let kb = if model.use_bkg { select_knowledge(pair, selector, n_kb)? } else { Vec::new() };
    let input = model.linearize(pair, &kb)?;
    let ids = model.decode(&input, cfg)?;
    Ok(Generation {
        pair_id: pair.id.clone(),
        output: detokenize(&model.vocab.decode_text(&ids)),
        retrieved: kb.iter().map(|s| s.id.clone()).collect(),
        decode: DecodeInfo { strategy: cfg.strategy, beam_width: cfg.beam_width },
    })
}

/// Desk-scale default: two encoder and two decoder layers.
pub fn default_model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        d_model: 128,
        n_heads: 4,
        n_layers_enc: 2,
        n_layers_dec: 2,
        max_input_len: 512,
        max_output_len: 64,
        vocab_size,
    }
}
