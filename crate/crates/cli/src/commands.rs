use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::Args;
use ctrltab_core::annotation::{AnnotationState, VerdictLog};
use ctrltab_core::corpus::{
    build_pairs, compute_agreement, load_articles, read_table_records, AlignParams, BuildParams, PairAnnotation,
    DEFAULT_SAMPLE_SIZE,
};
use ctrltab_core::data::{
    build_vocabulary, check_reference_stats, corpus_stats, read_pairs, to_jsonl, PairRecord, Split, Vocabulary,
};
use ctrltab_core::diagnostics::{gradcheck_architectures, DEFAULT_GRADCHECK_EPS};
use ctrltab_core::eval::{export_human_eval_sheet, score_outputs};
use ctrltab_core::generator::{
    self, build_prompt, generate_description, knowledge_task, memorization_pairs, prompt_hash, select_knowledge,
    template, GenerationConfig, GeneratorModel, KbSelector, LlmClient, LlmClientConfig, Strategy, DEFAULT_N_KB,
    DEFAULT_TEMPLATE_ID,
};
use ctrltab_core::nn::{ModelConfig, TrainConfig};
use ctrltab_core::retriever::{self, synthetic_retrieval_corpus, RetrievalResult, RetrieverModel, SyntheticSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ConfigFile;
use crate::output::{write_atomic, Run};
use crate::{CliError, Command};

pub struct Context {
    pub seed: Option<u64>,
    pub cfg: ConfigFile,
}

impl Context {
    /// Flag value, else config value, else `default`.
    fn pick<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    fn opt<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.cfg.get(key),
        }
    }

    fn switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.cfg.flag(key)?)
    }

    fn require_seed(&self, command: &str) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Validation(format!("{command} requires --seed")))
    }
}

fn must_exist(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("input {} does not exist", path.display())))
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_jsonl<T: Serialize>(out: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).map_err(runtime)?);
        text.push('\n');
    }
    write_atomic(out, text.as_bytes())
}

fn write_json<T: Serialize>(out: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write_atomic(out, text.as_bytes())
}

pub fn dispatch(command: Command, ctx: &Context) -> Result<(), CliError> {
    match command {
        Command::BuildCorpus(a) => build_corpus(a, ctx),
        Command::Stats(a) => stats(a, ctx),
        Command::Synth(a) => synth(a, ctx),
        Command::TrainRetriever(a) => train_retriever(a, ctx),
        Command::TrainGenerator(a) => train_generator(a, ctx),
        Command::Retrieve(a) => retrieve(a, ctx),
        Command::Generate(a) => generate(a, ctx),
        Command::Evaluate(a) => evaluate(a, ctx),
        Command::Gradcheck(a) => gradcheck(a, ctx),
        Command::Agreement(a) => agreement(a, ctx),
        Command::Serve(a) => serve(a, ctx),
    }
}

#[derive(Debug, Args)]
pub struct BuildCorpusArgs {
    /// Directory of article XML files.
    #[arg(long)]
    pub xml: PathBuf,
    /// Tables JSONL, one table with its description per line.
    #[arg(long)]
    pub tables: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub theta_overlap: Option<f64>,
    #[arg(long)]
    pub theta_dup: Option<f64>,
    #[arg(long)]
    pub cap: Option<usize>,
}

fn build_corpus(a: BuildCorpusArgs, ctx: &Context) -> Result<(), CliError> {
    must_exist(&a.xml)?;
    must_exist(&a.tables)?;
    let defaults = BuildParams::default();
    let params = BuildParams {
        align: AlignParams {
            theta_overlap: ctx.pick(a.theta_overlap, "theta-overlap", defaults.align.theta_overlap)?,
            cap: ctx.pick(a.cap, "cap", defaults.align.cap)?,
        },
        theta_dup: ctx.pick(a.theta_dup, "theta-dup", defaults.theta_dup)?,
    };
    let config = json!({
        "theta_overlap": params.align.theta_overlap,
        "cap": params.align.cap,
        "theta_dup": params.theta_dup,
    });
    let mut run = Run::new("build-corpus", config, None)?;
    run.input(&a.xml);
    run.input(&a.tables);
    let articles = load_articles(&a.xml)?;
    let tables = read_table_records(&a.tables)?;
    let pairs = build_pairs(&articles, &tables, params)?;
    write_atomic(&a.out, to_jsonl(&pairs)?.as_bytes())?;
    run.finish(&a.out, Some(json!({ "n_pairs": pairs.len() })))?;
    println!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Write the statistics JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Compare with the reference corpus statistics; exit 1 on mismatch.
    #[arg(long)]
    pub check_reference: bool,
}

fn stats(a: StatsArgs, ctx: &Context) -> Result<(), CliError> {
    must_exist(&a.pairs)?;
    let check = ctx.switch(a.check_reference, "check-reference")?;
    let pairs = read_pairs(&a.pairs)?;
    let s = corpus_stats(&pairs)?;
    let checks = check.then(|| check_reference_stats(&s));
    let value = json!({ "stats": s, "reference_checks": checks });
    match &a.out {
        Some(out) => {
            let mut run = Run::new("stats", json!({ "check_reference": check }), None)?;
            run.input(&a.pairs);
            write_json(out, &value)?;
            run.finish(out, None)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&value).map_err(runtime)?),
    }
    if let Some(checks) = checks {
        for c in &checks {
            println!(
                "{} {}: {} (target {} +/- {})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.target,
                c.tolerance
            );
        }
        if checks.iter().any(|c| !c.passed) {
            return Err(CliError::Validation("corpus statistics differ from the reference".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Tables with topical knowledge sentences, for retriever training.
    Retrieval,
    /// Short pairs for memorisation runs.
    Memorization,
    /// Descriptions that need a fact found only in the knowledge base.
    Knowledge,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of pairs (tables for `retrieval`, train pairs for `knowledge`).
    #[arg(long)]
    pub n: Option<usize>,
}

fn synth(a: SynthArgs, ctx: &Context) -> Result<(), CliError> {
    let seed = ctx.seed.unwrap_or(42);
    let pairs = match a.kind {
        SynthKind::Retrieval => {
            let spec = SyntheticSpec { n_tables: ctx.pick(a.n, "n", 20)?, seed, ..SyntheticSpec::default() };
            synthetic_retrieval_corpus(&spec)?
        }
        SynthKind::Memorization => memorization_pairs(ctx.pick(a.n, "n", 32)?, seed),
        SynthKind::Knowledge => {
            let n = ctx.pick(a.n, "n", 200)?;
            knowledge_task(n, n / 4, 20, seed)
        }
    };
    let run = Run::new("synth", json!({ "kind": a.kind, "n": a.n }), Some(seed))?;
    write_atomic(&a.out, to_jsonl(&pairs)?.as_bytes())?;
    run.finish(&a.out, Some(json!({ "n_pairs": pairs.len() })))?;
    println!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Encoder and decoder layers each.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub max_input_len: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Vocabulary cap, reserved tokens included.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub min_freq: Option<usize>,
}

struct Resolved {
    model: ModelConfig,
    train: TrainConfig,
    vocab_size: usize,
    min_freq: usize,
}

impl ModelArgs {
    fn resolve(&self, ctx: &Context, base: ModelConfig, seed: u64, noise_ratio: f64) -> Result<Resolved, CliError> {
        let layers = ctx.pick(self.layers, "layers", base.n_layers_enc)?;
        let model = ModelConfig {
            d_model: ctx.pick(self.d_model, "d-model", base.d_model)?,
            n_heads: ctx.pick(self.heads, "heads", base.n_heads)?,
            n_layers_enc: layers,
            n_layers_dec: layers,
            max_input_len: ctx.pick(self.max_input_len, "max-input-len", base.max_input_len)?,
            ..base
        };
        let defaults = TrainConfig::default();
        let clip = ctx.pick(self.grad_clip, "grad-clip", defaults.grad_clip_norm.unwrap_or(0.0))?;
        let train = TrainConfig {
            learning_rate: ctx.pick(self.learning_rate, "learning-rate", defaults.learning_rate)?,
            batch_size: ctx.pick(self.batch_size, "batch-size", defaults.batch_size)?,
            epochs: ctx.pick(self.epochs, "epochs", defaults.epochs)?,
            grad_clip_norm: (clip > 0.0).then_some(clip),
            seed,
            noise_ratio,
        };
        train.validate()?;
        Ok(Resolved {
            model,
            train,
            vocab_size: ctx.pick(self.vocab_size, "vocab-size", 8192)?,
            min_freq: ctx.pick(self.min_freq, "min-freq", 1)?,
        })
    }
}

fn train_vocabulary(pairs: &[PairRecord], r: &Resolved) -> Result<Vocabulary, CliError> {
    let streams: Vec<Vec<String>> =
        pairs.iter().filter(|p| p.split == Split::Train).map(PairRecord::token_stream).collect();
    if streams.is_empty() {
        return Err(CliError::Validation("the pairs file has no train split".into()));
    }
    Ok(build_vocabulary(&streams, r.min_freq, r.vocab_size)?)
}

fn log_epoch(epoch: usize, loss: f64) {
    eprintln!("epoch {:>4}  loss {loss:.6}", epoch + 1);
}

#[derive(Debug, Args)]
pub struct TrainRetrieverArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of knowledge tokens deleted from the input.
    #[arg(long)]
    pub noise_ratio: Option<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

fn train_retriever(a: TrainRetrieverArgs, ctx: &Context) -> Result<(), CliError> {
    let seed = ctx.require_seed("train-retriever")?;
    must_exist(&a.pairs)?;
    let noise = ctx.pick(a.noise_ratio, "noise-ratio", 0.6)?;
    let r = a.model.resolve(ctx, retriever::default_model_config(0), seed, noise)?;
    let mut run = Run::new("train-retriever", json!({ "model": r.model, "train": r.train, "vocab_size": r.vocab_size, "min_freq": r.min_freq }), Some(seed))?;
    run.input(&a.pairs);
    let pairs = read_pairs(&a.pairs)?;
    let vocab = train_vocabulary(&pairs, &r)?;
    let (model, report) = retriever::train_retriever(&pairs, vocab, r.model, &r.train, log_epoch)?;
    model.save(&a.out)?;
    run.finish(&a.out, Some(serde_json::to_value(&report).map_err(runtime)?))?;
    println!("saved retriever to {}", a.out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorKind {
    Retriever,
    Tfidf,
    Leading,
}

impl std::str::FromStr for SelectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Self as clap::ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Args)]
pub struct KnowledgeArgs {
    /// Retriever checkpoint used to pick knowledge sentences.
    #[arg(long)]
    pub retriever: Option<PathBuf>,
    /// Knowledge selection; defaults to `retriever` when a checkpoint is
    /// given and `tfidf` otherwise.
    #[arg(long, value_enum)]
    pub selector: Option<SelectorKind>,
    /// Knowledge sentences per pair.
    #[arg(long)]
    pub n_kb: Option<usize>,
}

struct Knowledge {
    kind: SelectorKind,
    n_kb: usize,
    model: Option<RetrieverModel>,
    path: Option<PathBuf>,
}

impl Knowledge {
    fn resolve(a: &KnowledgeArgs, ctx: &Context) -> Result<Self, CliError> {
        let path = ctx.opt(a.retriever.clone(), "retriever")?;
        let default = if path.is_some() { SelectorKind::Retriever } else { SelectorKind::Tfidf };
        let kind = ctx.pick(a.selector, "selector", default)?;
        let model = match (&path, kind) {
            (Some(p), SelectorKind::Retriever) => {
                must_exist(p)?;
                Some(RetrieverModel::load(p)?)
            }
            (None, SelectorKind::Retriever) => {
                return Err(CliError::Validation("--selector retriever needs --retriever".into()))
            }
            _ => None,
        };
        Ok(Knowledge { kind, n_kb: ctx.pick(a.n_kb, "n-kb", DEFAULT_N_KB)?, model, path })
    }

    fn selector(&self) -> KbSelector<'_> {
        match (self.kind, &self.model) {
            (SelectorKind::Retriever, Some(m)) => KbSelector::Retriever(m),
            (SelectorKind::Leading, _) => KbSelector::Leading,
            _ => KbSelector::Tfidf,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainGeneratorArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Train without the knowledge segment.
    #[arg(long)]
    pub no_bkg: bool,
    /// Longest generated description, in tokens.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[command(flatten)]
    pub knowledge: KnowledgeArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

fn train_generator(a: TrainGeneratorArgs, ctx: &Context) -> Result<(), CliError> {
    let seed = ctx.require_seed("train-generator")?;
    must_exist(&a.pairs)?;
    let use_bkg = !ctx.switch(a.no_bkg, "no-bkg")?;
    let mut base = generator::default_model_config(0);
    base.max_output_len = ctx.pick(a.max_len, "max-len", base.max_output_len)?;
    let r = a.model.resolve(ctx, base, seed, 0.6)?;
    let kb = Knowledge::resolve(&a.knowledge, ctx)?;
    let config = json!({
        "model": r.model,
        "train": r.train,
        "vocab_size": r.vocab_size,
        "min_freq": r.min_freq,
        "use_bkg": use_bkg,
        "selector": kb.kind,
        "n_kb": kb.n_kb,
    });
    let mut run = Run::new("train-generator", config, Some(seed))?;
    run.input(&a.pairs);
    if let Some(p) = &kb.path {
        run.input(p);
    }
    let pairs = read_pairs(&a.pairs)?;
    let vocab = train_vocabulary(&pairs, &r)?;
    let selector = if use_bkg { kb.selector() } else { KbSelector::Nothing };
    let (model, report) =
        generator::train_generator(&pairs, selector, kb.n_kb, vocab, r.model, &r.train, use_bkg, log_epoch)?;
    model.save(&a.out)?;
    run.finish(&a.out, Some(serde_json::to_value(&report).map_err(runtime)?))?;
    println!("saved generator to {}", a.out.display());
    Ok(())
}

fn split_filter(split: Option<String>, ctx: &Context, default: &str) -> Result<Option<Split>, CliError> {
    let s = ctx.pick(split, "split", default.to_string())?;
    if s == "all" {
        Ok(None)
    } else {
        Ok(Some(s.parse()?))
    }
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Retriever checkpoint; omit with --tfidf.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Rank with TF-IDF instead of a trained retriever.
    #[arg(long)]
    pub tfidf: bool,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Results per pair.
    #[arg(long)]
    pub n: Option<usize>,
    /// train, dev, test or all.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Serialize)]
struct RetrievalRecord {
    pair_id: String,
    results: Vec<RetrievalResult>,
}

fn retrieve(a: RetrieveArgs, ctx: &Context) -> Result<(), CliError> {
    must_exist(&a.pairs)?;
    let tfidf = ctx.switch(a.tfidf, "tfidf")?;
    let n = ctx.pick(a.n, "n", DEFAULT_N_KB)?;
    if n == 0 {
        return Err(CliError::Validation("--n must be at least 1".into()));
    }
    let split = split_filter(a.split, ctx, "all")?;
    let model_path = ctx.opt(a.model, "model")?;
    let model = match (&model_path, tfidf) {
        (Some(p), false) => {
            must_exist(p)?;
            Some(RetrieverModel::load(p)?)
        }
        (None, false) => return Err(CliError::Validation("retrieve needs --model or --tfidf".into())),
        (_, true) => None,
    };
    let mut run = Run::new("retrieve", json!({ "n": n, "tfidf": tfidf, "split": split }), None)?;
    run.input(&a.pairs);
    if let (Some(p), false) = (&model_path, tfidf) {
        run.input(p);
    }
    let pairs = read_pairs(&a.pairs)?;
    let chosen: Vec<&PairRecord> = pairs.iter().filter(|p| split.is_none_or(|s| p.split == s)).collect();
    let records: Vec<RetrievalRecord> = chosen
        .par_iter()
        .map(|p| {
            let results = match &model {
                Some(m) => m.retrieve_topn(p, n)?,
                None => {
                    let docs: Vec<(String, &str)> = p.kb.usable().map(|s| (s.id.clone(), s.text.as_str())).collect();
                    if docs.is_empty() {
                        Vec::new()
                    } else {
                        let seg = ctrltab_core::data::Segments::build(&p.table, &p.highlights, &[])?;
                        let query: Vec<&str> = seg
                            .highlights
                            .iter()
                            .chain(&seg.table)
                            .map(String::as_str)
                            .filter(|t| !ctrltab_core::data::is_punctuation(t))
                            .collect();
                        retriever::TfidfIndex::build(&docs)?.query(&query, n)
                    }
                }
            };
            Ok(RetrievalRecord { pair_id: p.id.clone(), results })
        })
        .collect::<Result<_, ctrltab_core::Error>>()?;
    write_jsonl(&a.out, &records)?;
    run.finish(&a.out, None)?;
    println!("wrote {} retrieval records to {}", records.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator checkpoint; not needed with --llm.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Beam width; greedy decoding when absent or 1.
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// train, dev, test or all.
    #[arg(long)]
    pub split: Option<String>,
    /// Send prompts to the external completion endpoint (CTRLTAB_LLM_*).
    #[arg(long)]
    pub llm: bool,
    /// Prompt template id for --llm.
    #[arg(long)]
    pub template: Option<String>,
    #[command(flatten)]
    pub knowledge: KnowledgeArgs,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub strategy: String,
    pub beam_width: usize,
}

/// One line of a generations JSONL.
#[derive(Debug, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub pair_id: String,
    pub output: String,
    pub retrieved: Vec<String>,
    pub decode: DecodeRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
}

fn generate(a: GenerateArgs, ctx: &Context) -> Result<(), CliError> {
    let seed = ctx.require_seed("generate")?;
    must_exist(&a.pairs)?;
    let llm = ctx.switch(a.llm, "llm")?;
    let split = split_filter(a.split, ctx, "test")?;
    let kb = Knowledge::resolve(&a.knowledge, ctx)?;
    let pairs = read_pairs(&a.pairs)?;
    let chosen: Vec<&PairRecord> = pairs.iter().filter(|p| split.is_none_or(|s| p.split == s)).collect();
    if chosen.is_empty() {
        return Err(CliError::Validation("no pairs in the selected split".into()));
    }
    let mut run;
    let records: Vec<GenerationRecord> = if llm {
        let template_id = ctx.pick(a.template, "template", DEFAULT_TEMPLATE_ID.to_string())?;
        let tpl = template(&template_id)?;
        let mut client_cfg = LlmClientConfig::from_env()?;
        client_cfg.template_id = template_id.clone();
        let config = json!({ "llm": true, "template": template_id, "selector": kb.kind, "n_kb": kb.n_kb, "split": split, "endpoint": client_cfg.endpoint });
        run = Run::new("generate", config, Some(seed))?;
        let client = LlmClient::new(client_cfg)?;
        let mut prompts = Vec::with_capacity(chosen.len());
        let mut retrieved = Vec::with_capacity(chosen.len());
        for p in &chosen {
            let sel = select_knowledge(p, kb.selector(), kb.n_kb)?;
            prompts.push(build_prompt(p, &sel, tpl)?);
            retrieved.push(sel.iter().map(|s| s.id.clone()).collect::<Vec<_>>());
        }
        let replies = client.generate_many(&prompts);
        let mut out = Vec::with_capacity(chosen.len());
        for (((p, prompt), ids), reply) in chosen.iter().zip(&prompts).zip(retrieved).zip(replies) {
            let reply = reply.map_err(|e| CliError::Runtime(format!("pair {}: {e}", p.id)))?;
            out.push(GenerationRecord {
                pair_id: p.id.clone(),
                output: reply.text,
                retrieved: ids,
                decode: DecodeRecord { strategy: "llm".into(), beam_width: 0 },
                prompt_sha256: Some(prompt_hash(prompt)),
            });
        }
        out
    } else {
        let model_path = ctx
            .opt(a.model, "model")?
            .ok_or_else(|| CliError::Validation("generate needs --model or --llm".into()))?;
        must_exist(&model_path)?;
        let model = GeneratorModel::load(&model_path)?;
        let beam = ctx.pick(a.beam, "beam", 1)?;
        let mut gen_cfg = if beam > 1 { GenerationConfig::beam(beam) } else { GenerationConfig::default() };
        gen_cfg.max_output_len = ctx.pick(a.max_len, "max-len", model.config().max_output_len)?;
        gen_cfg.validate()?;
        let config = json!({ "llm": false, "generation": gen_cfg, "selector": kb.kind, "n_kb": kb.n_kb, "split": split });
        run = Run::new("generate", config, Some(seed))?;
        run.input(&model_path);
        let selector = kb.selector();
        chosen
            .par_iter()
            .map(|p| {
                let g = generate_description(&model, selector, p, kb.n_kb, &gen_cfg)?;
                Ok(GenerationRecord {
                    pair_id: g.pair_id,
                    output: g.output,
                    retrieved: g.retrieved,
                    decode: DecodeRecord {
                        strategy: match g.decode.strategy {
                            Strategy::Greedy => "greedy".into(),
                            Strategy::Beam => "beam".into(),
                        },
                        beam_width: g.decode.beam_width,
                    },
                    prompt_sha256: None,
                })
            })
            .collect::<Result<_, ctrltab_core::Error>>()?
    };
    run.input(&a.pairs);
    if let Some(p) = &kb.path {
        run.input(p);
    }
    write_jsonl(&a.out, &records)?;
    run.finish(&a.out, None)?;
    println!("wrote {} generations to {}", records.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Generations JSONL.
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Score report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also export a blind human-evaluation sheet (CSV) here.
    #[arg(long)]
    pub sheet: Option<PathBuf>,
}

fn read_generations(path: &Path) -> Result<Vec<GenerationRecord>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Validation(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn evaluate(a: EvaluateArgs, ctx: &Context) -> Result<(), CliError> {
    must_exist(&a.gen)?;
    must_exist(&a.pairs)?;
    let mut run = Run::new("evaluate", json!({ "sheet": a.sheet.is_some() }), ctx.seed)?;
    run.input(&a.gen);
    run.input(&a.pairs);
    let gens = read_generations(&a.gen)?;
    let pairs = read_pairs(&a.pairs)?;
    let outputs: Vec<(String, String)> = gens.into_iter().map(|g| (g.pair_id, g.output)).collect();
    let report = score_outputs(&outputs, &pairs)?;
    write_json(&a.out, &report)?;
    run.finish(&a.out, None)?;
    if let Some(sheet) = &a.sheet {
        let sheet_seed = ctx.seed.unwrap_or(0);
        let tmp = output_tmp(sheet);
        export_human_eval_sheet(&outputs, &pairs, &tmp, sheet_seed)?;
        std::fs::rename(&tmp, sheet).map_err(runtime)?;
        let mut sheet_run = Run::new("evaluate", json!({ "sheet_seed": sheet_seed }), Some(sheet_seed))?;
        sheet_run.input(&a.gen);
        sheet_run.input(&a.pairs);
        sheet_run.finish(sheet, None)?;
    }
    println!(
        "bleu {:.4}  meteor {:.4}  cell_recall {:.4}  ({} pairs)",
        report.bleu, report.meteor, report.cell_recall, report.n_pairs
    );
    Ok(())
}

fn output_tmp(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".tmp");
    PathBuf::from(p)
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Finite-difference step.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Also write the reports as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn gradcheck(a: GradcheckArgs, ctx: &Context) -> Result<(), CliError> {
    let seed = ctx.seed.unwrap_or(42);
    let eps = ctx.pick(a.eps, "eps", DEFAULT_GRADCHECK_EPS)?;
    let checks = gradcheck_architectures(seed, eps)?;
    for c in &checks {
        println!(
            "{:<10} max relative error {:.3e} ({} coordinates, worst {}[{}])",
            c.architecture, c.report.max_rel_error, c.report.n_checked, c.report.worst_tensor, c.report.worst_index
        );
    }
    if let Some(out) = &a.out {
        let run = Run::new("gradcheck", json!({ "eps": eps }), Some(seed))?;
        write_json(out, &checks)?;
        run.finish(out, None)?;
    }
    if checks.iter().all(|c| c.passed()) {
        Ok(())
    } else {
        Err(CliError::Runtime("gradient check above tolerance".into()))
    }
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    /// Annotator ids (with --log) or annotation JSONL files (without).
    #[arg(long)]
    pub a: String,
    #[arg(long)]
    pub b: String,
    /// Verdict log of the annotation service.
    #[arg(long, requires = "pairs")]
    pub log: Option<PathBuf>,
    /// Dataset the log refers to.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Pairs sampled when more are shared.
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_annotations(path: &Path) -> Result<Vec<PairAnnotation>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Validation(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn agreement(a: AgreementArgs, ctx: &Context) -> Result<(), CliError> {
    let seed = ctx.seed.unwrap_or(42);
    let sample_size = ctx.pick(a.sample_size, "sample-size", DEFAULT_SAMPLE_SIZE)?;
    let mut run = Run::new("agreement", json!({ "a": a.a, "b": a.b, "sample_size": sample_size }), Some(seed))?;
    let report = match (&a.log, &a.pairs) {
        (Some(log), Some(pairs_path)) => {
            must_exist(log)?;
            must_exist(pairs_path)?;
            run.input(pairs_path);
            run.input(log);
            let state = AnnotationState::replay(read_pairs(pairs_path)?, VerdictLog::read(log)?)?;
            state.agreement_report(&a.a, &a.b)?
        }
        _ => {
            let (pa, pb) = (PathBuf::from(&a.a), PathBuf::from(&a.b));
            must_exist(&pa)?;
            must_exist(&pb)?;
            run.input(&pa);
            run.input(&pb);
            let (left, right) = (read_annotations(&pa)?, read_annotations(&pb)?);
            let ids_a: BTreeSet<&str> = left.iter().map(|x| x.pair_id.as_str()).collect();
            let common: BTreeMap<&str, ()> =
                right.iter().filter(|x| ids_a.contains(x.pair_id.as_str())).map(|x| (x.pair_id.as_str(), ())).collect();
            if common.is_empty() {
                return Err(CliError::Validation("the annotators share no pair".into()));
            }
            let keep = |v: &[PairAnnotation]| -> Vec<PairAnnotation> {
                v.iter().filter(|x| common.contains_key(x.pair_id.as_str())).cloned().collect()
            };
            compute_agreement(&keep(&left), &keep(&right), sample_size, seed)?
        }
    };
    println!(
        "cells {:.1}%  knowledge {:.1}%  ({} pairs)",
        report.cell_agreement * 100.0,
        report.kb_agreement * 100.0,
        report.n_samples
    );
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        run.finish(out, None)?;
    } else {
        println!("{}", serde_json::to_string(&report).map_err(runtime)?);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Append-only verdict log; created when missing.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Directory of UI assets served under /.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

fn serve(a: ServeArgs, ctx: &Context) -> Result<(), CliError> {
    must_exist(&a.pairs)?;
    let host = ctx.pick(a.host, "host", "127.0.0.1".to_string())?;
    let port = ctx.pick(a.port, "port", 8080)?;
    let cfg = ctrltab_service::ServeConfig {
        dataset: a.pairs,
        verdict_log: a.log,
        bind: format!("{host}:{port}"),
        static_dir: ctx.opt(a.static_dir, "static-dir")?,
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(async {
        let (listener, app) = ctrltab_service::bind(&cfg).await.map_err(|e| match e {
            ctrltab_service::ServiceError::Serve(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        })?;
        if let Ok(addr) = listener.local_addr() {
            println!("serving on http://{addr}");
        }
        ctrltab_service::run(listener, app).await.map_err(runtime)
    })
}
