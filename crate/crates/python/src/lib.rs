//! Python module `ctrltab`.
//!
//! Pairs, models and indices are classes; reports come back as plain
//! dicts and lists.

use std::collections::BTreeSet;

use ctrltab_core::corpus::{compute_agreement as agreement, PairAnnotation, DEFAULT_SAMPLE_SIZE};
use ctrltab_core::data::{self, PairRecord, Split};
use ctrltab_core::diagnostics::{gradcheck_architectures, DEFAULT_GRADCHECK_EPS};
use ctrltab_core::eval;
use ctrltab_core::generator::{self, GenerationConfig, GeneratorModel, KbSelector, Strategy};
use ctrltab_core::nn::{ModelConfig, TrainConfig};
use ctrltab_core::retriever::{self, RetrievalResult, RetrieverModel};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(ctrltab, CtrlTabError, PyException);

fn py_err(e: ctrltab_core::Error) -> PyErr {
    use ctrltab_core::Error as E;
    match e {
        e @ E::Io { .. } => PyIOError::new_err(e.to_string()),
        E::NotFound(m) => PyKeyError::new_err(m),
        e @ (E::Validation { .. } | E::Invalid(_) | E::Config(_) | E::Parse { .. }) => {
            PyValueError::new_err(e.to_string())
        }
        e => CtrlTabError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for ctrltab_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Converts any serializable value into the matching Python object.
fn to_object<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| CtrlTabError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_split(s: &str) -> PyResult<Split> {
    s.parse().py()
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Dev => "dev",
        Split::Test => "test",
    }
}

fn records(pairs: &[PyRef<'_, Pair>]) -> Vec<PairRecord> {
    pairs.iter().map(|p| p.inner.clone()).collect()
}

fn results(rs: Vec<RetrievalResult>) -> Vec<(String, f64)> {
    rs.into_iter().map(|r| (r.sentence_id, r.score)).collect()
}

/// One table-description pair with highlights and a knowledge base.
#[pyclass(module = "ctrltab", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct Pair {
    inner: PairRecord,
}

#[pymethods]
impl Pair {
    /// Parses one JSONL record and validates it.
    #[staticmethod]
    fn from_json(line: &str) -> PyResult<Self> {
        let inner: PairRecord = serde_json::from_str(line).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().py()?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| CtrlTabError::new_err(e.to_string()))
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn description(&self) -> &str {
        &self.inner.description
    }

    #[getter]
    fn split(&self) -> &'static str {
        split_name(self.inner.split)
    }

    #[getter]
    fn caption(&self) -> &str {
        &self.inner.table.caption
    }

    /// `(n_rows, n_cols)`.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.table.n_rows, self.inner.table.n_cols)
    }

    /// Highlighted `(row, col)` coordinates in sorted order.
    #[getter]
    fn highlights(&self) -> Vec<(usize, usize)> {
        self.inner.highlights.iter().copied().collect()
    }

    /// `(sentence_id, text)` for every knowledge sentence.
    #[getter]
    fn kb(&self) -> Vec<(String, String)> {
        self.inner.kb.sentences.iter().map(|s| (s.id.clone(), s.text.clone())).collect()
    }

    /// Copy with a different highlight set.
    fn with_highlights(&self, cells: Vec<(usize, usize)>) -> PyResult<Self> {
        let mut inner = self.inner.clone();
        inner.highlights.refs = cells.into_iter().collect::<BTreeSet<_>>();
        inner.validate().py()?;
        Ok(Self { inner })
    }

    /// Rendered `[H : T : B]` tokens using the first `n_kb` knowledge
    /// sentences.
    #[pyo3(signature = (n_kb = 0))]
    fn linearize(&self, n_kb: usize) -> PyResult<Vec<String>> {
        let kb = generator::select_knowledge(&self.inner, KbSelector::Leading, n_kb).py()?;
        let seg = data::Segments::build(&self.inner.table, &self.inner.highlights, &kb).py()?;
        Ok(seg.highlights.iter().chain(&seg.table).chain(&seg.knowledge).cloned().collect())
    }

    fn __repr__(&self) -> String {
        format!("Pair(id={:?}, split={:?})", self.inner.id, self.split())
    }
}

/// TF-IDF index over `(id, text)` documents.
#[pyclass(module = "ctrltab", frozen)]
pub struct TfidfIndex {
    inner: retriever::TfidfIndex,
}

#[pymethods]
impl TfidfIndex {
    #[new]
    fn new(docs: Vec<(String, String)>) -> PyResult<Self> {
        Ok(Self { inner: retriever::TfidfIndex::build(&docs).py()? })
    }

    /// Top `n` `(id, score)` pairs for a free-text query.
    #[pyo3(signature = (query, n = 3))]
    fn query(&self, query: &str, n: usize) -> Vec<(String, f64)> {
        results(self.inner.query_text(query, n))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn model_config(d_model: usize, heads: usize, layers: usize, max_input_len: usize, max_output_len: usize) -> ModelConfig {
    ModelConfig {
        d_model,
        n_heads: heads,
        n_layers_enc: layers,
        n_layers_dec: layers,
        max_input_len,
        max_output_len,
        vocab_size: 0,
    }
}

fn vocabulary(pairs: &[PairRecord]) -> PyResult<data::Vocabulary> {
    let streams: Vec<Vec<String>> =
        pairs.iter().filter(|p| p.split == Split::Train).map(PairRecord::token_stream).collect();
    data::build_vocabulary(&streams, 1, 50_000).py()
}

/// Denoising knowledge retriever.
#[pyclass(module = "ctrltab", frozen)]
pub struct Retriever {
    inner: RetrieverModel,
}

#[pymethods]
impl Retriever {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: RetrieverModel::load(path.as_ref()).py()? })
    }

    /// Trains on the train split; returns the model and per-epoch losses.
    #[staticmethod]
    #[pyo3(signature = (pairs, *, seed, epochs = 10, learning_rate = 1e-3, batch_size = 8, d_model = 64, heads = 4, layers = 1, max_input_len = 256, noise_ratio = 0.6))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        pairs: Vec<PyRef<'_, Pair>>,
        seed: u64,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        d_model: usize,
        heads: usize,
        layers: usize,
        max_input_len: usize,
        noise_ratio: f64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let pairs = records(&pairs);
        let cfg = model_config(d_model, heads, layers, max_input_len, max_input_len);
        let tc = TrainConfig { learning_rate, batch_size, epochs, seed, noise_ratio, ..Default::default() };
        let (inner, report) = retriever::train_retriever(&pairs, vocabulary(&pairs)?, cfg, &tc, |_, _| {}).py()?;
        Ok((Self { inner }, report.epoch_losses))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path.as_ref()).py()
    }

    /// Top `n` `(sentence_id, score)` from the pair's own knowledge base.
    #[pyo3(signature = (pair, n = 3))]
    fn retrieve(&self, pair: &Pair, n: usize) -> PyResult<Vec<(String, f64)>> {
        Ok(results(self.inner.retrieve_topn(&pair.inner, n).py()?))
    }
}

/// Encoder-decoder description generator.
#[pyclass(module = "ctrltab", frozen)]
pub struct Generator {
    inner: GeneratorModel,
}

fn selector<'a>(name: &str, retriever: Option<&'a Retriever>) -> PyResult<KbSelector<'a>> {
    match (name, retriever) {
        ("retriever", Some(r)) => Ok(KbSelector::Retriever(&r.inner)),
        ("retriever", None) => Err(PyValueError::new_err("selector 'retriever' needs a retriever")),
        ("tfidf", _) => Ok(KbSelector::Tfidf),
        ("leading", _) => Ok(KbSelector::Leading),
        ("none", _) => Ok(KbSelector::Nothing),
        (other, _) => Err(PyValueError::new_err(format!("unknown selector {other:?}"))),
    }
}

#[pymethods]
impl Generator {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: GeneratorModel::load(path.as_ref()).py()? })
    }

    /// Trains on the train split; returns the model and per-epoch losses.
    #[staticmethod]
    #[pyo3(signature = (pairs, *, seed, use_bkg = true, selector = "tfidf", retriever = None, n_kb = 3, epochs = 10, learning_rate = 3e-3, batch_size = 8, d_model = 64, heads = 4, layers = 1, max_input_len = 256, max_output_len = 64))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        pairs: Vec<PyRef<'_, Pair>>,
        seed: u64,
        use_bkg: bool,
        selector: &str,
        retriever: Option<PyRef<'_, Retriever>>,
        n_kb: usize,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        d_model: usize,
        heads: usize,
        layers: usize,
        max_input_len: usize,
        max_output_len: usize,
    ) -> PyResult<(Self, Vec<f64>)> {
        let pairs = records(&pairs);
        let sel = if use_bkg { self::selector(selector, retriever.as_deref())? } else { KbSelector::Nothing };
        let cfg = model_config(d_model, heads, layers, max_input_len, max_output_len);
        let tc = TrainConfig { learning_rate, batch_size, epochs, seed, ..Default::default() };
        let (inner, report) =
            generator::train_generator(&pairs, sel, n_kb, vocabulary(&pairs)?, cfg, &tc, use_bkg, |_, _| {}).py()?;
        Ok((Self { inner }, report.epoch_losses))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path.as_ref()).py()
    }

    #[getter]
    fn use_bkg(&self) -> bool {
        self.inner.use_bkg
    }

    /// Generates a description; returns a dict with `output`, `retrieved`
    /// and `decode`.
    #[pyo3(signature = (pair, *, beam = 1, max_len = 64, selector = "tfidf", retriever = None, n_kb = 3))]
    fn generate<'py>(
        &self,
        py: Python<'py>,
        pair: &Pair,
        beam: usize,
        max_len: usize,
        selector: &str,
        retriever: Option<PyRef<'_, Retriever>>,
        n_kb: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let sel = self::selector(selector, retriever.as_deref())?;
        let cfg = GenerationConfig {
            strategy: if beam > 1 { Strategy::Beam } else { Strategy::Greedy },
            beam_width: beam,
            max_output_len: max_len,
            ..Default::default()
        };
        to_object(py, &generator::generate_description(&self.inner, sel, &pair.inner, n_kb, &cfg).py()?)
    }
}

#[pyfunction]
fn read_pairs(path: &str) -> PyResult<Vec<Pair>> {
    Ok(data::read_pairs(path).py()?.into_iter().map(|inner| Pair { inner }).collect())
}

#[pyfunction]
fn write_pairs(path: &str, pairs: Vec<PyRef<'_, Pair>>) -> PyResult<()> {
    data::write_pairs(path, &records(&pairs)).py()
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    data::tokenize(text)
}

#[pyfunction]
fn detokenize(tokens: Vec<String>) -> String {
    data::detokenize(&tokens)
}

/// Corpus BLEU-4 over pre-tokenized candidates and references, in [0, 1].
#[pyfunction]
fn bleu(candidates: Vec<Vec<String>>, references: Vec<Vec<String>>) -> PyResult<f64> {
    eval::bleu(&candidates, &references).py()
}

/// Sentence METEOR over pre-tokenized input, in [0, 1].
#[pyfunction]
fn meteor(candidate: Vec<String>, reference: Vec<String>) -> f64 {
    eval::meteor(&candidate, &reference)
}

/// BLEU, METEOR and cell recall of `(pair_id, output)` rows.
#[pyfunction]
fn score_outputs<'py>(
    py: Python<'py>,
    outputs: Vec<(String, String)>,
    pairs: Vec<PyRef<'_, Pair>>,
) -> PyResult<Bound<'py, PyAny>> {
    to_object(py, &eval::score_outputs(&outputs, &records(&pairs)).py()?)
}

#[pyfunction]
fn corpus_stats<'py>(py: Python<'py>, pairs: Vec<PyRef<'_, Pair>>) -> PyResult<Bound<'py, PyAny>> {
    to_object(py, &data::corpus_stats(&records(&pairs)).py()?)
}

/// Cell and knowledge agreement between two annotators. Each side is a
/// list of dicts with `pair_id`, `highlights` and `kb_verdicts`.
#[pyfunction]
#[pyo3(signature = (a, b, sample_size = DEFAULT_SAMPLE_SIZE, seed = 42))]
fn compute_agreement<'py>(
    py: Python<'py>,
    a: Bound<'py, PyAny>,
    b: Bound<'py, PyAny>,
    sample_size: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let dumps = py.import("json")?.getattr("dumps")?;
    let parse = |v: Bound<'py, PyAny>| -> PyResult<Vec<PairAnnotation>> {
        let text: String = dumps.call1((v,))?.extract()?;
        serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
    };
    to_object(py, &agreement(&parse(a)?, &parse(b)?, sample_size, seed).py()?)
}

/// Finite-difference gradient check of both model architectures.
#[pyfunction]
#[pyo3(signature = (seed = 42, eps = DEFAULT_GRADCHECK_EPS))]
fn gradcheck<'py>(py: Python<'py>, seed: u64, eps: f64) -> PyResult<Bound<'py, PyAny>> {
    let checks = gradcheck_architectures(seed, eps).py()?;
    let rows: Vec<serde_json::Value> = checks
        .iter()
        .map(|c| serde_json::json!({ "architecture": c.architecture, "passed": c.passed(), "report": c.report }))
        .collect();
    to_object(py, &rows)
}

/// Synthetic corpora: `retrieval`, `memorization` or `knowledge`.
#[pyfunction]
#[pyo3(signature = (kind, n = 20, seed = 42))]
fn synth(kind: &str, n: usize, seed: u64) -> PyResult<Vec<Pair>> {
    let pairs = match kind {
        "retrieval" => retriever::synthetic_retrieval_corpus(&retriever::SyntheticSpec {
            n_tables: n,
            seed,
            ..Default::default()
        })
        .py()?,
        "memorization" => generator::memorization_pairs(n, seed),
        "knowledge" => generator::knowledge_task(n, n.div_ceil(4), 20, seed),
        other => return Err(PyValueError::new_err(format!("unknown corpus kind {other:?}"))),
    };
    Ok(pairs.into_iter().map(|inner| Pair { inner }).collect())
}

/// Keeps only pairs of one split.
#[pyfunction]
fn filter_split(pairs: Vec<PyRef<'_, Pair>>, split: &str) -> PyResult<Vec<Pair>> {
    let split = parse_split(split)?;
    Ok(pairs.iter().filter(|p| p.inner.split == split).map(|p| (**p).clone()).collect())
}

#[pymodule]
fn ctrltab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CtrlTabError", m.py().get_type::<CtrlTabError>())?;
    m.add("METEOR_VARIANT", eval::METEOR_VARIANT)?;
    m.add_class::<Pair>()?;
    m.add_class::<TfidfIndex>()?;
    m.add_class::<Retriever>()?;
    m.add_class::<Generator>()?;
    for f in [
        wrap_pyfunction!(read_pairs, m)?,
        wrap_pyfunction!(write_pairs, m)?,
        wrap_pyfunction!(tokenize, m)?,
        wrap_pyfunction!(detokenize, m)?,
        wrap_pyfunction!(bleu, m)?,
        wrap_pyfunction!(meteor, m)?,
        wrap_pyfunction!(score_outputs, m)?,
        wrap_pyfunction!(corpus_stats, m)?,
        wrap_pyfunction!(compute_agreement, m)?,
        wrap_pyfunction!(gradcheck, m)?,
        wrap_pyfunction!(synth, m)?,
        wrap_pyfunction!(filter_split, m)?,
    ] {
        m.add_function(f)?;
    }
    Ok(())
}
