use std::collections::HashSet;
use std::sync::OnceLock;

use super::{detect_entity_mentions, Article};
use crate::data::{is_punctuation, tokenize, KnowledgeSentence, Table};
use crate::error::{Error, Result};

pub const STOPWORDS_VERSION: &str = "en-v1";
const STOPWORDS_TEXT: &str = include_str!("../../data/stopwords_en_v1.txt");

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS_TEXT.lines().map(str::trim).filter(|l| !l.is_empty()).collect())
}

/// Distinct tokens that are neither stopwords nor punctuation.
pub fn content_tokens(text: &str) -> HashSet<String> {
    let stop = stopwords();
    tokenize(text).into_iter().filter(|t| !is_punctuation(t) && !stop.contains(t.as_str())).collect()
}

/// Tokens of every cell attribute and value plus the caption.
pub fn table_vocabulary(table: &Table) -> HashSet<String> {
    let mut out: HashSet<String> = tokenize(&table.caption).into_iter().collect();
    for cell in &table.cells {
        out.extend(tokenize(&cell.attribute));
        out.extend(tokenize(&cell.value));
    }
    out
}

/// Share of the sentence's content tokens that occur in the table.
pub fn overlap_score(sentence: &str, table_tokens: &HashSet<String>) -> f64 {
    let content = content_tokens(sentence);
    if content.is_empty() {
        return 0.0;
    }
    content.iter().filter(|t| table_tokens.contains(*t)).count() as f64 / content.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignParams {
    pub theta_overlap: f64,
    pub cap: usize,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams { theta_overlap: 0.15, cap: 40 }
    }
}

impl AlignParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_overlap > 0.0 && self.theta_overlap <= 1.0) {
            return Err(Error::Config(format!("theta_overlap {} outside (0, 1]", self.theta_overlap)));
        }
        if self.cap == 0 {
            return Err(Error::Config("cap must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn knowledge_id(article_id: &str, index: usize) -> String {
    format!("{article_id}:s{index}")
}

/// Greedy sentence-to-table alignment over all tables of one article.
///
/// A sentence qualifies for a table when its overlap score reaches
/// `theta_overlap` and it mentions at least one cell. Each sentence goes to
/// the qualifying table with the highest score (earliest table on ties).
/// Per table, candidates are taken in descending score, document order on
/// ties, until `cap` sentences are kept.
pub fn greedy_align_all(
    tables: &[&Table],
    article: &Article,
    params: AlignParams,
) -> Result<Vec<Vec<KnowledgeSentence>>> {
    params.validate()?;
    let vocabularies: Vec<HashSet<String>> = tables.iter().map(|t| table_vocabulary(t)).collect();
    let mut candidates: Vec<Vec<(f64, usize)>> = vec![Vec::new(); tables.len()];

    for (si, sentence) in article.sentences.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (ti, table) in tables.iter().enumerate() {
            let score = overlap_score(&sentence.text, &vocabularies[ti]);
            if score < params.theta_overlap || best.is_some_and(|(_, b)| score <= b) {
                continue;
            }
            if !detect_entity_mentions(&sentence.text, table).is_empty() {
                best = Some((ti, score));
            }
        }
        if let Some((ti, score)) = best {
            candidates[ti].push((score, si));
        }
    }

    Ok(candidates
        .into_iter()
        .map(|mut c| {
            c.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            c.into_iter()
                .take(params.cap)
                .map(|(_, si)| {
                    let s = &article.sentences[si];
                    KnowledgeSentence {
                        id: knowledge_id(&article.id, s.index),
                        text: s.text.clone(),
                        status: Default::default(),
                        source_offset: Some((s.char_offset, s.char_offset + s.text.chars().count())),
                    }
                })
                .collect()
        })
        .collect())
}

/// Single-table form of [`greedy_align_all`].
pub fn greedy_align(table: &Table, article: &Article, theta_overlap: f64, cap: usize) -> Result<Vec<KnowledgeSentence>> {
    Ok(greedy_align_all(&[table], article, AlignParams { theta_overlap, cap })?.pop().unwrap_or_default())
}
