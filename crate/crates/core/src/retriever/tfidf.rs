use std::collections::{BTreeMap, HashMap};

use super::{rank, RetrievalResult};
use crate::data::{is_punctuation, tokenize};
use crate::error::{Error, Result};

/// Smoothed TF-IDF over a fixed document set:
/// `w(t, s) = tf * ln((1 + D) / (1 + df)) + tf`.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfIndex {
    ids: Vec<String>,
    df: HashMap<String, usize>,
    vectors: Vec<BTreeMap<String, f64>>,
}

fn terms(text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|t| !is_punctuation(t)).collect()
}

fn term_counts<S: AsRef<str>>(tokens: &[S]) -> BTreeMap<String, usize> {
    let mut tf = BTreeMap::new();
    for t in tokens {
        *tf.entry(t.as_ref().to_string()).or_insert(0) += 1;
    }
    tf
}

impl TfidfIndex {
    pub fn build<S: AsRef<str>>(docs: &[(String, S)]) -> Result<Self> {
        let tokenized: Vec<(String, Vec<String>)> =
            docs.iter().map(|(id, text)| (id.clone(), terms(text.as_ref()))).collect();
        Self::from_tokens(&tokenized)
    }

    pub fn from_tokens<S: AsRef<str>>(docs: &[(String, Vec<S>)]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Invalid("TF-IDF corpus is empty".into()));
        }
        let counts: Vec<BTreeMap<String, usize>> = docs.iter().map(|(_, toks)| term_counts(toks)).collect();
        let mut df: HashMap<String, usize> = HashMap::new();
        for c in &counts {
            for t in c.keys() {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let mut index = Self { ids: docs.iter().map(|(id, _)| id.clone()).collect(), df, vectors: Vec::new() };
        index.vectors = counts.iter().map(|c| index.weigh(c)).collect();
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        ((1.0 + self.len() as f64) / (1.0 + self.df(term) as f64)).ln()
    }

    fn weigh(&self, counts: &BTreeMap<String, usize>) -> BTreeMap<String, f64> {
        counts.iter().map(|(t, &tf)| (t.clone(), tf as f64 * self.idf(t) + tf as f64)).collect()
    }

    /// Cosine score of every document against `query`, sorted and cut to `n`.
    /// An empty query scores 0 everywhere.
    pub fn query<S: AsRef<str>>(&self, query: &[S], n: usize) -> Vec<RetrievalResult> {
        let q = self.weigh(&term_counts(query));
        let qn = q.values().map(|v| v * v).sum::<f64>().sqrt();
        let results = self
            .ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, d)| {
                let dn = d.values().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = q.iter().filter_map(|(t, w)| d.get(t).map(|v| v * w)).sum();
                let score = if qn == 0.0 || dn == 0.0 { 0.0 } else { (dot / (qn * dn)).min(1.0) };
                RetrievalResult { sentence_id: id.clone(), score }
            })
            .collect();
        rank(results, n)
    }

    pub fn query_text(&self, query: &str, n: usize) -> Vec<RetrievalResult> {
        self.query(&terms(query), n)
    }
}

/// Builds an index over `docs` and runs one query.
pub fn tfidf_retrieve<S: AsRef<str>>(docs: &[(String, S)], query: &str, n: usize) -> Result<Vec<RetrievalResult>> {
    Ok(TfidfIndex::build(docs)?.query_text(query, n))
}
