use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{auto_highlight, dedup_against_description, greedy_align_all, parse_article_xml, AlignParams, Article};
use crate::data::{Cell, HighlightSet, PairRecord, Split, Table};
use crate::error::{Error, Result};

/// One line of the tables JSONL consumed by the corpus builder: a table
/// extracted from an article together with its reference description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRecord {
    pub id: String,
    pub article_id: String,
    #[serde(default)]
    pub caption: String,
    pub n_rows: usize,
    pub n_cols: usize,
    pub cells: Vec<Cell>,
    pub description: String,
}

impl TableRecord {
    pub fn table(&self) -> Table {
        Table {
            id: self.id.clone(),
            caption: self.caption.clone(),
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            cells: self.cells.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildParams {
    pub align: AlignParams,
    pub theta_dup: f64,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams { align: AlignParams::default(), theta_dup: 0.8 }
    }
}

pub fn read_table_records(path: impl AsRef<Path>) -> Result<Vec<TableRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}

/// Parses every `*.xml` file of `dir`, in file-name order.
pub fn load_articles(dir: impl AsRef<Path>) -> Result<Vec<Article>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            let mut article = parse_article_xml(&bytes).map_err(|e| match e {
                Error::Xml { offset, message } => Error::Xml { offset, message: format!("{}: {message}", p.display()) },
                other => other,
            })?;
            if article.id.is_empty() {
                article.id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            }
            Ok(article)
        })
        .collect()
}

/// Runs alignment, deduplication and highlighting for every table and
/// emits one pair per table. Articles are processed independently and the
/// output is ordered by article id, then by table order in the input, so the
/// result does not depend on scheduling.
pub fn build_pairs(articles: &[Article], tables: &[TableRecord], params: BuildParams) -> Result<Vec<PairRecord>> {
    params.align.validate()?;
    if !(params.theta_dup > 0.0 && params.theta_dup <= 1.0) {
        return Err(Error::Config(format!("theta_dup {} outside (0, 1]", params.theta_dup)));
    }
    let by_id: BTreeMap<&str, &Article> = articles.iter().map(|a| (a.id.as_str(), a)).collect();
    let mut groups: BTreeMap<&str, Vec<&TableRecord>> = BTreeMap::new();
    for t in tables {
        let table = t.table();
        table.validate().map_err(|m| Error::validation(&t.id, m))?;
        groups.entry(t.article_id.as_str()).or_default().push(t);
    }

    let per_article: Vec<Result<Vec<PairRecord>>> = groups
        .into_par_iter()
        .map(|(article_id, recs)| {
            let empty = Article { id: article_id.to_string(), ..Default::default() };
            let article = by_id.get(article_id).copied().unwrap_or_else(|| {
                log::warn!("no article `{article_id}` for tables {:?}; knowledge left empty", recs.iter().map(|r| &r.id).collect::<Vec<_>>());
                &empty
            });
            let owned: Vec<Table> = recs
                .iter()
                .map(|r| {
                    let mut t = r.table();
                    if t.caption.is_empty() {
                        if let Some(c) = article.table_captions.get(&r.id) {
                            t.caption = c.clone();
                        }
                    }
                    t
                })
                .collect();
            let refs: Vec<&Table> = owned.iter().collect();
            let aligned = greedy_align_all(&refs, article, params.align)?;
            Ok(recs
                .iter()
                .zip(owned)
                .zip(aligned)
                .map(|((rec, table), kb)| {
                    let kb = dedup_against_description(&kb, &rec.description, params.theta_dup);
                    let highlights: HighlightSet = auto_highlight(&table, &rec.description);
                    PairRecord {
                        id: rec.id.clone(),
                        table,
                        highlights,
                        kb: kb.into(),
                        description: rec.description.clone(),
                        split: Split::for_id(&rec.id),
                    }
                })
                .collect())
        })
        .collect();

    let mut out = Vec::with_capacity(tables.len());
    for chunk in per_article {
        out.extend(chunk?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_article_yields_empty_knowledge() {
        let rec = TableRecord {
            id: "t1".into(),
            article_id: "nope".into(),
            caption: String::new(),
            n_rows: 1,
            n_cols: 1,
            cells: vec![Cell::new(0, 0, "bleu", "16.90")],
            description: "We reach 16.90.".into(),
        };
        let pairs = build_pairs(&[], &[rec], BuildParams::default()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert!(pairs[0].kb.is_empty());
        assert!(pairs[0].highlights.contains((0, 0)));
    }
}
