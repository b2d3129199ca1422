use serde::{Deserialize, Serialize};

use super::{tokenize, PairRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_pairs: usize,
    pub avg_cells: f64,
    pub avg_desc_tokens: f64,
    /// Total highlighted cells over total cells.
    pub highlight_ratio: f64,
    pub avg_kb_sentences: f64,
}

pub fn corpus_stats(dataset: &[PairRecord]) -> Result<CorpusStats> {
    if dataset.is_empty() {
        return Err(Error::Invalid("corpus statistics need at least one pair".into()));
    }
    let n = dataset.len() as f64;
    let total_cells: usize = dataset.iter().map(|p| p.table.cells.len()).sum();
    let total_highlighted: usize = dataset.iter().map(|p| p.highlights.len()).sum();
    let total_desc: usize = dataset.iter().map(|p| tokenize(&p.description).len()).sum();
    let total_kb: usize = dataset.iter().map(|p| p.kb.len()).sum();
    Ok(CorpusStats {
        n_pairs: dataset.len(),
        avg_cells: total_cells as f64 / n,
        avg_desc_tokens: total_desc as f64 / n,
        highlight_ratio: if total_cells == 0 { 0.0 } else { total_highlighted as f64 / total_cells as f64 },
        avg_kb_sentences: total_kb as f64 / n,
    })
}

/// One statistic compared with its reference value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatCheck {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Reference statistics of the released full corpus:
/// `(name, target, tolerance)`.
pub const REFERENCE_STATS: [(&str, f64, f64); 5] = [
    ("n_pairs", 8967.0, 0.0),
    ("avg_cells", 52.0, 2.0),
    ("avg_desc_tokens", 34.0, 2.0),
    ("highlight_ratio", 0.20, 0.03),
    ("avg_kb_sentences", 20.0, 2.0),
];

pub fn check_reference_stats(stats: &CorpusStats) -> Vec<StatCheck> {
    let values = [
        stats.n_pairs as f64,
        stats.avg_cells,
        stats.avg_desc_tokens,
        stats.highlight_ratio,
        stats.avg_kb_sentences,
    ];
    REFERENCE_STATS
        .iter()
        .zip(values)
        .map(|(&(name, target, tolerance), value)| StatCheck {
            name: name.to_string(),
            value,
            target,
            tolerance,
            passed: (value - target).abs() <= tolerance + 1e-12,
        })
        .collect()
}
