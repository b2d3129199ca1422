//! Domain types for table-to-text pairs and the utilities that turn them
//! into model inputs.
//!
//! A [`PairRecord`] bundles one task instance: the table, the cells the user
//! highlighted, the knowledge sentences mined from the source article, and
//! the reference description.

mod io;
mod linearize;
mod stats;
mod tokenize;
mod vocab;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{parse_pairs, read_pairs, to_jsonl, write_pairs};
pub use linearize::{linearize, render_cell, LinearizedInput, Segments, SegmentOrder};
pub use stats::{check_reference_stats, corpus_stats, CorpusStats, StatCheck, REFERENCE_STATS};
pub use tokenize::{detokenize, is_punctuation, tokenize, tokenize_with_spans, Token};
pub use vocab::{build_vocabulary, Vocabulary, RESERVED_TOKENS};

/// `(row, col)` coordinate of a cell, both 0-based.
pub type CellRef = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
    pub attribute: String,
    pub value: String,
    pub is_header: bool,
}

impl Cell {
    pub fn new(row: usize, col: usize, attribute: &str, value: &str) -> Self {
        Cell { row, col, attribute: attribute.to_string(), value: value.to_string(), is_header: false }
    }

    pub fn header(row: usize, col: usize, text: &str) -> Self {
        Cell { row, col, attribute: text.to_string(), value: text.to_string(), is_header: true }
    }

    pub fn coord(&self) -> CellRef {
        (self.row, self.col)
    }
}

/// A table in attribute-value form.
///
/// The `id` is not part of the pairs-file schema; [`read_pairs`] sets it to
/// the owning pair's id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    #[serde(skip)]
    pub id: String,
    pub caption: String,
    pub n_rows: usize,
    pub n_cols: usize,
    pub cells: Vec<Cell>,
}

impl Table {
    pub fn cell(&self, coord: CellRef) -> Option<&Cell> {
        self.cells.iter().find(|c| c.coord() == coord)
    }

    /// Cells sorted row-major.
    pub fn cells_row_major(&self) -> Vec<&Cell> {
        let mut cells: Vec<&Cell> = self.cells.iter().collect();
        cells.sort_by_key(|c| c.coord());
        cells
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.n_rows == 0 && self.n_cols == 0 && self.cells.is_empty() {
            return Ok(());
        }
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(format!("table has non-positive shape {}x{}", self.n_rows, self.n_cols));
        }
        if self.cells.len() > self.n_rows * self.n_cols {
            return Err(format!(
                "{} cells exceed {}x{} table",
                self.cells.len(),
                self.n_rows,
                self.n_cols
            ));
        }
        let mut seen = HashSet::new();
        for cell in &self.cells {
            if cell.row >= self.n_rows || cell.col >= self.n_cols {
                return Err(format!(
                    "cell ({},{}) outside {}x{} table",
                    cell.row, cell.col, self.n_rows, self.n_cols
                ));
            }
            if !seen.insert(cell.coord()) {
                return Err(format!("duplicate cell ({},{})", cell.row, cell.col));
            }
            if cell.attribute.is_empty() && cell.value.is_empty() {
                return Err(format!("cell ({},{}) has empty attribute and value", cell.row, cell.col));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HighlightSet {
    pub refs: BTreeSet<CellRef>,
}

impl HighlightSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn contains(&self, coord: CellRef) -> bool {
        self.refs.contains(&coord)
    }

    pub fn insert(&mut self, coord: CellRef) -> bool {
        self.refs.insert(coord)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CellRef> {
        self.refs.iter()
    }

    /// First reference that does not resolve to a cell of `table`.
    pub fn first_invalid(&self, table: &Table) -> Option<CellRef> {
        self.refs.iter().copied().find(|&r| table.cell(r).is_none())
    }
}

impl FromIterator<CellRef> for HighlightSet {
    fn from_iter<I: IntoIterator<Item = CellRef>>(iter: I) -> Self {
        HighlightSet { refs: iter.into_iter().collect() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KbStatus {
    #[default]
    Auto,
    Accepted,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSentence {
    pub id: String,
    pub text: String,
    pub status: KbStatus,
    /// Character span in the source article body, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_offset: Option<(usize, usize)>,
}

impl KnowledgeSentence {
    pub fn new(id: &str, text: &str) -> Self {
        KnowledgeSentence {
            id: id.to_string(),
            text: text.to_string(),
            status: KbStatus::Auto,
            source_offset: None,
        }
    }

    /// Records an annotator decision. Only automatically mined sentences can
    /// be decided.
    pub fn decide(&mut self, accept: bool) -> Result<()> {
        if self.status != KbStatus::Auto {
            return Err(Error::Invalid(format!(
                "sentence `{}` already {:?}; only auto sentences can be decided",
                self.id, self.status
            )));
        }
        self.status = if accept { KbStatus::Accepted } else { KbStatus::Rejected };
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnowledgeBase {
    pub sentences: Vec<KnowledgeSentence>,
}

impl KnowledgeBase {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeSentence> {
        self.sentences.iter().find(|s| s.id == id)
    }

    /// Sentences that have not been rejected by an annotator.
    pub fn usable(&self) -> impl Iterator<Item = &KnowledgeSentence> {
        self.sentences.iter().filter(|s| s.status != KbStatus::Rejected)
    }
}

impl From<Vec<KnowledgeSentence>> for KnowledgeBase {
    fn from(sentences: Vec<KnowledgeSentence>) -> Self {
        KnowledgeBase { sentences }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    /// 80/10/10 assignment from a stable hash of the pair id.
    pub fn for_id(id: &str) -> Split {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(id.as_bytes());
        let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) % 10;
        match bucket {
            0..=7 => Split::Train,
            8 => Split::Dev,
            _ => Split::Test,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub table: Table,
    pub highlights: HighlightSet,
    pub kb: KnowledgeBase,
    pub description: String,
    pub split: Split,
}

impl PairRecord {
    pub fn validate(&self) -> Result<()> {
        self.table.validate().map_err(|m| Error::validation(&self.id, m))?;
        if let Some((r, c)) = self.highlights.first_invalid(&self.table) {
            return Err(Error::validation(
                &self.id,
                format!("highlight ({r},{c}) does not resolve to a cell"),
            ));
        }
        let mut ids = HashSet::new();
        for s in &self.kb.sentences {
            if s.text.trim().is_empty() {
                return Err(Error::validation(&self.id, format!("kb sentence `{}` is empty", s.id)));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::validation(&self.id, format!("duplicate kb id `{}`", s.id)));
            }
        }
        if self.description.trim().is_empty() && self.split != Split::Test {
            return Err(Error::validation(&self.id, "description is empty"));
        }
        Ok(())
    }

    /// Every token a model could see or emit for this pair: rendered
    /// cells, knowledge sentences and the description.
    pub fn token_stream(&self) -> Vec<String> {
        let mut out = Vec::new();
        for cell in self.table.cells_row_major() {
            out.extend(render_cell(cell));
        }
        for s in &self.kb.sentences {
            out.extend(tokenize(&s.text));
        }
        out.extend(tokenize(&self.description));
        out
    }

    /// Highlighted cells in row-major order.
    pub fn highlighted_cells(&self) -> Vec<&Cell> {
        self.table
            .cells_row_major()
            .into_iter()
            .filter(|c| self.highlights.contains(c.coord()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> Table {
        Table {
            id: "t".into(),
            caption: "c".into(),
            n_rows: 2,
            n_cols: 2,
            cells: vec![
                Cell::header(0, 0, "model"),
                Cell::header(0, 1, "bleu"),
                Cell::new(1, 0, "model", "ours"),
                Cell::new(1, 1, "bleu", "16.90"),
            ],
        }
    }

    #[test]
    fn table_validation_catches_out_of_range_and_duplicates() {
        let mut t = two_by_two();
        assert!(t.validate().is_ok());
        t.cells[0].row = 2;
        assert!(t.validate().unwrap_err().contains("outside"));
        let mut t = two_by_two();
        t.cells.push(Cell::new(1, 1, "x", "y"));
        assert!(t.validate().unwrap_err().contains("exceed"));
        let mut t = two_by_two();
        t.cells[3].col = 0;
        assert!(t.validate().unwrap_err().contains("duplicate"));
    }

    #[test]
    fn kb_decisions_only_leave_auto() {
        let mut s = KnowledgeSentence::new("s1", "text");
        s.decide(false).unwrap();
        assert_eq!(s.status, KbStatus::Rejected);
        assert!(s.decide(true).is_err());
    }

    #[test]
    fn split_hash_is_stable_and_roughly_80_10_10() {
        assert_eq!(Split::for_id("abc"), Split::for_id("abc"));
        let mut counts = [0usize; 3];
        for i in 0..10_000 {
            match Split::for_id(&format!("pair-{i}")) {
                Split::Train => counts[0] += 1,
                Split::Dev => counts[1] += 1,
                Split::Test => counts[2] += 1,
            }
        }
        assert!((7_700..8_300).contains(&counts[0]), "{counts:?}");
        assert!((800..1_200).contains(&counts[1]), "{counts:?}");
    }

    #[test]
    fn invalid_highlight_names_pair() {
        let pair = PairRecord {
            id: "p7".into(),
            table: two_by_two(),
            highlights: [(9, 9)].into_iter().collect(),
            kb: KnowledgeBase::default(),
            description: "d".into(),
            split: Split::Train,
        };
        let err = pair.validate().unwrap_err().to_string();
        assert!(err.contains("p7") && err.contains("(9,9)"), "{err}");
    }
}
