use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{tokenize, Cell, HighlightSet, KnowledgeSentence, Table, Vocabulary};
use crate::error::{Error, Result};

/// Segment order of a linearized input. The generator reads `HTB`, the
/// retriever `BTH`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentOrder {
    #[serde(rename = "HTB")]
    Htb,
    #[serde(rename = "BTH")]
    Bth,
}

impl FromStr for SegmentOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HTB" | "htb" => Ok(SegmentOrder::Htb),
            "BTH" | "bth" => Ok(SegmentOrder::Bth),
            other => Err(Error::Config(format!("unknown segment order `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearizedInput {
    pub token_ids: Vec<usize>,
    pub l_h: usize,
    pub l_t: usize,
    pub l_b: usize,
}

impl LinearizedInput {
    pub const SEPARATORS: usize = 3;

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Segment contents without separator tokens, in sequence order.
    pub fn content_ids(&self) -> Vec<usize> {
        self.token_ids
            .iter()
            .copied()
            .filter(|&id| !matches!(id, Vocabulary::SEP_H | Vocabulary::SEP_T | Vocabulary::SEP_B))
            .collect()
    }
}

/// `attribute : value |`
pub fn render_cell(cell: &Cell) -> Vec<String> {
    let mut out = tokenize(&cell.attribute);
    out.push(":".into());
    out.extend(tokenize(&cell.value));
    out.push("|".into());
    out
}

/// The three rendered segments before separators are inserted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Segments {
    pub highlights: Vec<String>,
    pub table: Vec<String>,
    pub knowledge: Vec<String>,
}

impl Segments {
    pub fn build(
        table: &Table,
        highlights: &HighlightSet,
        kb_selected: &[&KnowledgeSentence],
    ) -> Result<Segments> {
        if let Some((r, c)) = highlights.first_invalid(table) {
            return Err(Error::validation(
                &table.id,
                format!("highlight ({r},{c}) does not resolve to a cell"),
            ));
        }
        let mut seg = Segments::default();
        for cell in table.cells_row_major() {
            let rendered = render_cell(cell);
            if highlights.contains(cell.coord()) {
                seg.highlights.extend(rendered.iter().cloned());
            }
            seg.table.extend(rendered);
        }
        for s in kb_selected {
            seg.knowledge.extend(tokenize(&s.text));
            seg.knowledge.push("|".into());
        }
        Ok(seg)
    }

    pub fn total_len(&self) -> usize {
        self.highlights.len() + self.table.len() + self.knowledge.len() + LinearizedInput::SEPARATORS
    }

    /// Shrinks the input to `max_len` tokens, cutting the knowledge segment
    /// first, then the table, and never the highlights. Returns whether
    /// anything was removed.
    pub fn truncate_to(&mut self, max_len: usize) -> bool {
        let total = self.total_len();
        if total <= max_len {
            return false;
        }
        let mut excess = total - max_len;
        let cut_b = excess.min(self.knowledge.len());
        self.knowledge.truncate(self.knowledge.len() - cut_b);
        excess -= cut_b;
        let cut_t = excess.min(self.table.len());
        self.table.truncate(self.table.len() - cut_t);
        true
    }

    pub fn encode(&self, vocab: &Vocabulary, order: SegmentOrder) -> LinearizedInput {
        let h = (Vocabulary::SEP_H, &self.highlights);
        let t = (Vocabulary::SEP_T, &self.table);
        let b = (Vocabulary::SEP_B, &self.knowledge);
        let parts = match order {
            SegmentOrder::Htb => [h, t, b],
            SegmentOrder::Bth => [b, t, h],
        };
        let mut token_ids = Vec::with_capacity(self.total_len());
        for (sep, toks) in parts {
            token_ids.push(sep);
            token_ids.extend(vocab.encode(toks));
        }
        LinearizedInput {
            token_ids,
            l_h: self.highlights.len(),
            l_t: self.table.len(),
            l_b: self.knowledge.len(),
        }
    }
}

/// Renders `(H, T, B)` as one token sequence. Each segment opens with its
/// separator; cells render as `attribute : value |` in row-major order and
/// each knowledge sentence is followed by `|`.
pub fn linearize(
    table: &Table,
    highlights: &HighlightSet,
    kb_selected: &[&KnowledgeSentence],
    order: SegmentOrder,
    vocab: &Vocabulary,
) -> Result<LinearizedInput> {
    Ok(Segments::build(table, highlights, kb_selected)?.encode(vocab, order))
}
