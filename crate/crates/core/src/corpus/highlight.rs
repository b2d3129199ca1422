use super::{detect_entity_mentions, MentionKind};
use crate::data::{HighlightSet, Table};

/// Cells whose value is quoted in the description, exactly or numerically.
/// Attribute-only matches never highlight a cell.
pub fn auto_highlight(table: &Table, description: &str) -> HighlightSet {
    detect_entity_mentions(description, table)
        .into_iter()
        .filter(|m| matches!(m.kind, MentionKind::ValueExact | MentionKind::Numeric))
        .map(|m| m.cell_ref)
        .collect()
}
