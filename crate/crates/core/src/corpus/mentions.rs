use serde::{Deserialize, Serialize};

use crate::data::{tokenize, tokenize_with_spans, CellRef, Table, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionKind {
    ValueExact,
    Numeric,
    Attribute,
}

/// A reference to a table cell inside a sentence. `span` is a character
/// range `[start, end)` of the sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub cell_ref: CellRef,
    pub span: (usize, usize),
    pub kind: MentionKind,
}

/// Parses a numeric cell or token, ignoring `%` and thousands separators,
/// and returns it in hundredths.
pub fn numeric_hundredths(text: &str) -> Option<i64> {
    let cleaned: String = text.trim().chars().filter(|c| *c != ',' && *c != '%').collect();
    let cleaned = cleaned.trim();
    if cleaned.is_empty() || !cleaned.chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    let value: f64 = cleaned.parse().ok()?;
    value.is_finite().then(|| (value * 100.0).round() as i64)
}

fn find_subsequence(haystack: &[Token], needle: &[String]) -> Vec<(usize, usize)> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| haystack[i..i + needle.len()].iter().zip(needle).all(|(h, n)| h.text == *n))
        .map(|i| (haystack[i].start, haystack[i + needle.len() - 1].end))
        .collect()
}

/// All cell mentions in `sentence`, sorted by span start.
///
/// * `value_exact`: whole-token, case-insensitive match of a non-header
///   cell value.
/// * `numeric`: a number equal to a non-header numeric cell once both are
///   rounded to two decimals.
/// * `attribute`: whole-token match of a cell attribute.
pub fn detect_entity_mentions(sentence: &str, table: &Table) -> Vec<Mention> {
    let tokens = tokenize_with_spans(sentence);
    let numbers: Vec<(i64, (usize, usize))> = tokens
        .iter()
        .filter(|t| t.text.starts_with(|c: char| c.is_ascii_digit()))
        .filter_map(|t| numeric_hundredths(&t.text).map(|v| (v, (t.start, t.end))))
        .collect();

    let mut out = Vec::new();
    for cell in table.cells_row_major() {
        if !cell.is_header {
            for span in find_subsequence(&tokens, &tokenize(&cell.value)) {
                out.push(Mention { cell_ref: cell.coord(), span, kind: MentionKind::ValueExact });
            }
            if let Some(v) = numeric_hundredths(&cell.value) {
                for &(n, span) in &numbers {
                    if n == v {
                        out.push(Mention { cell_ref: cell.coord(), span, kind: MentionKind::Numeric });
                    }
                }
            }
        }
        for span in find_subsequence(&tokens, &tokenize(&cell.attribute)) {
            out.push(Mention { cell_ref: cell.coord(), span, kind: MentionKind::Attribute });
        }
    }
    out.sort_by(|a, b| {
        a.span.0.cmp(&b.span.0).then(a.span.1.cmp(&b.span.1)).then(a.kind.cmp(&b.kind)).then(a.cell_ref.cmp(&b.cell_ref))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Cell;

    fn table(cells: Vec<Cell>) -> Table {
        Table { id: "t".into(), caption: String::new(), n_rows: 4, n_cols: 4, cells }
    }

    #[test]
    fn exact_number_is_numeric_and_value_exact() {
        let t = table(vec![Cell::new(1, 1, "score", "16.90")]);
        let m = detect_entity_mentions("BLEU reaches 16.90", &t);
        let kinds: Vec<MentionKind> = m.iter().map(|m| m.kind).collect();
        assert_eq!(kinds, [MentionKind::ValueExact, MentionKind::Numeric]);
        assert!(m.iter().all(|m| m.span == (13, 18) && m.cell_ref == (1, 1)));
    }

    #[test]
    fn rounding_to_two_decimals() {
        // 16.9 -> 1690 hundredths, "16.90" -> 1690 hundredths.
        let t = table(vec![Cell::new(0, 0, "score", "16.90")]);
        let m = detect_entity_mentions("score 16.9", &t);
        assert!(m.iter().any(|m| m.kind == MentionKind::Numeric));
        assert!(!m.iter().any(|m| m.kind == MentionKind::ValueExact));
        // 16.904 -> 1690 as well; 16.96 -> 1696 does not match.
        assert!(detect_entity_mentions("16.904", &t).iter().any(|m| m.kind == MentionKind::Numeric));
        assert!(detect_entity_mentions("16.96", &t).is_empty());
    }

    #[test]
    fn percent_and_commas_are_ignored() {
        let t = table(vec![Cell::new(0, 0, "acc", "91.5%"), Cell::new(0, 1, "n", "1,200")]);
        let m = detect_entity_mentions("accuracy of 91.50 over 1200 runs", &t);
        let cells: Vec<CellRef> = m.iter().filter(|m| m.kind == MentionKind::Numeric).map(|m| m.cell_ref).collect();
        assert_eq!(cells, [(0, 0), (0, 1)]);
    }

    #[test]
    fn unrelated_sentence_has_no_mentions() {
        let t = table(vec![Cell::new(0, 0, "bleu", "16.90"), Cell::new(0, 1, "model", "transformer")]);
        assert!(detect_entity_mentions("We thank the reviewers.", &t).is_empty());
    }

    #[test]
    fn multi_token_values_and_headers() {
        let t = table(vec![Cell::header(0, 0, "BLEU"), Cell::new(1, 0, "BLEU", "big model")]);
        let m = detect_entity_mentions("The Big Model wins on bleu", &t);
        assert!(m.contains(&Mention { cell_ref: (1, 0), span: (4, 13), kind: MentionKind::ValueExact }));
        // Header values never count as value mentions, only as attributes.
        assert!(m.iter().filter(|m| m.cell_ref == (0, 0)).all(|m| m.kind == MentionKind::Attribute));
        assert!(m.windows(2).all(|w| w[0].span.0 <= w[1].span.0));
    }
}
