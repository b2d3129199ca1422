use crate::data::{KnowledgeSentence, PairRecord};
use crate::error::{Error, Result};

pub const SLOTS: [&str; 5] = ["caption", "highlighted_cells", "table", "knowledge", "instruction"];

pub const DEFAULT_TEMPLATE_ID: &str = "default-v1";

pub const DEFAULT_TEMPLATE: &str = "\
Table caption: {caption}

Table:
{table}

Highlighted cells: {highlighted_cells}

Domain knowledge:
{knowledge}

{instruction}
";

pub const INSTRUCTION: &str = "Write a description of the table that is consistent with the highlighted cells and knowledge.";

/// Looks up a built-in template by id.
pub fn template(id: &str) -> Result<&'static str> {
    match id {
        DEFAULT_TEMPLATE_ID => Ok(DEFAULT_TEMPLATE),
        other => Err(Error::Config(format!("unknown prompt template `{other}`"))),
    }
}

/// Fills every slot of `template`. Highlighted cells render as
/// `attribute=value` separated by commas; table rows go one per line with
/// header cells shown by their text.
pub fn build_prompt(pair: &PairRecord, kb_topn: &[&KnowledgeSentence], template: &str) -> Result<String> {
    if let Some(missing) = SLOTS.iter().find(|s| !template.contains(&format!("{{{s}}}"))) {
        return Err(Error::Template(missing.to_string()));
    }
    let highlighted = pair
        .highlighted_cells()
        .iter()
        .map(|c| format!("{}={}", c.attribute, c.value))
        .collect::<Vec<_>>()
        .join(", ");
    let cells = pair.table.cells_row_major();
    let table = (0..pair.table.n_rows)
        .map(|r| {
            cells
                .iter()
                .filter(|c| c.row == r)
                .map(|c| if c.is_header { c.value.clone() } else { format!("{}={}", c.attribute, c.value) })
                .collect::<Vec<_>>()
                .join(" | ")
        })
        .filter(|row| !row.is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    let knowledge = if kb_topn.is_empty() {
        "(none)".to_string()
    } else {
        kb_topn.iter().map(|s| format!("- {}", s.text)).collect::<Vec<_>>().join("\n")
    };
    let caption = if pair.table.caption.is_empty() { "(none)" } else { pair.table.caption.as_str() };
    let fill = |slot: &str| match slot {
        "caption" => Some(caption.to_string()),
        "highlighted_cells" => Some(highlighted.clone()),
        "table" => Some(table.clone()),
        "knowledge" => Some(knowledge.clone()),
        "instruction" => Some(INSTRUCTION.to_string()),
        _ => None,
    };
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}').and_then(|close| fill(&after[..close]).map(|v| (close, v))) {
            Some((close, value)) => {
                out.push_str(&value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}
