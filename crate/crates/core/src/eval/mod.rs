//! Automatic metrics, score reports and human-evaluation sheets.

mod bleu;
mod external;
mod human;
mod meteor;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{detect_entity_mentions, MentionKind};
use crate::data::{tokenize, HighlightSet, PairRecord, Table};
use crate::error::{Error, Result};

pub use bleu::{bleu, bleu_stats, BleuStats, MAX_ORDER};
pub use external::{ExternalScorer, HttpScorer, HttpScorerConfig};
pub use human::{
    export_human_eval_sheet, human_eval_rows, load_human_eval_sheet, read_sheet, sign_test, summarize_sheet,
    write_sheet, HumanSummary, SheetRow, SignTest, SHEET_HEADER,
};
pub use meteor::{align, meteor, meteor_detail, MeteorDetail, ALPHA, BETA, GAMMA};

pub const METEOR_VARIANT: &str = "meteor-es";

/// Fraction of highlighted cells mentioned in `output`: a value or numeric
/// mention for body cells, a text match for header cells. Empty
/// highlights give 1.0.
pub fn cell_recall(output: &str, highlights: &HighlightSet, table: &Table) -> f64 {
    if highlights.is_empty() {
        return 1.0;
    }
    let mentions = detect_entity_mentions(output, table);
    let hit = |coord| {
        let header = table.cell(coord).is_some_and(|c| c.is_header);
        mentions.iter().any(|m| {
            m.cell_ref == coord
                && match m.kind {
                    MentionKind::ValueExact | MentionKind::Numeric => true,
                    MentionKind::Attribute => header,
                }
        })
    };
    highlights.iter().filter(|&&c| hit(c)).count() as f64 / highlights.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub pair_id: String,
    pub meteor: f64,
    pub cell_recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub bleu: f64,
    pub meteor: f64,
    pub cell_recall: f64,
    pub n_pairs: usize,
    pub meteor_variant: String,
    pub per_pair: Vec<PairScore>,
}

/// Scores `(pair id, output)` entries against their pairs. Corpus BLEU,
/// mean METEOR and mean cell recall.
pub fn score_outputs(outputs: &[(String, String)], pairs: &[PairRecord]) -> Result<ScoreReport> {
    if outputs.is_empty() {
        return Err(Error::Invalid("nothing to score".into()));
    }
    let by_id: HashMap<&str, &PairRecord> = pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut cands = Vec::with_capacity(outputs.len());
    let mut refs = Vec::with_capacity(outputs.len());
    let mut per_pair = Vec::with_capacity(outputs.len());
    for (id, text) in outputs {
        let pair = by_id.get(id.as_str()).ok_or_else(|| Error::NotFound(format!("pair {id}")))?;
        let c = tokenize(text);
        let r = tokenize(&pair.description);
        per_pair.push(PairScore {
            pair_id: id.clone(),
            meteor: meteor(&c, &r),
            cell_recall: cell_recall(text, &pair.highlights, &pair.table),
        });
        cands.push(c);
        refs.push(r);
    }
    let n = per_pair.len() as f64;
    Ok(ScoreReport {
        bleu: bleu(&cands, &refs)?,
        meteor: per_pair.iter().map(|p| p.meteor).sum::<f64>() / n,
        cell_recall: per_pair.iter().map(|p| p.cell_recall).sum::<f64>() / n,
        n_pairs: per_pair.len(),
        meteor_variant: METEOR_VARIANT.to_string(),
        per_pair,
    })
}
