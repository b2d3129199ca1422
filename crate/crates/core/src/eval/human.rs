//! Human-evaluation sheets and the sign test.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::data::PairRecord;
use crate::error::{Error, Result};

pub const SHEET_HEADER: [&str; 9] =
    ["pair_id", "output", "reference", "table", "highlights", "fluency", "faithfulness", "recall", "valid_facts"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SheetRow {
    pub pair_id: String,
    pub output: String,
    pub reference: String,
    pub table: String,
    pub highlights: String,
    pub fluency: Option<u8>,
    pub faithfulness: Option<f64>,
    pub recall: Option<f64>,
    pub valid_facts: Option<f64>,
}

fn table_snippet(pair: &PairRecord) -> String {
    let cells = pair.table.cells_row_major();
    (0..pair.table.n_rows)
        .map(|r| {
            cells
                .iter()
                .filter(|c| c.row == r)
                .map(|c| if c.is_header { c.value.clone() } else { format!("{}={}", c.attribute, c.value) })
                .collect::<Vec<_>>()
                .join(" | ")
        })
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ; ")
}

/// Sheet rows for `outputs` (pair id, system text), shuffled by `seed`.
pub fn human_eval_rows(outputs: &[(String, String)], pairs: &[PairRecord], seed: u64) -> Result<Vec<SheetRow>> {
    let by_id: HashMap<&str, &PairRecord> = pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut rows = Vec::with_capacity(outputs.len());
    for (id, text) in outputs {
        let pair = by_id.get(id.as_str()).ok_or_else(|| Error::NotFound(format!("pair {id}")))?;
        rows.push(SheetRow {
            pair_id: id.clone(),
            output: text.clone(),
            reference: pair.description.clone(),
            table: table_snippet(pair),
            highlights: pair
                .highlighted_cells()
                .iter()
                .map(|c| format!("{}={}", c.attribute, c.value))
                .collect::<Vec<_>>()
                .join(", "),
            fluency: None,
            faithfulness: None,
            recall: None,
            valid_facts: None,
        });
    }
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(rows)
}

pub fn write_sheet<W: std::io::Write>(rows: &[SheetRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SHEET_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<sheet>", e))?;
    Ok(())
}

pub fn export_human_eval_sheet(
    outputs: &[(String, String)],
    pairs: &[PairRecord],
    path: &Path,
    seed: u64,
) -> Result<Vec<SheetRow>> {
    let rows = human_eval_rows(outputs, pairs, seed)?;
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_sheet(&rows, f)?;
    Ok(rows)
}

/// Reads a sheet, rejecting a wrong header, fluency outside 1..=5 and
/// fractions outside [0, 1]. Blank score cells load as `None`.
pub fn read_sheet<R: std::io::Read>(input: R) -> Result<Vec<SheetRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != SHEET_HEADER {
        return Err(Error::Schema(format!("unexpected sheet header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<SheetRow>().enumerate() {
        let row = rec?;
        let line = i + 2;
        if let Some(f) = row.fluency {
            if !(1..=5).contains(&f) {
                return Err(Error::Parse { line, message: format!("fluency {f} outside 1..5") });
            }
        }
        for (name, v) in [("faithfulness", row.faithfulness), ("recall", row.recall), ("valid_facts", row.valid_facts)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Parse { line, message: format!("{name} {v} outside [0, 1]") });
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_human_eval_sheet(path: &Path) -> Result<Vec<SheetRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_sheet(f)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HumanSummary {
    pub n_rows: usize,
    pub fluency: Option<f64>,
    pub faithfulness: Option<f64>,
    pub recall: Option<f64>,
    pub valid_facts: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Means over the filled cells of each column.
pub fn summarize_sheet(rows: &[SheetRow]) -> HumanSummary {
    HumanSummary {
        n_rows: rows.len(),
        fluency: mean(rows.iter().filter_map(|r| r.fluency.map(f64::from))),
        faithfulness: mean(rows.iter().filter_map(|r| r.faithfulness)),
        recall: mean(rows.iter().filter_map(|r| r.recall)),
        valid_facts: mean(rows.iter().filter_map(|r| r.valid_facts)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
}

/// Two-sided exact sign test on paired scores; ties are dropped.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!("{} vs {} paired scores", a.len(), b.len())));
    }
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let ties = a.len() - wins - losses;
    let n = wins + losses;
    let p_value = if n == 0 {
        1.0
    } else {
        let dist = Binomial::new(0.5, n as u64).map_err(|e| Error::Invalid(e.to_string()))?;
        (2.0 * dist.cdf(wins.min(losses) as u64)).min(1.0)
    };
    Ok(SignTest { wins, losses, ties, p_value })
}
