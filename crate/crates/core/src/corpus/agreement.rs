use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CellRef, HighlightSet};
use crate::error::{Error, Result};

/// One annotator's decisions on one pair.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAnnotation {
    pub pair_id: String,
    pub highlights: HighlightSet,
    /// Knowledge sentence id -> keep.
    pub kb_verdicts: BTreeMap<String, bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_samples: usize,
    pub cell_agreement: f64,
    pub kb_agreement: f64,
}

pub const DEFAULT_SAMPLE_SIZE: usize = 100;

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Raw agreement counts for one pair: `(cells agreed, cells considered,
/// sentences agreed, sentences considered)`.
fn pair_counts(a: &PairAnnotation, b: &PairAnnotation) -> (usize, usize, usize, usize) {
    let union: BTreeSet<CellRef> = a.highlights.refs.union(&b.highlights.refs).copied().collect();
    let cell_agree = union.iter().filter(|c| a.highlights.contains(**c) == b.highlights.contains(**c)).count();
    let mut kb_agree = 0;
    let mut kb_total = 0;
    for (sid, keep_a) in &a.kb_verdicts {
        if let Some(keep_b) = b.kb_verdicts.get(sid) {
            kb_total += 1;
            kb_agree += usize::from(keep_a == keep_b);
        }
    }
    (cell_agree, union.len(), kb_agree, kb_total)
}

/// Pairwise agreement between two annotators over the same pair ids.
///
/// A cell is considered when either annotator highlighted it; a knowledge
/// sentence when both issued a keep/drop verdict on it. When more than
/// `sample_size` pairs are given, a seeded random slice is used. Fractions
/// are rounded to three decimals; with nothing to compare they are 1.
pub fn compute_agreement(
    a: &[PairAnnotation],
    b: &[PairAnnotation],
    sample_size: usize,
    seed: u64,
) -> Result<AgreementReport> {
    let map_a: BTreeMap<&str, &PairAnnotation> = a.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    let map_b: BTreeMap<&str, &PairAnnotation> = b.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    if map_a.len() != a.len() || map_b.len() != b.len() {
        return Err(Error::Invalid("duplicate pair id in annotation list".into()));
    }
    if !map_a.keys().eq(map_b.keys()) {
        let only: Vec<&str> = map_a.keys().filter(|k| !map_b.contains_key(*k)).chain(map_b.keys().filter(|k| !map_a.contains_key(*k))).copied().collect();
        return Err(Error::Invalid(format!("annotators cover different pairs: {}", only.join(", "))));
    }
    let mut ids: Vec<&str> = map_a.keys().copied().collect();
    if ids.len() > sample_size {
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        ids.truncate(sample_size);
        ids.sort_unstable();
    }
    let (mut ca, mut ct, mut ka, mut kt) = (0, 0, 0, 0);
    for id in &ids {
        let (a1, a2, a3, a4) = pair_counts(map_a[id], map_b[id]);
        ca += a1;
        ct += a2;
        ka += a3;
        kt += a4;
    }
    let frac = |n: usize, d: usize| if d == 0 { 1.0 } else { round3(n as f64 / d as f64) };
    Ok(AgreementReport { n_samples: ids.len(), cell_agreement: frac(ca, ct), kb_agreement: frac(ka, kt) })
}
