//! Annotator verdicts over a pair dataset, persisted in an append-only log.
//!
//! Each annotator has an independent view of every pair. Export adjudicates
//! with the annotator who submitted last for that pair.

mod log;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{compute_agreement, AgreementReport, PairAnnotation, DEFAULT_SAMPLE_SIZE};
use crate::data::{HighlightSet, KbStatus, PairRecord, Split};
use crate::error::{Error, Result};

pub use self::log::{LogEntry, VerdictLog};

pub const AGREEMENT_SEED: u64 = 42;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbDecision {
    pub sentence_id: String,
    pub accept: bool,
}

/// One annotator's submission for one pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pair_id: String,
    pub annotator_id: String,
    #[serde(default)]
    pub kb_decisions: Vec<KbDecision>,
    pub highlight_set: HighlightSet,
    /// Client-supplied, milliseconds since the Unix epoch.
    #[serde(default)]
    pub timestamp: u64,
}

impl Verdict {
    fn annotation(&self) -> PairAnnotation {
        PairAnnotation {
            pair_id: self.pair_id.clone(),
            highlights: self.highlight_set.clone(),
            kb_verdicts: self.kb_decisions.iter().map(|d| (d.sentence_id.clone(), d.accept)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub id: String,
    pub split: Split,
    pub n_kb: usize,
    pub annotators: Vec<String>,
    pub verified: bool,
}

/// A pair as seen by one annotator (or the automatic annotation when no
/// annotator is given or they have not submitted yet).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairView {
    pub pair: PairRecord,
    pub auto_highlights: HighlightSet,
    pub annotator: Option<String>,
    pub annotators: Vec<String>,
}

/// In-memory state: dataset plus the active verdict per (pair, annotator).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnnotationState {
    pairs: Vec<PairRecord>,
    index: BTreeMap<String, usize>,
    views: BTreeMap<String, BTreeMap<String, Verdict>>,
    last_annotator: BTreeMap<String, String>,
}

impl AnnotationState {
    pub fn new(pairs: Vec<PairRecord>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, p) in pairs.iter().enumerate() {
            p.validate()?;
            if index.insert(p.id.clone(), i).is_some() {
                return Err(Error::validation(&p.id, "duplicate pair id"));
            }
        }
        Ok(AnnotationState { pairs, index, ..Default::default() })
    }

    /// State after applying logged `entries` in order.
    pub fn replay(pairs: Vec<PairRecord>, entries: Vec<LogEntry>) -> Result<Self> {
        let mut state = Self::new(pairs)?;
        for e in entries {
            state
                .apply_verdict(e.verdict)
                .map_err(|err| Error::Parse { line: e.seq as usize, message: err.to_string() })?;
        }
        Ok(state)
    }

    pub fn pair(&self, id: &str) -> Option<&PairRecord> {
        self.index.get(id).map(|&i| &self.pairs[i])
    }

    pub fn pairs(&self) -> &[PairRecord] {
        &self.pairs
    }

    /// Checks that every reference in `v` resolves.
    pub fn validate(&self, v: &Verdict) -> Result<()> {
        let pair = self.pair(&v.pair_id).ok_or_else(|| Error::NotFound(format!("pair {}", v.pair_id)))?;
        if v.annotator_id.trim().is_empty() {
            return Err(Error::validation(&v.pair_id, "annotator_id is empty"));
        }
        if let Some((r, c)) = v.highlight_set.first_invalid(&pair.table) {
            return Err(Error::validation(&v.pair_id, format!("cell ({r},{c}) does not resolve")));
        }
        let mut seen = BTreeSet::new();
        for d in &v.kb_decisions {
            if pair.kb.get(&d.sentence_id).is_none() {
                return Err(Error::validation(&v.pair_id, format!("unknown sentence `{}`", d.sentence_id)));
            }
            if !seen.insert(d.sentence_id.as_str()) {
                return Err(Error::validation(&v.pair_id, format!("sentence `{}` decided twice", d.sentence_id)));
            }
        }
        Ok(())
    }

    /// Validates and records `v`, superseding the annotator's earlier verdict.
    pub fn apply_verdict(&mut self, v: Verdict) -> Result<()> {
        self.validate(&v)?;
        self.last_annotator.insert(v.pair_id.clone(), v.annotator_id.clone());
        self.views.entry(v.pair_id.clone()).or_default().insert(v.annotator_id.clone(), v);
        Ok(())
    }

    pub fn verdict(&self, pair_id: &str, annotator: &str) -> Option<&Verdict> {
        self.views.get(pair_id)?.get(annotator)
    }

    fn annotators_of(&self, pair_id: &str) -> Vec<String> {
        self.views.get(pair_id).map(|m| m.keys().cloned().collect()).unwrap_or_default()
    }

    fn is_verified(&self, pair: &PairRecord) -> bool {
        self.last_annotator
            .get(&pair.id)
            .and_then(|a| self.verdict(&pair.id, a))
            .is_some_and(|v| pair.kb.sentences.iter().all(|s| v.kb_decisions.iter().any(|d| d.sentence_id == s.id)))
    }

    pub fn list(&self, split: Option<Split>) -> Vec<PairSummary> {
        self.pairs
            .iter()
            .filter(|p| split.is_none_or(|s| p.split == s))
            .map(|p| PairSummary {
                id: p.id.clone(),
                split: p.split,
                n_kb: p.kb.len(),
                annotators: self.annotators_of(&p.id),
                verified: self.is_verified(p),
            })
            .collect()
    }

    /// The pair with `v` applied: its highlight set, and kb statuses for the
    /// sentences it decides.
    fn overlay(pair: &PairRecord, v: &Verdict) -> PairRecord {
        let mut out = pair.clone();
        out.highlights = v.highlight_set.clone();
        for d in &v.kb_decisions {
            if let Some(s) = out.kb.sentences.iter_mut().find(|s| s.id == d.sentence_id) {
                s.status = if d.accept { KbStatus::Accepted } else { KbStatus::Rejected };
            }
        }
        out
    }

    pub fn view(&self, pair_id: &str, annotator: Option<&str>) -> Result<PairView> {
        let pair = self.pair(pair_id).ok_or_else(|| Error::NotFound(format!("pair {pair_id}")))?;
        let shown = match annotator.and_then(|a| self.verdict(pair_id, a)) {
            Some(v) => Self::overlay(pair, v),
            None => pair.clone(),
        };
        Ok(PairView {
            pair: shown,
            auto_highlights: pair.highlights.clone(),
            annotator: annotator.map(String::from),
            annotators: self.annotators_of(pair_id),
        })
    }

    /// Agreement between two annotators over the pairs both have judged.
    pub fn agreement_report(&self, a: &str, b: &str) -> Result<AgreementReport> {
        let mut left = Vec::new();
        let mut right = Vec::new();
        for views in self.views.values() {
            if let (Some(va), Some(vb)) = (views.get(a), views.get(b)) {
                left.push(va.annotation());
                right.push(vb.annotation());
            }
        }
        if left.is_empty() {
            return Err(Error::Invalid(format!("annotators `{a}` and `{b}` share no judged pair")));
        }
        compute_agreement(&left, &right, DEFAULT_SAMPLE_SIZE, AGREEMENT_SEED)
    }

    /// Verified pairs, adjudicated by the latest annotator.
    pub fn export(&self) -> Vec<PairRecord> {
        self.pairs
            .iter()
            .filter(|p| self.is_verified(p))
            .filter_map(|p| {
                let who = self.last_annotator.get(&p.id)?;
                Some(Self::overlay(p, self.verdict(&p.id, who)?))
            })
            .collect()
    }
}

/// State plus its durable log. Verdicts are appended before they are applied.
#[derive(Debug)]
pub struct AnnotationStore {
    state: AnnotationState,
    log: VerdictLog,
}

impl AnnotationStore {
    /// Loads `pairs` and replays the log at `log_path`.
    pub fn open(pairs: Vec<PairRecord>, log_path: impl AsRef<Path>) -> Result<Self> {
        let (log, entries) = VerdictLog::open(log_path)?;
        let state = AnnotationState::replay(pairs, entries)?;
        Ok(AnnotationStore { state, log })
    }

    pub fn state(&self) -> &AnnotationState {
        &self.state
    }

    pub fn submit(&mut self, v: Verdict) -> Result<u64> {
        self.state.validate(&v)?;
        let seq = self.log.append(&v)?;
        self.state.apply_verdict(v)?;
        Ok(seq)
    }

    pub fn log_len(&self) -> u64 {
        self.log.next_seq() - 1
    }
}

#[cfg(test)]
mod tests;
