use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Aggregate n-gram statistics of a corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

impl BleuStats {
    pub fn add<S: AsRef<str>, T: AsRef<str>>(&mut self, candidate: &[S], reference: &[T]) {
        self.candidate_len += candidate.len();
        self.reference_len += reference.len();
        for n in 1..=MAX_ORDER {
            let cand = ngram_counts(candidate, n);
            let refc = ngram_counts(reference, n);
            self.totals[n - 1] += candidate.len().saturating_sub(n - 1);
            self.matches[n - 1] += cand.iter().map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }

    /// Clipped precision for order `n` (1-based).
    pub fn precision(&self, n: usize) -> f64 {
        let t = self.totals[n - 1];
        if t == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / t as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        if c == 0.0 {
            0.0
        } else if c < r {
            (1.0 - r / c).exp()
        } else {
            1.0
        }
    }

    pub fn score(&self) -> f64 {
        let mut log_sum = 0.0;
        for n in 1..=MAX_ORDER {
            let p = self.precision(n);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += 0.25 * p.ln();
        }
        self.brevity_penalty() * log_sum.exp()
    }
}

/// Corpus BLEU-4 with one reference per candidate and no smoothing.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<T>]) -> Result<f64> {
    Ok(bleu_stats(candidates, references)?.score())
}

pub fn bleu_stats<S: AsRef<str>, T: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<T>]) -> Result<BleuStats> {
    if candidates.is_empty() {
        return Err(Error::Invalid("BLEU needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Invalid(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut stats = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        stats.add(c, r);
    }
    Ok(stats)
}
