//! METEOR with exact and Porter-stem matching only (no synonym or
//! paraphrase tables), reported as "meteor-es".

use std::collections::HashMap;

use porter_stemmer::stem;
use serde::Serialize;

pub const ALPHA: f64 = 0.9;
pub const BETA: f64 = 3.0;
pub const GAMMA: f64 = 0.5;

/// Search budget for the chunk-minimising alignment.
const MAX_NODES: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeteorDetail {
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub fmean: f64,
    pub penalty: f64,
    pub score: f64,
}

fn stem_key(token: &str) -> String {
    stem(&token.to_lowercase())
}

struct Search<'a> {
    cand: &'a [String],
    positions: HashMap<&'a str, Vec<usize>>,
    used: Vec<bool>,
    skips_left: HashMap<&'a str, usize>,
    assign: Vec<Option<usize>>,
    best_chunks: usize,
    best: Vec<Option<usize>>,
    nodes: usize,
}

impl Search<'_> {
    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        self.nodes += 1;
        if chunks >= self.best_chunks || self.nodes > MAX_NODES {
            return;
        }
        if i == self.cand.len() {
            self.best_chunks = chunks;
            self.best = self.assign.clone();
            return;
        }
        let key = self.cand[i].as_str();
        let Some(slots) = self.positions.get(key).cloned() else {
            self.run(i + 1, None, chunks);
            return;
        };
        let mut order: Vec<usize> = slots.into_iter().filter(|&j| !self.used[j]).collect();
        if let Some(p) = prev {
            if let Some(k) = order.iter().position(|&j| j == p + 1) {
                order.swap(0, k);
                order[1..].sort_unstable();
            }
        }
        for j in order {
            let extends = prev.is_some_and(|p| p + 1 == j);
            self.used[j] = true;
            self.assign[i] = Some(j);
            self.run(i + 1, Some(j), chunks + usize::from(!extends));
            self.assign[i] = None;
            self.used[j] = false;
        }
        if self.skips_left[key] > 0 {
            *self.skips_left.get_mut(key).unwrap() -= 1;
            self.run(i + 1, None, chunks);
            *self.skips_left.get_mut(key).unwrap() += 1;
        }
    }
}

/// Maximum-match alignment with the fewest chunks. Returns
/// `(matches, chunks)`.
pub fn align<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T]) -> (usize, usize) {
    let cand: Vec<String> = candidate.iter().map(|t| stem_key(t.as_ref())).collect();
    let refs: Vec<String> = reference.iter().map(|t| stem_key(t.as_ref())).collect();
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, r) in refs.iter().enumerate() {
        positions.entry(r.as_str()).or_default().push(j);
    }
    let mut cand_count: HashMap<&str, usize> = HashMap::new();
    for c in &cand {
        *cand_count.entry(c.as_str()).or_default() += 1;
    }
    let mut matches = 0;
    let mut skips_left = HashMap::new();
    for (k, &n) in &cand_count {
        let avail = positions.get(k).map_or(0, Vec::len);
        matches += n.min(avail);
        skips_left.insert(*k, n.saturating_sub(avail));
    }
    if matches == 0 {
        return (0, 0);
    }
    let mut s = Search {
        cand: &cand,
        positions,
        used: vec![false; refs.len()],
        skips_left,
        assign: vec![None; cand.len()],
        best_chunks: usize::MAX,
        best: Vec::new(),
        nodes: 0,
    };
    s.run(0, None, 0);
    (matches, s.best_chunks)
}

pub fn meteor_detail<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T]) -> MeteorDetail {
    let (m, chunks) = align(candidate, reference);
    if m == 0 {
        return MeteorDetail { matches: 0, chunks: 0, precision: 0.0, recall: 0.0, fmean: 0.0, penalty: 0.0, score: 0.0 };
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
    let penalty = GAMMA * (chunks as f64 / m as f64).powf(BETA);
    MeteorDetail { matches: m, chunks, precision: p, recall: r, fmean, penalty, score: fmean * (1.0 - penalty) }
}

pub fn meteor<S: AsRef<str>, T: AsRef<str>>(candidate: &[S], reference: &[T]) -> f64 {
    meteor_detail(candidate, reference).score
}
