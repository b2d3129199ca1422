use std::collections::HashMap;

use super::split_sentences;
use crate::data::{is_punctuation, tokenize, KnowledgeSentence};

fn words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|t| !is_punctuation(t)).collect()
}

/// Multiset token F1, punctuation excluded.
pub fn token_f1(candidate: &str, reference: &str) -> f64 {
    let c = words(candidate);
    let r = words(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &r {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &c {
        if let Some(n) = counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / c.len() as f64;
    let r = overlap as f64 / r.len() as f64;
    2.0 * p * r / (p + r)
}

fn normalized(text: &str) -> String {
    format!(" {} ", tokenize(text).join(" "))
}

/// Removes candidates that restate the description: token F1 against any
/// description sentence at or above `theta_dup`, or token-boundary
/// containment in either direction. Order is preserved.
pub fn dedup_against_description(
    candidates: &[KnowledgeSentence],
    description: &str,
    theta_dup: f64,
) -> Vec<KnowledgeSentence> {
    let desc_sentences: Vec<String> = split_sentences(description).into_iter().map(|(_, s)| s).collect();
    let desc_norm = normalized(description);
    candidates
        .iter()
        .filter(|cand| {
            let norm = normalized(&cand.text);
            let contained = !norm.trim().is_empty()
                && !desc_norm.trim().is_empty()
                && (desc_norm.contains(&norm) || norm.contains(&desc_norm));
            let similar = desc_sentences.iter().any(|d| token_f1(&cand.text, d) >= theta_dup);
            !(contained || similar)
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ks(texts: &[&str]) -> Vec<KnowledgeSentence> {
        texts.iter().enumerate().map(|(i, t)| KnowledgeSentence::new(&format!("s{i}"), t)).collect()
    }

    #[test]
    fn identical_sentence_is_dropped() {
        let desc = "Our model wins. It is fast.";
        assert!(dedup_against_description(&ks(&["It is fast."]), desc, 0.8).is_empty());
    }

    #[test]
    fn disjoint_sentence_is_kept() {
        let out = dedup_against_description(&ks(&["Dropout regularizes training."]), "Our model wins.", 0.8);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn threshold_is_inclusive() {
        // 5 vs 5 tokens sharing 4: P = R = 0.8, F1 = 0.8.
        let cand = "alpha beta gamma delta epsilon";
        let desc = "alpha beta gamma delta zeta";
        assert!((token_f1(cand, desc) - 0.8).abs() < 1e-12);
        assert!(dedup_against_description(&ks(&[cand]), desc, 0.8).is_empty());
        assert_eq!(dedup_against_description(&ks(&[cand]), desc, 0.81).len(), 1);
    }

    #[test]
    fn containment_drops_short_fragments_on_token_boundaries() {
        let desc = "The transformer reaches 28.4 BLEU on newstest.";
        assert!(dedup_against_description(&ks(&["reaches 28.4 BLEU"]), desc, 0.99).is_empty());
        // "trans" is a substring of a word, not of the token sequence
        assert_eq!(dedup_against_description(&ks(&["trans"]), desc, 0.99).len(), 1);
    }

    proptest! {
        #[test]
        fn never_grows_and_is_idempotent(
            cands in proptest::collection::vec("[a-d]( [a-d]){0,5}", 0..8),
            desc in "[a-d]( [a-d]){0,8}",
            theta in 0.1f64..1.0,
        ) {
            let cands: Vec<&str> = cands.iter().map(String::as_str).collect();
            let once = dedup_against_description(&ks(&cands), &desc, theta);
            prop_assert!(once.len() <= cands.len());
            let twice = dedup_against_description(&once, &desc, theta);
            prop_assert_eq!(once, twice);
        }
    }
}
