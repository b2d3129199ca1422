use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved entries, in id order.
pub const RESERVED_TOKENS: [&str; 7] =
    ["<pad>", "<unk>", "<bos>", "<eos>", "<sep_h>", "<sep_t>", "<sep_b>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const BOS: usize = 2;
    pub const EOS: usize = 3;
    pub const SEP_H: usize = 4;
    pub const SEP_T: usize = 5;
    pub const SEP_B: usize = 6;

    /// Builds a vocabulary from an explicit token list. The reserved entries
    /// are prepended when missing.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if !list.iter().take(RESERVED_TOKENS.len()).eq(RESERVED_TOKENS.iter()) {
            let mut full: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
            full.append(&mut list);
            list = full;
        }
        let mut index = HashMap::with_capacity(list.len());
        for (id, tok) in list.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry `{tok}`")));
            }
        }
        Ok(Vocabulary { tokens: list, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED_TOKENS[Self::UNK])
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Decodes until the first EOS, dropping reserved ids.
    pub fn decode_text(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != Self::EOS)
            .filter(|&&i| i >= RESERVED_TOKENS.len() || i == Self::UNK)
            .map(|&i| self.token(i).to_string())
            .collect()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::from_tokens(tokens).map_err(serde::de::Error::custom)
    }
}

/// Frequency-ranked vocabulary. `max_size` counts the reserved entries.
pub fn build_vocabulary<S: AsRef<str>>(
    corpus: &[Vec<S>],
    min_freq: usize,
    max_size: usize,
) -> Result<Vocabulary> {
    if max_size <= RESERVED_TOKENS.len() {
        return Err(Error::Config(format!(
            "max_size {max_size} leaves no room beyond {} reserved tokens",
            RESERVED_TOKENS.len()
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for seq in corpus {
        for t in seq {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, n)| *n >= min_freq.max(1) && !RESERVED_TOKENS.contains(t))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - RESERVED_TOKENS.len());
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(seqs: &[&[&str]]) -> Vec<Vec<String>> {
        seqs.iter().map(|s| s.iter().map(|t| t.to_string()).collect()).collect()
    }

    #[test]
    fn frequency_order_with_reserved_prefix() {
        let v = build_vocabulary(&corpus(&[&["a", "b"], &["a"]]), 1, 100).unwrap();
        assert_eq!(v.id("a"), 7);
        assert_eq!(v.id("b"), 8);
        assert_eq!(v.token(Vocabulary::SEP_B), "<sep_b>");
    }

    #[test]
    fn min_freq_drops_rare_tokens_to_unk() {
        let v = build_vocabulary(&corpus(&[&["a", "b"], &["a"]]), 2, 100).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(v.encode(&["a", "b"]), vec![7, Vocabulary::UNK]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocabulary(&corpus(&[&["b"], &["a"]]), 1, 100).unwrap();
        assert_eq!(v.id("a"), 7);
        assert_eq!(v.id("b"), 8);
    }

    #[test]
    fn max_size_must_exceed_reserved() {
        assert!(matches!(build_vocabulary(&corpus(&[&["a"]]), 1, 7), Err(Error::Config(_))));
        let v = build_vocabulary(&corpus(&[&["a", "a", "b"]]), 1, 8).unwrap();
        assert_eq!(v.len(), 8);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trips(words in proptest::collection::vec("[a-e]{1,3}", 1..40)) {
            let v = build_vocabulary(std::slice::from_ref(&words), 1, 8192).unwrap();
            let ids = v.encode(&words);
            prop_assert_eq!(v.decode(&ids), words);
            prop_assert_eq!(v.encode(&["zzzz-not-there"]), vec![Vocabulary::UNK]);
        }
    }
}
