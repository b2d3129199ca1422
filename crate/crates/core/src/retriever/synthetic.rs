//! Generated retrieval benchmark with topical token sharing: every table
//! owns a block of topic words, its cells draw values from that block, and
//! its knowledge sentences mix words of the same block with shared filler.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Cell, HighlightSet, KnowledgeBase, KnowledgeSentence, PairRecord, Split, Table};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_tables: usize,
    pub sentences_per_table: usize,
    pub vocab_size: usize,
    pub topic_size: usize,
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_highlights: usize,
    pub sentence_len: usize,
    pub topic_words_per_sentence: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_tables: 20,
            sentences_per_table: 20,
            vocab_size: 500,
            topic_size: 20,
            n_rows: 4,
            n_cols: 3,
            n_highlights: 3,
            sentence_len: 10,
            topic_words_per_sentence: 3,
            seed: 42,
        }
    }
}

fn word(i: usize) -> String {
    format!("w{i}")
}

/// One pair per table, all in the train split. Sentence ids are
/// `syn{table}:s{index}`.
pub fn synthetic_retrieval_corpus(spec: &SyntheticSpec) -> Result<Vec<PairRecord>> {
    let topic_words = spec.n_tables * spec.topic_size;
    if topic_words >= spec.vocab_size {
        return Err(Error::Config(format!(
            "{} topic words leave no shared words in a vocabulary of {}",
            topic_words, spec.vocab_size
        )));
    }
    if spec.topic_words_per_sentence > spec.sentence_len || spec.n_highlights > spec.n_rows * spec.n_cols {
        return Err(Error::Config("inconsistent synthetic corpus shape".into()));
    }
    let shared: Vec<usize> = (topic_words..spec.vocab_size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pairs = Vec::with_capacity(spec.n_tables);
    for k in 0..spec.n_tables {
        let topic: Vec<usize> = (k * spec.topic_size..(k + 1) * spec.topic_size).collect();
        let id = format!("syn{k}");
        let attributes: Vec<String> = (0..spec.n_cols).map(|_| word(*shared.choose(&mut rng).unwrap())).collect();
        let mut cells = Vec::with_capacity(spec.n_rows * spec.n_cols);
        for r in 0..spec.n_rows {
            for (c, attr) in attributes.iter().enumerate() {
                cells.push(Cell::new(r, c, attr, &word(*topic.choose(&mut rng).unwrap())));
            }
        }
        let table = Table { id: id.clone(), caption: String::new(), n_rows: spec.n_rows, n_cols: spec.n_cols, cells };
        let mut coords: Vec<(usize, usize)> =
            (0..spec.n_rows).flat_map(|r| (0..spec.n_cols).map(move |c| (r, c))).collect();
        coords.shuffle(&mut rng);
        let highlights: HighlightSet = coords.into_iter().take(spec.n_highlights).collect();
        let mut sentences = Vec::with_capacity(spec.sentences_per_table);
        for j in 0..spec.sentences_per_table {
            let mut words: Vec<usize> = Vec::with_capacity(spec.sentence_len);
            for _ in 0..spec.topic_words_per_sentence {
                words.push(*topic.choose(&mut rng).unwrap());
            }
            for _ in spec.topic_words_per_sentence..spec.sentence_len {
                words.push(shared[rng.random_range(0..shared.len())]);
            }
            words.shuffle(&mut rng);
            let text = words.into_iter().map(word).collect::<Vec<_>>().join(" ");
            sentences.push(KnowledgeSentence::new(&format!("{id}:s{j}"), &text));
        }
        let description = table
            .cells_row_major()
            .into_iter()
            .filter(|c| highlights.contains(c.coord()))
            .map(|c| c.value.clone())
            .collect::<Vec<_>>()
            .join(" ");
        pairs.push(PairRecord {
            id,
            table,
            highlights,
            kb: KnowledgeBase::from(sentences),
            description,
            split: Split::Train,
        });
    }
    Ok(pairs)
}
