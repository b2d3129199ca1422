//! Small generated tasks for exercising the generator.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Cell, HighlightSet, KnowledgeBase, KnowledgeSentence, PairRecord, Split, Table};

const ATTRIBUTES: [&str; 4] = ["model", "bleu", "meteor", "size"];
const SYSTEMS: [&str; 8] = ["ours", "base", "lstm", "bart", "t5", "gpt", "copy", "rule"];
const FILLER: [&str; 12] =
    ["the", "results", "show", "that", "our", "method", "table", "reports", "scores", "on", "test", "data"];

fn grid(id: &str, rows: &[[String; 2]]) -> Table {
    let mut cells = vec![Cell::header(0, 0, ATTRIBUTES[0]), Cell::header(0, 1, ATTRIBUTES[1])];
    for (r, row) in rows.iter().enumerate() {
        cells.push(Cell::new(r + 1, 0, ATTRIBUTES[0], &row[0]));
        cells.push(Cell::new(r + 1, 1, ATTRIBUTES[1], &row[1]));
    }
    Table { id: id.to_string(), caption: String::new(), n_rows: rows.len() + 1, n_cols: 2, cells }
}

/// `n` train pairs with short descriptions that restate the highlighted
/// cells, for memorisation runs.
pub fn memorization_pairs(n: usize, seed: u64) -> Vec<PairRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let id = format!("mem{i:02}");
            let rows: Vec<[String; 2]> = (0..2)
                .map(|_| [SYSTEMS.choose(&mut rng).unwrap().to_string(), format!("{}.{}", rng.random_range(10..40), rng.random_range(0..10))])
                .collect();
            let table = grid(&id, &rows);
            let r = rng.random_range(1..=2);
            let highlights: HighlightSet = [(r, 0), (r, 1)].into_iter().collect();
            let lead: Vec<&str> = FILLER.choose_multiple(&mut rng, 3).copied().collect();
            let description = format!(
                "{} {} reaches {} bleu , {} .",
                lead.join(" "),
                rows[r - 1][0],
                rows[r - 1][1],
                FILLER.choose(&mut rng).unwrap()
            );
            PairRecord {
                id,
                table,
                highlights,
                kb: KnowledgeBase::from(vec![KnowledgeSentence::new(&format!("mem{i:02}:s0"), "the table reports scores")]),
                description,
                split: Split::Train,
            }
        })
        .collect()
}

/// Pairs whose descriptions end with a fact word that appears only in one
/// of the pair's knowledge sentences. The first `n_train` pairs are in the
/// train split, the rest in the test split.
pub fn knowledge_task(n_train: usize, n_test: usize, n_facts: usize, seed: u64) -> Vec<PairRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let facts: Vec<String> = (0..n_facts).map(|i| format!("fact{i}")).collect();
    (0..n_train + n_test)
        .map(|i| {
            let id = format!("kt{i:03}");
            let mut systems = SYSTEMS.to_vec();
            systems.shuffle(&mut rng);
            let rows: Vec<[String; 2]> = systems[..2]
                .iter()
                .map(|s| [s.to_string(), format!("{}.{}", rng.random_range(10..40), rng.random_range(0..10))])
                .collect();
            let table = grid(&id, &rows);
            let r = rng.random_range(1..=2);
            let highlights: HighlightSet = [(r, 0), (r, 1)].into_iter().collect();
            let fact = facts.choose(&mut rng).unwrap();
            let filler: Vec<&str> = FILLER.choose_multiple(&mut rng, 4).copied().collect();
            let mut kb = vec![
                KnowledgeSentence::new(&format!("{id}:s0"), &format!("{} is known for {fact}", rows[r - 1][0])),
                KnowledgeSentence::new(&format!("{id}:s1"), &filler.join(" ")),
            ];
            kb.shuffle(&mut rng);
            let description = format!("{} gets {} bleu thanks to {fact} .", rows[r - 1][0], rows[r - 1][1]);
            PairRecord {
                id,
                table,
                highlights,
                kb: KnowledgeBase::from(kb),
                description,
                split: if i < n_train { Split::Train } else { Split::Test },
            }
        })
        .collect()
}
