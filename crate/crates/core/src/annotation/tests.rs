use std::io::Write;

use proptest::prelude::*;

use super::*;
use crate::data::{Cell, KnowledgeBase, KnowledgeSentence, Table};

fn pair(id: &str) -> PairRecord {
    PairRecord {
        id: id.into(),
        table: Table {
            id: id.into(),
            caption: String::new(),
            n_rows: 2,
            n_cols: 2,
            cells: vec![
                Cell::header(0, 0, "model"),
                Cell::header(0, 1, "bleu"),
                Cell::new(1, 0, "model", "ours"),
                Cell::new(1, 1, "bleu", "16.90"),
            ],
        },
        highlights: [(1, 1)].into_iter().collect(),
        kb: KnowledgeBase::from(vec![
            KnowledgeSentence::new(&format!("{id}:s0"), "ours uses knowledge"),
            KnowledgeSentence::new(&format!("{id}:s1"), "the weather was fine"),
        ]),
        description: "ours reaches 16.90 bleu".into(),
        split: Split::Train,
    }
}

fn verdict(pair_id: &str, who: &str, cells: &[(usize, usize)], kb: &[(usize, bool)]) -> Verdict {
    Verdict {
        pair_id: pair_id.into(),
        annotator_id: who.into(),
        kb_decisions: kb
            .iter()
            .map(|&(i, accept)| KbDecision { sentence_id: format!("{pair_id}:s{i}"), accept })
            .collect(),
        highlight_set: cells.iter().copied().collect(),
        timestamp: 0,
    }
}

fn dataset() -> Vec<PairRecord> {
    vec![pair("p0"), pair("p1")]
}

#[test]
fn reject_sentence_updates_only_that_view() {
    let mut s = AnnotationState::new(dataset()).unwrap();
    s.apply_verdict(verdict("p0", "ann1", &[(1, 0), (1, 1)], &[(0, true), (1, false)])).unwrap();
    let mine = s.view("p0", Some("ann1")).unwrap();
    assert_eq!(mine.pair.kb.sentences[1].status, KbStatus::Rejected);
    assert_eq!(mine.pair.highlights.len(), 2);
    assert_eq!(mine.auto_highlights.len(), 1);
    let other = s.view("p0", Some("ann2")).unwrap();
    assert_eq!(other.pair.kb.sentences[1].status, KbStatus::Auto);
    assert_eq!(other.annotators, vec!["ann1".to_string()]);
}

#[test]
fn invalid_references_are_rejected_and_log_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("verdicts.jsonl");
    let mut store = AnnotationStore::open(dataset(), &path).unwrap();
    let err = store.submit(verdict("p0", "a", &[(9, 9)], &[])).unwrap_err();
    assert!(matches!(err, Error::Validation { .. }), "{err}");
    assert!(matches!(store.submit(verdict("zz", "a", &[], &[])), Err(Error::NotFound(_))));
    let mut bad = verdict("p0", "a", &[], &[]);
    bad.kb_decisions.push(KbDecision { sentence_id: "nope".into(), accept: true });
    assert!(store.submit(bad).is_err());
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 0);
    assert_eq!(store.log_len(), 0);
}

#[test]
fn resubmission_is_idempotent_and_log_grows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.jsonl");
    let mut store = AnnotationStore::open(dataset(), &path).unwrap();
    let v = verdict("p0", "a", &[(1, 1)], &[(0, true)]);
    assert_eq!(store.submit(v.clone()).unwrap(), 1);
    let before = store.state().clone();
    assert_eq!(store.submit(v).unwrap(), 2);
    assert_eq!(store.state(), &before);
    assert_eq!(store.log_len(), 2);
}

#[test]
fn restart_replays_to_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.jsonl");
    let state = {
        let mut store = AnnotationStore::open(dataset(), &path).unwrap();
        store.submit(verdict("p0", "a", &[(1, 1)], &[(0, true), (1, false)])).unwrap();
        store.submit(verdict("p0", "b", &[(1, 0)], &[(0, true)])).unwrap();
        store.submit(verdict("p1", "a", &[], &[(1, true)])).unwrap();
        store.state().clone()
    };
    let store = AnnotationStore::open(dataset(), &path).unwrap();
    assert_eq!(store.state(), &state);
    assert_eq!(store.log_len(), 3);
}

#[test]
fn torn_tail_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.jsonl");
    {
        let mut store = AnnotationStore::open(dataset(), &path).unwrap();
        store.submit(verdict("p0", "a", &[(1, 1)], &[(0, true)])).unwrap();
    }
    let mut bytes = std::fs::read(&path).unwrap();
    let whole = bytes.len();
    bytes.extend_from_slice(&bytes.clone()[..whole / 2]);
    std::fs::write(&path, &bytes).unwrap();
    let mut store = AnnotationStore::open(dataset(), &path).unwrap();
    assert_eq!(store.log_len(), 1);
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, whole);
    assert_eq!(store.submit(verdict("p1", "a", &[], &[])).unwrap(), 2);
}

#[test]
fn corrupt_complete_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.jsonl");
    std::fs::write(&path, "{not json}\n").unwrap();
    assert!(matches!(AnnotationStore::open(dataset(), &path), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn agreement_fixture_two_of_three() {
    let mut s = AnnotationState::new(dataset()).unwrap();
    s.apply_verdict(verdict("p0", "a", &[(0, 0), (1, 0), (1, 1)], &[(0, true), (1, false)])).unwrap();
    s.apply_verdict(verdict("p0", "b", &[(0, 0), (1, 0)], &[(0, true), (1, true)])).unwrap();
    s.apply_verdict(verdict("p1", "a", &[], &[(0, true)])).unwrap();
    let r = s.agreement_report("a", "b").unwrap();
    assert_eq!((r.n_samples, r.cell_agreement, r.kb_agreement), (1, 0.667, 0.5));
    let same = s.agreement_report("a", "a").unwrap();
    assert_eq!((same.cell_agreement, same.kb_agreement), (1.0, 1.0));
    assert!(s.agreement_report("a", "ghost").is_err());
}

#[test]
fn export_uses_latest_annotator() {
    let mut s = AnnotationState::new(dataset()).unwrap();
    assert!(s.export().is_empty());
    s.apply_verdict(verdict("p1", "a", &[], &[(0, true)])).unwrap();
    assert!(s.export().is_empty(), "p1 has an undecided sentence");
    s.apply_verdict(verdict("p0", "a", &[(1, 1)], &[(0, true), (1, true)])).unwrap();
    s.apply_verdict(verdict("p0", "b", &[(1, 0)], &[(0, true), (1, false)])).unwrap();
    let out = s.export();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].kb.sentences[1].status, KbStatus::Rejected);
    assert!(out[0].highlights.contains((1, 0)));
    assert!(out[0].kb.sentences.iter().all(|k| k.status != KbStatus::Auto));
    let listed = s.list(None);
    assert!(listed[0].verified && !listed[1].verified);
    assert_eq!(listed[1].annotators, ["a"]);
    assert_eq!(s.list(Some(Split::Test)).len(), 0);
}

proptest! {
    /// Any prefix of a log replays without error, to the state reached by
    /// applying that many verdicts.
    #[test]
    fn every_log_prefix_replays(ops in proptest::collection::vec((0usize..2, 0usize..3, any::<bool>(), any::<bool>()), 1..8), cut in 0usize..2000) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        let verdicts: Vec<Verdict> = ops
            .iter()
            .map(|&(p, a, k, h)| verdict(&format!("p{p}"), &format!("a{a}"), if h { &[(1, 1)] } else { &[] }, &[(0, k)]))
            .collect();
        {
            let mut store = AnnotationStore::open(dataset(), &path).unwrap();
            for v in &verdicts {
                store.submit(v.clone()).unwrap();
            }
        }
        let bytes = std::fs::read(&path).unwrap();
        let cut = cut % (bytes.len() + 1);
        std::fs::write(&path, &bytes[..cut]).unwrap();
        let n_complete = bytes[..cut].iter().filter(|&&b| b == b'\n').count();
        let store = AnnotationStore::open(dataset(), &path).unwrap();
        let mut expect = AnnotationState::new(dataset()).unwrap();
        for v in &verdicts[..n_complete] {
            expect.apply_verdict(v.clone()).unwrap();
        }
        prop_assert_eq!(store.state(), &expect);
    }
}

#[test]
fn read_only_replay_matches_store() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.jsonl");
    let mut store = AnnotationStore::open(dataset(), &path).unwrap();
    store.submit(verdict("p0", "a", &[(1, 1)], &[(0, true)])).unwrap();
    std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"seq\":2").unwrap();
    let before = std::fs::read(&path).unwrap();
    let state = AnnotationState::replay(dataset(), VerdictLog::read(&path).unwrap()).unwrap();
    assert_eq!(&state, store.state());
    assert_eq!(std::fs::read(&path).unwrap(), before);
}
