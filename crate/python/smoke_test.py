"""Smoke test for the ctrltab extension module.

Build and install first:
    pip install --no-build-isolation -e crates/python
"""

import json
import math
import os
import tempfile

import ctrltab

FIXTURE = os.path.join(os.path.dirname(__file__), "..", "crates", "cli", "tests", "fixtures", "corpus", "pairs.golden.jsonl")


def main():
    pairs = ctrltab.read_pairs(FIXTURE)
    assert [p.id for p in pairs] == ["a1-t1", "a1-t2", "a2-t1"]
    first = pairs[0]
    assert first.split == "train"
    assert first.highlights == [(1, 0), (1, 1), (2, 0)]
    assert ctrltab.Pair.from_json(first.to_json()).to_json() == first.to_json()
    try:
        first.with_highlights([(99, 99)])
    except ValueError:
        pass
    else:
        raise AssertionError("bad highlight accepted")

    stats = ctrltab.corpus_stats(pairs)
    assert stats["n_pairs"] == 3

    toks = ctrltab.tokenize("Ours reaches 16.90 BLEU.")
    assert ctrltab.bleu([toks], [toks]) == 1.0
    assert abs(ctrltab.meteor("a b c d e f g h i j".split(), "a b c d e f g h i j".split()) - 0.9995) < 1e-9

    report = ctrltab.score_outputs([(p.id, p.description) for p in pairs], pairs)
    assert abs(report["bleu"] - 1.0) < 1e-12 and report["n_pairs"] == 3

    index = ctrltab.TfidfIndex([(s, t) for p in pairs for s, t in p.kb])
    hits = index.query(first.description, 2)
    assert len(hits) == 2 and hits[0][1] >= hits[1][1]

    a = [{"pair_id": "p1", "highlights": [[1, 0], [1, 1]], "kb_verdicts": {"s1": True}}]
    b = [{"pair_id": "p1", "highlights": [[1, 0]], "kb_verdicts": {"s1": True}}]
    agreement = ctrltab.compute_agreement(a, b)
    assert agreement["cell_agreement"] == 0.5 and agreement["kb_agreement"] == 1.0

    task = ctrltab.synth("knowledge", 8, 42)
    with tempfile.TemporaryDirectory() as tmp:
        retriever, losses = ctrltab.Retriever.train(task, seed=42, epochs=1, d_model=16)
        assert len(losses) == 1 and math.isfinite(losses[0])
        path = os.path.join(tmp, "ret.ckpt")
        retriever.save(path)
        assert ctrltab.Retriever.load(path).retrieve(task[0], 2) == retriever.retrieve(task[0], 2)

        gen, _ = ctrltab.Generator.train(task, seed=42, epochs=1, d_model=16, max_output_len=16)
        test = ctrltab.filter_split(task, "test")
        out = gen.generate(test[0], selector="retriever", retriever=retriever, max_len=16)
        assert set(out) == {"pair_id", "output", "retrieved", "decode"}
        assert out["retrieved"]

    checks = ctrltab.gradcheck(42)
    assert all(c["passed"] for c in checks), json.dumps(checks)
    print("smoke test ok")


if __name__ == "__main__":
    main()
