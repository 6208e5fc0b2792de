"""Smoke test for the diora extension module.

    pip install --no-build-isolation -e crates/python
    python python/smoke_test.py
"""

import math
import os
import tempfile

import diora

CORPUS = [
    "the cat sat on the mat .",
    "a dog ran .",
    "the bird flew away .",
    "a cat saw the dog .",
]


def main():
    tokens, spans = diora.parse_sexpr("(S (NP the cat) (VP sat))")
    assert tokens == ["the", "cat", "sat"]
    assert (0, 2, "NP") in spans

    assert diora.baseline_tree("right", "a b c") == "(a (b c))"
    assert diora.baseline_tree("left", "a b c") == "((a b) c)"

    prf = diora.bracketing_f1("(a (b c))", "((a b) c)")
    assert math.isclose(prf["f1"], 0.5), prf

    tree, score = diora.cky("a b c", {(0, 2): [0.9], (1, 3): [0.1], (0, 3): [0.2, 0.8]})
    assert tree == "((a b) c)" and math.isclose(score, 1.7), (tree, score)

    model = diora.train(CORPUS, steps=5, hidden_dim=8, input_dim=8, batch_size=2, negatives=5, seed=1)
    assert model.step == 5
    parsed = model.parse(CORPUS[0], pp=True)
    assert parsed.endswith(" .)"), parsed

    cells = model.chart("a dog ran")
    assert set(cells["weights"]) == {(0, 2), (1, 3), (0, 3)}
    assert math.isclose(sum(cells["weights"][(0, 3)]), 1.0, rel_tol=1e-9)
    for vec in cells["inside"].values():
        assert math.isclose(math.sqrt(sum(x * x for x in vec)), 1.0, rel_tol=1e-9)
    assert len(model.span_representation("a dog ran", 0, 2)) == 16

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ckpt")
        model.save(path)
        again = diora.Model.load(path)
        assert again.parse(CORPUS[0], pp=True) == parsed
        assert again.config == model.config

    try:
        diora.Model(compose="gru")
    except ValueError:
        pass
    else:
        raise AssertionError("bad composition accepted")

    print("smoke test ok:", parsed)


if __name__ == "__main__":
    main()
