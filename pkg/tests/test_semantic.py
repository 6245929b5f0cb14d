import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biaslens import (AuditConfig, EmbeddingSet, ToyScorer, WeatSpec, hard_debias,
                      load_embeddings, masked_logprob_bias, semantic_bias_finding, weat)
from biaslens.errors import DegenerateError, OutOfVocabularyError, ParseError, ValidationError
from biaslens.semantic import bias_direction, dump_embeddings

from toys import gendered_toy, null_weat_trials, planted_weat


def test_load_small_and_dimension_error():
    emb = load_embeddings(io.BytesIO(b"a 1 0\nb 0 1\n"))
    assert len(emb) == 2 and emb.dim == 2
    with pytest.raises(ParseError) as err:
        load_embeddings(io.BytesIO(b"a 1 0\nb 0 1\nc 1 2 3\n"))
    assert err.value.line == 3
    with pytest.raises(ParseError, match="duplicate"):
        load_embeddings(io.BytesIO(b"a 1 0\na 0 1\n"))


def test_round_trip_10k_words(rng):
    words = [f"w{i}" for i in range(10_000)]
    emb = EmbeddingSet(words, rng.normal(size=(10_000, 8)))
    buf = io.StringIO()
    dump_embeddings(emb, buf)
    back = load_embeddings(io.BytesIO(buf.getvalue().encode()))
    assert back.words == emb.words
    assert np.max(np.abs(back.matrix(words) - emb.matrix(words))) < 1e-6


def test_planted_weat():
    emb, spec = planted_weat()
    r = weat(emb, spec, 1000, seed=0)
    assert abs(r.effect_size - 2.0) < 1e-9 and r.p_value <= 0.01


def test_weat_errors():
    emb, spec = planted_weat()
    bad = WeatSpec(spec.X, spec.Y, spec.A + ("zebra",), spec.B)
    with pytest.raises(OutOfVocabularyError) as err:
        weat(emb, bad)
    assert list(err.value.words) == ["zebra"]
    flat = EmbeddingSet(["x", "y", "a", "b"], np.array([[1.0, 1], [1, 1], [1, 0], [0, 1]]))
    with pytest.raises(DegenerateError):
        weat(flat, WeatSpec(["x"], ["y"], ["a"], ["b"]))


def test_weat_is_scale_invariant_and_deterministic():
    emb, spec = gendered_toy()
    r = weat(emb, spec, 500, seed=4)
    assert weat(emb, spec, 500, seed=4) == r
    scaled = weat(emb.scaled(3.7), spec, 500, seed=4)
    assert scaled.effect_size == pytest.approx(r.effect_size, abs=1e-12)
    assert scaled.p_value == r.p_value


def test_null_weat_calibration():
    d, p, ks = null_weat_trials(50, seed=0)
    assert np.abs(d).mean() < 0.3
    assert ks < 0.15


def test_masked_logprob_toy_values():
    scorer = ToyScorer({"nurse": {"she": 0.6, "he": 0.4}, None: {"she": 0.5, "he": 0.5}})
    assert masked_logprob_bias(scorer, "nurse", "she") == pytest.approx(
        math.log(0.6) - math.log(0.5), abs=1e-12)
    flat = ToyScorer({"tree": {"she": 0.5}, None: {"she": 0.5}})
    assert masked_logprob_bias(flat, "tree", "she") == 0.0
    with pytest.raises(ValidationError):
        masked_logprob_bias(ToyScorer({"x": {"she": 0.0}, None: {"she": 0.5}}), "x", "she")


@settings(max_examples=50)
@given(st.floats(-1.3, 1.3))
def test_balanced_scorer_is_antisymmetric(beta):
    scorer = ToyScorer.balanced({"doctor": beta})
    he = masked_logprob_bias(scorer, "doctor", "he")
    she = masked_logprob_bias(scorer, "doctor", "she")
    assert he == pytest.approx(beta, abs=1e-12) and she == pytest.approx(-he, abs=1e-12)


def test_hard_debias_3d_hand_case():
    emb = EmbeddingSet(["he", "she", "n", "o"],
                       np.array([[1.0, 0, 0.2], [-1.0, 0, 0.2], [0.5, 0.5, 0], [0, 0.6, 0.8]]))
    assert np.allclose(bias_direction(emb, [("he", "she")]), [1, 0, 0])
    out = hard_debias(emb, [("he", "she")], ["n", "o"])
    assert np.allclose(out["n"], [0, 1, 0], atol=1e-12)
    assert np.allclose(out["o"], emb["o"] / np.linalg.norm(emb["o"]), atol=1e-12)
    with pytest.raises(DegenerateError):
        hard_debias(EmbeddingSet(["a", "b", "c"], np.array([[1.0, 0], [2, 0], [0, 1]])),
                    [("a", "b")], ["c"])


def test_hard_debias_projection_idempotence_and_weat():
    emb, spec = gendered_toy()
    neutral = list(spec.X + spec.Y)
    assert abs(weat(emb, spec, 200).effect_size) > 1.0
    once = hard_debias(emb, [("he", "she")], neutral)
    g = bias_direction(once, [("he", "she")])
    assert max(abs(once[w] @ g) for w in neutral) < 1e-6
    twice = hard_debias(once, [("he", "she")], neutral)
    assert np.max(np.abs(twice.matrix(neutral) - once.matrix(neutral))) < 1e-6
    with pytest.raises(DegenerateError):
        # every X_i now equals Y_i, so nothing varies between the two sets
        weat(once, WeatSpec(spec.X[:1], spec.Y[:1], spec.A, spec.B))
    assert abs(weat(once, spec, 200).effect_size) < 0.05


def test_equalize_pairs_are_equidistant():
    emb, spec = gendered_toy()
    out = hard_debias(emb, [("he", "she")], list(spec.X), equalize_pairs=[("a0", "b0")])
    for w in spec.X:
        assert out[w] @ out["a0"] == pytest.approx(out[w] @ out["b0"], abs=1e-12)


def test_semantic_finding():
    cfg = AuditConfig(attributes=(), n_permutations=500)
    emb, spec = planted_weat()
    assert semantic_bias_finding(emb, [spec], cfg).flagged
    empty = semantic_bias_finding(emb, [], cfg)
    assert not empty.flagged and empty.evidence == "no probes configured"


def test_semantic_finding_null_rate():
    from toys import random_weat
    cfg = AuditConfig(attributes=(), n_permutations=200)
    assert 1 - np.mean([semantic_bias_finding(e, [s], cfg).flagged for e, s in
                        (random_weat(9, t, m=20, dim=20) for t in range(100))]) >= 0.93
