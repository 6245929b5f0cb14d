import math

import numpy as np
import pytest

from biaslens import (AuditConfig, EmpiricalFrom, Explicit, diagnose, label_bias_check,
                      overamplification_check, selection_bias_check)
from biaslens.errors import MissingReferenceError, SupportMismatchError
from biaslens.origins import CAVEAT
from biaslens.synth import CALIBRATED_STRENGTH, ScenarioSpec, generate, preset

from conftest import binary_cells, make_dataset

KL_82 = 0.8 * math.log(0.8 / 0.5) + 0.2 * math.log(0.2 / 0.5)


def test_selection_reference_value(config):
    src = make_dataset(["a"] * 800 + ["b"] * 200, ["pos"] * 1000)
    f = selection_bias_check(src, {"a": 0.5, "b": 0.5}, "g", config)
    assert f.effect_size == pytest.approx(KL_82, abs=1e-12)
    assert f.divergence.statistic == pytest.approx(2 * 1000 * KL_82)
    assert f.flagged and f.caveat == CAVEAT
    assert f.details["source_marginal"] == {"a": 0.8, "b": 0.2}


def test_selection_against_target_dataset(config):
    src = make_dataset(["a"] * 800 + ["b"] * 200, ["pos"] * 1000)
    tgt = make_dataset(["a"] * 500 + ["b"] * 500, ["pos"] * 1000, split="target")
    f = selection_bias_check(src, tgt, "g", config)
    assert f.effect_size == pytest.approx(KL_82) and f.flagged


def test_selection_identical_and_disjoint(config):
    src = make_dataset(["a"] * 50 + ["b"] * 50, ["pos"] * 100)
    f = selection_bias_check(src, {"a": 0.5, "b": 0.5}, "g", config)
    assert f.divergence.statistic == 0.0 and not f.flagged
    with pytest.raises(SupportMismatchError, match="'b'"):
        selection_bias_check(src, {"a": 1.0, "c": 0.0}, "g", config)


def test_selection_wsj_preset():
    sc = preset("wsj_effect", seed=0)
    f = selection_bias_check(sc.source, sc.target_reference, "age", sc.audit_config)
    assert f.flagged


def test_label_bias_hate_speech():
    sc = preset("hate_speech", seed=0)
    f = label_bias_check(sc.source, sc.trusted_reference, "author_group", sc.audit_config)
    assert f.flagged
    rate = f.details["per_cell"]["A"]["observed"]["toxic"]
    assert rate == pytest.approx(0.40, abs=0.03)


def test_label_bias_matching_and_self_reference(config):
    src = binary_cells({"a": (30, 70), "b": (70, 30)})
    exact = Explicit({"a": {"pos": 0.3, "neg": 0.7}, "b": {"pos": 0.7, "neg": 0.3}})
    f = label_bias_check(src, exact, "g", config)
    assert f.divergence.statistic == pytest.approx(0.0, abs=1e-12) and not f.flagged
    assert label_bias_check(src, EmpiricalFrom(src), "g", config).divergence.statistic == 0.0
    with pytest.raises(MissingReferenceError, match="ground truth"):
        label_bias_check(src, None, "g", config)


def test_overamplification_equal_not_flagged(config):
    src = binary_cells({"a": (30, 70), "b": (70, 30)})
    f = overamplification_check(src, "g", config)
    assert f.divergence.statistic == 0.0 and not f.flagged
    assert f.details["direction"] == "unchanged"


def _pred_gap(f):
    pc = f.details["per_cell"]
    return pc["b"]["pred"]["pos"] - pc["a"]["pred"]["pos"]


def test_overamplification_threshold_model():
    base = ScenarioSpec(origin="overamp", n=10_000, base_rates={"a": 0.46, "b": 0.54}, seed=4)
    sc = generate(base.replace(injection_strength=3.0))
    f = overamplification_check(sc.source, "group", sc.audit_config)
    assert _pred_gap(f) >= 0.08
    assert f.flagged and f.details["direction"] == "amplified"
    # a milder shift is detectable but sits under the default effect floor
    sc = generate(base.replace(injection_strength=0.5))
    f = overamplification_check(sc.source, "group", sc.audit_config)
    assert _pred_gap(f) >= 0.08 and f.p_value < 0.05
    assert f.details["direction"] == "amplified" and not f.flagged


def test_overamplification_attenuated_direction(config):
    import biaslens
    groups = ["a"] * 100 + ["b"] * 100
    y = ["pos"] * 20 + ["neg"] * 80 + ["pos"] * 80 + ["neg"] * 20
    yhat = ["pos"] * 40 + ["neg"] * 60 + ["pos"] * 60 + ["neg"] * 40
    ds = make_dataset(groups, y, yhat)
    f = biaslens.overamplification_check(ds, "g", config)
    assert f.details["direction"] == "attenuated"


@pytest.mark.parametrize("origin,expected", [
    ("none", ()),
    ("selection", ("selection_bias",)),
    ("label", ("label_bias",)),
    ("compound", ("selection_bias", "label_bias")),
])
def test_diagnose_quadrants(origin, expected):
    spec = ScenarioSpec(origin=origin, injection_strength=CALIBRATED_STRENGTH.get(origin, 0.0),
                        seed=8)
    sc = generate(spec)
    dm = diagnose(sc.source, sc.target_reference, sc.trusted_reference, "group",
                  sc.audit_config.replace(n_permutations=300))
    assert dm.cell == expected
    assert set(dm.flagged_origins) == set(expected)
    m = dm.to_mapping()
    assert m["caveat"] == CAVEAT and m["cell"] == list(expected)


def test_diagnose_without_references_marks_unchecked(config):
    src = binary_cells({"a": (30, 70), "b": (70, 30)})
    dm = diagnose(src, None, None, "g", config)
    assert (dm.sample, dm.annotation) == ("unchecked", "unchecked")
    assert dm.selection is None and dm.label is None and dm.overamplification is not None
