import numpy as np
import pytest

from biaslens import ScenarioSpec, generate, power_grid
from biaslens.errors import InfeasibleError, ValidationError
from biaslens.mitigate import attribute_marginal
from biaslens.model import serialize_records
from biaslens.synth import CALIBRATED_STRENGTH, preset, skew_marginal


@pytest.mark.parametrize("origin", ["none", "label", "selection", "overamp", "compound"])
def test_determinism_and_reference_integrity(origin):
    spec = ScenarioSpec(origin=origin, n=2000, injection_strength=CALIBRATED_STRENGTH.get(origin, 0),
                        seed=5)
    a, b = generate(spec), generate(spec)
    assert serialize_records(a.source) == serialize_records(b.source)
    assert serialize_records(a.target_reference) == serialize_records(b.target_reference)
    table = a.trusted_reference.table
    assert {c: row["pos"] for c, row in table.items()} == spec.base_rates
    assert all(row["pos"] + row["neg"] == pytest.approx(1.0, abs=1e-15) for row in table.values())


def test_seeds_differ():
    a = generate(ScenarioSpec(n=500, seed=1))
    b = generate(ScenarioSpec(n=500, seed=2))
    assert serialize_records(a.source) != serialize_records(b.source)


def test_uninjected_rates_are_exact():
    sc = generate(ScenarioSpec(n=10_000, seed=3))
    for split in (sc.source, sc.target_reference):
        g, y = np.asarray(split.attrs["group"]), split.y_true
        assert np.mean(y[g == "a"] == "pos") == pytest.approx(0.3, abs=1e-3)
        assert np.mean(y[g == "b"] == "pos") == pytest.approx(0.7, abs=1e-3)


def test_selection_skew_within_one_over_n():
    sc = generate(ScenarioSpec(origin="selection", n=10_000, injection_strength=0.3, seed=0))
    m = attribute_marginal(sc.source, "group")
    assert abs(m["a"] - 0.8) <= 1e-4 and abs(m["b"] - 0.2) <= 1e-4
    assert attribute_marginal(sc.target_reference, "group") == {"a": 0.5, "b": 0.5}


def test_label_injection_raises_rate_in_one_cell():
    sc = generate(ScenarioSpec(origin="label", n=20_000, injection_strength=0.3, seed=0))
    g, y = np.asarray(sc.source.attrs["group"]), sc.source.y_true
    # negatives in cell a flip with probability 0.3: 0.3 + 0.7 * 0.3 = 0.51
    assert np.mean(y[g == "a"] == "pos") == pytest.approx(0.51, abs=0.015)
    assert np.mean(y[g == "b"] == "pos") == pytest.approx(0.7, abs=1e-3)


def test_infeasible_strengths():
    with pytest.raises(InfeasibleError):
        skew_marginal({"a": 0.5, "b": 0.5}, "a", 0.6)
    with pytest.raises(InfeasibleError):
        generate(ScenarioSpec(origin="label", injection_strength=1.5))
    with pytest.raises(InfeasibleError):
        generate(ScenarioSpec(origin="selection", injection_strength=0.7))


def test_spec_validation():
    with pytest.raises(ValidationError):
        ScenarioSpec(n=0)
    with pytest.raises(ValidationError):
        ScenarioSpec(base_rates={"a": 1.2, "b": 0.1})
    with pytest.raises(ValidationError):
        ScenarioSpec(attribute_cells={"a": 0.7, "b": 0.7})
    with pytest.raises(ValidationError):
        ScenarioSpec.from_mapping({"origin": "none", "colour": "red"})
    spec = ScenarioSpec(origin="label", injection_strength=0.2, seed=9)
    assert ScenarioSpec.from_mapping(spec.to_mapping()) == spec


def test_kitchen_calibration():
    sc = preset("kitchen", seed=0)
    cal = sc.calibration
    assert cal["training_rate"] == pytest.approx(0.58, abs=1e-12)
    assert abs(cal["predicted_rate"] - 0.63) <= 0.005
    g = np.asarray(sc.source.attrs["scene"])
    assert np.sum(g == "kitchen") == 5000
    assert np.mean(sc.source.y_pred[g == "kitchen"] == "woman") == pytest.approx(
        cal["predicted_rate"])


def test_presets_are_deterministic():
    for name in ("wsj_effect", "mental_health", "hate_speech"):
        a, b = preset(name, seed=2), preset(name, seed=2)
        assert serialize_records(a.source) == serialize_records(b.source)


def test_power_grid_contracts():
    with pytest.raises(ValidationError):
        power_grid("label", [0.3], [1000], trials=10)
    rows = power_grid("selection", [0.0, 0.02, 0.05, 0.3], [2000], trials=50, seed=1)
    power = [r["power"] for r in rows]
    assert power[0] <= 0.05 + 0.02
    assert power[-1] >= 0.99
    # monotone up to two Monte Carlo standard errors
    for lo, hi in zip(power, power[1:]):
        assert lo <= hi + 2 * np.sqrt(0.25 / 50)
