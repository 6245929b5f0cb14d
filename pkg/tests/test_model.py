import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biaslens import AuditConfig, Binning, Dataset, IdealSpec, parse_records, validate_config
from biaslens.errors import ParseError, ValidationError
from biaslens.model import (AttributeSpec, config_from_mapping, csv_column_map, fit_cells,
                            load_config, serialize_records)

from conftest import make_dataset


def test_single_jsonl_record():
    line = b'{"id":"r1","y_true":"pos","y_pred":"neg","attrs":{"g":"a"},"split":"source"}\n'
    ds = parse_records(io.BytesIO(line))
    assert len(ds) == 1
    rec = ds.record(0)
    assert (rec.id, rec.y_true, rec.y_pred, rec.split) == ("r1", "pos", "neg", "source")
    assert rec.attrs["g"] == "a" and rec.weight == 1.0
    assert ds.outcome_kind == "categorical"


def test_empty_stream_gives_empty_dataset():
    assert len(parse_records(io.BytesIO(b""))) == 0


def test_malformed_line_reports_line_number():
    text = (b'{"id":"r1","y_true":"a","y_pred":"a","attrs":{},"split":"source"}\n'
            b'{"id": "r2", oops\n')
    with pytest.raises(ParseError) as err:
        parse_records(text)
    assert err.value.line == 2


def test_duplicate_ids_and_mixed_outcomes_rejected():
    dup = b'\n'.join([b'{"id":"x","y_true":"a","y_pred":"a","attrs":{},"split":"source"}'] * 2)
    with pytest.raises(ValidationError):
        parse_records(dup)
    mixed = (b'{"id":"1","y_true":"a","y_pred":"a","attrs":{},"split":"source"}\n'
             b'{"id":"2","y_true":1.5,"y_pred":2.0,"attrs":{},"split":"source"}\n')
    with pytest.raises(ValidationError):
        parse_records(mixed)


def test_unknown_split_rejected():
    with pytest.raises(ValidationError):
        make_dataset(["a"], ["x"], split="train")


def test_csv_round_trip_1000_rows(rng):
    n = 1000
    ds = Dataset([f"id{i}" for i in range(n)], rng.normal(size=n), rng.normal(size=n),
                 rng.choice(["source", "target"], n).tolist(),
                 {"age": rng.uniform(18, 80, n), "g": rng.choice(["a", "b", "c"], n).tolist()},
                 outcome_kind="continuous", weight=rng.uniform(0.5, 2, n))
    blob = serialize_records(ds, "csv")
    back = parse_records(blob, "csv", csv_column_map(ds))
    assert back == ds


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["pos", "neg", "mid"]),
                          st.sampled_from(["pos", "neg"]),
                          st.one_of(st.none(), st.sampled_from(["a", "b"])),
                          st.sampled_from(["source", "target"])), max_size=30))
def test_jsonl_round_trip_property(rows):
    # a column that is missing on every record has nothing to serialize
    attrs = {"g": [r[2] for r in rows]} if any(r[2] for r in rows) else {}
    ds = Dataset([str(i) for i in range(len(rows))], [r[0] for r in rows], [r[1] for r in rows],
                 [r[3] for r in rows], attrs)
    assert parse_records(serialize_records(ds)) == ds


def test_validate_config_findings():
    ds = make_dataset(["a", "b"], ["pos", "neg"])
    assert validate_config(AuditConfig(attributes=("g",)), ds) == []
    found = validate_config(AuditConfig(attributes=("age",)), ds)
    assert [f.kind for f in found] == ["missing-attribute"]
    ideal = {"g": IdealSpec("explicit", table={"a": {"pos": 1.0}, "b": {"pos": 1.0}})}
    found = validate_config(AuditConfig(attributes=("g",), ideal=ideal), ds)
    assert [f.kind for f in found] == ["support-mismatch"]
    assert "neg" in found[0].message


def test_continuous_attribute_needs_binning():
    ds = Dataset(["1", "2"], ["a", "b"], ["a", "b"], ["source"] * 2, {"age": [20.0, 30.0]})
    found = validate_config(AuditConfig(attributes=("age",)), ds)
    assert [f.kind for f in found] == ["binning-required"]
    cfg = AuditConfig(attributes=("age",), binning={"age": Binning("quantile", n_bins=2)})
    assert validate_config(cfg, ds) == []


def test_fixed_edge_binning_is_total():
    # outer edges bound the first and last bins; values beyond them clamp
    spec = AttributeSpec("age", "continuous", Binning("fixed-edges", edges=(0, 30.0, 50.0, 90)))
    cells = fit_cells(spec, np.array([10.0, 30.0, 49.9, 50.0, 99.0]))
    assert len(cells) == 3
    assert cells.encode(np.array([-5.0, 30.0, 49.9, 50.0, 99.0, np.nan])).tolist() == \
        [0, 1, 1, 2, 2, -1]


def test_config_bounds_and_toml(tmp_path):
    with pytest.raises(ValidationError):
        AuditConfig(attributes=("g",), n_permutations=50)
    with pytest.raises(ValidationError):
        AuditConfig(attributes=("g",), alpha=1.5)
    p = tmp_path / "audit.toml"
    p.write_text('attributes = ["g"]\nseed = 4\n[ideal]\nkind = "uniform"\n')
    cfg = load_config(p)
    assert cfg.seed == 4 and cfg.ideal_for("g").kind == "uniform"
    assert config_from_mapping(json.loads(json.dumps(cfg.to_mapping()))) == cfg
