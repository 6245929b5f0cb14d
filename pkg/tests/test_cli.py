import json
import os

import pytest

from biaslens.cli import COUNTERMEASURES, main
from biaslens.model import load_dataset


def run(*argv):
    return main([str(a) for a in argv])


def synth(tmp_path, name, *extra):
    out = tmp_path / name
    assert run("synth", "--out", out, *extra) == 0
    return out


def audit(d, out, *extra):
    return run("audit", "--data", d / "source.jsonl", "--config", d / "reference.json",
               "--target-ref", d / "target.jsonl", "--trusted-ref", d / "reference.json",
               "--out", out, *extra)


@pytest.mark.parametrize("origin,code", [("none", 0), ("label", 2), ("selection", 2),
                                         ("overamp", 2), ("compound", 2)])
def test_exit_code_grid(tmp_path, origin, code):
    d = synth(tmp_path, origin, "--origin", origin, "--n", "4000", "--seed", "3")
    assert audit(d, tmp_path / "rep") == code
    rep = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert bool(rep["flags"]) == (code == 2)


def test_kitchen_audit(tmp_path):
    d = synth(tmp_path, "k", "--preset", "kitchen")
    assert run("audit", "--data", d / "source.jsonl", "--config", d / "reference.json",
               "--trusted-ref", d / "reference.json", "--out", tmp_path / "rep") == 2
    rep = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert "overamplification" in rep["flagged_origins"]
    actions = [a for r in rep["recommendations"] for a in r["actions"]]
    assert "synthetically match distributions" in actions


def test_missing_config_writes_nothing(tmp_path, capsys):
    d = synth(tmp_path, "n", "--n", "200")
    out = tmp_path / "rep"
    assert run("audit", "--data", d / "source.jsonl", "--config", tmp_path / "nope.json",
               "--out", out) == 1
    assert not out.exists()
    assert "nope.json" in capsys.readouterr().err


def test_usage_error_is_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["audit"])
    assert exc.value.code == 1


def test_synth_determinism_and_errors(tmp_path):
    a = synth(tmp_path, "a", "--preset", "wsj_effect")
    b = synth(tmp_path, "b", "--preset", "wsj_effect")
    for name in ("source.jsonl", "target.jsonl", "reference.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert run("synth", "--n", "0", "--out", tmp_path / "z") == 1
    assert not (tmp_path / "z").exists()
    assert run("synth", "--origin", "selection", "--strength", "0.9", "--out", tmp_path / "q") == 1


def test_synth_selection_skew(tmp_path):
    d = synth(tmp_path, "s", "--origin", "selection", "--strength", "0.3", "--n", "1000")
    src = load_dataset(d / "source.jsonl")
    share = sum(v == "a" for v in src.attrs["group"]) / len(src)
    assert abs(share - 0.8) <= 1 / 1000


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("BIASLENS_SEED", "77")
    d = synth(tmp_path, "e", "--n", "200")
    ref = json.loads((d / "reference.json").read_text())
    assert ref["scenario"]["seed"] == 77
    assert audit(d, tmp_path / "rep") == 0
    rep = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert rep["metadata"]["seed"] == 77
    assert audit(d, tmp_path / "rep2", "--seed", "5") == 0
    assert json.loads((tmp_path / "rep2" / "report.json").read_text())["metadata"]["seed"] == 5


def test_mitigate_unknown_name(tmp_path, capsys):
    d = synth(tmp_path, "n", "--n", "200")
    assert run("mitigate", "bogus", "--data", d / "source.jsonl", "--out", tmp_path / "o") == 1
    err = capsys.readouterr().err
    assert all(name in err for name in COUNTERMEASURES)


def test_mitigate_poststratify(tmp_path, capsys):
    d = synth(tmp_path, "s", "--origin", "selection", "--strength", "0.3", "--n", "2000")
    capsys.readouterr()
    out = tmp_path / "weighted.jsonl"
    assert run("mitigate", "poststratify", "--data", d / "source.jsonl",
               "--params", '{"attribute": "group"}', "--target-ref", d / "reference.json",
               "--out", out) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["weights"] == {"a": 0.625, "b": 2.5}
    assert summary["after"]["selection_kl"] < 1e-9 < summary["before"]["selection_kl"]
    assert load_dataset(out).is_weighted


def test_mitigate_downsample_infeasible(tmp_path, capsys):
    d = synth(tmp_path, "s", "--origin", "selection", "--strength", "0.3", "--n", "1000")
    params = json.dumps({"attribute": "group", "target_marginal": {"a": 0.5, "b": 0.5},
                         "n": 900})
    assert run("mitigate", "resample", "--data", d / "source.jsonl", "--params", params,
               "--out", tmp_path / "o.jsonl") == 1
    assert "'b' is binding" in capsys.readouterr().err
    assert not (tmp_path / "o.jsonl").exists()


def test_mitigate_augment_balances(tmp_path, capsys):
    lines = []
    for i in range(40):
        text = "he said he would call" if i < 30 else "she will visit"
        lines.append(json.dumps({"id": f"t{i}", "y_true": "x", "y_pred": "x",
                                 "attrs": {"g": "a"}, "split": "source", "text": text}))
    data = tmp_path / "corpus.jsonl"
    data.write_text("\n".join(lines) + "\n")
    assert run("mitigate", "augment", "--data", data, "--params", '{"pairs": [["he", "she"]]}',
               "--out", tmp_path / "aug.jsonl") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["before"]["pair_counts"] == {"he/she": [60, 10]}
    assert summary["after"]["pair_counts"] == {"he/she": [70, 70]}


def test_weat_command(tmp_path, capsys):
    from toys import planted_weat
    from biaslens.semantic import dump_embeddings
    emb, spec = planted_weat()
    with open(tmp_path / "emb.txt", "w") as fh:
        dump_embeddings(emb, fh)
    (tmp_path / "spec.json").write_text(json.dumps(spec.to_mapping()))
    assert run("weat", "--embeddings", tmp_path / "emb.txt", "--spec", tmp_path / "spec.json",
               "--seed", "0") == 2
    out = json.loads(capsys.readouterr().out)
    assert out["effect_size"] == 2.0 and out["flagged"]
    bad = dict(spec.to_mapping(), A=["nowhere"])
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert run("weat", "--embeddings", tmp_path / "emb.txt", "--spec", tmp_path / "bad.json") == 1
    assert "nowhere" in capsys.readouterr().err


def test_weat_null_mostly_exit_0(tmp_path, capsys):
    from toys import random_weat
    from biaslens.semantic import dump_embeddings
    codes = []
    for t in range(20):
        emb, spec = random_weat(31, t, m=20, dim=20)
        with open(tmp_path / "emb.txt", "w") as fh:
            dump_embeddings(emb, fh)
        (tmp_path / "spec.json").write_text(json.dumps(spec.to_mapping()))
        codes.append(run("weat", "--embeddings", tmp_path / "emb.txt", "--spec",
                         tmp_path / "spec.json", "--n-permutations", "200", "--seed", str(t)))
    assert codes.count(0) >= 19


def test_csv_input(tmp_path):
    d = synth(tmp_path, "n", "--n", "300")
    from biaslens.model import serialize_records
    (tmp_path / "src.csv").write_bytes(serialize_records(load_dataset(d / "source.jsonl"), "csv"))
    assert run("audit", "--data", tmp_path / "src.csv", "--config", d / "reference.json",
               "--out", tmp_path / "rep") == 0


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "biaslens", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "biaslens" in res.stdout
