"""Command-line interface: ``biaslens {audit,mitigate,synth,weat}``.

Exit codes: 0 when nothing is flagged, 2 when a bias check flags, 1 for any
operational error (bad input, infeasible request, unknown names).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BiasLensError, ValidationError
from .mitigate import (LabelShiftWarning, SwapLexicon, apply_thresholds, attribute_marginal,
                       counterfactual_augment, matched_controls, poststratify, stratified_resample,
                       threshold_match)
from .model import (CATEGORICAL, CONTINUOUS, AttributeSpec, Binning, Dataset, config_from_mapping,
                    fit_cells, load_dataset, read_document, serialize_records)
from .origins import selection_bias_check
from .report import run_audit, write_atomic, write_report
from .semantic import WEAT_EFFECT_FLOOR, WeatSpec, load_embeddings, weat
from .stats import Explicit, kl_divergence
from .synth import CALIBRATED_STRENGTH, ScenarioSpec, generate

EXIT_OK, EXIT_ERROR, EXIT_FLAGGED = 0, 1, 2

COUNTERMEASURES = ("poststratify", "resample", "augment", "threshold_match", "matched_controls")
STANDARD_COLUMNS = ("id", "y_true", "y_pred", "split", "weight", "text")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1 so they never look like a bias flag (2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _seed(args, fallback=0):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("BIASLENS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"BIASLENS_SEED must be an integer, got {env!r}") from None
    return fallback


# ---------------------------------------------------------------------------
# input helpers
# ---------------------------------------------------------------------------

def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def _csv_column_map(path, doc):
    """Column map from the config's ``columns`` entry, else inferred from the header."""
    if doc and doc.get("columns"):
        return doc["columns"]
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty csv file")
    header, body = rows[0], rows[1:]
    missing = [c for c in ("id", "y_true", "y_pred", "split") if c not in header]
    if missing:
        raise ValidationError(f"{path}: csv lacks columns {missing} and the config gives no "
                              "column map")
    attrs = {}
    for j, name in enumerate(header):
        if name in STANDARD_COLUMNS:
            continue
        vals = [r[j] for r in body if j < len(r) and r[j] != ""]
        attrs[name] = CONTINUOUS if vals and all(_is_float(v) for v in vals) else CATEGORICAL
    cmap = {c: c for c in STANDARD_COLUMNS if c in header}
    cmap["attributes"] = attrs
    cmap["outcome_kind"] = (doc or {}).get("outcome_kind", CATEGORICAL)
    return cmap


def _load_data(path, fmt, doc=None):
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    cmap = _csv_column_map(path, doc) if fmt == "csv" else None
    return load_dataset(path, fmt, cmap)


def _config_doc(path):
    doc = read_document(path)
    if isinstance(doc, dict) and "audit_config" in doc:  # a reference.json written by synth
        doc = doc["audit_config"]
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config must be a JSON/TOML object")
    return doc


def _load_target_ref(path, fmt, doc):
    path = Path(path)
    if path.suffix.lower() in (".json", ".toml"):
        ref = read_document(path)
        marg = ref.get("target_marginal", ref) if isinstance(ref, dict) else None
        if not isinstance(marg, dict):
            raise ValidationError(f"{path}: expected attribute -> marginal tables")
        return {a: {str(k): float(v) for k, v in m.items()} for a, m in marg.items()}
    return _load_data(path, fmt, doc)


def _load_trusted_ref(path, fmt, doc):
    path = Path(path)
    if path.suffix.lower() in (".json", ".toml"):
        ref = read_document(path)
        tables = ref.get("trusted", ref) if isinstance(ref, dict) else None
        if not isinstance(tables, dict):
            raise ValidationError(f"{path}: expected attribute -> label tables")
        return {a: Explicit(t) for a, t in tables.items()}
    return _load_data(path, fmt, doc)


def _print_json(obj, stream=None):
    stream = stream or sys.stdout
    stream.write(json.dumps(obj, indent=2, sort_keys=False) + "\n")


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------

def cmd_audit(args):
    doc = _config_doc(args.config)
    seed = _seed(args, int(doc.get("seed", 0)))
    config = config_from_mapping(doc).replace(seed=seed)
    data = _load_data(args.data, args.format, doc)
    target = _load_target_ref(args.target_ref, args.format, doc) if args.target_ref else None
    trusted = _load_trusted_ref(args.trusted_ref, args.format, doc) if args.trusted_ref else None
    emb = None
    if args.embeddings:
        with open(args.embeddings, "rb") as fh:
            emb = load_embeddings(fh)
    inputs = {"data": Path(args.data).name}
    for key in ("target_ref", "trusted_ref", "embeddings"):
        if getattr(args, key):
            inputs[key] = Path(getattr(args, key)).name
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LabelShiftWarning)
        report = run_audit(data, config, target, trusted, emb,
                           base_dir=Path(args.config).parent, inputs=inputs)
    write_report(args.out, report)
    n = len(report["flags"])
    print(f"wrote {Path(args.out) / 'report.json'} and report.md; {n} flag(s)", file=sys.stderr)
    return EXIT_FLAGGED if n else EXIT_OK


# ---------------------------------------------------------------------------
# mitigate
# ---------------------------------------------------------------------------

def _params(args):
    if not args.params:
        return {}
    p = Path(args.params)
    if p.suffix.lower() in (".json", ".toml") and p.exists():
        return read_document(p)
    try:
        return json.loads(args.params)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"--params is neither a file nor JSON: {exc.msg}") from None


def _need(params, key, name):
    if key not in params:
        raise ValidationError(f"{name} needs parameter {key!r}")
    return params[key]


def _attr(data, params, name):
    attr = _need(params, "attribute", name)
    if attr not in data.attrs:
        raise ValidationError(f"attribute {attr!r} not present in dataset")
    spec = data.spec(attr)
    if spec.kind == CONTINUOUS:
        binning = params.get("binning")
        if binning is None:
            raise ValidationError(f"continuous attribute {attr!r} needs a 'binning' parameter")
        spec = AttributeSpec(attr, CONTINUOUS, Binning.from_mapping(binning))
    return spec


def _target_marginal(args, params, attr):
    if "target_marginal" in params:
        return {str(k): float(v) for k, v in params["target_marginal"].items()}
    if args.target_ref:
        ref = _load_target_ref(args.target_ref, args.format, None)
        if isinstance(ref, dict):
            if attr.name not in ref:
                raise ValidationError(f"target reference has no marginal for {attr.name!r}")
            return ref[attr.name]
        return attribute_marginal(ref, attr)
    raise ValidationError("need a target marginal: parameter 'target_marginal' or --target-ref")


def _selection_kl(data, attr, marginal, seed):
    from .model import AuditConfig
    cfg = AuditConfig(attributes=(attr.name,), seed=seed, n_permutations=100)
    return selection_bias_check(data, marginal, attr, cfg).effect_size


def _pair_counts(data, lexicon):
    counts = {}
    for a, b in lexicon.pairs:
        for w in (a, b):
            counts[w] = 0
    import re
    for t in data.text:
        if t is None:
            continue
        for tok in re.findall(r"[\w-]+", t.lower()):
            if tok in counts:
                counts[tok] += 1
    return {f"{a}/{b}": [counts[a], counts[b]] for a, b in lexicon.pairs
            if counts[a] or counts[b]}


def cmd_mitigate(args):
    name = args.countermeasure
    if name not in COUNTERMEASURES:
        raise ValidationError(f"unknown countermeasure {name!r}; valid names: "
                              + ", ".join(COUNTERMEASURES))
    params = _params(args)
    seed = _seed(args)
    data = _load_data(args.data, args.format)
    summary = {"countermeasure": name}
    out_bytes = None

    if name == "poststratify":
        attr = _attr(data, params, name)
        target = _target_marginal(args, params, attr)
        summary["before"] = {"selection_kl": _selection_kl(data, attr, target, seed)}
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", LabelShiftWarning)
            assignment, out = poststratify(data, attr, target, joint=bool(params.get("joint")))
        summary["weights"] = assignment.to_mapping()["weights"]
        summary["after"] = {"selection_kl": _selection_kl(out, attr, target, seed)}
        summary["warnings"] = [str(w.message) for w in caught]
        out_bytes = serialize_records(out)
    elif name == "resample":
        attr = _attr(data, params, name)
        target = _target_marginal(args, params, attr)
        mode = params.get("mode", "down")
        summary["before"] = {"marginal": attribute_marginal(data, attr)}
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", LabelShiftWarning)
            out = stratified_resample(data, attr, target, mode, seed, params.get("n"))
        summary["after"] = {"marginal": attribute_marginal(out, attr), "n": len(out)}
        summary["warnings"] = [str(w.message) for w in caught]
        out_bytes = serialize_records(out)
    elif name == "augment":
        lex = SwapLexicon.load(params["lexicon"]) if "lexicon" in params else SwapLexicon.default()
        if "pairs" in params:
            lex = SwapLexicon(tuple(tuple(p) for p in params["pairs"]))
        summary["before"] = {"pair_counts": _pair_counts(data, lex)}
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", LabelShiftWarning)
            out = counterfactual_augment(data, lex, params.get("attribute_flip"))
        summary["after"] = {"pair_counts": _pair_counts(out, lex), "n": len(out)}
        summary["warnings"] = [str(w.message) for w in caught]
        out_bytes = serialize_records(out)
    elif name == "threshold_match":
        attr = _need(params, "attribute", name)
        rates = _need(params, "rates", name)
        if data.outcome_kind != CONTINUOUS:
            raise ValidationError("threshold_match reads scores from a continuous y_pred column")
        if attr not in data.attrs:
            raise ValidationError(f"attribute {attr!r} not present in dataset")
        groups = data.attrs[attr]
        scores = data.y_pred
        thresholds = threshold_match(scores, groups, rates)
        admitted = apply_thresholds(scores, groups, thresholds)
        g = np.asarray(groups, dtype=object)
        summary["thresholds"] = {k: (None if v == float("inf") else v) for k, v in thresholds.items()}
        summary["after"] = {"positive_rate": {k: float(admitted[g == k].mean()) for k in rates}}
        summary["ideal"] = {k: float(v) for k, v in rates.items()}
        out_bytes = (json.dumps({"attribute": attr, "thresholds": summary["thresholds"]},
                                indent=2) + "\n").encode("utf-8")
    else:  # matched_controls
        attrs = _need(params, "attributes", name)
        field = params.get("case_field", "y_true")
        value = _need(params, "case_value", name)
        if field not in ("y_true", "y_pred", "split"):
            raise ValidationError("case_field must be y_true, y_pred or split")
        is_case = getattr(data, field) == value
        cases, controls = data.take(is_case), data.take(~is_case)
        res = matched_controls(cases, controls, attrs, seed)
        summary["before"] = {"kl": _match_kl(cases, controls, attrs)}
        summary["after"] = {"kl": _match_kl(cases, res.controls, attrs),
                            "matched": len(res.pairs), "shortfall": res.shortfall}
        out_bytes = serialize_records(Dataset.concat([cases, res.controls]))
    write_atomic(Path(args.out).parent, {Path(args.out).name: out_bytes})
    _print_json(summary)
    return EXIT_OK


def _match_kl(cases, controls, attrs):
    """Per-attribute KL(cases || controls) over quintile bins (continuous) or categories."""
    out = {}
    for a in attrs:
        spec = cases.spec(a)
        if spec.kind == CONTINUOUS:
            spec = AttributeSpec(a, CONTINUOUS, Binning("quantile", n_bins=5))
        cells = fit_cells(spec, cases.attrs[a], controls.attrs[a])
        p = np.bincount(cells.encode(cases.attrs[a]), minlength=len(cells)) + 0.5
        q = np.bincount(cells.encode(controls.attrs[a]), minlength=len(cells)) + 0.5
        out[a] = kl_divergence(p / p.sum(), q / q.sum())
    return out


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args):
    fields = {}
    if args.spec:
        doc = read_document(args.spec)
        fields.update(doc.get("scenario", doc))
    for key in ("preset", "origin", "n", "seed"):
        val = getattr(args, key)
        if val is not None:
            fields[key] = val
    if args.strength is not None:
        fields["injection_strength"] = args.strength
    elif "injection_strength" not in fields and fields.get("origin") in CALIBRATED_STRENGTH:
        fields["injection_strength"] = CALIBRATED_STRENGTH[fields["origin"]]
    if "seed" not in fields and os.environ.get("BIASLENS_SEED") is not None:
        fields["seed"] = _seed(argparse.Namespace(seed=None))
    spec = ScenarioSpec.from_mapping(fields)
    sc = generate(spec)
    attr = sc.audit_config.attributes[0]
    trusted = None
    if sc.trusted_reference is not None:
        trusted = {attr: {c: dict(row) for c, row in sc.trusted_reference.table.items()}}
    reference = {
        "scenario": spec.to_mapping(),
        "attribute": attr,
        "target_marginal": {attr: dict(sc.target_marginal)} if sc.target_marginal else {},
        "trusted": trusted,
        "audit_config": sc.audit_config.to_mapping(),
        "calibration": dict(sc.calibration),
    }
    write_atomic(args.out, {
        "source.jsonl": serialize_records(sc.source),
        "target.jsonl": serialize_records(sc.target_reference),
        "reference.json": (json.dumps(reference, indent=2) + "\n").encode("utf-8"),
    })
    print(f"wrote source.jsonl, target.jsonl, reference.json to {args.out}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# weat
# ---------------------------------------------------------------------------

def cmd_weat(args):
    with open(args.embeddings, "rb") as fh:
        emb = load_embeddings(fh)
    spec = WeatSpec.load(args.spec)
    res = weat(emb, spec, args.n_permutations, _seed(args))
    flagged = res.p_value < args.alpha and abs(res.effect_size) >= WEAT_EFFECT_FLOOR
    out = res.to_mapping()
    out["flagged"] = bool(flagged)
    print(json.dumps(out))
    return EXIT_FLAGGED if flagged else EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="biaslens", description="Audit predictive models for bias.")
    p.add_argument("--version", action="version", version=f"biaslens {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    a = sub.add_parser("audit", help="run disparity and origin checks, write report.json/.md")
    a.add_argument("--data", required=True)
    a.add_argument("--config", required=True)
    a.add_argument("--target-ref")
    a.add_argument("--trusted-ref")
    a.add_argument("--embeddings")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--seed", type=int)
    a.add_argument("--format", choices=("jsonl", "csv"))
    a.set_defaults(func=cmd_audit)

    m = sub.add_parser("mitigate", help="apply a countermeasure to a dataset")
    m.add_argument("countermeasure", help="one of: " + ", ".join(COUNTERMEASURES))
    m.add_argument("--data", required=True)
    m.add_argument("--params", help="JSON object or path to a JSON/TOML file")
    m.add_argument("--target-ref")
    m.add_argument("--out", required=True, help="output file")
    m.add_argument("--seed", type=int)
    m.add_argument("--format", choices=("jsonl", "csv"))
    m.set_defaults(func=cmd_mitigate)

    s = sub.add_parser("synth", help="generate a synthetic scenario")
    s.add_argument("--spec", help="scenario spec (JSON or TOML)")
    s.add_argument("--preset", choices=("wsj_effect", "kitchen", "mental_health", "hate_speech"))
    s.add_argument("--origin")
    s.add_argument("--strength", type=float)
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    w = sub.add_parser("weat", help="run one word-embedding association test")
    w.add_argument("--embeddings", required=True)
    w.add_argument("--spec", required=True)
    w.add_argument("--n-permutations", type=int, default=1000)
    w.add_argument("--alpha", type=float, default=0.05)
    w.add_argument("--seed", type=int)
    w.set_defaults(func=cmd_weat)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BiasLensError, OSError, KeyError, ValueError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) or isinstance(exc, BiasLensError) \
            else f"missing key {exc}"
        print(f"biaslens: error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
