"""Audit orchestration, the report document, its Markdown rendering, and atomic output."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema

from . import __version__
from .disparity import error_disparity, outcome_disparity
from .errors import ValidationError
from .model import CATEGORICAL, Dataset, load_dataset, validate_config
from .origins import ORIGINS, diagnose
from .semantic import WeatSpec, semantic_bias_finding
from .stats import EmpiricalFrom, Explicit, TowardUniform, Uniform, estimate_conditional

SCHEMA_VERSION = "1"

RECOMMENDATIONS = {
    "label_bias": ["post-stratification", "retrain annotators"],
    "selection_bias": ["stratified sampling", "post-stratification/reweighting"],
    "overamplification": ["synthetically match distributions",
                          "cost-function note (out of scope): adjust the training loss to "
                          "penalise amplified associations"],
    "semantic_bias": ["retrain or retrofit embeddings"],
}

KNOWN_UNKNOWNS = (
    "Only the attributes named in the configuration were audited. Attributes that were "
    "never recorded cannot be checked, so the absence of a flag carries no information "
    "about them.")

NOTES = (
    "p-values are reported per check without any correction for multiple comparisons.",
    "Attributes are audited one at a time; intersections of attributes are not examined.",
    "Disparity statistics are G statistics summed over attribute cells and outcomes; "
    "effect sizes are G / (2 n) in nats per record.",
    "A check flags when p < alpha and its effect size reaches the configured floor.",
)

DATA_STATEMENT = {
    "curation_rationale": "Which texts or records were included, and why?",
    "language_variety": "Which languages or dialects are represented?",
    "speaker_demographic": "Who produced the data (age, gender, region, other attributes)?",
    "annotator_demographic": "Who labelled the data, and how were they trained?",
    "speech_situation": "When, where and for what audience was the data produced?",
    "text_characteristics": "What genre, topic or register does the data cover?",
    "target_population": "Which population will the model be applied to?",
}


def recommendations(flagged_origins):
    """Countermeasures for a set of flagged origins, in canonical origin order."""
    flagged = set(flagged_origins)
    unknown = flagged - set(ORIGINS)
    if unknown:
        raise ValidationError(f"unknown origins {sorted(unknown)}")
    return [{"origin": o, "actions": list(RECOMMENDATIONS[o])} for o in ORIGINS if o in flagged]


# ---------------------------------------------------------------------------
# ideal resolution
# ---------------------------------------------------------------------------

def resolve_ideal(spec, attribute, dataset, target_reference=None, trusted_reference=None,
                  base_dir=None, smoothing_alpha=0.5):
    """Turn an ideal spec from the config into an IdealDistribution."""
    if spec.kind == "explicit":
        return Explicit(spec.table)
    if spec.kind == "uniform":
        return Uniform()
    if spec.kind == "empirical":
        ref = spec.reference
        if ref == "trusted":
            ref_data = trusted_reference
        elif ref == "target":
            ref_data = target_reference
        else:
            path = Path(ref)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            ref_data = load_dataset(path)
        if not isinstance(ref_data, Dataset):
            raise ValidationError(f"empirical ideal for {attribute!r} needs a reference dataset "
                                  f"({ref!r} is not one)")
        return EmpiricalFrom(ref_data, spec.field)
    base = estimate_conditional(dataset, attribute, field=spec.base, split="both",
                                smoothing_alpha=smoothing_alpha)
    return TowardUniform(base, spec.lam)


def _reference_for(ref, attribute):
    """Pick one attribute's entry from a per-attribute reference mapping."""
    if isinstance(ref, dict):
        return ref.get(attribute)
    return ref


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------

def config_hash(config):
    blob = json.dumps(config.to_mapping(), sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None:
        return None
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def run_audit(dataset, config, target_reference=None, trusted_reference=None, embeddings=None,
              base_dir=None, inputs=None):
    """Run every check the inputs allow and return the report document.

    `target_reference` is a Dataset, or a mapping attribute -> marginal.
    `trusted_reference` is an IdealDistribution (or Dataset, wrapped in
    ``EmpiricalFrom``), or a mapping attribute -> IdealDistribution.
    """
    problems = validate_config(config, dataset)
    if problems:
        raise ValidationError("; ".join(f"{p.kind}: {p.message}" for p in problems))
    if isinstance(trusted_reference, Dataset):
        trusted_reference = EmpiricalFrom(trusted_reference, "y_true")
    categorical = dataset.outcome_kind == CATEGORICAL
    has_source = bool((dataset.split == "source").any())
    attributes, origins, flags, warnings = [], [], [], []

    for name in config.attributes:
        entry = {"attribute": name, "kind": config.attribute_spec(dataset, name).kind,
                 "outcome_disparity": None, "error_disparity": None, "skipped": []}
        ideal_spec = config.ideal_for(name)
        if not categorical:
            entry["skipped"].append("outcome_disparity: outcomes are continuous")
        elif ideal_spec is None:
            entry["skipped"].append("outcome_disparity: no ideal distribution configured")
        else:
            ideal = resolve_ideal(ideal_spec, name, dataset,
                                  target_reference if isinstance(target_reference, Dataset) else None,
                                  trusted_reference.reference
                                  if isinstance(trusted_reference, EmpiricalFrom) else None,
                                  base_dir, config.smoothing_alpha)
            rep = outcome_disparity(dataset, name, ideal, config)
            entry["outcome_disparity"] = rep.to_mapping()
            if rep.flagged:
                flags.append({"check": "outcome_disparity", "attribute": name})
        rep = error_disparity(dataset, name, config)
        entry["error_disparity"] = rep.to_mapping()
        if rep.flagged:
            flags.append({"check": "error_disparity", "attribute": name})
        attributes.append(entry)

        if not has_source:
            warnings.append(f"{name}: no source-split records, origin checks skipped")
            continue
        target = _reference_for(target_reference, name)
        trusted = _reference_for(trusted_reference, name) if categorical else None
        if not categorical and trusted_reference is not None:
            warnings.append(f"{name}: label check skipped, outcomes are continuous")
        dm = diagnose(dataset, target, trusted, name, config)
        origins.append(dm.to_mapping())
        for f in dm.findings:
            if f.flagged:
                flags.append({"check": f.origin, "attribute": name})

    semantic = []
    if embeddings is not None:
        specs = [_weat_spec(s, base_dir, i) for i, s in enumerate(config.weat_specs)]
        finding = semantic_bias_finding(embeddings, specs, config)
        semantic.append(finding.to_mapping())
        if finding.flagged:
            flags.append({"check": "semantic_bias", "attribute": None})
    elif config.weat_specs:
        warnings.append("semantic probes configured but no embeddings supplied; skipped")

    flagged_origins = [o for o in ORIGINS if any(f["check"] == o for f in flags)]
    return {
        "schema_version": SCHEMA_VERSION,
        "metadata": {
            "tool": "biaslens",
            "tool_version": __version__,
            "config_hash": config_hash(config),
            "seed": int(config.seed),
            "timestamp": _timestamp(),
            "inputs": dict(inputs or {}),
        },
        "config": config.to_mapping(),
        "attributes": attributes,
        "origins": origins,
        "semantic": semantic,
        "flags": flags,
        "flagged_origins": flagged_origins,
        "recommendations": recommendations(flagged_origins),
        "data_statement": dict(DATA_STATEMENT),
        "known_unknowns": {"notice": KNOWN_UNKNOWNS,
                           "attributes_checked": list(config.attributes)},
        "notes": list(NOTES),
        "warnings": warnings,
    }


def _weat_spec(raw, base_dir, i):
    if isinstance(raw, WeatSpec):
        return raw
    if isinstance(raw, str):
        path = Path(raw)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return WeatSpec.load(path)
    return WeatSpec.from_mapping(raw, name=raw.get("name", f"weat{i}"))


# ---------------------------------------------------------------------------
# schema, serialisation, rendering
# ---------------------------------------------------------------------------

def report_schema():
    text = resources.files("biaslens").joinpath("schemas/report.schema.json").read_text("utf-8")
    return json.loads(text)


def validate_report(report):
    try:
        jsonschema.validate(report, report_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ValidationError(f"report does not match its schema at {where}: {exc.message}") from None


def dumps_report(report):
    return (json.dumps(report, indent=2, allow_nan=False) + "\n").encode("utf-8")


def _num(x, digits=4):
    if x is None:
        return "n/a"
    return f"{x:.{digits}g}"


def _yes(b):
    return "**yes**" if b else "no"


def _table_str(t):
    return ", ".join(f"{k}: {_num(v, 3)}" for k, v in t.items())


def render_markdown(report):
    """Deterministic Markdown view of a report document."""
    md = report["metadata"]
    out = ["# Bias audit report", ""]
    out += [f"- tool: {md['tool']} {md['tool_version']}",
            f"- seed: {md['seed']}",
            f"- config: `{md['config_hash']}`",
            f"- timestamp: {md['timestamp'] or 'not recorded'}"]
    for k, v in md["inputs"].items():
        out.append(f"- input {k}: {v}")
    out += ["", "## Summary", ""]
    if report["flags"]:
        out.append(f"{len(report['flags'])} flag(s) raised:")
        out.append("")
        for f in report["flags"]:
            where = f" on `{f['attribute']}`" if f["attribute"] is not None else ""
            out.append(f"- {f['check']}{where}")
    else:
        out.append("No flags raised.")

    out += ["", "## Disparities", ""]
    for entry in report["attributes"]:
        out += [f"### `{entry['attribute']}` ({entry['kind']})", ""]
        out += ["| check | statistic | effect | p-value | flagged |",
                "|---|---|---|---|---|"]
        for key in ("outcome_disparity", "error_disparity"):
            rep = entry[key]
            if rep is None:
                continue
            div = rep["divergence"]
            out.append(f"| {key} | {div['kind']} = {_num(div['statistic'])} | "
                       f"{_num(rep['effect_size_nats'])} | {_num(rep['p_value'])} | "
                       f"{_yes(rep['flagged'])} |")
        for reason in entry["skipped"]:
            out.append(f"\nSkipped {reason}.")
        for key in ("outcome_disparity", "error_disparity"):
            rep = entry[key]
            if rep is None:
                continue
            out += ["", f"{key} per cell:", "", "| cell | n | observed | ideal |", "|---|---|---|---|"]
            for cell, d in rep["per_cell_detail"].items():
                out.append(f"| {cell} | {_num(d['n'], 8)} | {_table_str(d['observed'])} | "
                           f"{_table_str(d['ideal'])} |")
            for w in rep["warnings"]:
                out.append(f"\n> {w}")
        out.append("")

    out += ["## Origins", ""]
    if not report["origins"]:
        out += ["No origin checks were run.", ""]
    for dm in report["origins"]:
        cell = ", ".join(dm["cell"]) if dm["cell"] else "no bias"
        out += [f"### `{dm['attribute']}`", "",
                f"- sample: {dm['sample']}",
                f"- annotation: {dm['annotation']}",
                f"- sample x annotation cell: {cell}", "",
                "| origin | effect | p-value | flagged | evidence |", "|---|---|---|---|---|"]
        for key in ("selection_bias", "label_bias", "overamplification"):
            f = dm[key]
            if f is None:
                out.append(f"| {key} | n/a | n/a | unchecked | no reference supplied |")
                continue
            out.append(f"| {key} | {_num(f['effect_size'])} | {_num(f['p_value'])} | "
                       f"{_yes(f['flagged'])} | {f['evidence']} |")
        out += ["", f"_{dm['caveat']}_", ""]

    out += ["## Semantic probes", ""]
    if not report["semantic"]:
        out += ["Not run.", ""]
    for f in report["semantic"]:
        out += [f"- flagged: {_yes(f['flagged'])}", f"- evidence: {f['evidence']}", ""]

    out += ["## Recommended countermeasures", ""]
    if not report["recommendations"]:
        out.append("None; no origin was flagged.")
    for r in report["recommendations"]:
        out.append(f"- {r['origin']}: " + "; ".join(r["actions"]))
    out += ["", "## Data statement (to complete)", ""]
    for k, v in report["data_statement"].items():
        out.append(f"- **{k}**: {v}")
    ku = report["known_unknowns"]
    out += ["", "## Known unknowns", "", ku["notice"], "",
            "Attributes checked: " + ", ".join(f"`{a}`" for a in ku["attributes_checked"]), "",
            "## Notes", ""]
    out += [f"- {n}" for n in report["notes"]]
    if report["warnings"]:
        out += ["", "## Warnings", ""]
        out += [f"- {w}" for w in report["warnings"]]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# atomic output
# ---------------------------------------------------------------------------

def write_atomic(out_dir, files):
    """Write every ``name -> bytes`` entry or none of them.

    Each file goes to a temporary sibling first and is renamed into place
    only after all temporaries are complete. If anything fails, temporaries
    and any file already renamed in this call are removed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staged, placed = [], []
    try:
        for name, data in files.items():
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.", suffix=".tmp")
            staged.append((tmp, out_dir / name))
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
        for tmp, final in staged:
            os.replace(tmp, final)
            placed.append(final)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        for final in placed:
            if final.exists():
                final.unlink()
        raise
    return [final for _, final in staged]


def write_report(out_dir, report):
    """Validate, serialise and atomically write report.json and report.md."""
    validate_report(report)
    return write_atomic(out_dir, {"report.json": dumps_report(report),
                                  "report.md": render_markdown(report).encode("utf-8")})

