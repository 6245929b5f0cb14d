"""Checks for the origins of predictive bias and their joint diagnosis.

Each check compares two distributions that should agree when a particular
origin is absent:

========================  ==========================================
selection_bias_check      source attribute marginal vs target marginal
label_bias_check          source gold labels given A vs a trusted table
overamplification_check   predictions given A vs gold labels given A
========================  ==========================================

A flag says the data are consistent with an origin. It is not evidence that
the origin caused any particular disparity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ._rng import derive_rng
from .disparity import _conditional_test, is_flagged, missing_warning, resolve_spec
from .errors import (EmptyDistributionError, MissingReferenceError, SingleCellError,
                     SupportMismatchError, ValidationError)
from .model import CATEGORICAL, Cells, Dataset, fit_cells
from .stats import (DivergenceResult, cell_counts, cell_divergence, encode_labels, g_statistic,
                    is_integral, kl_terms, multinomial_tables, paired_swap_tables, permuted_tables,
                    resampling_pvalue, weighted_multinomial_tables, weighted_paired_swap_tables,
                    weighted_permuted_tables)

ORIGINS = ("label_bias", "selection_bias", "overamplification", "semantic_bias")

CAVEAT = ("A flag indicates that the data are consistent with this origin of bias. "
          "It does not prove that this origin caused the observed disparity, "
          "and origins can co-occur and confound one another.")


@dataclass(frozen=True)
class OriginFinding:
    origin: str
    attribute: str | None
    divergence: DivergenceResult
    p_value: float
    effect_size: float      # nats per record; |WEAT d| for semantic findings
    flagged: bool
    evidence: str
    caveat: str = CAVEAT
    details: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValidationError(f"unknown origin {self.origin!r}")

    def to_mapping(self):
        return {
            "origin": self.origin,
            "attribute": self.attribute,
            "divergence": self.divergence.to_mapping(),
            "p_value": float(self.p_value),
            "effect_size": float(self.effect_size),
            "flagged": bool(self.flagged),
            "evidence": self.evidence,
            "caveat": self.caveat,
            "details": _plain(self.details),
        }


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def source_records(dataset):
    """Source-split records, or every record when the dataset has no split marks."""
    data = dataset.filter_split("source")
    if len(data) == 0:
        data = dataset
    if len(data) == 0:
        raise EmptyDistributionError("source has no records")
    return data


# ---------------------------------------------------------------------------
# selection bias
# ---------------------------------------------------------------------------

def _marginal_cells(spec, source, marginal):
    keys = [str(k) for k in marginal]
    src_cells = fit_cells(spec, source.attrs[spec.name])
    if src_cells.edges is not None:
        unknown = sorted(set(keys) - set(src_cells.keys))
        if unknown:
            raise SupportMismatchError(
                f"target marginal cells {unknown} do not match the bins {list(src_cells.keys)}")
        return src_cells
    return Cells(spec.name, tuple(sorted(set(src_cells.keys) | set(keys))))


def selection_bias_check(source, target_reference, attribute, config):
    """Compare the source attribute marginal Q(A_s) with the target marginal P(A_t).

    `target_reference` is a :class:`Dataset` sampled from the target
    population (every record counts) or a mapping cell -> probability.
    The effect size is KL(source || target) in nats and the divergence is
    the matching G statistic ``2 n_s KL``.
    """
    src = source_records(source)
    spec = resolve_spec(src, attribute, config)
    warnings = []
    if isinstance(target_reference, Dataset):
        if spec.name not in target_reference.attrs:
            raise ValidationError(f"target reference lacks attribute {spec.name!r}")
        if len(target_reference) == 0:
            raise EmptyDistributionError("target reference has no records")
        cells = fit_cells(spec, src.attrs[spec.name], target_reference.attrs[spec.name])
        tcodes = cells.encode(target_reference.attrs[spec.name])
        tkeep = tcodes >= 0
        t_counts = np.bincount(tcodes[tkeep], weights=target_reference.weight[tkeep],
                               minlength=len(cells))
        target = t_counts / t_counts.sum()
    elif isinstance(target_reference, Mapping):
        cells = _marginal_cells(spec, src, target_reference)
        target = np.array([float(target_reference.get(k, 0.0)) for k in cells.keys])
        if np.any(target < 0) or abs(target.sum() - 1.0) > 1e-9:
            raise ValidationError("target marginal must be a probability table")
        t_counts = None
    else:
        raise ValidationError("target reference must be a Dataset or a cell -> probability mapping")

    codes = cells.encode(src.attrs[spec.name])
    keep = codes >= 0
    warnings += missing_warning(src, cells)
    counts = np.bincount(codes[keep], weights=src.weight[keep], minlength=len(cells))
    n = float(counts.sum())
    if n <= 0:
        raise EmptyDistributionError(f"no source records carry attribute {spec.name!r}")
    disjoint = [cells.keys[i] for i in np.flatnonzero((counts > 0) & (target == 0))]
    if disjoint:
        raise SupportMismatchError(
            f"source cells {disjoint} have no mass in the target population")

    per_cell = 2.0 * kl_terms(counts, n * target)
    G = max(float(per_cell.sum()), 0.0)
    effect = G / (2.0 * n)

    B = config.n_permutations
    rng = derive_rng(config.seed, f"selection_bias:{spec.name}", 0)
    weighted = src.is_weighted or not is_integral(counts)
    if t_counts is None:
        if not weighted:
            sims = multinomial_tables([int(n)], target[None, :], B, rng)[:, 0, :]
        else:
            sims = weighted_multinomial_tables(np.zeros(keep.sum(), np.int64), src.weight[keep],
                                               target[None, :], B, rng)[:, 0, :]
        null = g_statistic(sims, target)
    else:
        if not (weighted or target_reference.is_weighted):
            tabs = permuted_tables([int(n), int(t_counts.sum())],
                                   (counts + t_counts).astype(np.int64), B, rng)
        else:
            member = np.concatenate([np.zeros(keep.sum(), np.int64), np.ones(tkeep.sum(), np.int64)])
            cc = np.concatenate([codes[keep], tcodes[tkeep]])
            ww = np.concatenate([src.weight[keep], target_reference.weight[tkeep]])
            tabs = weighted_permuted_tables(member, cc, ww, (2, len(cells)), B, rng)
        ref = tabs[:, 1, :] / tabs[:, 1, :].sum(axis=1, keepdims=True)
        null = np.nan_to_num(g_statistic(tabs[:, 0, :], ref), nan=np.inf)
    p = resampling_pvalue(G, null)
    flagged = is_flagged(p, effect, config)

    src_marg = counts / n
    details = {
        "kl_nats": effect,
        "n": n,
        "source_marginal": dict(zip(cells.keys, map(float, src_marg))),
        "target_marginal": dict(zip(cells.keys, map(float, target))),
        "warnings": warnings,
    }
    worst = cells.keys[int(np.argmax(np.abs(src_marg - target)))]
    evidence = (f"source marginal of {spec.name!r} diverges from the target by "
                f"KL = {effect:.4g} nats (G = {G:.4g}, p = {p:.4g}); largest gap in cell "
                f"{worst!r}: {src_marg[cells.keys.index(worst)]:.3f} vs "
                f"{target[cells.keys.index(worst)]:.3f}")
    div = DivergenceResult(G, {k: float(v) for k, v in zip(cells.keys, per_cell)}, "llr_g")
    return OriginFinding("selection_bias", spec.name, div, p, effect, flagged, evidence,
                         details=details)


# ---------------------------------------------------------------------------
# label bias
# ---------------------------------------------------------------------------

def label_bias_check(source, trusted_reference, attribute, config):
    """Compare source gold labels given A with a trusted reference P(Y | A).

    Label bias cannot be read off the biased sample itself, so a reference
    built outside the annotation process (an explicit table or an
    expert-labelled dataset wrapped in ``EmpiricalFrom``) is required.
    """
    if trusted_reference is None:
        raise MissingReferenceError(
            "label bias can only be assessed against external ground truth: supply a trusted "
            "reference distribution of labels given the attribute")
    src = source_records(source)
    spec = resolve_spec(src, attribute, config)
    div, p, effect, detail, warnings = _conditional_test(
        src, spec, trusted_reference, "y_true", config, f"label_bias:{spec.name}")
    flagged = is_flagged(p, effect, config)
    evidence = (f"gold labels given {spec.name!r} diverge from the trusted reference by "
                f"{effect:.4g} nats per record (G = {div.statistic:.4g}, p = {p:.4g})")
    return OriginFinding("label_bias", spec.name, div, p, effect, flagged, evidence,
                         details={"per_cell": detail, "warnings": warnings})


# ---------------------------------------------------------------------------
# overamplification
# ---------------------------------------------------------------------------

def _total_variation(a, b):
    return 0.5 * np.abs(a - b).sum(axis=-1)


def overamplification_check(dataset, attribute, config):
    """Compare predictions given A with the gold labels given A on source records.

    Both conditionals come from the same records, so the null exchanges
    ``y_true`` and ``y_pred`` within records. The direction is read from how
    far each cell's predicted and gold distributions sit from the pooled gold
    distribution: predictions further out mean the association was amplified.
    """
    src = dataset.filter_split("source")
    if len(src) == 0:
        if np.any(dataset.split == "target") or len(dataset) == 0:
            raise EmptyDistributionError("overamplification needs source-split records")
        src = dataset
    spec = resolve_spec(src, attribute, config)
    if src.outcome_kind != CATEGORICAL:
        raise ValidationError("overamplification needs categorical outcomes")
    cells = fit_cells(spec, src.attrs[spec.name])
    outcomes = src.outcome_support()
    warnings = missing_warning(src, cells)
    C, K = len(cells), len(outcomes)
    O_pred = cell_counts(src, cells, "y_pred", outcomes)
    O_true = cell_counts(src, cells, "y_true", outcomes)
    n_c = O_true.sum(axis=1)
    if np.count_nonzero(n_c) < 1:
        raise EmptyDistributionError(f"no source records carry attribute {spec.name!r}")
    alpha = config.smoothing_alpha
    per_cell = cell_divergence(O_pred, ref_counts=O_true, alpha=alpha)
    G = float(per_cell.sum())
    n = float(n_c.sum())
    effect = G / (2.0 * n)

    B = config.n_permutations
    rng = derive_rng(config.seed, f"overamplification:{spec.name}", 0)
    codes = cells.encode(src.attrs[spec.name])
    keep = codes >= 0
    tc = encode_labels(src.y_true[keep], outcomes)
    pc = encode_labels(src.y_pred[keep], outcomes)
    if not src.is_weighted:
        joint = np.bincount((codes[keep] * K + tc) * K + pc, minlength=C * K * K).reshape(C, K, K)
        t_sims, p_sims = paired_swap_tables(joint, B, rng)
    else:
        t_sims, p_sims = weighted_paired_swap_tables(codes[keep], tc, pc, src.weight[keep],
                                                     (C, K), B, rng)
    null = cell_divergence(p_sims, ref_counts=t_sims, alpha=alpha).sum(axis=1)
    p = resampling_pvalue(G, null)
    flagged = is_flagged(p, effect, config)

    nonempty = np.flatnonzero(n_c > 0)
    true_rows = O_true[nonempty] / n_c[nonempty, None]
    pred_rows = O_pred[nonempty] / n_c[nonempty, None]
    if nonempty.size >= 2:
        anchor = O_true.sum(axis=0) / n
    else:
        anchor = np.full(K, 1.0 / K)
    gaps = _total_variation(pred_rows, anchor) - _total_variation(true_rows, anchor)
    overall = float((gaps * n_c[nonempty]).sum() / n)
    direction = "amplified" if overall > 0 else "attenuated" if overall < 0 else "unchanged"
    signed = {cells.keys[i]: float(g) for i, g in zip(nonempty, gaps)}
    details = {
        "direction": direction,
        "signed_gap": overall,
        "per_cell_gap": signed,
        "per_cell": {cells.keys[i]: {"true": dict(zip(map(str, outcomes), map(float, true_rows[j]))),
                                     "pred": dict(zip(map(str, outcomes), map(float, pred_rows[j]))),
                                     "n": float(n_c[i])}
                     for j, i in enumerate(nonempty)},
        "warnings": warnings,
    }
    evidence = (f"predictions given {spec.name!r} diverge from the training labels by "
                f"{effect:.4g} nats per record (G = {G:.4g}, p = {p:.4g}); direction: "
                f"{direction} (n-weighted signed gap {overall:+.4f})")
    div = DivergenceResult(G, {cells.keys[i]: float(per_cell[i]) for i in nonempty}, "llr_g")
    return OriginFinding("overamplification", spec.name, div, p, effect, flagged, evidence,
                         details=details)


# ---------------------------------------------------------------------------
# diagnosis
# ---------------------------------------------------------------------------

# (selection flagged, label flagged) -> origins named by the matching quadrant
QUADRANTS = {
    (True, True): ("selection_bias", "label_bias"),
    (True, False): ("selection_bias",),
    (False, True): ("label_bias",),
    (False, False): (),
}


@dataclass(frozen=True)
class DiagnosisMatrix:
    """One attribute's position in the sample x annotation quadrant, plus all findings.

    ``sample`` is ``"representative"`` when the selection check did not flag
    and ``annotation`` is ``"correct"`` when the label check did not flag;
    either is ``"unchecked"`` when its reference was not supplied.
    """

    attribute: str
    sample: str
    annotation: str
    cell: tuple[str, ...]
    selection: OriginFinding | None
    label: OriginFinding | None
    overamplification: OriginFinding | None
    semantic: tuple[OriginFinding, ...] = ()
    caveat: str = CAVEAT

    @property
    def findings(self):
        out = [f for f in (self.selection, self.label, self.overamplification) if f is not None]
        return out + list(self.semantic)

    @property
    def flagged_origins(self):
        return tuple(o for o in ORIGINS if any(f.flagged and f.origin == o for f in self.findings))

    def to_mapping(self):
        def m(f):
            return None if f is None else f.to_mapping()
        return {
            "attribute": self.attribute,
            "sample": self.sample,
            "annotation": self.annotation,
            "cell": list(self.cell),
            "selection_bias": m(self.selection),
            "label_bias": m(self.label),
            "overamplification": m(self.overamplification),
            "semantic_bias": [f.to_mapping() for f in self.semantic],
            "flagged_origins": list(self.flagged_origins),
            "caveat": self.caveat,
        }


def diagnose(source, target_reference, trusted_reference, attribute, config,
             semantic_findings=()):
    """Run the origin checks for one attribute and place it in the quadrant table.

    The label check runs only when `trusted_reference` is given; the selection
    check only when `target_reference` is given. Errors from the component
    checks propagate unchanged.
    """
    src = source_records(source)
    name = attribute.name if hasattr(attribute, "name") else attribute
    if name not in src.attrs:
        raise ValidationError(f"attribute {name!r} not present in dataset")
    selection = (selection_bias_check(source, target_reference, attribute, config)
                 if target_reference is not None else None)
    label = (label_bias_check(source, trusted_reference, attribute, config)
             if trusted_reference is not None else None)
    try:
        overamp = overamplification_check(source, attribute, config)
    except (SingleCellError, ValidationError):
        if src.outcome_kind == CATEGORICAL:
            raise
        overamp = None
    sample = ("unchecked" if selection is None else
              "not-representative" if selection.flagged else "representative")
    annotation = ("unchecked" if label is None else
                  "incorrect" if label.flagged else "correct")
    cell = QUADRANTS[(bool(selection and selection.flagged), bool(label and label.flagged))]
    return DiagnosisMatrix(name, sample, annotation, cell, selection, label, overamp,
                           tuple(semantic_findings))
