"""Outcome and error disparity across the cells of a human attribute."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ._rng import derive_rng
from .errors import (EmptyDistributionError, InfiniteDivergenceError, SingleCellError,
                     SupportMismatchError, ValidationError)
from .model import CATEGORICAL, AttributeSpec, fit_cells
from .stats import (DivergenceResult, EmpiricalFrom, cell_counts, cell_divergence, encode_labels,
                    error_values, field_labels, is_integral, multinomial_tables, permuted_tables,
                    resampling_pvalue, smoothed_rows, weighted_multinomial_tables,
                    weighted_permuted_tables)

ERROR_QUANTILE_BINS = 4


def is_flagged(p_value, effect, config):
    """The shared flag rule: significant and at least `effect_floor` nats per observation."""
    return bool(p_value < config.alpha and effect >= config.effect_floor)


@dataclass(frozen=True)
class DisparityReport:
    kind: str                       # "outcome" or "error"
    attribute: str
    divergence: DivergenceResult
    p_value: float
    effect_size_nats: float
    flagged: bool
    per_cell_detail: Mapping[str, Mapping] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def to_mapping(self):
        return {
            "kind": self.kind,
            "attribute": self.attribute,
            "divergence": self.divergence.to_mapping(),
            "p_value": float(self.p_value),
            "effect_size_nats": float(self.effect_size_nats),
            "flagged": bool(self.flagged),
            "per_cell_detail": {k: dict(v) for k, v in self.per_cell_detail.items()},
            "warnings": list(self.warnings),
        }


def resolve_spec(dataset, attribute, config=None):
    if isinstance(attribute, AttributeSpec):
        if attribute.name not in dataset.attrs:
            raise ValidationError(f"attribute {attribute.name!r} not present in dataset")
        return attribute
    if config is not None:
        return config.attribute_spec(dataset, attribute)
    return dataset.spec(attribute)


def audited_records(dataset, preferred="target"):
    """Records of the preferred split, falling back to all records with a warning."""
    data = dataset.filter_split(preferred)
    if len(data):
        return data, []
    if len(dataset) == 0:
        raise EmptyDistributionError("dataset has no records")
    return dataset, [f"no {preferred}-split records; audited all {len(dataset)} records instead"]


def missing_warning(data, cells):
    n_missing = int(np.count_nonzero(cells.encode(data.attrs[cells.attribute]) < 0))
    if n_missing:
        return [f"{n_missing} record(s) lack attribute {cells.attribute!r} and were excluded"]
    return []


def _table(keys, row):
    return {str(k): float(v) for k, v in zip(keys, row)}


# ---------------------------------------------------------------------------
# conditional outcome distribution against an ideal
# ---------------------------------------------------------------------------

def _conditional_test(data, spec, ideal, field, config, stream):
    """G of Q(field | A) on `data` against `ideal`, with a resampling p-value.

    Returns (DivergenceResult, p, effect, per_cell_detail, warnings).
    """
    if data.outcome_kind != CATEGORICAL:
        raise ValidationError("outcome distributions need categorical outcomes")
    extra_values = ideal.attribute_values(spec.name)
    arrays = [data.attrs[spec.name]] + ([extra_values] if extra_values is not None else [])
    cells = fit_cells(spec, *arrays)
    outcomes = tuple(sorted(set(data.outcome_support()) | set(ideal.support())))
    warnings = missing_warning(data, cells)
    counts = cell_counts(data, cells, field, outcomes)
    n_c = counts.sum(axis=1)
    nonempty = n_c > 0
    if nonempty.sum() < 2:
        raise SingleCellError(f"attribute {spec.name!r} has fewer than two non-empty cells")
    alpha = config.smoothing_alpha
    resolved = ideal.resolve(cells, outcomes, alpha)
    probs = resolved.probs
    missing = [cells.keys[i] for i in np.flatnonzero(nonempty & np.isnan(probs).any(axis=1))]
    if missing:
        raise SupportMismatchError(f"ideal distribution has no row for cell(s) {missing}")
    if resolved.estimated and alpha == 0:
        ref_n = resolved.counts.sum(axis=1)
        empty = [cells.keys[i] for i in np.flatnonzero(nonempty & (ref_n == 0))]
        if empty:
            raise EmptyDistributionError(f"reference has no records in cell(s) {empty}")

    if resolved.estimated:
        per_cell = cell_divergence(counts, ref_counts=resolved.counts, alpha=alpha)
    else:
        per_cell = cell_divergence(counts, probs)
    if not np.all(np.isfinite(per_cell)):
        bad = [cells.keys[i] for i in np.flatnonzero(~np.isfinite(per_cell))]
        raise InfiniteDivergenceError(
            f"ideal assigns zero probability to observed outcomes in cell(s) {bad}")
    G = float(per_cell.sum())
    n = float(n_c.sum())
    effect = G / (2.0 * n)

    B = config.n_permutations
    rng = derive_rng(config.seed, stream, 0)
    codes = cells.encode(data.attrs[spec.name])
    keep = codes >= 0
    if resolved.estimated:
        if not isinstance(ideal, EmpiricalFrom):
            raise ValidationError("estimated ideals must come from a reference dataset")
        null = _two_sample_null(data, codes, keep, ideal._data(), cells, field, ideal.field, outcomes,
                                counts, resolved.counts, alpha, B, rng)
    else:
        fill = np.where(np.isnan(probs), 1.0 / len(outcomes), probs)
        if is_integral(counts) and not data.is_weighted:
            sims = multinomial_tables(n_c.astype(np.int64), fill, B, rng)
        else:
            sims = weighted_multinomial_tables(codes[keep], data.weight[keep], fill, B, rng)
        null = cell_divergence(sims, fill).sum(axis=1)
    p = resampling_pvalue(G, null)

    observed = smoothed_rows(counts, 0.0)
    detail = {}
    for i in np.flatnonzero(nonempty):
        detail[cells.keys[i]] = {"observed": _table(outcomes, observed[i]),
                                 "ideal": _table(outcomes, probs[i]),
                                 "n": float(n_c[i])}
    div = DivergenceResult(G, {cells.keys[i]: float(per_cell[i]) for i in np.flatnonzero(nonempty)},
                           "llr_g")
    return div, p, effect, detail, warnings


def _two_sample_null(data, codes, keep, ref_data, cells, field, ref_field, outcomes,
                     counts, ref_counts, alpha, B, rng):
    """Shuffle membership (audited vs reference) among pooled records within each cell."""
    C, K = counts.shape
    weighted = data.is_weighted or ref_data.is_weighted
    if not weighted and is_integral(counts) and is_integral(ref_counts):
        obs = np.zeros((B, C, K))
        ref = np.zeros((B, C, K))
        for c in range(C):
            rows = np.array([counts[c].sum(), ref_counts[c].sum()], dtype=np.int64)
            if rows.sum() == 0:
                continue
            sims = permuted_tables(rows, (counts[c] + ref_counts[c]).astype(np.int64), B, rng)
            obs[:, c, :] = sims[:, 0, :]
            ref[:, c, :] = sims[:, 1, :]
        return cell_divergence(obs, ref_counts=ref, alpha=alpha).sum(axis=1)

    rcodes = cells.encode(ref_data.attrs[cells.attribute])
    rkeep = rcodes >= 0
    pooled_cell = np.concatenate([codes[keep], rcodes[rkeep]])
    pooled_out = np.concatenate([
        encode_labels(field_labels(data, field)[keep], outcomes),
        encode_labels(field_labels(ref_data, ref_field)[rkeep], outcomes)])
    pooled_w = np.concatenate([data.weight[keep], ref_data.weight[rkeep]])
    member = np.concatenate([np.zeros(keep.sum(), np.int64), np.ones(rkeep.sum(), np.int64)])
    groups = [np.flatnonzero(pooled_cell == c) for c in range(C)]
    null = np.empty(B)
    for b in range(B):
        m = member.copy()
        for g in groups:
            m[g] = rng.permutation(member[g])
        flat = (m * C + pooled_cell) * K + pooled_out
        tab = np.bincount(flat, weights=pooled_w, minlength=2 * C * K).reshape(2, C, K)
        null[b] = cell_divergence(tab[0], ref_counts=tab[1], alpha=alpha).sum()
    return null


def outcome_disparity(dataset, attribute, ideal, config):
    """Test whether predictions diverge from an ideal P(Y | A) in the target population.

    Parameters
    ----------
    dataset : Dataset
        Records to audit. Target-split records are used; with none present the
        whole dataset is audited and a warning is attached.
    attribute : AttributeSpec or str
    ideal : IdealDistribution
    config : AuditConfig

    Returns
    -------
    DisparityReport
        ``divergence`` holds the G statistic over cells and outcomes.
    """
    data, warnings = audited_records(dataset, "target")
    spec = resolve_spec(dataset, attribute, config)
    div, p, effect, detail, w = _conditional_test(
        data, spec, ideal, "y_pred", config, f"outcome_disparity:{spec.name}")
    return DisparityReport("outcome", spec.name, div, p, effect, is_flagged(p, effect, config),
                           detail, tuple(warnings + w))


# ---------------------------------------------------------------------------
# error disparity
# ---------------------------------------------------------------------------

def _independence_g(table):
    """G of a (cells x bins) table against equal rows, i.e. the pooled column distribution."""
    table = np.asarray(table, dtype=float)
    col = table.sum(axis=-2, keepdims=True)
    pooled = col / col.sum(axis=-1, keepdims=True)
    return cell_divergence(table, pooled)


def _mean_gaps(values, weights, code_matrix, C):
    """Largest minus smallest per-cell weighted mean, one per row of `code_matrix`."""
    B, n = code_matrix.shape
    flat = (code_matrix + C * np.arange(B)[:, None]).ravel()
    wsum = np.bincount(flat, weights=np.tile(weights, B), minlength=B * C).reshape(B, C)
    vsum = np.bincount(flat, weights=np.tile(values * weights, B), minlength=B * C).reshape(B, C)
    with np.errstate(invalid="ignore"):
        means = vsum / wsum
    return np.nanmax(means, axis=1) - np.nanmin(means, axis=1)


def error_disparity(dataset, attribute, config):
    """Test whether model error is distributed unequally across attribute cells.

    The ideal is equality: every cell shares the pooled error distribution.
    Categorical outcomes use 0/1 loss and a G test of independence between
    cell and error, whose effect size is the mutual information in nats.
    Continuous outcomes use absolute error; the statistic is the largest gap
    between per-cell mean errors and the effect size is the mutual information
    of cell and error quartile.
    """
    data, warnings = audited_records(dataset, "target")
    spec = resolve_spec(dataset, attribute, config)
    cells = fit_cells(spec, data.attrs[spec.name])
    warnings += missing_warning(data, cells)
    codes = cells.encode(data.attrs[spec.name])
    keep = codes >= 0
    codes, w = codes[keep], data.weight[keep]
    err = error_values(data)[keep]
    C = len(cells)
    present = np.unique(codes)
    if present.size < 2:
        raise SingleCellError(f"attribute {spec.name!r} has fewer than two non-empty cells")
    n_c = np.bincount(codes, weights=w, minlength=C)
    rng = derive_rng(config.seed, f"error_disparity:{spec.name}", 0)
    B = config.n_permutations

    if data.outcome_kind == CATEGORICAL:
        e = (err > 0).astype(np.int64)
        table = np.bincount(codes * 2 + e, weights=w, minlength=C * 2).reshape(C, 2)
        per_cell = _independence_g(table)
        G = float(per_cell.sum())
        if not data.is_weighted:
            sims = permuted_tables(n_c.astype(np.int64), table.sum(axis=0).astype(np.int64), B, rng)
        else:
            sims = weighted_permuted_tables(codes, e, w, (C, 2), B, rng)
        null = _independence_g(sims).sum(axis=1)
        p = resampling_pvalue(G, null)
        effect = G / (2.0 * float(n_c.sum()))
        pooled = table[:, 1].sum() / table.sum()
        detail = {cells.keys[i]: {"observed": {"error_rate": float(table[i, 1] / n_c[i])},
                                  "ideal": {"error_rate": float(pooled)},
                                  "n": float(n_c[i])} for i in present}
        div = DivergenceResult(G, {cells.keys[i]: float(per_cell[i]) for i in present}, "llr_g")
    else:
        gap = float(_mean_gaps(err, w, codes[None, :], C)[0])
        null = np.empty(B)
        batch = 64
        for start in range(0, B, batch):
            size = min(batch, B - start)
            perm = np.argsort(rng.random((size, codes.size)), axis=1)
            null[start:start + size] = _mean_gaps(err, w, codes[perm], C)
        p = resampling_pvalue(gap, null)
        edges = np.unique(np.quantile(err, np.linspace(0, 1, ERROR_QUANTILE_BINS + 1)[1:-1]))
        ebin = np.searchsorted(edges, err, side="right")
        nb = edges.size + 1
        btab = np.bincount(codes * nb + ebin, weights=w, minlength=C * nb).reshape(C, nb)
        effect = float(_independence_g(btab).sum()) / (2.0 * float(n_c.sum()))
        means = np.bincount(codes, weights=err * w, minlength=C) / np.where(n_c > 0, n_c, 1)
        pooled = float((err * w).sum() / w.sum())
        detail = {cells.keys[i]: {"observed": {"mean_abs_error": float(means[i])},
                                  "ideal": {"mean_abs_error": pooled},
                                  "n": float(n_c[i])} for i in present}
        div = DivergenceResult(gap, {cells.keys[i]: float(means[i] - pooled) for i in present},
                               "mean_gap")
    return DisparityReport("error", spec.name, div, p, effect, is_flagged(p, effect, config),
                           detail, tuple(warnings))
