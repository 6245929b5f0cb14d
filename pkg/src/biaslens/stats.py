"""Conditional distribution estimates, divergences, and resampling p-values.

All logarithms are natural, so divergences are in nats. The aggregate
disparity statistic is the G statistic ``2 * sum(O * ln(O / E))`` summed over
the outcome support of every attribute cell; it equals ``2 n KL(empirical ||
reference)``, and ``G / (2 n)`` is reported as the per-observation effect.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from ._rng import derive_rng
from .errors import (EmptyDistributionError, InfiniteDivergenceError, SingleCellError,
                     SupportMismatchError, ValidationError)
from .model import CATEGORICAL, AttributeSpec, Cells, Dataset, fit_cells

FIELDS = ("y_true", "y_pred", "error")
ERROR_LABELS = ("0", "1")


# ---------------------------------------------------------------------------
# result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DivergenceResult:
    """A divergence statistic with its per-cell breakdown.

    ``kind`` is ``"llr_g"`` (G statistic), ``"kl"`` (nats), ``"mean_gap"``
    (largest difference of per-cell mean absolute error) or ``"weat"``
    (largest absolute WEAT effect size).
    """

    statistic: float
    per_cell: Mapping[str, float] = field(default_factory=dict)
    kind: str = "llr_g"

    def to_mapping(self):
        return {"statistic": float(self.statistic), "kind": self.kind,
                "per_cell": {k: float(v) for k, v in self.per_cell.items()}}


class CellEstimate(NamedTuple):
    probs: Mapping[str, float]
    n: float


@dataclass(frozen=True)
class ConditionalDistribution:
    """Smoothed estimate of an outcome distribution within each attribute cell."""

    attribute: str
    outcomes: tuple[str, ...]
    cell_keys: tuple[str, ...]
    counts: np.ndarray
    smoothing_alpha: float

    def __post_init__(self):
        self.counts.flags.writeable = False

    @property
    def n(self):
        return self.counts.sum(axis=1)

    def matrix(self):
        """Probability matrix (cells x outcomes); rows of empty cells are NaN when alpha = 0."""
        K = len(self.outcomes)
        a = self.smoothing_alpha
        n = self.n[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            return (self.counts + a) / (n + a * K)

    @property
    def cells(self):
        probs = self.matrix()
        return {c: CellEstimate(dict(zip(self.outcomes, map(float, probs[i]))),
                                float(self.n[i]))
                for i, c in enumerate(self.cell_keys)}

    def table(self):
        return {c: dict(est.probs) for c, est in self.cells.items()}


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

def error_values(dataset):
    """Per-record error: 0/1 loss for categorical outcomes, |y_true - y_pred| otherwise."""
    if len(dataset) == 0:
        raise EmptyDistributionError("error values need at least one record")
    if dataset.outcome_kind == CATEGORICAL:
        return (dataset.y_true != dataset.y_pred).astype(float)
    return np.abs(dataset.y_true - dataset.y_pred)


def encode_labels(values, outcomes):
    index = {o: i for i, o in enumerate(outcomes)}
    try:
        return np.fromiter((index[v] for v in values), dtype=np.int64, count=len(values))
    except KeyError as exc:
        raise SupportMismatchError(f"outcome {exc.args[0]!r} is outside the support "
                                   f"{list(outcomes)}") from None


def field_labels(dataset, field):
    """Categorical labels of `field` per record, as strings."""
    if field == "error":
        if dataset.outcome_kind != CATEGORICAL:
            raise ValidationError("continuous errors have no categorical distribution; "
                                  "use the binned error view in error_disparity")
        err = error_values(dataset)
        return np.where(err > 0, "1", "0").astype(object)
    if field not in ("y_true", "y_pred"):
        raise ValidationError(f"unknown field {field!r}")
    if dataset.outcome_kind != CATEGORICAL:
        raise ValidationError("outcome distributions need categorical outcomes")
    return getattr(dataset, field)


def default_support(dataset, field):
    if field == "error":
        return ERROR_LABELS
    return dataset.outcome_support()


def cell_counts(dataset, cells, field, outcomes):
    """Weighted (cells x outcomes) count matrix; records missing the attribute are skipped."""
    codes = cells.encode(dataset.attrs[cells.attribute])
    keep = codes >= 0
    labels = field_labels(dataset, field)
    oc = encode_labels(labels[keep], outcomes)
    C, K = len(cells), len(outcomes)
    flat = codes[keep] * K + oc
    counts = np.bincount(flat, weights=dataset.weight[keep], minlength=C * K)
    return counts.reshape(C, K)


def _attribute_spec(dataset, attribute):
    if isinstance(attribute, AttributeSpec):
        if attribute.name not in dataset.attrs:
            raise ValidationError(f"attribute {attribute.name!r} not present in dataset")
        return attribute
    return dataset.spec(attribute)


def estimate_conditional(dataset, attribute, field="y_pred", split="both", smoothing_alpha=0.5,
                         *, cells=None, outcomes=None):
    """Estimate Q(field | attribute) with additive smoothing.

    Within each cell, ``p(y) = (count(y) + alpha) / (n + alpha * K)`` where K is
    the outcome support size and counts are weight sums.
    """
    spec = _attribute_spec(dataset, attribute)
    data = dataset.filter_split(split)
    if len(data) == 0:
        raise EmptyDistributionError(f"no records in split {split!r}")
    if cells is None:
        cells = fit_cells(spec, data.attrs[spec.name])
    if outcomes is None:
        outcomes = default_support(dataset, field)
    counts = cell_counts(data, cells, field, tuple(outcomes))
    return ConditionalDistribution(spec.name, tuple(outcomes), tuple(cells.keys), counts,
                                   float(smoothing_alpha))


# ---------------------------------------------------------------------------
# divergences
# ---------------------------------------------------------------------------

def _as_aligned(q, p):
    if isinstance(q, Mapping) or isinstance(p, Mapping):
        if not (isinstance(q, Mapping) and isinstance(p, Mapping)):
            raise SupportMismatchError("both tables must be mappings or both sequences")
        if set(q) != set(p):
            raise SupportMismatchError(
                f"support mismatch: {sorted(set(q) ^ set(p), key=str)}")
        keys = sorted(q, key=str)
        return (np.array([q[k] for k in keys], dtype=float),
                np.array([p[k] for k in keys], dtype=float), keys)
    qa, pa = np.asarray(q, dtype=float), np.asarray(p, dtype=float)
    if qa.shape != pa.shape or qa.ndim != 1:
        raise SupportMismatchError(f"support sizes differ: {qa.shape} vs {pa.shape}")
    return qa, pa, list(range(len(qa)))


def _check_probs(x, name):
    if not np.all(np.isfinite(x)) or np.any(x < 0):
        raise ValidationError(f"{name} must hold finite non-negative probabilities")
    if abs(x.sum() - 1.0) > 1e-9:
        raise ValidationError(f"{name} must sum to 1 (got {x.sum():.12g})")


def kl_terms(q, p):
    """Elementwise q*ln(q/p) with 0*ln(0/p) = 0; q > 0 with p = 0 gives inf."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(q > 0, q * np.log(q / p), 0.0)


def kl_divergence(q, p):
    """KL(q || p) in nats for two probability tables over the same support."""
    qa, pa, keys = _as_aligned(q, p)
    _check_probs(qa, "q")
    _check_probs(pa, "p")
    bad = [keys[i] for i in np.flatnonzero((qa > 0) & (pa == 0))]
    if bad:
        raise InfiniteDivergenceError(
            f"reference has zero probability on outcomes {bad}; smooth the input")
    return float(kl_terms(qa, pa).sum())


def g_statistic(counts, probs):
    """Vectorised G over the last axis: ``2 * sum O ln(O / (n p))``; inf where p = 0 < O."""
    counts = np.asarray(counts, dtype=float)
    n = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(counts > 0, counts * np.log(counts / (n * probs)), 0.0)
    return 2.0 * terms.sum(axis=-1)


def llr_statistic(observed_counts, ideal):
    """Log-likelihood-ratio (G) statistic of observed counts against an ideal table.

    >>> round(llr_statistic({"a": 90, "b": 10}, {"a": 0.5, "b": 0.5}).statistic, 4)
    73.6129
    """
    o, p, keys = _as_aligned(observed_counts, ideal)
    if np.any(o < 0) or not np.all(np.isfinite(o)):
        raise ValidationError("counts must be finite and non-negative")
    if o.sum() <= 0:
        raise EmptyDistributionError("counts sum to zero")
    _check_probs(p, "ideal")
    bad = [keys[i] for i in np.flatnonzero((o > 0) & (p == 0))]
    if bad:
        raise InfiniteDivergenceError(f"ideal is zero on observed outcomes {bad}")
    g = float(g_statistic(o, p))
    return DivergenceResult(g, {str(k): float(2.0 * t) for k, t in
                                zip(keys, kl_terms(o, o.sum() * p))}, "llr_g")


def smoothed_rows(counts, alpha):
    counts = np.asarray(counts, dtype=float)
    K = counts.shape[-1]
    n = counts.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (counts + alpha) / (n + alpha * K)


def cell_divergence(counts, probs=None, ref_counts=None, alpha=0.0):
    """Per-cell G of observed counts against a reference.

    The reference is either a fixed probability matrix `probs` or a second count
    matrix `ref_counts`. With counts on both sides the two are smoothed with
    the same `alpha` and ``G = 2 n KL(q_alpha || p_alpha)`` per cell, so a
    sample compared with itself scores exactly zero. Leading batch axes are
    broadcast. Cells without observations contribute zero.
    """
    counts = np.asarray(counts, dtype=float)
    n = counts.sum(axis=-1)
    if ref_counts is not None:
        q = smoothed_rows(counts, alpha)
        p = smoothed_rows(ref_counts, alpha)
        with np.errstate(invalid="ignore"):
            per_cell = 2.0 * n * kl_terms(q, p).sum(axis=-1)
    else:
        per_cell = g_statistic(counts, probs)
    per_cell = np.where(n > 0, np.maximum(per_cell, 0.0), 0.0)  # clip round-off below zero
    return np.where(np.isnan(per_cell), np.inf, per_cell)


# ---------------------------------------------------------------------------
# ideal distributions
# ---------------------------------------------------------------------------

class ResolvedIdeal(NamedTuple):
    probs: np.ndarray           # cells x outcomes
    counts: np.ndarray | None   # reference counts when estimated from data
    estimated: bool


class IdealDistribution:
    """Reference P(Y | A) that predictions are held against."""

    def support(self):
        return ()

    def attribute_values(self, name):
        return None

    def resolve(self, cells, outcomes, smoothing_alpha=0.5):
        raise NotImplementedError


@dataclass(frozen=True)
class Explicit(IdealDistribution):
    table: Mapping[str, Mapping[str, float]]

    def support(self):
        return tuple(sorted({o for row in self.table.values() for o in row}))

    def resolve(self, cells, outcomes, smoothing_alpha=0.5):
        extra = set(self.support()) - set(outcomes)
        if extra:
            raise SupportMismatchError(f"ideal table has outcomes outside support: {sorted(extra)}")
        probs = np.full((len(cells), len(outcomes)), np.nan)
        for i, key in enumerate(cells.keys):
            row = self.table.get(key)
            if row is None:
                continue
            vals = np.array([float(row.get(o, 0.0)) for o in outcomes])
            _check_probs(vals, f"ideal row for cell {key!r}")
            probs[i] = vals
        return ResolvedIdeal(probs, None, False)


@dataclass(frozen=True)
class Uniform(IdealDistribution):
    def resolve(self, cells, outcomes, smoothing_alpha=0.5):
        K = len(outcomes)
        return ResolvedIdeal(np.full((len(cells), K), 1.0 / K), None, False)


@dataclass(frozen=True)
class EmpiricalFrom(IdealDistribution):
    reference: Dataset
    field: str = "y_true"
    split: str = "both"

    def _data(self):
        data = self.reference.filter_split(self.split)
        if len(data) == 0:
            raise EmptyDistributionError("empirical ideal: reference dataset is empty")
        return data

    def support(self):
        return default_support(self._data(), self.field)

    def attribute_values(self, name):
        data = self._data()
        if name not in data.attrs:
            raise ValidationError(f"reference dataset lacks attribute {name!r}")
        return data.attrs[name]

    def resolve(self, cells, outcomes, smoothing_alpha=0.5):
        counts = cell_counts(self._data(), cells, self.field, outcomes)
        return ResolvedIdeal(smoothed_rows(counts, smoothing_alpha), counts, True)


@dataclass(frozen=True)
class TowardUniform(IdealDistribution):
    """Move `base` a fraction `lam` of the way toward the uniform distribution."""

    base: ConditionalDistribution
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError("lambda must lie in [0, 1]")

    def support(self):
        return self.base.outcomes

    def resolve(self, cells, outcomes, smoothing_alpha=0.5):
        base = self.base.matrix()
        K = len(outcomes)
        col = [self.base.outcomes.index(o) if o in self.base.outcomes else None
               for o in outcomes]
        probs = np.full((len(cells), K), np.nan)
        for i, key in enumerate(cells.keys):
            if key not in self.base.cell_keys:
                continue
            r = self.base.cell_keys.index(key)
            row = np.array([base[r, j] if j is not None else 0.0 for j in col])
            probs[i] = (1.0 - self.lam) * row + self.lam / K
        return ResolvedIdeal(probs, None, False)


def toward_uniform_table(base, lam):
    """Resolved TowardUniform table as nested dicts (cell -> outcome -> p)."""
    cells = Cells(base.attribute, base.cell_keys)
    probs = TowardUniform(base, lam).resolve(cells, base.outcomes).probs
    return {c: dict(zip(base.outcomes, map(float, probs[i])))
            for i, c in enumerate(base.cell_keys)}


# ---------------------------------------------------------------------------
# resampling nulls
# ---------------------------------------------------------------------------

def resampling_pvalue(observed, null):
    """Add-one p-value ``(1 + #{null >= observed}) / (1 + len(null))``."""
    null = np.asarray(null, dtype=float)
    tol = 1e-10 * max(1.0, abs(observed)) if np.isfinite(observed) else 0.0
    return float((1 + np.count_nonzero(null >= observed - tol)) / (1 + null.size))


def permuted_tables(row_totals, col_totals, size, rng):
    """Random integer tables with fixed margins.

    Equivalent in distribution to shuffling the row labels among the
    individual records, but costs O(rows x cols) per replicate instead of
    O(records).
    """
    rows = np.asarray(row_totals, dtype=np.int64)
    remaining = np.tile(np.asarray(col_totals, dtype=np.int64), (size, 1))
    C, K = rows.size, remaining.shape[1]
    out = np.zeros((size, C, K), dtype=np.int64)
    for c in range(C - 1):
        need = np.full(size, rows[c], dtype=np.int64)
        pool = remaining.sum(axis=1)
        for k in range(K - 1):
            good = remaining[:, k]
            pool = pool - good
            x = rng.hypergeometric(good, pool, need)
            out[:, c, k] = x
            need = need - x
        out[:, c, K - 1] = need
        remaining -= out[:, c, :]
    out[:, C - 1, :] = remaining
    return out


def multinomial_tables(row_totals, probs, size, rng):
    """Tables whose rows are drawn from Multinomial(n_c, probs[c])."""
    rows = np.asarray(row_totals, dtype=np.int64)
    C, K = probs.shape
    out = np.zeros((size, C, K), dtype=np.int64)
    for c in range(C):
        if rows[c] == 0:
            continue
        p = np.asarray(probs[c], dtype=float)
        out[:, c, :] = rng.multinomial(rows[c], p / p.sum(), size=size)
    return out


def paired_swap_tables(joint, size, rng):
    """Exchange y_true and y_pred within each record at random.

    `joint` is (cells x K x K) counts of (true outcome, predicted outcome).
    Returns (true_tables, pred_tables), each (size x cells x K). Only
    discordant records can change, so each unordered pair of outcomes is a
    fair binomial split.
    """
    joint = np.asarray(joint, dtype=np.int64)
    C, K, _ = joint.shape
    sims = np.broadcast_to(joint, (size, C, K, K)).copy()
    for i in range(K):
        for j in range(i + 1, K):
            m = joint[:, i, j] + joint[:, j, i]
            x = rng.binomial(np.broadcast_to(m, (size, C)), 0.5)
            sims[:, :, i, j] = x
            sims[:, :, j, i] = m - x
    return sims.sum(axis=3), sims.sum(axis=2)


def is_integral(counts):
    counts = np.asarray(counts)
    return bool(np.all(counts == np.round(counts)))


def weighted_permuted_tables(row_codes, col_codes, weights, shape, size, rng):
    """Per-record shuffle of row labels, accumulating record weights."""
    C, K = shape
    out = np.empty((size, C, K))
    for b in range(size):
        perm = rng.permutation(row_codes)
        out[b] = np.bincount(perm * K + col_codes, weights=weights, minlength=C * K).reshape(C, K)
    return out


def weighted_multinomial_tables(row_codes, weights, probs, size, rng):
    """Draw each record's outcome from probs[row] and accumulate weights."""
    C, K = probs.shape
    cum = np.cumsum(probs[row_codes], axis=1)
    out = np.empty((size, C, K))
    for b in range(size):
        u = rng.random(row_codes.size)[:, None]
        oc = np.minimum((u >= cum).sum(axis=1), K - 1)
        out[b] = np.bincount(row_codes * K + oc, weights=weights, minlength=C * K).reshape(C, K)
    return out


def weighted_paired_swap_tables(row_codes, true_codes, pred_codes, weights, shape, size, rng):
    C, K = shape
    t_out, p_out = np.empty((size, C, K)), np.empty((size, C, K))
    for b in range(size):
        flip = rng.random(row_codes.size) < 0.5
        t = np.where(flip, pred_codes, true_codes)
        p = np.where(flip, true_codes, pred_codes)
        t_out[b] = np.bincount(row_codes * K + t, weights=weights, minlength=C * K).reshape(C, K)
        p_out[b] = np.bincount(row_codes * K + p, weights=weights, minlength=C * K).reshape(C, K)
    return t_out, p_out


def permutation_test(dataset, attribute, statistic, n_permutations=1000, seed=0, *, cells=None):
    """Permutation p-value for a statistic of (records, attribute assignment).

    Records missing the attribute are dropped and the rest are sorted by id,
    so the result does not depend on record order. Attribute cell labels are
    then shuffled among the records `n_permutations` times with a generator
    derived from `seed`::

        p = (1 + #{permuted statistic >= observed}) / (1 + n_permutations)

    `statistic` is called as ``statistic(records, cell_labels)`` where
    ``records`` is the filtered :class:`Dataset` and ``cell_labels`` a numpy
    array of cell keys aligned with it.
    """
    spec = _attribute_spec(dataset, attribute)
    if cells is None:
        cells = fit_cells(spec, dataset.attrs[spec.name])
    codes = cells.encode(dataset.attrs[spec.name])
    keep = np.flatnonzero(codes >= 0)
    order = keep[np.argsort(dataset.ids[keep].astype(str), kind="stable")]
    data = dataset.take(order)
    codes = codes[order]
    if np.unique(codes).size < 2:
        raise SingleCellError(f"attribute {spec.name!r} has fewer than two non-empty cells")
    keys = np.array(cells.keys, dtype=object)
    observed = float(statistic(data, keys[codes]))
    rng = derive_rng(seed, "permutation_test")
    null = np.empty(n_permutations)
    for b in range(n_permutations):
        null[b] = statistic(data, keys[rng.permutation(codes)])
    return resampling_pvalue(observed, null)


def apportion(total, probs):
    """Integer counts summing to `total`, proportional to `probs` (largest remainder).

    Ties in the fractional parts go to the earlier cell.
    """
    probs = np.asarray(probs, dtype=float)
    exact = total * probs / probs.sum()
    base = np.floor(exact + 1e-12).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        order = np.argsort(-(exact - base), kind="stable")
        base[order[:short]] += 1
    return base
