"""Data-level countermeasures: reweighting, resampling, matching, augmentation.

Every function returns new objects; inputs are never modified. When a
countermeasure moves the gold-label marginal by more than
``LABEL_SHIFT_LIMIT`` a :class:`LabelShiftWarning` is raised, since balancing
one attribute can introduce a new confound through the labels.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping

import numpy as np

from ._rng import derive_rng
from .disparity import resolve_spec
from .errors import (EmptyDistributionError, InfeasibleError, ParseError, SupportMismatchError,
                     ValidationError)
from .model import CATEGORICAL, CONTINUOUS, Dataset, fit_cells
from .stats import apportion

LABEL_SHIFT_LIMIT = 0.05
MODES = ("down", "up_with_replacement")


class LabelShiftWarning(UserWarning):
    """A mitigation changed the gold-label marginal noticeably."""


def _label_marginal(dataset):
    if dataset.outcome_kind != CATEGORICAL or len(dataset) == 0:
        return {}
    labels = dataset.y_true
    total = float(dataset.weight.sum())
    if total <= 0:
        return {}
    out = {}
    for lab in sorted(set(labels.tolist())):
        out[lab] = float(dataset.weight[labels == lab].sum()) / total
    return out


def check_label_shift(before, after, what):
    """Warn when the label marginal moved by more than LABEL_SHIFT_LIMIT; return the shift."""
    p, q = _label_marginal(before), _label_marginal(after)
    keys = set(p) | set(q)
    shift = max((abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys), default=0.0)
    if shift > LABEL_SHIFT_LIMIT:
        warnings.warn(f"{what} moved the label marginal by {shift:.3f} (> {LABEL_SHIFT_LIMIT}); "
                      "balancing the attribute may have introduced a label confound",
                      LabelShiftWarning, stacklevel=3)
    return shift


def _normalise(table, name):
    keys = list(table)
    p = np.array([float(table[k]) for k in keys])
    if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-9:
        raise ValidationError(f"{name} must be a probability table")
    return dict(zip(keys, p))


def attribute_marginal(dataset, attribute, config=None, weighted=True):
    """Attribute cell -> share of records (weight sums when `weighted`)."""
    spec = resolve_spec(dataset, attribute, config)
    cells = fit_cells(spec, dataset.attrs[spec.name])
    codes = cells.encode(dataset.attrs[spec.name])
    keep = codes >= 0
    w = dataset.weight[keep] if weighted else None
    counts = np.bincount(codes[keep], weights=w, minlength=len(cells))
    total = counts.sum()
    if total <= 0:
        raise EmptyDistributionError(f"no records carry attribute {spec.name!r}")
    return dict(zip(cells.keys, map(float, counts / total)))


# ---------------------------------------------------------------------------
# post-stratification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightAssignment:
    """Multiplicative weight per attribute cell.

    With ``joint`` set, keys are ``(cell, label)`` pairs and weights depend on
    the gold label as well.
    """

    weights: Mapping
    attribute: str | None = None
    joint: bool = False

    def __post_init__(self):
        if any(not (w >= 0 and math.isfinite(w)) for w in self.weights.values()):
            raise ValidationError("weights must be finite and non-negative")

    def __getitem__(self, key):
        return self.weights[key]

    def apply(self, dataset, attribute=None, config=None):
        """Dataset whose record weights are multiplied by the cell weight."""
        name = attribute if attribute is not None else self.attribute
        if name is None:
            raise ValidationError("no attribute given for applying weights")
        spec = resolve_spec(dataset, name, config)
        cells = fit_cells(spec, dataset.attrs[spec.name])
        codes = cells.encode(dataset.attrs[spec.name])
        keys = np.array(cells.keys, dtype=object)
        mult = np.zeros(len(dataset))
        missing = set()
        for i, c in enumerate(codes):
            if c < 0:
                continue
            key = (keys[c], dataset.y_true[i]) if self.joint else keys[c]
            if key not in self.weights:
                missing.add(key)
                continue
            mult[i] = self.weights[key]
        if missing:
            raise SupportMismatchError(f"no weight for cell(s) {sorted(missing, key=str)}")
        out = dataset.with_weights(dataset.weight * mult)
        check_label_shift(dataset, out, "reweighting")
        return out

    def to_mapping(self):
        if self.joint:
            return {"attribute": self.attribute, "joint": True,
                    "weights": [{"cell": c, "label": y, "weight": float(w)}
                                for (c, y), w in self.weights.items()]}
        return {"attribute": self.attribute, "joint": False,
                "weights": {str(k): float(w) for k, w in self.weights.items()}}


def poststratify_weights(source_marginal, target_marginal, attribute=None):
    """Weights ``target(a) / source(a)`` that carry the source marginal onto the target.

    >>> poststratify_weights({"x": 0.8, "y": 0.2}, {"x": 0.5, "y": 0.5}).weights
    {'x': 0.625, 'y': 2.5}
    """
    src = _normalise(source_marginal, "source marginal")
    tgt = _normalise(target_marginal, "target marginal")
    lost = [k for k, p in tgt.items() if p > 0 and src.get(k, 0.0) <= 0]
    if lost:
        raise SupportMismatchError(
            f"target puts mass on cell(s) {sorted(lost, key=str)} that the source never observes; "
            "no reweighting can recover them")
    weights = {k: (float(tgt.get(k, 0.0)) / float(p) if p > 0 else 0.0) for k, p in src.items()}
    joint = bool(weights) and all(isinstance(k, tuple) for k in weights)
    return WeightAssignment(weights, attribute, joint)


def poststratify(dataset, attribute, target_marginal, config=None, joint=False):
    """Reweight `dataset` so its weighted attribute marginal equals `target_marginal`.

    With ``joint=True`` the target is keyed by ``(cell, label)`` pairs. Joint
    reweighting is off by default because fixing labels and attributes
    together can amplify confounds between them.
    """
    if joint:
        spec = resolve_spec(dataset, attribute, config)
        cells = fit_cells(spec, dataset.attrs[spec.name])
        codes = cells.encode(dataset.attrs[spec.name])
        src = {}
        for c, y, w in zip(codes, dataset.y_true, dataset.weight):
            if c >= 0:
                key = (cells.keys[c], y)
                src[key] = src.get(key, 0.0) + float(w)
        total = sum(src.values())
        src = {k: v / total for k, v in src.items()}
        tgt = {tuple(k): v for k, v in target_marginal.items()}
    else:
        src = attribute_marginal(dataset, attribute, config)
        tgt = dict(target_marginal)
    assignment = poststratify_weights(src, tgt, getattr(attribute, "name", attribute))
    return assignment, assignment.apply(dataset, attribute, config)


# ---------------------------------------------------------------------------
# stratified resampling
# ---------------------------------------------------------------------------

def stratified_resample(dataset, attribute, target_marginal, mode="down", seed=0, n=None,
                        config=None):
    """Resample `dataset` so its attribute marginal matches `target_marginal`.

    ``mode="down"`` subsamples each cell uniformly without replacement. By
    default the output is the largest sample the available records allow;
    a requested `n` that cannot be met names the binding cell.
    ``mode="up_with_replacement"`` keeps every record and adds bootstrap
    duplicates (ids suffixed ``#r1``, ``#r2``, ...) to under-filled cells.
    Cell counts are allotted by largest remainder, so each share is within
    ``1/n`` of its target. Records keep their relative order.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
    spec = resolve_spec(dataset, attribute, config)
    cells = fit_cells(spec, dataset.attrs[spec.name])
    target = _normalise(target_marginal, "target marginal")
    unknown = sorted(set(map(str, target)) - set(cells.keys))
    if unknown and spec.kind == CONTINUOUS:
        raise SupportMismatchError(f"target cells {unknown} do not match the bins {list(cells.keys)}")
    empty = [k for k in unknown if target[k] > 0]
    if empty:
        raise InfeasibleError(f"required cell(s) {empty} have no records to sample from")
    codes = cells.encode(dataset.attrs[spec.name])
    avail = np.bincount(codes[codes >= 0], minlength=len(cells))
    t = np.array([target.get(k, 0.0) for k in cells.keys])
    empty = [cells.keys[i] for i in np.flatnonzero((t > 0) & (avail == 0))]
    if empty:
        raise InfeasibleError(f"required cell(s) {empty} have no records to sample from")
    live = np.flatnonzero(t > 0)
    ratio = avail[live] / t[live]
    if mode == "down":
        cap = int(math.floor(ratio.min() + 1e-9))
        total = cap if n is None else int(n)
    else:
        total = int(math.ceil(ratio.max() - 1e-9)) if n is None else int(n)
    if total < 1:
        raise InfeasibleError("resampled dataset would be empty")
    want = apportion(total, t)
    picks = []
    for c in range(len(cells)):
        idx = np.flatnonzero(codes == c)
        rng = derive_rng(seed, "stratified_resample", c)
        if mode == "down":
            if want[c] > avail[c]:
                raise InfeasibleError(
                    f"cell {cells.keys[c]!r} is binding: {want[c]} records needed for n = {total} "
                    f"but only {avail[c]} available")
            picks.append(np.sort(rng.choice(idx, size=want[c], replace=False)))
        else:
            if want[c] < avail[c]:
                raise InfeasibleError(
                    f"cell {cells.keys[c]!r} holds {avail[c]} records, more than the {want[c]} "
                    f"allotted at n = {total}; upsampling never drops records (use mode 'down')")
            extra = rng.choice(idx, size=want[c] - avail[c], replace=True) if want[c] > avail[c] \
                else np.empty(0, np.int64)
            picks.append(np.concatenate([idx, extra]))
    order = np.sort(np.concatenate(picks), kind="stable")
    ids = None
    if mode == "up_with_replacement":
        seen, ids = {}, []
        for i in dataset.ids[order]:
            k = seen.get(i, 0)
            seen[i] = k + 1
            ids.append(i if k == 0 else f"{i}#r{k}")
    out = dataset.take(order, ids=ids)
    check_label_shift(dataset, out, "stratified resampling")
    return out


# ---------------------------------------------------------------------------
# matched controls
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchResult:
    controls: Dataset
    pairs: tuple[tuple[str, str], ...]
    shortfall: int = 0


def _as_dataset(records):
    if isinstance(records, Dataset):
        return records
    return Dataset.from_records(list(records))


def matched_controls(cases, controls, attributes, seed=0):
    """Greedy one-to-one nearest-neighbour controls for each case.

    Continuous attributes are standardised with the pooled mean and standard
    deviation; each categorical mismatch adds 1 to the squared distance.
    Cases are processed in ascending id order and each takes the closest
    control still available, ties going to a seeded random order. When the
    pool runs out, the remaining cases go unmatched and a warning is issued.
    """
    cases, controls = _as_dataset(cases), _as_dataset(controls)
    if not attributes:
        raise ValidationError("matched_controls needs at least one matching attribute")
    if len(controls) == 0:
        raise ValidationError("control pool is empty")
    names = [getattr(a, "name", a) for a in attributes]
    m = len(controls)
    d_cases = np.zeros((len(cases), 0))
    d_ctrl = np.zeros((m, 0))
    cat_cases, cat_ctrl = [], []
    for name in names:
        for ds, who in ((cases, "case"), (controls, "control")):
            if name not in ds.attrs:
                raise ValidationError(f"{who} records lack attribute {name!r}")
        spec = controls.spec(name)
        a, b = cases.attrs[name], controls.attrs[name]
        if spec.kind == CONTINUOUS:
            if np.isnan(a).any() or np.isnan(b).any():
                raise ValidationError(f"attribute {name!r} is missing on some records")
            pooled = np.concatenate([a, b])
            sd = pooled.std()
            sd = sd if sd > 0 else 1.0
            mu = pooled.mean()
            d_cases = np.column_stack([d_cases, (a - mu) / sd])
            d_ctrl = np.column_stack([d_ctrl, (b - mu) / sd])
        else:
            if any(v is None for v in a) or any(v is None for v in b):
                raise ValidationError(f"attribute {name!r} is missing on some records")
            cat_cases.append(a)
            cat_ctrl.append(b)
    tie = derive_rng(seed, "matched_controls").permutation(m)
    used = np.zeros(m, dtype=bool)
    order = np.argsort(cases.ids.astype(str), kind="stable")
    chosen, pairs = [], []
    for i in order:
        if used.all():
            break
        d = ((d_ctrl - d_cases[i]) ** 2).sum(axis=1)
        for ca, cc in zip(cat_cases, cat_ctrl):
            d = d + (cc != ca[i])
        d = np.where(used, np.inf, d)
        best = d.min()
        ties = np.flatnonzero(d <= best + 1e-12)
        j = ties[np.argmin(tie[ties])]
        used[j] = True
        chosen.append(j)
        pairs.append((str(cases.ids[i]), str(controls.ids[j])))
    shortfall = len(cases) - len(chosen)
    if shortfall:
        warnings.warn(f"control pool exhausted: {shortfall} case(s) left unmatched",
                      UserWarning, stacklevel=2)
    return MatchResult(controls.take(np.sort(np.array(chosen, dtype=np.int64))), tuple(pairs),
                       shortfall)


# ---------------------------------------------------------------------------
# counterfactual augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SwapLexicon:
    """Unordered word pairs swapped as whole tokens, preserving case."""

    pairs: tuple[tuple[str, str], ...]
    _map: Mapping[str, str] = field(init=False, repr=False, compare=False)
    _pattern: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pairs = tuple((a.lower(), b.lower()) for a, b in self.pairs)
        if not pairs:
            raise ValidationError("lexicon needs at least one pair")
        mapping = {}
        for a, b in pairs:
            if a == b:
                raise ValidationError(f"pair ({a!r}, {b!r}) swaps a word with itself")
            for w in (a, b):
                if w in mapping:
                    raise ValidationError(f"word {w!r} appears in more than one pair")
            if not re.fullmatch(r"[\w'-]+", a) or not re.fullmatch(r"[\w'-]+", b):
                raise ValidationError(f"pair ({a!r}, {b!r}) is not two single tokens")
            mapping[a], mapping[b] = b, a
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "_map", mapping)
        words = sorted(mapping, key=lambda w: (-len(w), w))
        pattern = r"(?<![\w-])(" + "|".join(map(re.escape, words)) + r")(?![\w-])"
        object.__setattr__(self, "_pattern", re.compile(pattern, re.IGNORECASE))

    @classmethod
    def parse(cls, text):
        """Two whitespace-separated words per line; blank lines and '#' comments skipped."""
        pairs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected two columns, found {len(parts)}", lineno)
            pairs.append((parts[0], parts[1]))
        return cls(tuple(pairs))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    @classmethod
    def default(cls):
        """The bundled English gendered word pairs."""
        text = resources.files("biaslens").joinpath("data/gendered_pairs.txt").read_text("utf-8")
        return cls.parse(text)

    def partner(self, word):
        return self._map[word.lower()]

    def hits(self, text):
        return len(self._pattern.findall(text or ""))

    def swap(self, text):
        """Swap every lexicon word for its partner.

        >>> SwapLexicon((("he", "she"),)).swap("He is a doctor")
        'She is a doctor'
        """
        def repl(m):
            word = m.group(0)
            new = self._map[word.lower()]
            if word.isupper() and len(word) > 1:
                return new.upper()
            if word[0].isupper():
                return new[0].upper() + new[1:]
            return new
        return self._pattern.sub(repl, text)


def counterfactual_augment(dataset, lexicon, attribute_flip=None):
    """Append a word-swapped copy of every record whose text mentions a lexicon word.

    `attribute_flip` maps attribute name -> {value: counterfactual value}; the
    copy carries the flipped value (unlisted values are kept). Copies get the
    id ``<original id>::cf`` and follow all original records.
    """
    if dataset.text is None:
        raise ValidationError("counterfactual augmentation needs records with text")
    flips = {k: dict(v) for k, v in (attribute_flip or {}).items()}
    for name in flips:
        if name not in dataset.attrs:
            raise ValidationError(f"cannot flip unknown attribute {name!r}")
    hit = np.array([t is not None and lexicon.hits(t) > 0 for t in dataset.text], dtype=bool)
    if not hit.any():
        return dataset
    copies = dataset.take(hit)
    new_attrs = {}
    for name, col in copies.attrs.items():
        if name in flips:
            new_attrs[name] = [flips[name].get(v, v) for v in col]
        else:
            new_attrs[name] = list(col)
    copies = copies.with_columns(
        ids=[f"{i}::cf" for i in copies.ids],
        text=[lexicon.swap(t) for t in copies.text],
        attrs=new_attrs)
    out = Dataset.concat([dataset, copies])
    check_label_shift(dataset, out, "counterfactual augmentation")
    return out


# ---------------------------------------------------------------------------
# post-hoc threshold matching
# ---------------------------------------------------------------------------

def threshold_match(scores, groups, ideal_positive_rates):
    """Per-cell score thresholds whose admission rate meets an ideal positive rate.

    A record is admitted when ``score >= threshold``. Each cell admits the
    fewest records whose share reaches the rate, ``k = ceil(rate * n_c)``, so
    the threshold is the k-th highest score (``+inf`` when k = 0). Ties at the
    threshold score admit every tied record.

    >>> threshold_match([1, 2, 3, 4], ["a"] * 4, {"a": 0.5})
    {'a': 3.0}
    """
    scores = np.asarray(scores, dtype=float)
    groups = np.asarray(list(groups), dtype=object)
    if scores.shape != groups.shape:
        raise ValidationError("scores and groups differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    out = {}
    for cell, rate in ideal_positive_rates.items():
        rate = float(rate)
        if not 0.0 <= rate <= 1.0:
            raise ValidationError(f"rate for cell {cell!r} must lie in [0, 1]")
        s = scores[groups == cell]
        if s.size == 0:
            raise EmptyDistributionError(f"cell {cell!r} has no scores")
        k = int(math.ceil(rate * s.size - 1e-9))
        out[cell] = math.inf if k == 0 else float(np.sort(s)[::-1][k - 1])
    return out


def apply_thresholds(scores, groups, thresholds):
    scores = np.asarray(scores, dtype=float)
    groups = list(groups)
    return np.array([s >= thresholds[g] for s, g in zip(scores, groups)], dtype=bool)
