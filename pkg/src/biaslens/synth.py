"""Synthetic scenarios with one controlled origin of bias.

Every scenario draws a clean population first: attribute cells in exact
proportions, a standard normal latent ``w`` per record, and gold labels set by
latent rank so each cell's positive rate equals its base rate exactly. A single
model then scores records as::

    score = (1 + k) * probit(r_a) + rho * w + sqrt(1 - rho**2) * eta

and predicts the positive label when ``score > 0``. With ``k = 0`` the
predicted rate in cell ``a`` equals ``r_a``; ``k > 0`` pushes every cell
away from one half, which is how overamplification is injected. Injections:

* ``label``: in the injected cell, negative gold labels flip to positive with
  probability equal to the strength, and the model learns the biased rate.
* ``selection``: the injected cell's share of the source sample grows by the
  strength, the other cells shrinking proportionally.
* ``overamp``: ``k`` equals the strength.
* ``compound``: selection and label together, both at the strength.

Independent random streams are used for each ingredient, so raising the
strength under a fixed seed changes only what the injection touches.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Mapping

import numpy as np

from ._rng import derive_rng
from .errors import InfeasibleError, ValidationError
from .model import CONTINUOUS, AttributeSpec, AuditConfig, Binning, Dataset, IdealSpec, fit_cells
from .stats import Explicit, apportion

ORIGINS = ("none", "label", "selection", "overamp", "compound")
PRESETS = ("wsj_effect", "kitchen", "mental_health", "hate_speech")

# strengths at which each injected origin is detected with high power at n = 10,000
CALIBRATED_STRENGTH = {"label": 0.3, "selection": 0.3, "overamp": 0.5, "compound": 0.3}

RHO = 0.8
POSITIVE, NEGATIVE = "pos", "neg"

_N01 = NormalDist()


def _probit(p):
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    return _N01.inv_cdf(p)


@dataclass(frozen=True)
class ScenarioSpec:
    origin: str = "none"
    n: int = 10_000
    attribute_cells: Mapping[str, float] = field(default_factory=lambda: {"a": 0.5, "b": 0.5})
    base_rates: Mapping[str, float] = field(default_factory=lambda: {"a": 0.3, "b": 0.7})
    injection_strength: float = 0.0
    preset: str | None = None
    seed: int = 0
    attribute: str = "group"
    injected_cell: str | None = None
    labels: tuple[str, str] = (POSITIVE, NEGATIVE)

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValidationError(f"unknown origin {self.origin!r}; expected one of {ORIGINS}")
        if self.preset is not None and self.preset not in PRESETS:
            raise ValidationError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ValidationError("scenario needs n >= 1 records")
        if self.injection_strength < 0:
            raise ValidationError("injection strength must be non-negative")
        object.__setattr__(self, "attribute_cells", dict(self.attribute_cells))
        object.__setattr__(self, "base_rates", dict(self.base_rates))
        object.__setattr__(self, "labels", tuple(self.labels))
        m = np.array(list(self.attribute_cells.values()), dtype=float)
        if m.size == 0 or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
            raise ValidationError("attribute_cells must be a probability table")
        if set(self.base_rates) != set(self.attribute_cells):
            raise ValidationError("base_rates and attribute_cells must name the same cells")
        if any(not 0.0 <= b <= 1.0 for b in self.base_rates.values()):
            raise ValidationError("base rates must lie in [0, 1]")
        if self.injected_cell is not None and self.injected_cell not in self.attribute_cells:
            raise ValidationError(f"injected cell {self.injected_cell!r} is not an attribute cell")
        if len(self.labels) != 2 or self.labels[0] == self.labels[1]:
            raise ValidationError("labels must be two distinct names (positive, negative)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    @property
    def cells(self):
        return tuple(self.attribute_cells)

    @property
    def target_cell(self):
        return self.injected_cell if self.injected_cell is not None else self.cells[0]

    @classmethod
    def from_mapping(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown scenario fields {sorted(unknown)}")
        kw = dict(d)
        if "labels" in kw:
            kw["labels"] = tuple(kw["labels"])
        if "n" in kw:
            if isinstance(kw["n"], bool) or not isinstance(kw["n"], int):
                raise ValidationError("n must be an integer")
        return cls(**kw)

    def to_mapping(self):
        return {
            "origin": self.origin, "n": int(self.n),
            "attribute_cells": dict(self.attribute_cells), "base_rates": dict(self.base_rates),
            "injection_strength": float(self.injection_strength), "preset": self.preset,
            "seed": int(self.seed), "attribute": self.attribute,
            "injected_cell": self.injected_cell, "labels": list(self.labels),
        }

    def replace(self, **changes):
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return ScenarioSpec(**kw)


@dataclass(frozen=True)
class Scenario:
    """Output of :func:`generate`.

    ``audit_config`` is a recommended configuration for auditing the scenario
    and ``calibration`` records any constants fitted during generation.
    """

    spec: ScenarioSpec
    source: Dataset
    target_reference: Dataset
    trusted_reference: Explicit | None
    audit_config: AuditConfig
    target_marginal: Mapping[str, float]
    calibration: Mapping[str, float] = field(default_factory=dict)

    def __iter__(self):  # unpack as (source, target_reference, trusted_reference)
        return iter((self.source, self.target_reference, self.trusted_reference))


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def skew_marginal(marginal, cell, strength):
    """Add `strength` to one cell's share and rescale the others to keep a simplex."""
    m = dict(marginal)
    new = m[cell] + strength
    if new > 1.0 + 1e-12:
        raise InfeasibleError(
            f"selection strength {strength} pushes cell {cell!r} share to {new:.4g} > 1")
    new = min(new, 1.0)
    rest = 1.0 - m[cell]
    out = {}
    for k, v in m.items():
        if k == cell:
            out[k] = new
        else:
            out[k] = 0.0 if rest <= 0 else v * (1.0 - new) / rest
    return out


def _cell_column(cells, counts, rng):
    col = np.repeat(np.arange(len(cells)), counts)
    return rng.permutation(col)


def _rank_labels(codes, w, rates):
    """Positive for the round(rate * n_a) largest latents within each cell."""
    y = np.zeros(codes.size, dtype=bool)
    for c, r in enumerate(rates):
        idx = np.flatnonzero(codes == c)
        k = int(round(r * idx.size))
        if k:
            top = idx[np.argsort(-w[idx], kind="stable")[:k]]
            y[top] = True
    return y


def _predict(codes, w, eta, rates, k):
    shift = np.array([(1.0 + k) * _probit(r) for r in rates])
    score = shift[codes] + RHO * w + math.sqrt(1.0 - RHO ** 2) * eta
    return score > 0


def _population(spec, marginal, n, stream, rates, k, flip_cell=None, flip=0.0):
    """Draw one sample: cells, latents, gold labels and model predictions."""
    cells = spec.cells
    counts = apportion(n, [marginal[c] for c in cells])
    codes = _cell_column(cells, counts, derive_rng(spec.seed, f"synth:{stream}:cells"))
    w = derive_rng(spec.seed, f"synth:{stream}:latent").standard_normal(n)
    eta = derive_rng(spec.seed, f"synth:{stream}:noise").standard_normal(n)
    u = derive_rng(spec.seed, f"synth:{stream}:flip").random(n)
    base = [spec.base_rates[c] for c in cells]
    y = _rank_labels(codes, w, base)
    learned = list(base)
    if flip_cell is not None and flip > 0:
        ci = cells.index(flip_cell)
        y = y | ((codes == ci) & (u < flip))
        learned[ci] = base[ci] + (1.0 - base[ci]) * flip
    yhat = _predict(codes, w, eta, rates if rates is not None else learned, k)
    return codes, y, yhat


def _dataset(spec, codes, y, yhat, split, prefix, extra_attrs=None):
    pos, neg = spec.labels
    cells = np.array(spec.cells, dtype=object)
    n = codes.size
    attrs = {spec.attribute: cells[codes]}
    attrs.update(extra_attrs or {})
    return Dataset([f"{prefix}{i:06d}" for i in range(n)],
                   np.where(y, pos, neg), np.where(yhat, pos, neg),
                   [split] * n, attrs)


def trusted_table(spec):
    pos, neg = spec.labels
    return {c: {pos: float(b), neg: float(1.0 - b)} for c, b in spec.base_rates.items()}


def _audit_config(spec, **overrides):
    kw = dict(attributes=(spec.attribute,),
              ideal={"*": IdealSpec("explicit", table=trusted_table(spec))},
              seed=int(spec.seed))
    kw.update(overrides)
    return AuditConfig(**kw)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate(spec):
    """Generate source data, a clean target sample and the trusted label table.

    Returns a :class:`Scenario`, which also unpacks as
    ``(source, target_reference, trusted_reference)``.
    """
    if spec.preset is not None:
        return _PRESET_BUILDERS[spec.preset](spec)
    s = float(spec.injection_strength)
    origin = spec.origin
    if origin in ("label", "compound") and s > 1.0:
        raise InfeasibleError(f"label strength {s} is a flip probability and must be <= 1")
    marginal = dict(spec.attribute_cells)
    if origin in ("selection", "compound"):
        src_marginal = skew_marginal(marginal, spec.target_cell, s)
    else:
        src_marginal = marginal
    k = s if origin == "overamp" else 0.0
    flip = s if origin in ("label", "compound") else 0.0

    codes, y, yhat = _population(spec, src_marginal, spec.n, "source", None, k,
                                 spec.target_cell, flip)
    source = _dataset(spec, codes, y, yhat, "source", "s")
    base = [spec.base_rates[c] for c in spec.cells]
    tcodes, ty, tyhat = _population(spec, marginal, spec.n, "target", base, k)
    target = _dataset(spec, tcodes, ty, tyhat, "target", "t")
    return Scenario(spec, source, target, Explicit(trusted_table(spec)), _audit_config(spec),
                    marginal, {"overamp_strength": k})


def _kitchen(spec):
    """Image-caption analogue: 'woman' in 58% of kitchen captions, predicted 63%."""
    base = ScenarioSpec(n=10_000, attribute="scene",
                        attribute_cells={"kitchen": 0.5, "other": 0.5},
                        base_rates={"kitchen": 0.58, "other": 0.42},
                        labels=("woman", "man"), seed=spec.seed, origin="overamp",
                        injected_cell="kitchen")
    target_rate = 0.63

    def predicted_rate(k):
        codes, _, yhat = _population(base, base.attribute_cells, base.n, "source", None, k)
        return float(yhat[codes == 0].mean())

    lo, hi = 0.0, 4.0
    k, rate = 0.0, predicted_rate(0.0)
    for _ in range(60):
        if abs(rate - target_rate) <= 5e-4:
            break
        k = 0.5 * (lo + hi)
        rate = predicted_rate(k)
        if rate < target_rate:
            lo = k
        else:
            hi = k
    sc = base.replace(injection_strength=k)
    codes, y, yhat = _population(sc, sc.attribute_cells, sc.n, "source", None, k)
    source = _dataset(sc, codes, y, yhat, "source", "s")
    tcodes, ty, tyhat = _population(sc, sc.attribute_cells, sc.n, "target", None, k)
    target = _dataset(sc, tcodes, ty, tyhat, "target", "t")
    # the shift is tiny in nats, so the recommended config lowers the effect floor
    config = _audit_config(sc, effect_floor=0.001)
    return Scenario(sc.replace(preset="kitchen"), source, target, Explicit(trusted_table(sc)),
                    config, dict(sc.attribute_cells),
                    {"overamp_strength": k, "predicted_rate": rate, "target_rate": target_rate,
                     "training_rate": float(y[codes == 0].mean())})


def _hate_speech(spec):
    """Annotation analogue: posts by group A labelled toxic at 0.40 against an expert 0.25."""
    sc = ScenarioSpec(origin="label", n=4_000, attribute="author_group",
                      attribute_cells={"A": 0.5, "B": 0.5}, base_rates={"A": 0.25, "B": 0.25},
                      labels=("toxic", "nontoxic"), injection_strength=0.2, injected_cell="A",
                      seed=spec.seed)
    out = generate(sc)
    return Scenario(sc.replace(preset="hate_speech"), out.source, out.target_reference,
                    out.trusted_reference, out.audit_config, out.target_marginal, out.calibration)


WSJ_EDGES = (18.0, 30.0, 40.0, 50.0, 60.0)
WSJ_TAGS = ("NOUN", "VERB", "ADJ")
WSJ_TAG_PROBS = (0.5, 0.3, 0.2)
WSJ_SOURCE_MEAN = 55.0


def wsj_error_rate(age):
    return np.minimum(0.05 + 0.01 * np.abs(age - WSJ_SOURCE_MEAN), 0.9)


def _wsj_effect(spec):
    """Tagger trained on older authors, applied to authors of every age."""
    n = 5_000
    lo, hi = WSJ_EDGES[0], WSJ_EDGES[-1]

    def sample(split, ages, prefix):
        m = ages.size
        tags = np.array(WSJ_TAGS, dtype=object)
        r = derive_rng(spec.seed, f"synth:wsj:{split}:tags")
        y = r.choice(len(WSJ_TAGS), size=m, p=WSJ_TAG_PROBS)
        err = derive_rng(spec.seed, f"synth:wsj:{split}:errors").random(m) < wsj_error_rate(ages)
        other = (y + derive_rng(spec.seed, f"synth:wsj:{split}:swap").integers(1, len(WSJ_TAGS), m)
                 ) % len(WSJ_TAGS)
        yhat = np.where(err, other, y)
        return Dataset([f"{prefix}{i:06d}" for i in range(m)], tags[y], tags[yhat],
                       [split] * m, {"age": np.round(ages, 1)})

    src_ages = np.clip(derive_rng(spec.seed, "synth:wsj:source:age").normal(WSJ_SOURCE_MEAN, 4.0, n),
                       lo, hi)
    tgt_ages = derive_rng(spec.seed, "synth:wsj:target:age").uniform(lo, hi, n)
    source = sample("source", src_ages, "s")
    target = sample("target", tgt_ages, "t")
    binning = Binning("fixed-edges", edges=WSJ_EDGES)
    keys = fit_cells(AttributeSpec("age", CONTINUOUS, binning), src_ages).keys
    table = {k: dict(zip(WSJ_TAGS, WSJ_TAG_PROBS)) for k in keys}
    config = AuditConfig(attributes=("age",), ideal={"*": IdealSpec("explicit", table=table)},
                         binning={"age": binning}, seed=int(spec.seed))
    widths = np.diff(WSJ_EDGES)
    marginal = dict(zip(keys, map(float, widths / widths.sum())))
    return Scenario(spec, source, target, Explicit(table), config, marginal,
                    {"source_age_mean": WSJ_SOURCE_MEAN})


MH_EDGES = (18.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0)


def _mental_health(spec):
    """Case-control analogue: older PTSD cases, a depression control pool of all ages."""
    n_cases, n_controls = 500, 3_000
    lo, hi = MH_EDGES[0], MH_EDGES[-1]
    r = derive_rng(spec.seed, "synth:mh:ages")
    case_age = np.clip(r.normal(52.0, 9.0, n_cases), lo, hi)
    ctrl_age = r.uniform(lo, hi, n_controls)
    g = derive_rng(spec.seed, "synth:mh:gender")
    case_gender = np.where(g.random(n_cases) < 0.6, "female", "male")
    ctrl_gender = np.where(g.random(n_controls) < 0.5, "female", "male")
    ids = [f"case{i:05d}" for i in range(n_cases)] + [f"ctrl{i:05d}" for i in range(n_controls)]
    y = ["ptsd"] * n_cases + ["depression"] * n_controls
    ages = np.round(np.concatenate([case_age, ctrl_age]), 1)
    gender = np.concatenate([case_gender, ctrl_gender])
    source = Dataset(ids, y, y, ["source"] * len(ids), {"age": ages, "gender": gender})
    cases = source.take(np.arange(n_cases)).with_columns(
        split=np.array(["target"] * n_cases, dtype=object))
    binning = Binning("fixed-edges", edges=MH_EDGES)
    config = AuditConfig(attributes=("age", "gender"), binning={"age": binning},
                         seed=int(spec.seed))
    return Scenario(spec, source, cases, None, config, {}, {})


_PRESET_BUILDERS = {
    "kitchen": _kitchen,
    "hate_speech": _hate_speech,
    "wsj_effect": _wsj_effect,
    "mental_health": _mental_health,
}


def preset(name, seed=0):
    return generate(ScenarioSpec(preset=name, seed=seed))


# ---------------------------------------------------------------------------
# power
# ---------------------------------------------------------------------------

def power_grid(origin, strengths, n_values, trials, seed=0, config=None, base=None):
    """Detection power of the check matching `origin` over a strength x n grid.

    Each trial generates a fresh scenario from a derived seed and runs
    :func:`biaslens.origins.diagnose`; power is the fraction of trials whose
    flagged origins include the injected one (any origin for ``"none"``).
    Returns a list of ``{"strength", "n", "power", "flag_rates"}`` rows.
    """
    from .origins import diagnose

    if trials < 50:
        raise ValidationError("power_grid needs at least 50 trials")
    if origin not in ORIGINS:
        raise ValidationError(f"unknown origin {origin!r}")
    wanted = {"label": {"label_bias"}, "selection": {"selection_bias"},
              "overamp": {"overamplification"}, "compound": {"label_bias", "selection_bias"},
              "none": None}[origin]
    base = base or ScenarioSpec()
    rows = []
    for s in strengths:
        for n in n_values:
            hits = 0
            counts = {"label_bias": 0, "selection_bias": 0, "overamplification": 0}
            for t in range(trials):
                tseed = int(derive_rng(seed, "power_grid", t).integers(0, 2**63 - 1))
                spec = base.replace(origin=origin, n=int(n), injection_strength=float(s),
                                    seed=tseed)
                sc = generate(spec)
                cfg = (config or sc.audit_config).replace(seed=tseed)
                dm = diagnose(sc.source, sc.target_reference, sc.trusted_reference,
                              spec.attribute, cfg)
                flagged = set(dm.flagged_origins)
                for o in counts:
                    counts[o] += o in flagged
                hits += bool(flagged) if wanted is None else wanted <= flagged
            rows.append({"strength": float(s), "n": int(n), "power": hits / trials,
                         "flag_rates": {o: c / trials for o, c in counts.items()}})
    return rows
