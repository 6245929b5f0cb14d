"""Prediction records, datasets, attribute binning, and audit configuration.

A :class:`Dataset` is stored column-wise (one numpy array per field) so the
statistics code can work on whole columns; :attr:`Dataset.records` gives the
row view when one is needed.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, ValidationError

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
OUTCOME_KINDS = (CATEGORICAL, CONTINUOUS)
SPLITS = ("source", "target")


def _readonly(arr):
    arr.flags.writeable = False
    return arr


def _object_array(values):
    out = np.empty(len(values), dtype=object)
    out[:] = list(values)
    return out


# ---------------------------------------------------------------------------
# records and attribute specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PredictionRecord:
    id: str
    y_true: Any
    y_pred: Any
    attrs: Mapping[str, Any]
    split: str = "source"
    text: str | None = None
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "attrs", MappingProxyType(dict(self.attrs)))


@dataclass(frozen=True)
class Binning:
    strategy: str  # "quantile" or "fixed-edges"
    n_bins: int | None = None
    edges: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.strategy == "quantile":
            if not isinstance(self.n_bins, int) or self.n_bins < 1:
                raise ValidationError("quantile binning needs a positive integer n_bins")
        elif self.strategy == "fixed-edges":
            if self.edges is None or len(self.edges) < 2:
                raise ValidationError("fixed-edges binning needs at least two edges")
            edges = tuple(float(e) for e in self.edges)
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValidationError("bin edges must be strictly increasing")
            object.__setattr__(self, "edges", edges)
        else:
            raise ValidationError(f"unknown binning strategy {self.strategy!r}")

    @classmethod
    def from_mapping(cls, d):
        if "edges" in d or d.get("strategy") == "fixed-edges":
            return cls("fixed-edges", edges=tuple(d["edges"]))
        return cls("quantile", n_bins=int(d["n_bins"]))

    def to_mapping(self):
        if self.strategy == "quantile":
            return {"strategy": "quantile", "n_bins": self.n_bins}
        return {"strategy": "fixed-edges", "edges": list(self.edges)}


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: str
    binning: Binning | None = None

    def __post_init__(self):
        if self.kind not in OUTCOME_KINDS:
            raise ValidationError(f"attribute {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL and self.binning is not None:
            raise ValidationError(f"categorical attribute {self.name!r} must not carry a binning")

    def require_binning(self):
        if self.kind == CONTINUOUS and self.binning is None:
            raise ValidationError(
                f"continuous attribute {self.name!r} needs a binning spec before estimation")


def _bin_labels(edges):
    for digits in (6, 10, 17):
        labels = []
        for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
            close = "]" if i == len(edges) - 2 else ")"
            labels.append(f"[{lo:.{digits}g}, {hi:.{digits}g}{close}")
        if len(set(labels)) == len(labels):
            return tuple(labels)
    return tuple(labels)


@dataclass(frozen=True)
class Cells:
    """Ordered attribute cells plus the rule that maps raw values onto them."""

    attribute: str
    keys: tuple[str, ...]
    edges: tuple[float, ...] | None = None

    def __len__(self):
        return len(self.keys)

    def encode(self, values):
        """Integer cell code per value; -1 marks a missing value or unknown category."""
        if self.edges is not None:
            v = np.asarray(values, dtype=float)
            codes = np.searchsorted(np.asarray(self.edges[1:-1]), v, side="right")
            codes = codes.astype(np.int64)
            codes[np.isnan(v)] = -1
            return codes
        index = {k: i for i, k in enumerate(self.keys)}
        return np.fromiter((index.get(x, -1) if x is not None else -1 for x in values),
                           dtype=np.int64, count=len(values))


def fit_cells(spec, *value_arrays):
    """Build the cell layout for `spec` from one or more value columns.

    Quantile edges are computed on the pooled non-missing values, so datasets
    compared against each other share one layout. Values outside fixed edges
    fall into the first or last bin.
    """
    if spec.kind == CATEGORICAL:
        seen = set()
        for arr in value_arrays:
            seen.update(x for x in arr if x is not None)
        return Cells(spec.name, tuple(sorted(seen)))
    spec.require_binning()
    if spec.binning.strategy == "fixed-edges":
        edges = spec.binning.edges
    else:
        pooled = np.concatenate([np.asarray(a, dtype=float) for a in value_arrays])
        pooled = pooled[~np.isnan(pooled)]
        if pooled.size == 0:
            return Cells(spec.name, ())
        qs = np.quantile(pooled, np.linspace(0.0, 1.0, spec.binning.n_bins + 1))
        edges = tuple(float(e) for e in np.unique(qs))
        if len(edges) == 1:
            edges = edges * 2
    return Cells(spec.name, _bin_labels(edges), tuple(edges))


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

def _outcome_kind_of(value):
    if isinstance(value, bool) or isinstance(value, str):
        return CATEGORICAL
    if isinstance(value, (int, float, np.integer, np.floating)):
        return CONTINUOUS
    return None


def _norm_categorical(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return value


class Dataset:
    """Immutable, column-oriented collection of prediction records."""

    def __init__(self, ids, y_true, y_pred, split, attrs, outcome_kind=CATEGORICAL,
                 text=None, weight=None, attribute_specs=None):
        n = len(ids)
        self.outcome_kind = outcome_kind
        if outcome_kind not in OUTCOME_KINDS:
            raise ValidationError(f"unknown outcome kind {outcome_kind!r}")
        self.ids = _readonly(_object_array([str(i) for i in ids]))
        if len(set(self.ids.tolist())) != n:
            seen, dupes = set(), []
            for i in self.ids:
                if i in seen:
                    dupes.append(i)
                seen.add(i)
            raise ValidationError(f"duplicate record ids: {sorted(set(dupes))[:5]}")
        if outcome_kind == CATEGORICAL:
            self.y_true = _readonly(_object_array([_norm_categorical(v) for v in y_true]))
            self.y_pred = _readonly(_object_array([_norm_categorical(v) for v in y_pred]))
            for arr in (self.y_true, self.y_pred):
                if any(not isinstance(v, str) for v in arr):
                    raise ValidationError("categorical outcomes must be strings")
        else:
            self.y_true = _readonly(np.asarray(y_true, dtype=float).copy())
            self.y_pred = _readonly(np.asarray(y_pred, dtype=float).copy())
            if not (np.all(np.isfinite(self.y_true)) and np.all(np.isfinite(self.y_pred))):
                raise ValidationError("continuous outcomes must be finite")
        if len(self.y_true) != n or len(self.y_pred) != n:
            raise ValidationError("column lengths differ")
        self.split = _readonly(_object_array(list(split)))
        bad = set(self.split.tolist()) - set(SPLITS)
        if bad:
            raise ValidationError(f"unknown split values {sorted(map(str, bad))}")
        if weight is None:
            self.weight = _readonly(np.ones(n))
        else:
            w = np.asarray(weight, dtype=float).copy()
            if w.shape != (n,) or not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValidationError("weights must be finite and non-negative")
            self.weight = _readonly(w)
        if text is None:
            self.text = None
        else:
            self.text = _readonly(_object_array(list(text)))
            if len(self.text) != n:
                raise ValidationError("column lengths differ")

        given = {s.name: s for s in (attribute_specs or ())}
        cols, specs = {}, []
        for name in sorted(attrs):
            raw = list(attrs[name])
            if len(raw) != n:
                raise ValidationError(f"attribute {name!r}: column length differs")
            kinds = {_outcome_kind_of(v) for v in raw if v is not None
                     and not (isinstance(v, float) and math.isnan(v))}
            if None in kinds:
                raise ValidationError(f"attribute {name!r}: unsupported value type")
            if len(kinds) > 1:
                raise ValidationError(f"attribute {name!r}: mixes categorical and continuous values")
            spec = given.get(name)
            kind = kinds.pop() if kinds else (spec.kind if spec else CATEGORICAL)
            if spec is not None and spec.kind != kind:
                raise ValidationError(f"attribute {name!r}: declared {spec.kind}, data is {kind}")
            if kind == CATEGORICAL:
                col = _object_array([None if v is None or (isinstance(v, float) and math.isnan(v))
                                     else _norm_categorical(v) for v in raw])
            else:
                col = np.array([np.nan if v is None else float(v) for v in raw], dtype=float)
                if np.any(np.isinf(col)):
                    raise ValidationError(f"attribute {name!r}: continuous values must be finite")
            cols[name] = _readonly(col)
            specs.append(spec or AttributeSpec(name, kind))
        self.attrs = MappingProxyType(cols)
        self.attribute_specs = tuple(specs)

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_records(cls, records, outcome_kind=None, attribute_specs=None):
        records = list(records)
        if outcome_kind is None:
            kinds = {_outcome_kind_of(r.y_true) for r in records} | {
                _outcome_kind_of(r.y_pred) for r in records}
            if None in kinds:
                raise ValidationError("unsupported outcome value type")
            if len(kinds) > 1:
                raise ValidationError("records mix categorical and continuous outcomes")
            outcome_kind = kinds.pop() if kinds else CATEGORICAL
        names = sorted({k for r in records for k in r.attrs})
        attrs = {k: [r.attrs.get(k) for r in records] for k in names}
        texts = [r.text for r in records]
        return cls(
            [r.id for r in records], [r.y_true for r in records], [r.y_pred for r in records],
            [r.split for r in records], attrs, outcome_kind=outcome_kind,
            text=texts if any(t is not None for t in texts) else None,
            weight=[r.weight for r in records], attribute_specs=attribute_specs)

    def _replace(self, **changes):
        kw = dict(ids=self.ids, y_true=self.y_true, y_pred=self.y_pred, split=self.split,
                  attrs=dict(self.attrs), outcome_kind=self.outcome_kind, text=self.text,
                  weight=self.weight, attribute_specs=self.attribute_specs)
        kw.update(changes)
        return Dataset(**kw)

    # -- views --------------------------------------------------------------
    def __len__(self):
        return len(self.ids)

    def __repr__(self):
        return (f"Dataset(n={len(self)}, outcome_kind={self.outcome_kind!r}, "
                f"attributes={list(self.attrs)})")

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.outcome_kind != other.outcome_kind or len(self) != len(other)
                or list(self.attrs) != list(other.attrs)):
            return False
        same = (np.array_equal(self.ids, other.ids) and np.array_equal(self.split, other.split)
                and np.array_equal(self.weight, other.weight)
                and np.array_equal(self.y_true, other.y_true)
                and np.array_equal(self.y_pred, other.y_pred))
        if not same:
            return False
        for k, col in self.attrs.items():
            if col.dtype == object:
                if col.tolist() != other.attrs[k].tolist():
                    return False
            elif not np.array_equal(col, other.attrs[k], equal_nan=True):
                return False
        texts = (self.text.tolist() if self.text is not None else [None] * len(self),
                 other.text.tolist() if other.text is not None else [None] * len(other))
        return texts[0] == texts[1]

    __hash__ = None

    def record(self, i):
        attrs = {}
        for k, col in self.attrs.items():
            v = col[i]
            if v is None or (isinstance(v, float) and math.isnan(v)):
                continue
            attrs[k] = float(v) if col.dtype != object else v
        yt, yp = self.y_true[i], self.y_pred[i]
        if self.outcome_kind == CONTINUOUS:
            yt, yp = float(yt), float(yp)
        return PredictionRecord(
            id=self.ids[i], y_true=yt, y_pred=yp, attrs=attrs, split=self.split[i],
            text=None if self.text is None else self.text[i], weight=float(self.weight[i]))

    @property
    def records(self):
        return tuple(self.record(i) for i in range(len(self)))

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))

    def spec(self, name):
        for s in self.attribute_specs:
            if s.name == name:
                return s
        raise ValidationError(f"attribute {name!r} not present in dataset")

    def has_attribute(self, name):
        return name in self.attrs

    def outcome_support(self, fields=("y_true", "y_pred")):
        if self.outcome_kind != CATEGORICAL:
            raise ValidationError("outcome support is only defined for categorical outcomes")
        labels = set()
        for f in fields:
            labels.update(getattr(self, f).tolist())
        return tuple(sorted(labels))

    @property
    def is_weighted(self):
        return bool(np.any(self.weight != 1.0))

    # -- derived datasets ---------------------------------------------------
    def take(self, indices, ids=None):
        """Subset (or repeat) records; repeated indices need fresh `ids`."""
        idx = np.asarray(indices)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return self._replace(
            ids=self.ids[idx] if ids is None else ids, y_true=self.y_true[idx], y_pred=self.y_pred[idx],
            split=self.split[idx], attrs={k: v[idx] for k, v in self.attrs.items()},
            text=None if self.text is None else self.text[idx], weight=self.weight[idx])

    def filter_split(self, split):
        if split == "both":
            return self
        if split not in SPLITS:
            raise ValidationError(f"unknown split {split!r}")
        return self.take(self.split == split)

    def with_weights(self, weight):
        return self._replace(weight=weight)

    def with_attribute_specs(self, specs):
        merged = {s.name: s for s in self.attribute_specs}
        merged.update({s.name: s for s in specs})
        return self._replace(attribute_specs=tuple(merged.values()))

    def with_columns(self, **columns):
        return self._replace(**columns)

    @staticmethod
    def concat(datasets):
        datasets = list(datasets)
        if not datasets:
            return Dataset([], [], [], [], {})
        kinds = {d.outcome_kind for d in datasets}
        if len(kinds) != 1:
            raise ValidationError("cannot concatenate datasets with different outcome kinds")
        names = sorted({k for d in datasets for k in d.attrs})
        attrs = {}
        for k in names:
            vals = []
            for d in datasets:
                if k in d.attrs:
                    vals.extend(d.attrs[k].tolist())
                else:
                    vals.extend([None] * len(d))
            attrs[k] = vals
        has_text = any(d.text is not None for d in datasets)
        specs = {}
        for d in datasets:
            for s in d.attribute_specs:
                specs.setdefault(s.name, s)
        return Dataset(
            np.concatenate([d.ids for d in datasets]),
            np.concatenate([d.y_true for d in datasets]),
            np.concatenate([d.y_pred for d in datasets]),
            np.concatenate([d.split for d in datasets]), attrs, outcome_kind=kinds.pop(),
            text=(sum((d.text.tolist() if d.text is not None else [None] * len(d)
                       for d in datasets), []) if has_text else None),
            weight=np.concatenate([d.weight for d in datasets]),
            attribute_specs=tuple(specs.values()))


# ---------------------------------------------------------------------------
# parsing and serialization
# ---------------------------------------------------------------------------

def _read_text(stream):
    if isinstance(stream, (bytes, bytearray)):
        data = bytes(stream)
    elif isinstance(stream, str):
        return stream
    else:
        data = stream.read()
        if isinstance(data, str):
            return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"input is not valid UTF-8: {exc}") from None


def _jsonl_record(obj, line):
    if not isinstance(obj, dict):
        raise ParseError("each line must be a JSON object", line)
    for key in ("id", "y_true", "y_pred"):
        if key not in obj:
            raise ParseError(f"missing field {key!r}", line)
    rid = obj["id"]
    if not isinstance(rid, str):
        raise ParseError("id must be a string", line)
    attrs = obj.get("attrs", {})
    if not isinstance(attrs, dict):
        raise ParseError("attrs must be an object", line)
    for k, v in attrs.items():
        if v is not None and _outcome_kind_of(v) is None:
            raise ParseError(f"attribute {k!r} has unsupported value {v!r}", line)
        if isinstance(v, float) and not math.isfinite(v):
            raise ParseError(f"attribute {k!r} must be finite", line)
    split = obj.get("split", "source")
    if split not in SPLITS:
        raise ParseError(f"split must be one of {SPLITS}", line)
    weight = obj.get("weight", 1.0)
    if isinstance(weight, bool) or not isinstance(weight, (int, float)) or weight < 0:
        raise ParseError("weight must be a non-negative number", line)
    text = obj.get("text")
    if text is not None and not isinstance(text, str):
        raise ParseError("text must be a string", line)
    kinds = {_outcome_kind_of(obj["y_true"]), _outcome_kind_of(obj["y_pred"])}
    if None in kinds:
        raise ParseError("y_true/y_pred must be strings or numbers", line)
    if len(kinds) > 1:
        raise ValidationError(f"line {line}: y_true and y_pred have different outcome kinds")
    return PredictionRecord(rid, obj["y_true"], obj["y_pred"],
                            {k: v for k, v in attrs.items() if v is not None},
                            split, text, float(weight))


def _parse_jsonl(text):
    records = []
    kind = None
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line_no) from None
        rec = _jsonl_record(obj, line_no)
        k = _outcome_kind_of(rec.y_true)
        if kind is None:
            kind = k
        elif k != kind:
            raise ValidationError(f"line {line_no}: mixed outcome kinds ({kind} then {k})")
        records.append(rec)
    return Dataset.from_records(records, outcome_kind=kind or CATEGORICAL)


def _attribute_columns(column_map):
    attrs = column_map.get("attributes", {})
    if isinstance(attrs, (list, tuple)):
        return {a: (a, None) for a in attrs}
    out = {}
    for name, v in attrs.items():
        if isinstance(v, str):
            out[name] = (name, v)
        else:
            out[name] = (v.get("column", name), v.get("kind"))
    return out


def _parse_csv(text, column_map):
    if column_map is None:
        raise ParseError("csv input requires a column map")
    for key in ("id", "y_true", "y_pred", "split"):
        if key not in column_map:
            raise ParseError(f"column map must name the {key!r} column")
    outcome_kind = column_map.get("outcome_kind", CATEGORICAL)
    if outcome_kind not in OUTCOME_KINDS:
        raise ParseError(f"unknown outcome_kind {outcome_kind!r}")
    attr_cols = _attribute_columns(column_map)
    reader = csv.DictReader(io.StringIO(text, newline=""))
    if reader.fieldnames is None:
        return Dataset([], [], [], [], {}, outcome_kind=outcome_kind)
    needed = [column_map[k] for k in ("id", "y_true", "y_pred", "split")]
    needed += [c for c, _ in attr_cols.values()]
    for opt in ("text", "weight"):
        if column_map.get(opt):
            needed.append(column_map[opt])
    missing = [c for c in needed if c not in reader.fieldnames]
    if missing:
        raise ParseError(f"header lacks columns {missing}", 1)

    def outcome(raw, line):
        if outcome_kind == CATEGORICAL:
            return raw
        try:
            v = float(raw)
        except ValueError:
            raise ParseError(f"outcome {raw!r} is not a number", line) from None
        if not math.isfinite(v):
            raise ParseError("outcome must be finite", line)
        return v

    records = []
    for row in reader:
        line = reader.line_num
        if None in row:
            raise ParseError("row has more fields than the header", line)
        attrs = {}
        for name, (col, kind) in attr_cols.items():
            raw = row[col]
            if raw is None or raw == "":
                continue
            if kind == CONTINUOUS:
                try:
                    val = float(raw)
                except ValueError:
                    raise ParseError(f"attribute {name!r} value {raw!r} is not a number",
                                     line) from None
                if not math.isfinite(val):
                    raise ParseError(f"attribute {name!r} must be finite", line)
                attrs[name] = val
            else:
                attrs[name] = raw
        split = row[column_map["split"]]
        if split not in SPLITS:
            raise ParseError(f"split must be one of {SPLITS}", line)
        weight = 1.0
        if column_map.get("weight") and row[column_map["weight"]] not in ("", None):
            try:
                weight = float(row[column_map["weight"]])
            except ValueError:
                raise ParseError("weight is not a number", line) from None
            if not (math.isfinite(weight) and weight >= 0):
                raise ParseError("weight must be finite and non-negative", line)
        text_val = None
        if column_map.get("text"):
            text_val = row[column_map["text"]]
            if text_val == "":
                text_val = None
        records.append(PredictionRecord(
            row[column_map["id"]], outcome(row[column_map["y_true"]], line),
            outcome(row[column_map["y_pred"]], line), attrs, split, text_val, weight))
    specs = [AttributeSpec(name, kind) for name, (_, kind) in attr_cols.items() if kind]
    try:
        return Dataset.from_records(records, outcome_kind=outcome_kind, attribute_specs=specs)
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from None


def parse_records(stream, format="jsonl", column_map=None):
    """Parse prediction records from a byte stream (or bytes).

    JSONL lines look like::

        {"id": "r1", "y_true": "pos", "y_pred": "neg", "attrs": {"g": "a"}, "split": "source"}

    String outcomes are categorical, numeric outcomes continuous. CSV input
    needs a column map naming the id, y_true, y_pred, and split columns plus
    the attribute columns (``{"attributes": {"age": "continuous"}}``).
    """
    text = _read_text(stream)
    if format == "jsonl":
        return _parse_jsonl(text)
    if format == "csv":
        return _parse_csv(text, column_map)
    raise ParseError(f"unknown format {format!r}")


def load_dataset(path, format=None, column_map=None):
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    with open(path, "rb") as fh:
        return parse_records(fh, format, column_map)


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


def serialize_records(dataset, format="jsonl"):
    """Inverse of :func:`parse_records`; returns bytes."""
    if format == "jsonl":
        lines = []
        for rec in dataset:
            obj = {"id": rec.id, "y_true": _json_value(rec.y_true),
                   "y_pred": _json_value(rec.y_pred),
                   "attrs": {k: _json_value(v) for k, v in sorted(rec.attrs.items())},
                   "split": rec.split}
            if rec.text is not None:
                obj["text"] = rec.text
            if rec.weight != 1.0:
                obj["weight"] = rec.weight
            lines.append(json.dumps(obj, ensure_ascii=False))
        return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")
    if format == "csv":
        buf = io.StringIO(newline="")
        names = list(dataset.attrs)
        header = ["id", "y_true", "y_pred", "split", "weight"] + (
            ["text"] if dataset.text is not None else []) + names
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(dataset)):
            yt, yp = dataset.y_true[i], dataset.y_pred[i]
            if dataset.outcome_kind == CONTINUOUS:
                yt, yp = repr(float(yt)), repr(float(yp))
            row = [dataset.ids[i], yt, yp, dataset.split[i], repr(float(dataset.weight[i]))]
            if dataset.text is not None:
                row.append(dataset.text[i] if dataset.text[i] is not None else "")
            for k in names:
                v = dataset.attrs[k][i]
                if dataset.attrs[k].dtype == object:
                    row.append("" if v is None else v)
                else:
                    row.append("" if math.isnan(v) else repr(float(v)))
            writer.writerow(row)
        return buf.getvalue().encode("utf-8")
    raise ParseError(f"unknown format {format!r}")


def csv_column_map(dataset):
    """Column map matching what :func:`serialize_records` writes for csv."""
    cmap = {"id": "id", "y_true": "y_true", "y_pred": "y_pred", "split": "split",
            "weight": "weight", "outcome_kind": dataset.outcome_kind,
            "attributes": {s.name: s.kind for s in dataset.attribute_specs}}
    if dataset.text is not None:
        cmap["text"] = "text"
    return cmap


# ---------------------------------------------------------------------------
# audit configuration
# ---------------------------------------------------------------------------

IDEAL_KINDS = ("explicit", "uniform", "empirical", "toward_uniform")


@dataclass(frozen=True)
class IdealSpec:
    """How to obtain the ideal P(Y|A) for an audited attribute.

    ``reference`` for the empirical kind is ``"trusted"``, ``"target"``, or a
    dataset path; ``base`` for toward_uniform names the field whose source
    estimate is pulled toward uniform.
    """

    kind: str
    table: Mapping[str, Mapping[str, float]] | None = None
    reference: str | None = None
    field: str = "y_true"
    lam: float | None = None
    base: str = "y_true"

    def __post_init__(self):
        if self.kind not in IDEAL_KINDS:
            raise ValidationError(f"unknown ideal kind {self.kind!r}")
        if self.kind == "explicit" and not self.table:
            raise ValidationError("explicit ideal needs a table")
        if self.kind == "toward_uniform" and (self.lam is None or not 0.0 <= self.lam <= 1.0):
            raise ValidationError("toward_uniform needs lambda in [0, 1]")
        if self.kind == "empirical" and not self.reference:
            raise ValidationError("empirical ideal needs a reference")

    @classmethod
    def from_mapping(cls, d):
        d = dict(d)
        lam = d.pop("lambda", d.pop("lam", None))
        return cls(kind=d.get("kind", "explicit"), table=d.get("table"),
                   reference=d.get("reference"), field=d.get("field", "y_true"),
                   lam=None if lam is None else float(lam), base=d.get("base", "y_true"))

    def to_mapping(self):
        out = {"kind": self.kind}
        if self.table is not None:
            out["table"] = {c: dict(row) for c, row in self.table.items()}
        if self.reference is not None:
            out["reference"] = self.reference
        if self.kind == "empirical":
            out["field"] = self.field
        if self.kind == "toward_uniform":
            out["lambda"] = self.lam
            out["base"] = self.base
        return out


@dataclass(frozen=True)
class AuditConfig:
    attributes: tuple[str, ...]
    ideal: Mapping[str, IdealSpec] = field(default_factory=dict)
    alpha: float = 0.05
    effect_floor: float = 0.01
    n_permutations: int = 1000
    seed: int = 0
    smoothing_alpha: float = 0.5
    binning: Mapping[str, Binning] = field(default_factory=dict)
    weat_specs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError("alpha must lie in (0, 1)")
        if self.n_permutations < 100:
            raise ValidationError("n_permutations must be at least 100")
        if self.smoothing_alpha < 0:
            raise ValidationError("smoothing_alpha must be non-negative")
        if self.effect_floor < 0:
            raise ValidationError("effect_floor must be non-negative")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    def ideal_for(self, attribute):
        return self.ideal.get(attribute, self.ideal.get("*"))

    def attribute_spec(self, dataset, name):
        """Dataset spec for `name`, with binning from this config when given."""
        spec = dataset.spec(name)
        if name in self.binning and spec.kind == CONTINUOUS:
            return AttributeSpec(name, spec.kind, self.binning[name])
        return spec

    def replace(self, **changes):
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return AuditConfig(**kw)

    def to_mapping(self):
        return {
            "attributes": list(self.attributes),
            "ideal": {k: v.to_mapping() for k, v in sorted(self.ideal.items())},
            "alpha": self.alpha, "effect_floor": self.effect_floor,
            "n_permutations": self.n_permutations, "seed": int(self.seed),
            "smoothing_alpha": self.smoothing_alpha,
            "binning": {k: v.to_mapping() for k, v in sorted(self.binning.items())},
            "weat_specs": list(self.weat_specs),
        }


def config_from_mapping(d):
    """Build an :class:`AuditConfig` from a parsed JSON/TOML document."""
    if "attributes" not in d:
        raise ValidationError("config must list the attributes to audit")
    ideal_raw = d.get("ideal") or {}
    if "kind" in ideal_raw:
        ideal = {"*": IdealSpec.from_mapping(ideal_raw)}
    else:
        ideal = {k: IdealSpec.from_mapping(v) for k, v in ideal_raw.items()}
    binning = {k: Binning.from_mapping(v) for k, v in (d.get("binning") or {}).items()}
    kwargs = {k: d[k] for k in ("alpha", "effect_floor", "n_permutations", "seed",
                                "smoothing_alpha") if k in d}
    if "n_permutations" in kwargs:
        kwargs["n_permutations"] = int(kwargs["n_permutations"])
    return AuditConfig(attributes=tuple(d["attributes"]), ideal=ideal, binning=binning,
                       weat_specs=tuple(d.get("weat_specs") or ()), **kwargs)


def read_document(path):
    """Parse a JSON or TOML document (chosen by file suffix)."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            return tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None
    try:
        return json.loads(raw.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from None


def load_config(path):
    return config_from_mapping(read_document(path))


@dataclass(frozen=True)
class Finding:
    kind: str
    attribute: str
    message: str


def validate_config(config, dataset):
    """Check a config against a dataset; problems are returned, never raised."""
    findings = []
    observed = ()
    if dataset.outcome_kind == CATEGORICAL and len(dataset):
        observed = dataset.outcome_support()
    for name in config.attributes:
        if name not in dataset.attrs:
            findings.append(Finding("missing-attribute", name,
                                    f"attribute {name!r} does not occur in the dataset"))
            continue
        spec = dataset.spec(name)
        if spec.kind == CONTINUOUS and name not in config.binning and spec.binning is None:
            findings.append(Finding("binning-required", name,
                                    f"continuous attribute {name!r} has no binning"))
        if spec.kind == CATEGORICAL and name in config.binning:
            findings.append(Finding("binning-not-allowed", name,
                                    f"categorical attribute {name!r} must not be binned"))
        ideal = config.ideal_for(name)
        if ideal is not None and ideal.kind == "explicit" and observed:
            covered = set()
            for row in ideal.table.values():
                covered.update(row)
            missing = sorted(set(observed) - covered)
            if missing:
                findings.append(Finding(
                    "support-mismatch", name,
                    f"ideal table lacks observed outcome labels {missing}"))
            if spec.kind == CATEGORICAL:
                cells = {v for v in dataset.attrs[name] if v is not None}
                absent = sorted(cells - set(ideal.table))
                if absent:
                    findings.append(Finding(
                        "cell-mismatch", name, f"ideal table lacks attribute cells {absent}"))
    return findings
