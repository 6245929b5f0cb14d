"""Semantic bias in embedding parameters: WEAT, masked log-probability, hard de-biasing."""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from ._rng import derive_rng, derive_seed
from .errors import DegenerateError, OutOfVocabularyError, ParseError, ValidationError
from .stats import DivergenceResult, resampling_pvalue

MASK = "[MASK]"
WEAT_EFFECT_FLOOR = 0.5


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

class EmbeddingSet:
    """Immutable word -> vector table with a shared dimensionality."""

    def __init__(self, words, vectors):
        words = tuple(str(w) for w in words)
        vectors = np.array(vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise ValidationError("vectors must be a (words x dim) matrix")
        if not np.all(np.isfinite(vectors)):
            raise ValidationError("vectors must be finite")
        index = {}
        for i, w in enumerate(words):
            if w in index:
                raise ValidationError(f"duplicate word {w!r}")
            index[w] = i
        norms = np.linalg.norm(vectors, axis=1)
        zero = [words[i] for i in np.flatnonzero(norms == 0)]
        if zero:
            raise ValidationError(f"zero-norm vectors for {zero[:5]}")
        vectors.flags.writeable = False
        self.words = words
        self.vectors = vectors
        self._index = index

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._index

    def __getitem__(self, word):
        return self.vectors[self._index[word]]

    def __eq__(self, other):
        return (isinstance(other, EmbeddingSet) and self.words == other.words
                and np.array_equal(self.vectors, other.vectors))

    def require(self, words):
        missing = sorted({w for w in words if w not in self._index})
        if missing:
            raise OutOfVocabularyError(missing)

    def matrix(self, words):
        self.require(words)
        return self.vectors[[self._index[w] for w in words]]

    def unit(self, words):
        m = self.matrix(words)
        return m / np.linalg.norm(m, axis=1, keepdims=True)

    def scaled(self, factor):
        return EmbeddingSet(self.words, self.vectors * factor)

    def updated(self, new_vectors):
        """Copy with some words' vectors replaced."""
        vecs = self.vectors.copy()
        for w, v in new_vectors.items():
            vecs[self._index[w]] = v
        return EmbeddingSet(self.words, vecs)


def load_embeddings(stream, format="word2vec-text"):
    """Read word2vec text: ``word v1 ... vd`` per line, optional ``count dim`` header."""
    if format != "word2vec-text":
        raise ValidationError(f"unsupported embedding format {format!r}")
    if isinstance(stream, (str, bytes)):
        raw = stream
    else:
        raw = stream.read()
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"embeddings are not UTF-8: {exc}") from None
    words, rows, dim = [], [], None
    seen = {}
    header = None
    for lineno, line in enumerate(raw.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if not words and header is None and len(parts) == 2 and all(p.isdigit() for p in parts):
            header = (int(parts[0]), int(parts[1]))
            continue
        word, vals = parts[0], parts[1:]
        if not vals:
            raise ParseError(f"word {word!r} has no vector", lineno)
        if dim is None:
            dim = len(vals)
            if header is not None and header[1] != dim:
                raise ParseError(f"header declares dimension {header[1]}, vector has {dim}", lineno)
        elif len(vals) != dim:
            raise ParseError(f"dimension {len(vals)} differs from established dimension {dim}",
                             lineno)
        if word in seen:
            raise ParseError(f"duplicate word {word!r} (first on line {seen[word]})", lineno)
        try:
            row = [float(v) for v in vals]
        except ValueError:
            raise ParseError(f"non-numeric component for word {word!r}", lineno) from None
        if not all(math.isfinite(v) for v in row):
            raise ParseError(f"non-finite component for word {word!r}", lineno)
        if not any(row):
            raise ParseError(f"zero-norm vector for word {word!r}", lineno)
        seen[word] = lineno
        words.append(word)
        rows.append(row)
    if not words:
        raise ParseError("no embeddings found")
    return EmbeddingSet(words, np.array(rows))


def dump_embeddings(emb, stream=None):
    """Write word2vec text with a count header; returns the text when no stream is given."""
    out = io.StringIO() if stream is None else stream
    out.write(f"{len(emb)} {emb.dim}\n")
    for w, v in zip(emb.words, emb.vectors):
        out.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")
    return out.getvalue() if stream is None else None


# ---------------------------------------------------------------------------
# WEAT
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeatSpec:
    X: tuple[str, ...]
    Y: tuple[str, ...]
    A: tuple[str, ...]
    B: tuple[str, ...]
    name: str = "weat"

    def __post_init__(self):
        for k in "XYAB":
            object.__setattr__(self, k, tuple(getattr(self, k)))
            if not getattr(self, k):
                raise ValidationError(f"WEAT word list {k} is empty")
        if set(self.X) & set(self.Y):
            raise ValidationError(f"target sets overlap: {sorted(set(self.X) & set(self.Y))}")
        if set(self.A) & set(self.B):
            raise ValidationError(f"attribute sets overlap: {sorted(set(self.A) & set(self.B))}")

    @classmethod
    def from_mapping(cls, d, name=None):
        missing = [k for k in "XYAB" if k not in d]
        if missing:
            raise ValidationError(f"WEAT spec lacks keys {missing}")
        return cls(*(tuple(d[k]) for k in "XYAB"), name=name or d.get("name", "weat"))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, exc.lineno) from None
        return cls.from_mapping(d)

    def to_mapping(self):
        return {"name": self.name, "X": list(self.X), "Y": list(self.Y),
                "A": list(self.A), "B": list(self.B)}

    def words(self):
        return self.X + self.Y + self.A + self.B


@dataclass(frozen=True)
class WeatResult:
    effect_size: float
    p_value: float
    statistic: float
    n_permutations: int

    def to_mapping(self):
        return {"effect_size": self.effect_size, "p_value": self.p_value,
                "statistic": self.statistic, "n_permutations": self.n_permutations}


def association(emb, words, A, B):
    """s(w, A, B): mean cosine to A minus mean cosine to B, per word."""
    w = emb.unit(words)
    return (w @ emb.unit(A).T).mean(axis=1) - (w @ emb.unit(B).T).mean(axis=1)


def weat(emb, spec, n_permutations=1000, seed=0):
    """Word-embedding association test.

    The effect size is ``(mean_X s - mean_Y s) / std_{X u Y} s`` with the
    population standard deviation. The one-sided p-value re-partitions
    X u Y into equal halves at random and counts how often
    ``sum_X s - sum_Y s`` reaches the observed value (add-one rule).
    """
    emb.require(spec.words())
    if len(spec.X) != len(spec.Y):
        raise ValidationError(f"permutation test needs |X| = |Y| (got {len(spec.X)} and "
                              f"{len(spec.Y)})")
    s = association(emb, spec.X + spec.Y, spec.A, spec.B)
    m = len(spec.X)
    sd = s.std()
    if not sd > 1e-12 * max(1.0, np.abs(s).max()):
        raise DegenerateError("association scores do not vary over X and Y; effect size undefined")
    d = float((s[:m].mean() - s[m:].mean()) / sd)
    stat = float(s[:m].sum() - s[m:].sum())
    rng = derive_rng(seed, "weat")
    null = np.empty(n_permutations)
    total = s.sum()
    batch = 256
    for start in range(0, n_permutations, batch):
        size = min(batch, n_permutations - start)
        idx = np.argsort(rng.random((size, 2 * m)), axis=1)[:, :m]
        xs = s[idx].sum(axis=1)
        null[start:start + size] = 2.0 * xs - total
    return WeatResult(d, resampling_pvalue(stat, null), stat, int(n_permutations))


# ---------------------------------------------------------------------------
# masked log-probability measure
# ---------------------------------------------------------------------------

@runtime_checkable
class MaskedScorer(Protocol):
    def score(self, text: str, candidate: str) -> float:
        """Probability that `candidate` fills the first mask slot of `text`."""


def fill_template(template, noun):
    """Render a template with ``{pron}`` masked and ``{noun}`` set to `noun` (or masked)."""
    if "{pron}" not in template:
        raise ValidationError("template needs a {pron} slot")
    if "{noun}" not in template:
        raise ValidationError("template needs a {noun} slot")
    return template.replace("{pron}", MASK).replace("{noun}", noun if noun is not None else MASK)


def masked_logprob_bias(scorer, noun, pronoun, template="{pron} is a {noun}."):
    """``ln P(pronoun | noun in context) - ln P(pronoun | noun masked)`` in nats.

    Positive values mean the noun raises the pronoun's probability.
    """
    probs = []
    for ctx in (noun, None):
        p = float(scorer.score(fill_template(template, ctx), pronoun))
        if not 0.0 < p <= 1.0:
            raise ValidationError(f"scorer returned probability {p} for {pronoun!r}; "
                                  "expected a value in (0, 1]")
        probs.append(p)
    return math.log(probs[0]) - math.log(probs[1])


@dataclass(frozen=True)
class ToyScorer:
    """Deterministic lookup scorer keyed by the unmasked context noun.

    ``table[noun][word]`` is the probability of `word` in the pronoun slot when
    `noun` fills the noun slot; ``table[None]`` covers the fully masked template.
    """

    table: Mapping
    _nouns: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if None not in self.table:
            raise ValidationError("toy scorer needs a fully masked (None) context row")
        object.__setattr__(self, "_nouns", frozenset(k for k in self.table if k is not None))

    @classmethod
    def from_counts(cls, counts, prior=None):
        """Probabilities from co-occurrence counts; the masked row pools all nouns by default."""
        table = {}
        pooled = {}
        for noun, row in counts.items():
            total = float(sum(row.values()))
            table[noun] = {w: c / total for w, c in row.items()}
            for w, c in row.items():
                pooled[w] = pooled.get(w, 0.0) + c
        if prior is None:
            total = sum(pooled.values())
            prior = {w: c / total for w, c in pooled.items()}
        table[None] = dict(prior)
        return cls(table)

    @classmethod
    def balanced(cls, betas, pair=("he", "she"), base=0.25):
        """Scorer with ``P(pair[0]) = base * e**beta`` and ``P(pair[1]) = base * e**-beta``.

        The masked row gives both words `base`, so each noun's measure for one
        word of the pair is exactly the negative of the other's.
        """
        table = {None: {pair[0]: base, pair[1]: base}}
        for noun, beta in betas.items():
            table[noun] = {pair[0]: base * math.exp(beta), pair[1]: base * math.exp(-beta)}
        return cls(table)

    def context(self, text):
        tokens = [t.strip(".,;:!?") for t in text.split()]
        hits = [t for t in tokens if t in self._nouns]
        return hits[0] if hits else None

    def score(self, text, candidate):
        row = self.table[self.context(text)]
        if candidate not in row:
            raise ValidationError(f"toy scorer has no probability for {candidate!r}")
        return row[candidate]


# ---------------------------------------------------------------------------
# hard de-biasing
# ---------------------------------------------------------------------------

def bias_direction(emb, definitional_pairs):
    """First principal component of the centred, unit-normalised definitional pairs.

    The sign is fixed so the first word of the first pair projects positively.
    """
    if not definitional_pairs:
        raise ValidationError("need at least one definitional pair")
    words = [w for pair in definitional_pairs for w in pair]
    emb.require(words)
    rows = []
    for a, b in definitional_pairs:
        u = emb.unit([a, b])
        mu = u.mean(axis=0)
        rows.extend([u[0] - mu, u[1] - mu])
    rows = np.array(rows)
    if np.allclose(rows, 0.0, atol=1e-12):
        raise DegenerateError("definitional pairs have identical directions; no bias direction")
    _, _, vt = np.linalg.svd(rows, full_matrices=False)
    g = vt[0]
    a, b = definitional_pairs[0]
    first = emb.unit([a, b])
    if (first[0] - first[1]) @ g < 0:
        g = -g
    return g / np.linalg.norm(g)


def hard_debias(emb, definitional_pairs, neutral_words, equalize_pairs=()):
    """Neutralise and equalise along the bias direction.

    Neutral words lose their component along the direction and are scaled
    back to unit length. Each equalise pair is moved to unit vectors that
    share the off-direction component and mirror each other along the
    direction, so both are equally far from every neutral word. Other words
    are left untouched.
    """
    g = bias_direction(emb, definitional_pairs)
    neutral = list(dict.fromkeys(neutral_words))
    eq_words = [w for pair in equalize_pairs for w in pair]
    emb.require(neutral + eq_words)
    clash = sorted(set(neutral) & set(eq_words))
    if clash:
        raise ValidationError(f"words are both neutral and equalised: {clash}")
    defn = {w for pair in definitional_pairs for w in pair}
    clash = sorted(set(neutral) & defn)
    if clash:
        raise ValidationError(f"definitional words cannot be neutral: {clash}")
    updates = {}
    for w in neutral:
        v = emb[w] - (emb[w] @ g) * g
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            raise DegenerateError(f"neutral word {w!r} lies along the bias direction")
        updates[w] = v / norm
    for a, b in equalize_pairs:
        u = emb.unit([a, b])
        mu = u.mean(axis=0)
        nu = mu - (mu @ g) * g
        scale = math.sqrt(max(0.0, 1.0 - float(nu @ nu)))
        sign = 1.0 if (u[0] - u[1]) @ g >= 0 else -1.0
        updates[a] = nu + sign * scale * g
        updates[b] = nu - sign * scale * g
    return emb.updated(updates)


# ---------------------------------------------------------------------------
# packaging as an origin finding
# ---------------------------------------------------------------------------

def semantic_bias_finding(emb, specs, config):
    """Run every WEAT probe and report a semantic-bias origin finding.

    Flagged when any probe has ``p < alpha`` and ``|d| >= 0.5``.
    """
    from .origins import OriginFinding

    specs = list(specs)
    if not specs:
        return OriginFinding("semantic_bias", None, DivergenceResult(0.0, {}, "weat"), 1.0, 0.0,
                             False, "no probes configured")
    results = {}
    for i, spec in enumerate(specs):
        seed = derive_seed(config.seed, "semantic_bias", i)
        results[spec.name if spec.name not in results else f"{spec.name}#{i}"] = \
            weat(emb, spec, config.n_permutations, seed)
    hits = [k for k, r in results.items()
            if r.p_value < config.alpha and abs(r.effect_size) >= WEAT_EFFECT_FLOOR]
    biggest = max(results, key=lambda k: abs(results[k].effect_size))
    lead = hits[0] if hits else biggest
    evidence = "; ".join(f"{k}: d = {r.effect_size:+.3f}, p = {r.p_value:.4g}"
                         for k, r in results.items())
    div = DivergenceResult(abs(results[biggest].effect_size),
                           {k: r.effect_size for k, r in results.items()}, "weat")
    return OriginFinding("semantic_bias", None, div, results[lead].p_value,
                         abs(results[lead].effect_size), bool(hits), evidence,
                         details={k: r.to_mapping() for k, r in results.items()})
