"""Hand-built embedding sets shared by the semantic tests and the acceptance run."""
import numpy as np
from scipy import stats as sps

from biaslens import EmbeddingSet, WeatSpec, weat
from biaslens._rng import derive_rng


def planted_weat(m=8):
    """2-D toy: X words on the A axis, Y words on the B axis; d = 2 exactly."""
    words, vecs = [], []
    for name, v in (("x", (1.0, 0.0)), ("y", (0.0, 1.0)), ("a", (1.0, 0.0)), ("b", (0.0, 1.0))):
        for i in range(m):
            words.append(f"{name}{i}")
            vecs.append(v)
    spec = WeatSpec([f"x{i}" for i in range(m)], [f"y{i}" for i in range(m)],
                    [f"a{i}" for i in range(m)], [f"b{i}" for i in range(m)], name="planted")
    return EmbeddingSet(words, np.array(vecs)), spec


def gendered_toy(m=8, dim=6, seed=0):
    """Target words that differ only along a planted he/she direction (e1).

    X_i and Y_i share their off-direction part, so after neutralising both
    the association test has nothing left to measure.
    """
    rng = np.random.default_rng(seed)
    words, vecs = [], []

    def add(w, v):
        words.append(w)
        vecs.append(np.asarray(v, dtype=float))

    e1 = np.eye(dim)[0]
    add("he", e1 + 0.5 * np.eye(dim)[1])
    add("she", -e1 + 0.5 * np.eye(dim)[1])
    for i in range(m):
        z = np.r_[0.0, rng.normal(size=dim - 1)]
        add(f"x{i}", 0.8 * e1 + z)
        add(f"y{i}", -0.8 * e1 + z)
        add(f"a{i}", e1 + 0.3 * np.r_[0.0, rng.normal(size=dim - 1)])
        add(f"b{i}", -e1 + 0.3 * np.r_[0.0, rng.normal(size=dim - 1)])
    spec = WeatSpec([f"x{i}" for i in range(m)], [f"y{i}" for i in range(m)],
                    [f"a{i}" for i in range(m)], [f"b{i}" for i in range(m)], name="gendered")
    return EmbeddingSet(words, np.array(vecs)), spec


def random_weat(seed, trial=0, m=50, dim=50):
    """X, Y, A and B all drawn from one isotropic Gaussian."""
    rng = derive_rng(seed, "test:null_weat", trial)
    names = [f"{k}{i}" for k in "xyab" for i in range(m)]
    emb = EmbeddingSet(names, rng.normal(size=(4 * m, dim)))
    spec = WeatSpec(names[:m], names[m:2 * m], names[2 * m:3 * m], names[3 * m:], name="null")
    return emb, spec


def null_weat_trials(trials=50, seed=0, n_permutations=1000):
    ds, ps = [], []
    for t in range(trials):
        emb, spec = random_weat(seed, t)
        r = weat(emb, spec, n_permutations, seed=t)
        ds.append(r.effect_size)
        ps.append(r.p_value)
    ks = sps.kstest(ps, "uniform").statistic
    return np.array(ds), np.array(ps), float(ks)
