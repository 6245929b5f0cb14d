"""
Divergence basics
=================

How far is a set of predicted labels from the distribution we would like to
see? The toolkit answers with a G statistic, which is just 2n times the KL
divergence between the observed and ideal tables.
"""

# %%
import numpy as np

from biaslens import kl_divergence, llr_statistic

q = np.array([0.9, 0.1])   # observed share of "pos" / "neg"
p = np.array([0.5, 0.5])   # ideal
print("KL(q || p) =", round(kl_divergence(q, p), 6), "nats")

# %%
# With 100 observations the same gap becomes a G statistic of about 73.6.
res = llr_statistic((90, 10), p)
print("G =", round(res.statistic, 4), "per outcome:", res.per_cell)
print("2 n KL =", 2 * 100 * kl_divergence(q, p))

# %%
# The identity holds for any table; try a few random ones.
rng = np.random.default_rng(0)
for _ in range(3):
    probs = rng.dirichlet(np.ones(4))
    counts = rng.multinomial(500, probs)
    g = llr_statistic(counts, probs).statistic
    print(f"G = {g:8.4f}   2nKL = {2 * 500 * kl_divergence(counts / 500, probs):8.4f}")

# %%
# Zero probability in the ideal where we observed something is an infinite
# divergence, and the library refuses rather than returning inf.
try:
    kl_divergence((0.5, 0.5), (1.0, 0.0))
except Exception as exc:
    print(type(exc).__name__, "-", exc)
