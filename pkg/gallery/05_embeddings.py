"""
Associations in word vectors
============================

A word-embedding association test on hand-built vectors, then hard
de-biasing to remove the planted direction.
"""

# %%
import numpy as np

from biaslens import EmbeddingSet, ToyScorer, WeatSpec, hard_debias, masked_logprob_bias, weat

rng = np.random.default_rng(0)
words, vecs = ["he", "she"], [[1.0, 0.5, 0, 0, 0, 0], [-1.0, 0.5, 0, 0, 0, 0]]
for i in range(8):
    z = np.r_[0.0, rng.normal(size=5)]
    for name, sign in (("career", 0.8), ("family", -0.8)):
        words.append(f"{name}{i}")
        vecs.append(np.r_[sign, 0, 0, 0, 0, 0] + z)
    for name, sign in (("male", 1.0), ("female", -1.0)):
        words.append(f"{name}{i}")
        vecs.append(np.r_[sign, 0.3 * rng.normal(size=5)])
emb = EmbeddingSet(words, np.array(vecs))
spec = WeatSpec([f"career{i}" for i in range(8)], [f"family{i}" for i in range(8)],
                [f"male{i}" for i in range(8)], [f"female{i}" for i in range(8)])
print(weat(emb, spec, 1000, seed=0))

# %%
# Neutralise the career and family words along the he - she direction.
neutral = list(spec.X + spec.Y)
clean = hard_debias(emb, [("he", "she")], neutral)
print(weat(clean, spec, 1000, seed=0))

# %%
# The masked-language-model measure compares the pronoun's probability with
# and without the noun in context.
scorer = ToyScorer({"nurse": {"she": 0.6, "he": 0.4}, None: {"she": 0.5, "he": 0.5}})
print(masked_logprob_bias(scorer, "nurse", "she"), masked_logprob_bias(scorer, "nurse", "he"))
