"""
Countermeasures
===============

Reweighting, resampling, counterfactual text and matched controls, each
checked by re-running the matching audit.
"""

# %%
import warnings

import numpy as np

from biaslens import (AuditConfig, Dataset, ScenarioSpec, SwapLexicon, counterfactual_augment,
                      generate, matched_controls, poststratify, selection_bias_check,
                      stratified_resample, threshold_match)
from biaslens.mitigate import LabelShiftWarning, apply_thresholds, attribute_marginal
from biaslens.synth import preset

warnings.simplefilter("ignore", LabelShiftWarning)
cfg = AuditConfig(attributes=("group",))
sc = generate(ScenarioSpec(origin="selection", injection_strength=0.3, seed=0))
print("source marginal:", attribute_marginal(sc.source, "group"))

# %%
# Post-stratification: weight each cell by target / source share.
weights, weighted = poststratify(sc.source, "group", sc.target_marginal)
print(weights.weights)
print("after:", selection_bias_check(weighted, sc.target_marginal, "group", cfg).effect_size)

# %%
# Stratified downsampling gives up records instead of reweighting them.
down = stratified_resample(sc.source, "group", sc.target_marginal, "down", seed=0)
print(len(down), attribute_marginal(down, "group"))

# %%
# Counterfactual augmentation swaps gendered words and appends the copy.
# Possessives are lossy: "her" can stand for "him" or "his", and the bundled
# lexicon pairs it with "him", so "his" becomes "hers".
ds = Dataset(["1", "2"], ["x", "x"], ["x", "x"], ["source"] * 2, {"g": ["m", "m"]},
             text=["He thanked the father of the bride.", "The weather was fine."])
aug = counterfactual_augment(ds, SwapLexicon.default(), {"g": {"m": "f"}})
for rec in aug:
    print(rec.id, rec.attrs, rec.text)

# %%
# Matched controls: pick, for each PTSD case, the nearest depression control by
# age and gender, so the two groups no longer differ in those attributes.
mh = preset("mental_health", seed=0)
cases = mh.target_reference
pool = mh.source.take(mh.source.y_true == "depression")
res = matched_controls(cases, pool, ["age", "gender"], seed=0)
for name, grp in (("cases", cases), ("pool", pool), ("matched", res.controls)):
    m = attribute_marginal(grp, "age", mh.audit_config)
    print(f"{name:8s}", " ".join(f"{v:.2f}" for v in m.values()))

# %%
# Threshold matching sets one score cut-off per group to hit chosen rates.
rng = np.random.default_rng(1)
scores = rng.random(1000)
groups = np.where(rng.random(1000) < 0.5, "a", "b")
th = threshold_match(scores, groups, {"a": 0.3, "b": 0.3})
admit = apply_thresholds(scores, groups, th)
print({g: round(float(admit[groups == g].mean()), 3) for g in ("a", "b")})
