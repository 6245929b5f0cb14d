"""
A model that amplifies an association
=====================================

Image captions mention a woman in 58% of kitchen scenes, yet a captioner
trained on them says "woman" about 63% of the time. The synthetic kitchen
preset reproduces that gap with a thresholded score model.
"""

# %%
import numpy as np

from biaslens import outcome_disparity, overamplification_check
from biaslens.synth import preset

sc = preset("kitchen", seed=0)
print(sc.calibration)

# %%
# Gold labels and predictions per scene.
scene = np.asarray(sc.source.attrs["scene"])
for cell in ("kitchen", "other"):
    m = scene == cell
    print(f"{cell:8s} true={np.mean(sc.source.y_true[m] == 'woman'):.3f} "
          f"pred={np.mean(sc.source.y_pred[m] == 'woman'):.3f}")

# %%
# Overamplification compares predictions with the training labels they were
# learned from. The permutation null swaps y_true and y_pred within records.
f = overamplification_check(sc.source, "scene", sc.audit_config)
print(f.flagged, f.details["direction"])
print(f.evidence)

# %%
# Against the ideal of 58% the outcome disparity is significant, but the shift
# is small in nats: 0.006 per record. The default floor of 0.01 would not flag
# it, so the preset ships a config with a floor of 0.001.
rep = outcome_disparity(sc.source, "scene", sc.trusted_reference, sc.audit_config)
print("floor 0.001:", rep.flagged, round(rep.effect_size_nats, 5), rep.p_value)
default = sc.audit_config.replace(effect_floor=0.01)
print("floor 0.01: ", outcome_disparity(sc.source, "scene", sc.trusted_reference, default).flagged)
