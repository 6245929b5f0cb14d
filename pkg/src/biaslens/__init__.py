"""Audit predictive models for bias across human attributes.

The toolkit measures outcome and error disparities against an
application-specific ideal, diagnoses which origins of bias the data are
consistent with (label, selection, overamplification, semantic), and
applies data-level countermeasures.
"""

__version__ = "0.1.0"

from .disparity import DisparityReport, error_disparity, outcome_disparity  # noqa: E402
from .errors import BiasLensError  # noqa: E402
from .mitigate import (SwapLexicon, WeightAssignment, counterfactual_augment,  # noqa: E402
                       matched_controls, poststratify, poststratify_weights, stratified_resample,
                       threshold_match)
from .model import (AttributeSpec, AuditConfig, Binning, Dataset, IdealSpec,  # noqa: E402
                    PredictionRecord, load_config, load_dataset, parse_records, validate_config)
from .origins import (DiagnosisMatrix, OriginFinding, diagnose,  # noqa: E402
                      label_bias_check, overamplification_check, selection_bias_check)
from .semantic import (EmbeddingSet, ToyScorer, WeatSpec, hard_debias,  # noqa: E402
                       load_embeddings, masked_logprob_bias, semantic_bias_finding, weat)
from .stats import (DivergenceResult, EmpiricalFrom, Explicit, TowardUniform,  # noqa: E402
                    Uniform, estimate_conditional, kl_divergence, llr_statistic,
                    permutation_test)
from .synth import ScenarioSpec, generate, power_grid  # noqa: E402

__all__ = [
    "AttributeSpec", "AuditConfig", "BiasLensError", "Binning", "Dataset", "DiagnosisMatrix",
    "DisparityReport", "DivergenceResult", "EmbeddingSet", "EmpiricalFrom", "Explicit",
    "IdealSpec", "OriginFinding", "PredictionRecord", "ScenarioSpec", "SwapLexicon",
    "ToyScorer", "TowardUniform", "Uniform", "WeatSpec", "WeightAssignment",
    "counterfactual_augment", "diagnose", "error_disparity", "estimate_conditional",
    "generate", "hard_debias", "kl_divergence", "label_bias_check", "llr_statistic",
    "load_config", "load_dataset", "load_embeddings", "masked_logprob_bias",
    "matched_controls", "outcome_disparity", "overamplification_check", "parse_records",
    "permutation_test", "poststratify", "poststratify_weights", "power_grid",
    "selection_bias_check", "semantic_bias_finding", "stratified_resample", "threshold_match",
    "validate_config", "weat",
]
