"""Prediction under an intervened response via invariant matching features."""
from .data import EnvDataset, read_csv, write_csv
from .engine import (
    CandidateFit,
    FeatureIndex,
    ImpModel,
    enumerate_features,
    evaluate_rss,
    fit_candidate,
    predict,
    train,
)
from .estimators import env_feature, ols, population_ols, quantile
from .kernels import BACKEND
from .scm import (
    GenConfig,
    PopulationMoments,
    ScmSpec,
    derive_test_spec,
    population_moments,
    random_scm,
    sample,
    toy_scm,
    validate,
)

__version__ = "0.1.0"
