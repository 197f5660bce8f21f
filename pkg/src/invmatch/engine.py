"""Training, feature selection and prediction with invariant matching features.

For every candidate (k, S) the per-environment LMMSE estimate of X_k from X_S
is appended to X as an extra column, and Y is regressed on the augmented
design pooled over all training environments.  Candidates whose training
residual sum of squares falls at or below a quantile of all candidates'
residuals are kept; on test data each kept candidate recomputes its feature
from the test predictors alone and reuses the stored coefficients.  The final
prediction is the plain average over kept candidates.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .data import EnvDataset, check_dims, pooled_X, pooled_Y
from .errors import (
    EmptySelection,
    InsufficientSamples,
    LengthMismatch,
    NoEnvironmentVariation,
    SchemaError,
    TooManyCandidates,
)
from .estimators import env_feature, ols, quantile

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
UNCAPPED_MAX_D = 12
HARD_MAX_D = 16


@dataclass(frozen=True, order=True)
class FeatureIndex:
    """Candidate feature E_l[X_k | X_S; U]; predictors numbered from 1."""

    k: int
    S: tuple

    def __post_init__(self):
        S = tuple(sorted(int(j) for j in self.S))
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "k", int(self.k))
        if not S:
            raise ValueError("S must be nonempty")
        if self.k in S:
            raise ValueError(f"k={self.k} must not belong to S={S}")
        if len(set(S)) != len(S):
            raise ValueError(f"S has repeated entries: {S}")

    def __str__(self):
        return f"({self.k},{{{','.join(map(str, self.S))}}})"


@dataclass(frozen=True)
class CandidateFit:
    feature: FeatureIndex
    beta: np.ndarray  # feature coefficient first, then one per predictor
    train_rss: float

    @property
    def lam(self) -> float:
        return float(self.beta[0])

    @property
    def eta(self) -> np.ndarray:
        return self.beta[1:]


@dataclass
class ImpModel:
    candidates: list
    epsilon: float
    alpha_quantile: float
    d: int
    n_candidates: int = field(default=0)

    def __post_init__(self):
        if not self.n_candidates:
            self.n_candidates = len(self.candidates)

    @property
    def selected(self) -> list:
        return [c for c in self.candidates if c.train_rss <= self.epsilon]


def enumerate_features(d: int, max_subset_size: int | None = None) -> list:
    """All (k, S) with nonempty S not containing k, in lexicographic order."""
    if d < 2:
        raise ValueError("need d >= 2")
    cap = d - 1 if max_subset_size is None else min(int(max_subset_size), d - 1)
    out = []
    for k in range(1, d + 1):
        rest = [j for j in range(1, d + 1) if j != k]
        for size in range(1, cap + 1):
            out.extend(FeatureIndex(k, S) for S in combinations(rest, size))
    out.sort()
    return out


def _check_budget(d, max_subset_size):
    if max_subset_size is not None:
        return
    if d > HARD_MAX_D:
        raise TooManyCandidates(
            f"d={d} gives {d * (2 ** (d - 1) - 1)} candidates; pass max_subset_size"
        )
    if d > UNCAPPED_MAX_D:
        warnings.warn(f"d={d}: enumerating {d * (2 ** (d - 1) - 1)} candidates", stacklevel=3)


def _check_sizes(datasets, max_size, d):
    for ds in datasets:
        if ds.n < max_size + 1:
            raise InsufficientSamples(ds.env_label, ds.n, max_size + 1)
    n = sum(ds.n for ds in datasets)
    if n < d + 2:
        raise InsufficientSamples("<pooled>", n, d + 2)


def augmented_design(datasets: Sequence[EnvDataset], f: FeatureIndex) -> np.ndarray:
    col = env_feature(datasets, f.k, f.S).values
    return np.column_stack([col, pooled_X(datasets)])


def fit_candidate(train: Sequence[EnvDataset], f: FeatureIndex) -> CandidateFit:
    """Pooled OLS of Y on [feature, X] computed directly from the rows."""
    d = check_dims(train)
    _check_sizes(train, len(f.S), d)
    fit = ols(augmented_design(train, f), pooled_Y(train))
    return CandidateFit(f, fit.coef, fit.rss)


def _moments(train):
    grams = np.stack([ds.X.T @ ds.X for ds in train])
    xtys = np.stack([ds.X.T @ ds.Y for ds in train])
    yty = float(sum(ds.Y @ ds.Y for ds in train))
    return grams, xtys, yty


def fit_all(train: Sequence[EnvDataset], features: Sequence[FeatureIndex], backend=None) -> list:
    """Fit many candidates at once through the moment kernel."""
    d = check_dims(train)
    if not features:
        return []
    _check_sizes(train, max(len(f.S) for f in features), d)
    ks = np.array([f.k - 1 for f in features], dtype=np.int64)
    sizes = np.array([len(f.S) for f in features], dtype=np.int64)
    subsets = np.zeros((len(features), max(d - 1, 1)), dtype=np.int64)
    for i, f in enumerate(features):
        subsets[i, : len(f.S)] = np.asarray(f.S) - 1
    grams, xtys, yty = _moments(train)
    betas, rss, flags = kernels.fit_candidates(grams, xtys, yty, ks, subsets, sizes, backend)
    out = []
    for i, f in enumerate(features):
        if flags[i]:
            log.debug("candidate %s: singular Gram block, refitting on rows", f)
            out.append(fit_candidate(train, f))
        else:
            out.append(CandidateFit(f, betas[i], float(rss[i])))
    return out


def train(
    train: Sequence[EnvDataset],
    alpha_quantile: float = 0.05,
    max_subset_size: int | None = None,
    backend: str | None = None,
) -> ImpModel:
    """Fit every candidate and keep those with residual at or below the quantile."""
    labels = [ds.env_label for ds in train]
    if len(set(labels)) < 2:
        raise NoEnvironmentVariation("training needs at least two distinct environments")
    if len(set(labels)) != len(labels):
        raise ValueError("training environment labels must be distinct")
    if any(ds.Y is None for ds in train):
        raise ValueError("training datasets need a response column")
    d = check_dims(train)
    _check_budget(d, max_subset_size)
    features = enumerate_features(d, max_subset_size)
    cands = fit_all(train, features, backend=backend)
    eps = quantile([c.train_rss for c in cands], alpha_quantile)
    model = ImpModel(cands, eps, alpha_quantile, d)
    log.info("selected %d of %d candidates, epsilon=%g", len(model.selected), len(cands), eps)
    return model


def predict_candidate(fit: CandidateFit, test: Sequence[EnvDataset]) -> np.ndarray:
    return augmented_design(test, fit.feature) @ fit.beta


def predict(model: ImpModel, test: Sequence[EnvDataset]) -> np.ndarray:
    """Average prediction of the selected candidates, aligned with the pooled test rows."""
    sel = model.selected
    if not sel:
        raise EmptySelection("no candidate passes the residual threshold")
    d = check_dims(test)
    if d != model.d:
        raise ValueError(f"test data has {d} predictors, model expects {model.d}")
    need = max(len(c.feature.S) for c in sel) + 1
    for ds in test:
        if ds.n < need:
            raise InsufficientSamples(ds.env_label, ds.n, need)
    total = np.zeros(sum(ds.n for ds in test))
    for c in sel:
        total += predict_candidate(c, test)
    return total / len(sel)


def evaluate_rss(pred, truth) -> float:
    """Mean residual sum of squares (1/n) sum (pred - truth)^2."""
    p = np.asarray(pred, dtype=float).reshape(-1)
    t = np.asarray(truth, dtype=float).reshape(-1)
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.shape[0]} predictions for {t.shape[0]} targets")
    if p.size == 0:
        raise LengthMismatch("empty input")
    r = p - t
    return float(r @ r / r.size)


# -- serialization -------------------------------------------------------------


def model_to_dict(model: ImpModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "imp_model",
        "d": model.d,
        "alpha_quantile": model.alpha_quantile,
        "epsilon": model.epsilon,
        "n_candidates": model.n_candidates,
        "selected": [
            {
                "k": c.feature.k,
                "S": list(c.feature.S),
                "beta": c.beta.tolist(),
                "train_rss": c.train_rss,
            }
            for c in model.selected
        ],
    }


def model_from_dict(doc: dict) -> ImpModel:
    if doc.get("schema_version") != SCHEMA_VERSION or doc.get("kind") != "imp_model":
        raise SchemaError("not an imp_model document of a supported schema version")
    try:
        cands = [
            CandidateFit(
                FeatureIndex(e["k"], tuple(e["S"])),
                np.asarray(e["beta"], dtype=float),
                float(e["train_rss"]),
            )
            for e in doc["selected"]
        ]
        return ImpModel(
            cands,
            float(doc["epsilon"]),
            float(doc["alpha_quantile"]),
            int(doc["d"]),
            int(doc.get("n_candidates", len(cands))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed model document: {exc}") from exc


def save_model(model: ImpModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n", encoding="utf-8")


def load_model(path) -> ImpModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(doc)
