"""Least squares, per-environment LMMSE features and quantiles.

Predictors are numbered 1..d in every public signature, matching the
``x1..xd`` CSV columns.  No intercepts are fitted anywhere: all variables are
zero mean by construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .data import EnvDataset
from .errors import EmptyInput, InsufficientSamples, NonFiniteInput, SingularCovariance
from .scm import PopulationMoments


@dataclass(frozen=True)
class OlsFit:
    coef: np.ndarray
    rss: float
    rank: int


def ols(design, target) -> OlsFit:
    """Minimum-norm least squares via a complete orthogonal factorization.

    Rank-deficient designs do not raise; the minimum-norm coefficient vector
    is returned together with the detected rank.
    """
    A = np.asarray(design, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    b = np.asarray(target, dtype=float).reshape(-1)
    if A.shape[0] != b.shape[0]:
        raise ValueError(f"design has {A.shape[0]} rows, target has {b.shape[0]}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError("design must be at least 1 x 1")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise NonFiniteInput("ols input contains NaN or infinity")
    # singular values below max(n, p) * eps of the largest count as zero
    cond = max(A.shape) * np.finfo(float).eps
    coef, _, rank, _ = scipy.linalg.lstsq(A, b, cond=cond, lapack_driver="gelsy", check_finite=False)
    resid = b - A @ coef
    return OlsFit(coef=coef, rss=float(resid @ resid), rank=int(rank))


def _cols(S) -> np.ndarray:
    return np.asarray(sorted(S), dtype=int) - 1


@dataclass(frozen=True)
class FeatureColumn:
    """Stacked per-environment fitted values of X_k regressed on X_S."""

    feature_index: tuple
    values: np.ndarray
    coefs: tuple  # one |S|-vector per environment, same order as the input


def env_feature(datasets: Sequence[EnvDataset], k: int, S) -> FeatureColumn:
    """Per-environment OLS fitted values of X_k on X_S, concatenated in input order."""
    S = tuple(sorted(S))
    if not S:
        raise ValueError("S must be nonempty")
    if k in S:
        raise ValueError(f"k={k} must not be in S={S}")
    cols = _cols(S)
    need = len(S) + 1
    values, coefs = [], []
    for ds in datasets:
        if ds.n < need:
            raise InsufficientSamples(ds.env_label, ds.n, need)
        XS = ds.X[:, cols]
        fit = ols(XS, ds.X[:, k - 1])
        coefs.append(fit.coef)
        values.append(XS @ fit.coef)
    return FeatureColumn((k, S), np.concatenate(values), tuple(coefs))


def population_ols(moments: PopulationMoments, target, S) -> np.ndarray:
    """Cov(X_S, X_S)^-1 Cov(X_S, target) from exact moments.

    ``target`` is ``"y"`` or a 1-based predictor index.
    """
    cols = _cols(S)
    C = moments.cov_xx[np.ix_(cols, cols)]
    if target == "y":
        rhs = moments.cov_xy[cols]
    else:
        rhs = moments.cov_xx[cols, int(target) - 1]
    try:
        cho = scipy.linalg.cho_factor(C)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(f"Cov(X_S, X_S) is singular for S={tuple(S)}") from exc
    return scipy.linalg.cho_solve(cho, rhs)


def quantile(values, q: float) -> float:
    """Linear-interpolation quantile with inclusive endpoints."""
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise EmptyInput("quantile of an empty collection")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    return float(np.quantile(arr, q, method="linear"))
