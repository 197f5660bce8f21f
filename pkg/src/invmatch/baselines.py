"""Reference predictors: pooled least squares and anchor regression.

Anchor regression minimises ``||(I - P_A) r||^2 + gamma ||P_A r||^2`` for the
residual r = Y - Xb, where P_A projects onto the environment indicator
columns.  Projecting onto indicators replaces each row by its environment
mean, so the transform W = (I - P_A) + sqrt(gamma) P_A amounts to
``x -> x + (sqrt(gamma) - 1) * mean_u(x)`` inside every environment.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import EnvDataset, check_dims, pooled_X, pooled_Y
from .errors import InsufficientSamples
from .estimators import ols

GAMMA_GRID = (0.2, 0.4, 0.6, 0.8, 1.0, 2.0, 3.0, 4.0, 5.0)
N_FOLDS = 5
TIE_TOL = 1e-12


@dataclass(frozen=True)
class AnchorFit:
    gamma: float
    coef: np.ndarray
    cv_table: dict  # gamma -> mean squared validation error


def _need_rows(train, needed):
    n = sum(ds.n for ds in train)
    if n < needed:
        raise InsufficientSamples("<pooled>", n, needed)


def pooled_ols(train: Sequence[EnvDataset]) -> np.ndarray:
    """OLS of pooled Y on pooled X, ignoring environment labels."""
    d = check_dims(train)
    _need_rows(train, d + 1)
    return ols(pooled_X(train), pooled_Y(train)).coef


def anchor_transform(datasets: Sequence[EnvDataset], gamma: float):
    """Apply W = (I - P_A) + sqrt(gamma) P_A to X and Y; returns the pooled pair."""
    shift = np.sqrt(gamma) - 1.0
    Xs, Ys = [], []
    for ds in datasets:
        Xs.append(ds.X + shift * ds.X.mean(axis=0))
        Ys.append(ds.Y + shift * ds.Y.mean())
    return np.vstack(Xs), np.concatenate(Ys)


def anchor_objective(datasets: Sequence[EnvDataset], coef, gamma: float) -> float:
    """||(I - P_A) r||^2 + gamma ||P_A r||^2 with r = Y - X coef."""
    total = 0.0
    for ds in datasets:
        r = ds.Y - ds.X @ coef
        mu = r.mean()
        total += float(np.sum((r - mu) ** 2)) + gamma * ds.n * mu * mu
    return total


def anchor_fit(train: Sequence[EnvDataset], gamma: float) -> np.ndarray:
    """Closed-form anchor regression coefficients for one penalty."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    d = check_dims(train)
    _need_rows(train, d + 1)
    X, Y = anchor_transform(train, gamma)
    return ols(X, Y).coef


def stratified_folds(train: Sequence[EnvDataset], n_folds: int = N_FOLDS, seed=0) -> list:
    """Fold id for every row of every environment, balanced within environments.

    Rows of each environment are shuffled and dealt round-robin, so every
    fold draws from every environment that has at least ``n_folds`` rows.
    """
    rng = np.random.default_rng(seed)
    out = []
    for ds in train:
        ids = np.arange(ds.n) % n_folds
        out.append(ids[rng.permutation(ds.n)])
    return out


def _split(train, folds, j):
    fit, val = [], []
    for ds, f in zip(train, folds):
        keep = f != j
        if keep.any():
            fit.append(EnvDataset(ds.env_label, ds.X[keep], ds.Y[keep]))
        if (~keep).any():
            val.append(EnvDataset(ds.env_label, ds.X[~keep], ds.Y[~keep]))
    return fit, val


def anchor_cv(
    train: Sequence[EnvDataset], grid=GAMMA_GRID, n_folds: int = N_FOLDS, seed=0
) -> AnchorFit:
    """Pick gamma by environment-stratified K-fold CV; ties go to the smaller gamma."""
    d = check_dims(train)
    _need_rows(train, max(10, d + 1))
    folds = stratified_folds(train, n_folds, seed)
    sse = dict.fromkeys(grid, 0.0)
    n = 0
    for j in range(n_folds):
        fit, val = _split(train, folds, j)
        if not val:
            continue
        Xv, Yv = pooled_X(val), pooled_Y(val)
        n += len(Yv)
        for g in grid:
            r = Yv - Xv @ anchor_fit(fit, g)
            sse[g] += float(r @ r)
    table = {g: sse[g] / n for g in grid}
    # errors within TIE_TOL of the response scale count as ties
    Y = pooled_Y(train)
    tol = TIE_TOL * max(float(Y @ Y) / len(Y), np.finfo(float).tiny)
    low = min(table.values())
    best = min(g for g in grid if table[g] <= low + tol)
    return AnchorFit(float(best), anchor_fit(train, best), table)
