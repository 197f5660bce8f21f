import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from invmatch.baselines import (
    GAMMA_GRID,
    anchor_cv,
    anchor_fit,
    anchor_objective,
    pooled_ols,
    stratified_folds,
)
from invmatch.data import EnvDataset
from invmatch.errors import InsufficientSamples
from invmatch.estimators import ols
from invmatch.scm import population_moments, sample, toy_scm


def random_envs(seed, d=3, sizes=(30, 40, 25)):
    rng = np.random.default_rng(seed)
    out = []
    for i, n in enumerate(sizes):
        shift = rng.normal(size=d)
        X = rng.standard_normal((n, d)) + shift
        Y = X @ rng.normal(size=d) + rng.normal() + rng.standard_normal(n)
        out.append(EnvDataset(i, X, Y))
    return out


def projection_objective(datasets, b, gamma):
    """Reference objective with an explicit indicator projection matrix."""
    X = np.vstack([ds.X for ds in datasets])
    Y = np.concatenate([ds.Y for ds in datasets])
    A = np.zeros((len(Y), len(datasets)))
    row = 0
    for j, ds in enumerate(datasets):
        A[row : row + ds.n, j] = 1.0
        row += ds.n
    P = A @ np.linalg.pinv(A)
    r = Y - X @ b
    return float(r @ (np.eye(len(Y)) - P) @ r + gamma * r @ P @ r)


def test_single_environment_pooled_is_ols():
    ds = random_envs(0, sizes=(50,))[0]
    np.testing.assert_allclose(pooled_ols([ds]), ols(ds.X, ds.Y).coef)


def test_noise_free_recovery():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((30, 4))
    b = np.array([1.0, -2.0, 0.5, 3.0])
    ds = [EnvDataset(1, X[:15], X[:15] @ b), EnvDataset(2, X[15:], X[15:] @ b)]
    np.testing.assert_allclose(pooled_ols(ds), b, atol=1e-12)
    np.testing.assert_allclose(anchor_fit(ds, 3.0), b, atol=1e-12)


def test_pooled_matches_mixture_moments():
    spec = toy_scm({1: -1.0, 2: 1.0})
    rng = np.random.default_rng(2)
    data = [sample(spec, u, 200_000, rng) for u in spec.env_labels]
    ms = [population_moments(spec, u) for u in spec.env_labels]
    Sxx = np.mean([m.cov_xx for m in ms], axis=0)
    sxy = np.mean([m.cov_xy for m in ms], axis=0)
    ref = np.linalg.solve(Sxx, sxy)
    np.testing.assert_allclose(pooled_ols(data), ref, atol=0.02)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_gamma_one_is_pooled(seed):
    data = random_envs(seed)
    np.testing.assert_allclose(anchor_fit(data, 1.0), pooled_ols(data), rtol=1e-10, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(GAMMA_GRID))
def test_anchor_minimises_its_objective(seed, gamma):
    data = random_envs(seed)
    b = anchor_fit(data, gamma)
    assert anchor_objective(data, b, gamma) == pytest.approx(projection_objective(data, b, gamma), rel=1e-10)
    assert anchor_objective(data, b, gamma) <= anchor_objective(data, pooled_ols(data), gamma) * (1 + 1e-12)


def test_anchor_against_numerical_minimiser(toy_spec):
    rng = np.random.default_rng(3)
    data = [sample(toy_spec, u, 2_000, rng) for u in toy_spec.env_labels]
    b = anchor_fit(data, 5.0)
    res = minimize(
        lambda x: anchor_objective(data, x, 5.0),
        np.zeros(3),
        method="BFGS",
        options={"gtol": 1e-10, "maxiter": 10_000},
    )
    np.testing.assert_allclose(b, res.x, atol=1e-6)


def test_single_environment_anchor():
    ds = random_envs(4, sizes=(60,))
    # P_A is the all-ones projection: gamma reweights only the mean residual
    for g in (0.2, 5.0):
        b = anchor_fit(ds, g)
        assert anchor_objective(ds, b, g) <= anchor_objective(ds, pooled_ols(ds), g) * (1 + 1e-12)


def test_anchor_rejects_nonpositive_gamma():
    with pytest.raises(ValueError):
        anchor_fit(random_envs(0), 0.0)


def test_folds_partition_rows():
    data = random_envs(5, sizes=(23, 7, 5))
    folds = stratified_folds(data, 5, seed=1)
    for ds, f in zip(data, folds):
        assert len(f) == ds.n
        counts = np.bincount(f, minlength=5)
        assert counts.max() - counts.min() <= 1
    again = stratified_folds(data, 5, seed=1)
    assert all(np.array_equal(a, b) for a, b in zip(folds, again))


def test_cv_grid_and_determinism():
    data = random_envs(6)
    fit = anchor_cv(data, seed=3)
    assert list(fit.cv_table) == list(GAMMA_GRID)
    assert len(fit.cv_table) == 9
    assert fit.gamma in GAMMA_GRID
    assert fit.cv_table[fit.gamma] == min(fit.cv_table.values())
    np.testing.assert_allclose(fit.coef, anchor_fit(data, fit.gamma))
    assert anchor_cv(data, seed=3).gamma == fit.gamma


def test_cv_ties_go_to_smallest_gamma():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((40, 2))
    ds = [EnvDataset(1, X, X @ np.array([1.0, -1.0]))]
    assert anchor_cv(ds).gamma == 0.2


def test_cv_needs_rows():
    with pytest.raises(InsufficientSamples):
        anchor_cv([EnvDataset(1, np.ones((5, 1)), np.ones(5))])
