"""Acceptance checks, one test per criterion, each at its stated tolerance.

Every test reports a single PASS/FAIL line (also collected in the terminal
summary). Two targets cannot be met by a correct implementation; those tests
still assert the stated tolerance and are marked as strict expected failures.
"""

import os
import subprocess
import sys
import time

import numpy as np
import pytest

from invmatch import population
from invmatch.baselines import GAMMA_GRID, anchor_cv, anchor_fit, pooled_ols
from invmatch.data import EnvDataset
from invmatch.engine import FeatureIndex, enumerate_features, fit_candidate, train
from invmatch.estimators import env_feature, ols, population_ols
from invmatch.experiments import preset, run_experiment
from invmatch.scm import GenConfig, derive_test_spec, population_moments, random_scm, sample, toy_scm

from conftest import record_criterion

TOY_SEED = 20240501


def toy_data():
    spec = toy_scm({0: 0.0, 2: 2.0})
    rng = np.random.default_rng(TOY_SEED)
    return spec, [sample(spec, u, 100_000, rng) for u in (0, 2)]


def lmmse_mixture_mse(spec):
    """Mean over environments of Var(Y) - Cov(Y,X) Cov(X)^-1 Cov(X,Y)."""
    out = []
    for u in spec.env_labels:
        m = population_moments(spec, u)
        out.append(m.var_y - m.cov_xy @ np.linalg.solve(m.cov_xx, m.cov_xy))
    return float(np.mean(out))


def test_criterion_1_toy_x3_recovery():
    t0 = time.perf_counter()
    _, data = toy_data()
    beta = fit_candidate(data, FeatureIndex(3, (1, 2))).beta
    elapsed = time.perf_counter() - t0
    target = np.array([0.5, -1.0, 0.0, 0.5])
    err = np.abs(beta - target).max()
    ok = err <= 0.02 and elapsed < 5.0
    record_criterion(1, ok, f"(3,{{1,2}}) beta={np.round(beta, 4).tolist()} max err {err:.4f} <= 0.02, {elapsed:.2f}s < 5s")
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason="the stated target has 0 on X3; the exact population coefficient is 1 (see test_engine)",
)
def test_criterion_2_toy_x2_recovery():
    t0 = time.perf_counter()
    spec, data = toy_data()
    f = FeatureIndex(2, (1, 3))
    beta = fit_candidate(data, f).beta
    elapsed = time.perf_counter() - t0
    pop, _, _ = population.PopulationOracle(spec).fit_candidates([f], exact=True)
    target = np.array([-1.5, -1.0, 0.5, 0.0])
    err = np.abs(beta - target).max()
    ok = err <= 0.02 and elapsed < 5.0
    record_criterion(
        2,
        ok,
        f"(2,{{1,3}}) beta={np.round(beta, 4).tolist()} vs target {target.tolist()}: max err {err:.4f}; "
        f"exact population beta {np.round(pop[0], 12).tolist()}, {elapsed:.2f}s",
    )
    assert ok


def test_criterion_3_negative_control():
    spec, data = toy_data()
    bad = FeatureIndex(1, (2, 3))
    _, mse, _ = population.PopulationOracle(spec).fit_candidates([bad], exact=True)
    excess = float(mse[0]) - lmmse_mixture_mse(spec)
    model = train(data, alpha_quantile=0.05)
    selected = [c.feature for c in model.selected]
    ok = excess > 0 and bad not in selected
    record_criterion(
        3, ok, f"(1,{{2,3}}) population excess MSE {excess:.4f} > 0, selected at 0.05: {[str(f) for f in selected]}"
    )
    assert ok


def test_criterion_4_population_suite():
    t0 = time.perf_counter()
    worst_mse = worst_beta = 0.0
    n_features = 0
    for child in np.random.SeedSequence(0).spawn(50):
        rng = np.random.default_rng(child)
        spec = random_scm(10, [1, 2, 3, 4, 5], GenConfig(), rng)
        test = derive_test_spec(spec, [5, 6, 7, 8, 9, 10], (-10, 10), rng)
        O, Ot = population.PopulationOracle(spec), population.PopulationOracle(test)
        feats = population.covering_features(spec)
        keep = [f for f, d in zip(feats, O.feature_decompositions(feats)) if abs(d.lam) > 1e-6]
        b, mse, _ = O.fit_candidates(keep)
        bt, _, _ = Ot.fit_candidates(keep)
        worst_mse = max(worst_mse, float(np.abs(mse - O.exact_lmmse_mse()).max()))
        worst_beta = max(worst_beta, float(np.abs(b - bt).max()))
        n_features += len(keep)
    elapsed = time.perf_counter() - t0
    ok = worst_mse <= 1e-10 and worst_beta <= 1e-10 and elapsed < 60.0
    record_criterion(
        4,
        ok,
        f"{n_features} features over 50 specs: worst MSE gap {worst_mse:.2e}, "
        f"worst train/test beta gap {worst_beta:.2e} (<= 1e-10), {elapsed:.1f}s < 60s",
    )
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason="an absolute 5/sqrt(n) bound ignores the variance scale of the generated predictors",
)
def test_criterion_5_oracle_convergence():
    rng = np.random.default_rng(0)
    worst = {}
    for _ in range(20):
        spec = random_scm(10, [1, 2, 3, 4, 5], GenConfig(), rng)
        feats = enumerate_features(spec.d)
        picks = [feats[j] for j in rng.choice(len(feats), 3, replace=False)]
        for n in (1_000, 10_000, 100_000):
            data = [sample(spec, u, n, rng) for u in spec.env_labels]
            moments = {u: population_moments(spec, u) for u in spec.env_labels}
            err = 0.0
            for ds in data:
                ref = population_ols(moments[ds.env_label], "y", range(1, spec.d + 1))
                err = max(err, np.abs(ols(ds.X, ds.Y).coef - ref).max())
            for f in picks:
                col = env_feature(data, f.k, f.S)
                for ds, c in zip(data, col.coefs):
                    err = max(err, np.abs(c - population_ols(moments[ds.env_label], f.k, f.S)).max())
            worst[n] = max(worst.get(n, 0.0), err * np.sqrt(n))
    ok = all(v <= 5.0 for v in worst.values())
    detail = ", ".join(f"n={n}: {v:.2f}" for n, v in worst.items())
    record_criterion(5, ok, f"worst sqrt(n) * max-entry error (must be <= 5): {detail}")
    assert ok


@pytest.fixture(scope="module")
def reports():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_experiment(preset(name, n_models=100))
        return cache[name]

    return get


def ordering(report, min_rate):
    med = report.medians()
    rate = report.win_rate("OLS")
    ok = med["IMP"] < med["OLS"] and med["IMP"] < med["AR"] and rate >= min_rate and not report.failures
    text = (
        f"median IMP {med['IMP']:.3f}, OLS {med['OLS']:.3f}, AR {med['AR']:.3f}; "
        f"IMP beats OLS in {rate:.0%} (>= {min_rate:.0%}), {len(report.failures)} failures"
    )
    return ok, text


def test_criterion_6_preset_a(reports):
    t0 = time.perf_counter()
    ok, text = ordering(reports("A"), 0.70)
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 15 * 60
    record_criterion(6, ok, f"preset A, 100 models: {text}, {elapsed:.0f}s")
    assert ok


def test_criterion_7_presets_b1_b2(reports):
    results = [ordering(reports(name), 0.60) for name in ("B1", "B2")]
    ok = all(r[0] for r in results)
    record_criterion(7, ok, " | ".join(f"{name}: {r[1]}" for name, r in zip(("B1", "B2"), results)))
    assert ok


def test_criterion_8_anchor_sanity():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 8))
        data = []
        for u in range(int(rng.integers(2, 6))):
            n = int(rng.integers(20, 80))
            X = rng.standard_normal((n, d)) + rng.normal(size=d)
            Y = X @ rng.normal(size=d) + rng.normal() + rng.standard_normal(n)
            data.append(EnvDataset(u, X, Y))
        worst = max(worst, float(np.abs(anchor_fit(data, 1.0) - pooled_ols(data)).max()))
    grid = anchor_cv(data).cv_table
    ok = worst <= 1e-10 and len(GAMMA_GRID) == 9 and len(grid) == 9
    record_criterion(8, ok, f"gamma=1 vs pooled OLS worst gap {worst:.1e} (<= 1e-10), CV grid size {len(grid)}")
    assert ok


DRIVER = """
import sys
from invmatch.cli import main

commands = [
    ["make-spec", "toy", "--out", "toy.json", "--a", "0", "2"],
    ["make-spec", "random", "--d", "5", "--seed", "11", "--out", "rand.json", "--test-out", "rand_test.json"],
    ["validate", "--spec", "rand.json"],
    ["simulate", "--spec", "toy.json", "--out", "data", "--n-per-env", "500", "--seed", "5"],
    ["simulate", "--spec", "rand_test.json", "--out", "test", "--n-per-env", "200", "--seed", "6"],
    ["train", "--data", "data/pooled.csv", "--model-out", "model.json"],
    ["predict", "--model", "model.json", "--data", "data/pooled.csv", "--out", "pred.csv"],
    ["bench", "--preset", "B2", "--n-models", "8", "--n-per-env", "100", "--seed", "2", "--workers", "8", "--out-dir", "bench"],
]
for cmd in commands:
    print("$", " ".join(cmd))
    sys.stdout.flush()
    code = main(cmd)
    print("exit", code)
    sys.stdout.flush()
"""


def run_cli_session(workdir, threads):
    workdir.mkdir()
    env = dict(os.environ, IMP_THREADS=str(threads))
    proc = subprocess.run(
        [sys.executable, "-c", DRIVER], cwd=workdir, env=env, capture_output=True, check=True, timeout=600
    )
    files = {p.relative_to(workdir).as_posix(): p.read_bytes() for p in sorted(workdir.rglob("*")) if p.is_file()}
    return proc.stdout, files


def test_criterion_9_cli_determinism(tmp_path):
    runs = {}
    for tag, threads in (("t1a", 1), ("t1b", 1), ("t8a", 8), ("t8b", 8)):
        runs[tag] = run_cli_session(tmp_path / tag, threads)
    ref_out, ref_files = runs["t1a"]
    mismatched = [tag for tag, (out, files) in runs.items() if out != ref_out or files != ref_files]
    clean = b"exit 0" in ref_out and ref_out.count(b"exit 0") == 8
    ok = not mismatched and clean and len(ref_files) >= 10
    record_criterion(
        9,
        ok,
        f"8 CLI commands x 2 runs x IMP_THREADS in (1, 8): {len(ref_files)} files, "
        f"mismatching runs: {mismatched or 'none'}",
    )
    assert ok
