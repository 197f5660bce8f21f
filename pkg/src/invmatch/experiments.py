"""Batch comparison of invariant matching against pooled OLS and anchor regression.

Every model index gets its own random stream derived from ``(seed, index)``,
so a run with fewer models reproduces a prefix of a larger one and the
results do not depend on how models are spread over worker processes.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import engine
from .baselines import anchor_cv, pooled_ols
from .data import pooled_X, pooled_Y
from .errors import ExperimentAborted, ImpError, UnknownPreset
from .scm import GenConfig, derive_test_spec, random_scm, sample

log = logging.getLogger(__name__)

METHODS = ("IMP", "OLS", "AR")
MAX_FAILURE_RATE = 0.10


@dataclass(frozen=True)
class ExperimentConfig:
    n_models: int = 500
    d: int = 10
    train_labels: tuple = (1, 2, 3, 4, 5)
    test_labels: tuple = (5, 6, 7, 8, 9, 10)
    n_per_env: int = 300
    train_alpha_range: tuple = (-2.0, 2.0)
    test_alpha_range: tuple = (-10.0, 10.0)
    seed: int = 0
    alpha_quantile: float = 0.05
    max_subset_size: int | None = None

    def __post_init__(self):
        for name in ("train_labels", "test_labels", "train_alpha_range", "test_alpha_range"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("n_models", "d", "n_per_env"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.train_labels or not self.test_labels:
            raise ValueError("need at least one training and one test label")
        for name in ("train_alpha_range", "test_alpha_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must satisfy lo < hi, got {(lo, hi)}")
        if not 0.0 <= self.alpha_quantile <= 1.0:
            raise ValueError("alpha_quantile must lie in [0, 1]")

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig(**{**asdict(self), **changes})


_PRESETS = {
    "A": {},
    "B1": {"train_alpha_range": (-1.0, 1.0)},
    "B2": {"train_labels": (1, 2)},
}


def preset(name: str, **overrides) -> ExperimentConfig:
    """Named configurations: A (regular), B1 (weaker shifts), B2 (two environments)."""
    if name not in _PRESETS:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    return ExperimentConfig(**{**_PRESETS[name], **overrides})


@dataclass
class RssReport:
    config: ExperimentConfig
    rows: list  # (model, method, mean_rss)
    failures: list = field(default_factory=list)  # (model, message)

    def by_method(self) -> dict:
        out = {m: [] for m in METHODS}
        for _, method, rss in sorted(self.rows):
            out[method].append(rss)
        return {m: np.asarray(v) for m, v in out.items()}

    def medians(self) -> dict:
        return {m: float(np.median(v)) if len(v) else float("nan") for m, v in self.by_method().items()}

    def variances(self) -> dict:
        return {m: float(np.var(v)) if len(v) else float("nan") for m, v in self.by_method().items()}

    def win_rate(self, method: str, other: str = "IMP") -> float:
        """Fraction of models where ``other`` has strictly smaller mean RSS than ``method``."""
        table: dict = {}
        for model, m, rss in self.rows:
            table.setdefault(model, {})[m] = rss
        pairs = [t for t in table.values() if method in t and other in t]
        if not pairs:
            return float("nan")
        return sum(t[other] < t[method] for t in pairs) / len(pairs)

    def summary(self) -> dict:
        return {
            "config": asdict(self.config),
            "n_models": self.config.n_models,
            "n_completed": len({r[0] for r in self.rows}),
            "failures": [{"model": i, "error": msg} for i, msg in self.failures],
            "median": self.medians(),
            "variance": self.variances(),
            "imp_beats_ols": self.win_rate("OLS"),
            "imp_beats_ar": self.win_rate("AR"),
        }

    def write_csv(self, path) -> None:
        lines = ["model,method,mean_rss"]
        lines += [f"{i},{m},{rss!r}" for i, m, rss in sorted(self.rows)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def write_json(self, path) -> None:
        text = json.dumps(self.summary(), indent=2, sort_keys=True)
        Path(path).write_text(text + "\n", encoding="utf-8")


def model_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def run_model(config: ExperimentConfig, index: int) -> list:
    """Mean test RSS of each method on model ``index``; returns (method, rss) pairs."""
    rng = model_rng(config.seed, index)
    spec = random_scm(config.d, config.train_labels, GenConfig(alpha_range=config.train_alpha_range), rng)
    test_spec = derive_test_spec(spec, config.test_labels, config.test_alpha_range, rng)
    train = [sample(spec, u, config.n_per_env, rng) for u in config.train_labels]
    test = [sample(test_spec, v, config.n_per_env, rng) for v in config.test_labels]
    Xt, Yt = pooled_X(test), pooled_Y(test)
    model = engine.train(train, config.alpha_quantile, config.max_subset_size)
    cv_seed = int(rng.integers(2**32))
    out = [
        ("IMP", engine.evaluate_rss(engine.predict(model, [ds.without_y() for ds in test]), Yt)),
        ("OLS", engine.evaluate_rss(Xt @ pooled_ols(train), Yt)),
        ("AR", engine.evaluate_rss(Xt @ anchor_cv(train, seed=cv_seed).coef, Yt)),
    ]
    return out


def _task(args):
    config, index = args
    try:
        return index, run_model(config, index), None
    except (ImpError, np.linalg.LinAlgError, ValueError) as exc:
        return index, None, f"{type(exc).__name__}: {exc}"


def worker_count(requested: int | None = None) -> int:
    """Worker processes: ``requested`` or the CPU count, capped by IMP_THREADS."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("IMP_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> RssReport:
    """Simulate, fit and score every model; failed models are recorded and skipped."""
    workers = worker_count(workers)
    jobs = [(config, i) for i in range(config.n_models)]
    if workers == 1:
        results = [_task(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_task, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    rows, failures = [], []
    for index, res, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            log.warning("model %d failed: %s", index, err)
            failures.append((index, err))
            continue
        rows.extend((index, m, float(rss)) for m, rss in res)
    if len(failures) > MAX_FAILURE_RATE * config.n_models:
        raise ExperimentAborted(f"{len(failures)} of {config.n_models} models failed")
    return RssReport(config, rows, failures)
