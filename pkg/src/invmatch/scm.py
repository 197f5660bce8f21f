"""Mixture-of-linear structural causal models over predictors X and response Y.

Node indices ``0..d-1`` are the predictors and ``d`` is the response.  Given an
environment label ``u`` the model is the linear SCM

    X = gamma * Y + B X + eps_X
    Y = (beta + alpha(u)) . X + eps_Y

with independent zero-mean Gaussian noise.  Environment labels are opaque
hashable scalars; nothing ever does arithmetic on them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

from .data import EnvDataset
from .errors import GenerationFailed, InvalidSpec, SchemaError

SCHEMA_VERSION = 1


def _frozen(a, ndim=None):
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScmSpec:
    """Full parameterization of the training (or testing) SCM.

    ``alpha`` maps each environment label to the d-vector of intervened
    response coefficients; its iteration order defines the environment order.
    """

    d: int
    B: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    alpha: Mapping[Hashable, np.ndarray]
    noise_x_var: np.ndarray
    noise_y_var: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "B", _frozen(self.B, 2))
        object.__setattr__(self, "gamma", _frozen(self.gamma, 1))
        object.__setattr__(self, "beta", _frozen(self.beta, 1))
        object.__setattr__(self, "noise_x_var", _frozen(self.noise_x_var, 1))
        object.__setattr__(self, "noise_y_var", float(self.noise_y_var))
        object.__setattr__(
            self, "alpha", {u: _frozen(v, 1) for u, v in dict(self.alpha).items()}
        )

    @property
    def env_labels(self) -> list:
        return list(self.alpha)

    def combined_matrix(self, u) -> np.ndarray:
        """Coefficient matrix A(u) over z = (X, Y) with z = A(u) z + eps."""
        d = self.d
        A = np.zeros((d + 1, d + 1))
        A[:d, :d] = self.B
        A[:d, d] = self.gamma
        A[d, :d] = self.beta + self.alpha[u]
        return A

    def noise_var(self) -> np.ndarray:
        return np.append(self.noise_x_var, self.noise_y_var)

    def support_matrix(self) -> np.ndarray:
        """Boolean adjacency (row = child) of the union graph over all environments."""
        d = self.d
        S = np.zeros((d + 1, d + 1), dtype=bool)
        S[:d, :d] = self.B != 0
        S[:d, d] = self.gamma != 0
        S[d, :d] = self.beta != 0
        for a in self.alpha.values():
            S[d, :d] |= a != 0
        return S

    def intervened(self) -> np.ndarray:
        """Indices j with alpha_j(u) != 0 for some u."""
        mask = np.zeros(self.d, dtype=bool)
        for a in self.alpha.values():
            mask |= a != 0
        return np.flatnonzero(mask)

    def parents_of_y(self) -> np.ndarray:
        return np.flatnonzero(self.support_matrix()[self.d, : self.d])

    def children_of_y(self) -> np.ndarray:
        return np.flatnonzero(self.gamma != 0)

    def replace_alpha(self, alpha: Mapping) -> "ScmSpec":
        return ScmSpec(
            d=self.d,
            B=self.B,
            gamma=self.gamma,
            beta=self.beta,
            alpha=alpha,
            noise_x_var=self.noise_x_var,
            noise_y_var=self.noise_y_var,
        )


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


@dataclass(frozen=True)
class PopulationMoments:
    """Exact second moments of (X, Y) given U = env_label (all means are zero)."""

    env_label: Hashable
    cov_xx: np.ndarray
    cov_xy: np.ndarray
    var_y: float

    @property
    def d(self) -> int:
        return self.cov_xx.shape[0]

    def joint(self) -> np.ndarray:
        d = self.d
        C = np.empty((d + 1, d + 1))
        C[:d, :d] = self.cov_xx
        C[:d, d] = C[d, :d] = self.cov_xy
        C[d, d] = self.var_y
        return C


@dataclass(frozen=True)
class GenConfig:
    """Knobs of the random SCM generator (defaults match the benchmark presets)."""

    edge_prob: float = 0.5
    coef_range: tuple = (0.5, 1.5)
    alpha_range: tuple = (-2.0, 2.0)
    max_retries: int = 1000


def topological_order(spec: ScmSpec) -> list:
    """Node order (0..d-1 predictors, d response) compatible with every A(u).

    Raises ``graphlib.CycleError`` if the union graph has a directed cycle.
    """
    S = spec.support_matrix()
    ts = TopologicalSorter({i: set(np.flatnonzero(S[i]).tolist()) for i in range(spec.d + 1)})
    return list(ts.static_order())


def validate(spec: ScmSpec, require_variation: bool = True) -> list:
    """Return every violated invariant of ``spec`` (empty list means valid).

    ``require_variation`` enforces that alpha takes at least two distinct
    values; testing systems may legitimately have a single environment.
    """
    out = []
    d = spec.d
    shapes_ok = (
        d >= 1
        and spec.B.shape == (d, d)
        and spec.gamma.shape == (d,)
        and spec.beta.shape == (d,)
        and spec.noise_x_var.shape == (d,)
        and all(a.shape == (d,) for a in spec.alpha.values())
    )
    if not shapes_ok:
        out.append(Violation("ShapeMismatch", f"parameter shapes inconsistent with d={d}"))
        return out
    if not spec.alpha:
        out.append(Violation("NoEnvironments", "alpha has no environment labels"))
        return out
    arrays = [spec.B, spec.gamma, spec.beta, spec.noise_x_var, np.array([spec.noise_y_var])]
    arrays += list(spec.alpha.values())
    if not all(np.all(np.isfinite(a)) for a in arrays):
        out.append(Violation("NonFinite", "parameters contain NaN or infinity"))
        return out
    if np.any(np.diag(spec.B) != 0):
        out.append(Violation("AcyclicityViolated", "B has a nonzero diagonal (self loop)"))
    else:
        try:
            topological_order(spec)
        except CycleError as exc:
            cyc = " -> ".join(_node_name(i, d) for i in exc.args[1])
            out.append(Violation("AcyclicityViolated", f"directed cycle {cyc}"))
    overlap = set(np.flatnonzero(spec.beta).tolist()) & set(spec.intervened().tolist())
    if overlap:
        names = ", ".join(_node_name(j, d) for j in sorted(overlap))
        out.append(
            Violation("SupportOverlap", f"beta and alpha share intervened parents {names}")
        )
    if require_variation:
        vecs = list(spec.alpha.values())
        if not any(np.any(v != vecs[0]) for v in vecs[1:]):
            out.append(Violation("AlphaDegenerate", "alpha(u) is the same for every u"))
    if np.any(spec.noise_x_var <= 0) or spec.noise_y_var <= 0:
        out.append(Violation("NonPositiveNoise", "noise variances must be strictly positive"))
    return out


def _node_name(i, d):
    return "y" if i == d else f"x{i + 1}"


def toy_scm(a: Mapping) -> ScmSpec:
    """The three-predictor toy system: Y = a(U) X1 + X2 + N_Y, X3 = Y + X1 + N3.

    ``a`` maps environment labels to the scalar coefficient of X1 in Y's
    assignment; it becomes alpha(u) = (a(u), 0, 0).
    """
    B = np.zeros((3, 3))
    B[2, 0] = 1.0
    return ScmSpec(
        d=3,
        B=B,
        gamma=[0.0, 0.0, 1.0],
        beta=[0.0, 1.0, 0.0],
        alpha={u: [float(v), 0.0, 0.0] for u, v in a.items()},
        noise_x_var=np.ones(3),
        noise_y_var=1.0,
    )


def _signed_uniform(rng, size, lo, hi):
    mag = rng.uniform(lo, hi, size=size)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * mag


def random_scm(d: int, env_labels: Sequence, config: GenConfig | None = None, rng=None) -> ScmSpec:
    """Draw a random training SCM with Y having at least one parent and one child.

    The graph follows a uniformly random topological order over the d + 1
    nodes with each forward edge present independently.  Invariant
    coefficients are uniform on [-hi, -lo] U [lo, hi].  A uniformly sized
    random subset of Y's parents is intervened: those coordinates get
    alpha(u) drawn i.i.d. from ``config.alpha_range`` and no invariant part.
    """
    if d < 2:
        raise ValueError("random_scm needs d >= 2")
    if len(env_labels) < 1:
        raise ValueError("random_scm needs at least one environment label")
    config = config or GenConfig()
    rng = np.random.default_rng(rng)
    lo, hi = config.coef_range
    y = d
    for _ in range(config.max_retries):
        order = rng.permutation(d + 1)
        draws = rng.random((d + 1, d + 1)) < config.edge_prob
        adj = np.zeros((d + 1, d + 1), dtype=bool)  # adj[child, parent]
        for i in range(d + 1):
            for j in range(i + 1, d + 1):
                if draws[i, j]:
                    adj[order[j], order[i]] = True
        if adj[y].any() and adj[:, y].any():
            break
    else:
        raise GenerationFailed(
            f"no graph with a parent and a child of Y after {config.max_retries} draws"
        )

    coefs = np.where(adj, _signed_uniform(rng, adj.shape, lo, hi), 0.0)
    parents = np.flatnonzero(adj[y, :d])
    n_p = int(rng.integers(1, len(parents) + 1))
    hit = np.sort(rng.choice(parents, size=n_p, replace=False))
    beta = coefs[y, :d].copy()
    beta[hit] = 0.0
    a_lo, a_hi = config.alpha_range
    alpha = {}
    for u in env_labels:
        vec = np.zeros(d)
        vec[hit] = rng.uniform(a_lo, a_hi, size=n_p)
        alpha[u] = vec
    return ScmSpec(
        d=d,
        B=coefs[:d, :d],
        gamma=coefs[:d, y],
        beta=beta,
        alpha=alpha,
        noise_x_var=np.ones(d),
        noise_y_var=1.0,
    )


def derive_test_spec(spec: ScmSpec, test_labels: Sequence, alpha_range, rng=None) -> ScmSpec:
    """Testing SCM: same graph and parameters, fresh alpha on the intervened coordinates."""
    rng = np.random.default_rng(rng)
    hit = spec.intervened()
    lo, hi = alpha_range
    alpha = {}
    for v in test_labels:
        vec = np.zeros(spec.d)
        vec[hit] = rng.uniform(lo, hi, size=len(hit))
        alpha[v] = vec
    return spec.replace_alpha(alpha)


def sample(spec: ScmSpec, env_label, n: int, rng=None) -> EnvDataset:
    """Draw ``n`` i.i.d. rows of (X, Y) from environment ``env_label``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng)
    d = spec.d
    A = spec.combined_matrix(env_label)
    z = rng.standard_normal((n, d + 1)) * np.sqrt(spec.noise_var())
    for node in topological_order(spec):
        pa = np.flatnonzero(A[node])
        if len(pa):
            z[:, node] += z[:, pa] @ A[node, pa]
    return EnvDataset(env_label, z[:, :d], z[:, d])


def population_moments(spec: ScmSpec, env_label) -> PopulationMoments:
    """Closed-form Cov(X, Y | U = u) = (I - A)^-1 diag(noise) (I - A)^-T."""
    d = spec.d
    M = np.eye(d + 1) - spec.combined_matrix(env_label)
    R = np.linalg.solve(M, np.diag(np.sqrt(spec.noise_var())))
    C = R @ R.T
    C = 0.5 * (C + C.T)
    return PopulationMoments(env_label, C[:d, :d], C[:d, d].copy(), float(C[d, d]))


# -- serialization -------------------------------------------------------------


def spec_to_dict(spec: ScmSpec) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "scm_spec",
        "d": spec.d,
        "B": spec.B.tolist(),
        "gamma": spec.gamma.tolist(),
        "beta": spec.beta.tolist(),
        "alpha": [{"env": u, "coef": a.tolist()} for u, a in spec.alpha.items()],
        "noise_x_var": spec.noise_x_var.tolist(),
        "noise_y_var": spec.noise_y_var,
    }


def spec_from_dict(doc: dict) -> ScmSpec:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {doc.get('schema_version')!r}")
    try:
        return ScmSpec(
            d=int(doc["d"]),
            B=doc["B"],
            gamma=doc["gamma"],
            beta=doc["beta"],
            alpha={e["env"]: e["coef"] for e in doc["alpha"]},
            noise_x_var=doc["noise_x_var"],
            noise_y_var=doc["noise_y_var"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed SCM document: {exc}") from exc


def save_spec(spec: ScmSpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n", encoding="utf-8")


def load_spec(path) -> ScmSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return spec_from_dict(doc)


def require_valid(spec: ScmSpec, require_variation: bool = True) -> ScmSpec:
    bad = validate(spec, require_variation=require_variation)
    if bad:
        raise InvalidSpec(bad)
    return spec
