"""Backend selection for the candidate-fitting kernel.

The kernel fits every augmented regression ``Y ~ [feature(k, S), X]`` from
per-environment Gram matrices instead of raw rows.  With G_u = X_u'X_u and
c_u the per-environment coefficients of X_k on X_S, the feature column f
satisfies X'f = sum_u G_u[:, S] c_u, f'f = sum_u c_u'G_u[S, k] and
f'Y = sum_u c_u'(X_u'Y_u)[S].  The fit itself is then a rank-one update of the
pooled regression of Y on X (Frisch-Waugh-Lovell), so each candidate costs
O(p |S|^3 + d^2) regardless of the sample size.

When the feature lies in the span of X the minimum-norm coefficient vector is
returned.  Candidates whose per-environment Gram block is numerically singular
are flagged so the caller can refit them on the raw data.

The compiled extension is used when importable; ``INVMATCH_PURE_PYTHON=1``
forces the numpy fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

COLLINEAR_TOL = 1e-10
CHOL_TOL = 1e-12

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

_BACKENDS = {"python": _fallback.fit_candidates}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled.fit_candidates

if os.environ.get("INVMATCH_PURE_PYTHON", "") not in ("", "0") or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "compiled"


def available_backends() -> list:
    return sorted(_BACKENDS)


def fit_candidates(grams, xtys, yty, ks, subsets, sizes, backend: str | None = None):
    """Fit all candidates; returns ``(betas, rss, flags)``.

    ``grams`` is (p, d, d), ``xtys`` is (p, d), ``ks`` are 0-based targets,
    ``subsets`` is an (m, d-1) array of 0-based indices padded past ``sizes``.
    """
    fn = _BACKENDS[backend or BACKEND]
    grams = np.ascontiguousarray(grams, dtype=np.float64)
    xtys = np.ascontiguousarray(xtys, dtype=np.float64)
    G = grams.sum(axis=0)
    b = xtys.sum(axis=0)
    ginv = np.ascontiguousarray(np.linalg.inv(G))
    theta = np.linalg.solve(G, b)
    rss_x = float(yty - theta @ b)
    return fn(
        grams,
        xtys,
        ginv,
        np.ascontiguousarray(theta),
        rss_x,
        np.ascontiguousarray(ks, dtype=np.int64),
        np.ascontiguousarray(subsets, dtype=np.int64),
        np.ascontiguousarray(sizes, dtype=np.int64),
        COLLINEAR_TOL,
        CHOL_TOL,
    )
