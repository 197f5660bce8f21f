"""Population-level counterparts of the training quantities.

Everything here is computed from exact conditional covariances, so it serves
as the brute-force oracle for the sample estimators.  Mixtures over
environments use equal weights unless ``weights`` is given, which matches a
pooled sample with the same number of rows per environment.

Candidates with a barely varying feature make the augmented moment system
nearly singular; coefficients then grow like 1 / lambda and double precision
loses most of its digits.  :meth:`PopulationOracle.fit_candidates` therefore
estimates the forward error of each float64 solve and recomputes the
offenders in arb ball arithmetic, whose rigorous error radii tell when the
working precision has to be raised.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import FeatureIndex, enumerate_features
from .scm import ScmSpec, population_moments

EPS = np.finfo(float).eps
EXACT_BOUND = 5e-11
ERR_SCALE = 4.0


def _weights(labels, weights):
    if weights is None:
        return np.full(len(labels), 1.0 / len(labels))
    w = np.asarray(weights, dtype=float)
    return w / w.sum()


@dataclass(frozen=True)
class Decomposition:
    """Affine fit v(u) = lam * alpha(u) + eta across environments."""

    lam: float
    eta: np.ndarray
    residual: float  # max abs deviation from the affine fit


class PopulationOracle:
    """Exact-moment computations for one SCM and a fixed set of environments."""

    def __init__(self, spec: ScmSpec, labels=None, weights=None):
        self.spec = spec
        self.labels = list(spec.env_labels if labels is None else labels)
        self.w = _weights(self.labels, weights)
        self.moments = [population_moments(spec, u) for u in self.labels]
        self.Sxx = sum(wi * m.cov_xx for wi, m in zip(self.w, self.moments))
        self.sxy = sum(wi * m.cov_xy for wi, m in zip(self.w, self.moments))
        self.eyy = float(sum(wi * m.var_y for wi, m in zip(self.w, self.moments)))
        self._exact = None

    @property
    def d(self) -> int:
        return self.spec.d

    def lmmse_coefs(self) -> np.ndarray:
        """theta(u) per environment, shape (p, d)."""
        return np.array([np.linalg.solve(m.cov_xx, m.cov_xy) for m in self.moments])

    def lmmse_mse(self) -> float:
        """Mixture MSE of the environment-wise LMMSE predictor of Y from X."""
        return float(
            sum(
                wi * (m.var_y - m.cov_xy @ np.linalg.solve(m.cov_xx, m.cov_xy))
                for wi, m in zip(self.w, self.moments)
            )
        )

    def feature_coefs(self, features) -> np.ndarray:
        """Per-environment coefficients of X_k on X_S as d-vectors, shape (m, p, d)."""
        features = list(features)
        out = np.zeros((len(features), len(self.labels), self.d))
        sizes = np.array([len(f.S) for f in features])
        for s in np.unique(sizes):
            idx = np.flatnonzero(sizes == s)
            K = np.array([features[i].k - 1 for i in idx])
            SS = np.array([np.asarray(features[i].S) - 1 for i in idx])
            for ui, m in enumerate(self.moments):
                C = m.cov_xx
                c = np.linalg.solve(C[SS[:, :, None], SS[:, None, :]], C[SS, K[:, None]][..., None])
                full = np.zeros((len(idx), self.d))
                np.put_along_axis(full, SS, c[..., 0], axis=1)
                out[idx, ui] = full
        return out

    def decompose(self, vectors: np.ndarray) -> list:
        """Affine fits v(u) = lam alpha(u) + eta for a stack of shape (m, p, d)."""
        A = np.array([self.spec.alpha[u] for u in self.labels])
        Ac = A - A.mean(axis=0)
        denom = float(np.sum(Ac * Ac))
        V = np.asarray(vectors)
        single = V.ndim == 2
        if single:
            V = V[None]
        Vc = V - V.mean(axis=1, keepdims=True)
        lam = np.einsum("mpd,pd->m", Vc, Ac) / denom if denom > 0 else np.zeros(len(V))
        eta = (V - lam[:, None, None] * A[None]).mean(axis=1)
        resid = np.abs(V - lam[:, None, None] * A[None] - eta[:, None, :]).max(axis=(1, 2))
        out = [Decomposition(float(l), e, float(r)) for l, e, r in zip(lam, eta, resid)]
        return out[0] if single else out

    def response_decomposition(self) -> Decomposition:
        """theta(u) = lam_Y alpha(u) + eta_Y."""
        return self.decompose(self.lmmse_coefs())

    def feature_decompositions(self, features) -> list:
        """c_{k,S}(u) = lam_{k,S} alpha(u) + eta_{k,S} for each candidate."""
        return self.decompose(self.feature_coefs(features))

    def fit_candidates(self, features, exact="auto"):
        """Population augmented regressions of Y on [feature, X].

        Returns ``(betas, mse, used_exact)``.  ``exact`` is ``"auto"`` (exact
        arithmetic only where the float64 error bound exceeds 1e-12), True or
        False.  Candidates whose augmented system is exactly singular get the
        minimum-norm coefficients.
        """
        features = list(features)
        d = self.d
        m = len(features)
        betas = np.zeros((m, d + 1))
        mse = np.zeros(m)
        used = np.zeros(m, dtype=bool)
        if m == 0:
            return betas, mse, used
        if exact is True:
            todo = np.arange(m)
        else:
            betas, mse, bound = self._double_fit(features)
            todo = np.flatnonzero(bound > EXACT_BOUND) if exact == "auto" else np.array([], int)
        if len(todo):
            b, e = self._exact_backend().fit_many([features[i] for i in todo])
            betas[todo] = b
            mse[todo] = e
            used[todo] = True
        return betas, mse, used

    def _double_fit(self, features):
        """Float64 augmented regressions plus a first-order forward error bound."""
        d = self.d
        m = len(features)
        coefs = self.feature_coefs(features)
        M = np.zeros((m, d + 1, d + 1))
        rhs = np.zeros((m, d + 1))
        for ui, (wi, mom) in enumerate(zip(self.w, self.moments)):
            c = coefs[:, ui]
            cx = c @ mom.cov_xx
            M[:, 0, 0] += wi * np.einsum("md,md->m", cx, c)
            M[:, 0, 1:] += wi * cx
            rhs[:, 0] += wi * c @ mom.cov_xy
        M[:, 1:, 0] = M[:, 0, 1:]
        M[:, 1:, 1:] = self.Sxx
        rhs[:, 1:] = self.sxy
        cond = np.linalg.cond(M)
        b = np.zeros((m, d + 1))
        finite = np.isfinite(cond) & (cond < 1.0 / EPS)
        bound = np.full(m, np.inf)
        if finite.any():
            Mf, rf = M[finite], rhs[finite]
            Minv = np.linalg.inv(Mf)
            bf = np.einsum("mij,mj->mi", Minv, rf)
            b[finite] = bf
            # componentwise first-order bound with moment entries perturbed by ERR_SCALE * eps
            slack = np.einsum("mij,mj->mi", np.abs(Mf), np.abs(bf)) + np.abs(rf)
            db = ERR_SCALE * EPS * np.einsum("mij,mj->mi", np.abs(Minv), slack)
            bound[finite] = np.maximum(db.max(axis=1), np.einsum("mj,mj->m", db, np.abs(rf)))
        for i in np.flatnonzero(~finite):
            b[i] = np.linalg.lstsq(M[i], rhs[i], rcond=None)[0]
        mse = self.eyy - np.einsum("mj,mj->m", b, rhs)
        return b, mse, bound

    def exact_lmmse_mse(self) -> float:
        """lmmse_mse evaluated in high precision."""
        return self._exact_backend().lmmse_mse()

    def _exact_backend(self):
        if self._exact is None:
            self._exact = _ArbOracle(self)
        return self._exact


class _ArbOracle:
    """High-precision twin of PopulationOracle using arb ball arithmetic.

    Every intermediate carries a rigorous error radius; results are returned
    as float64 midpoints after checking the radius is negligible.
    """

    PREC = 192
    MAX_PREC = 1024
    MAX_RADIUS = 1e-30

    def __init__(self, oracle: PopulationOracle):
        import flint

        self.flint = flint
        self.d = oracle.spec.d
        self._oracle = oracle
        self._prec = self.PREC
        self._stats = {}

    def _build(self, prec):
        """Per-environment covariances and pooled regression of Y on X as arb objects."""
        flint = self.flint
        arb = flint.arb
        spec = self._oracle.spec
        d = self.d
        D = d + 1
        w = [arb(float(wi)) for wi in self._oracle.w]
        nv = spec.noise_var()
        sd = flint.arb_mat(D, D, [arb(float(nv[i])).sqrt() if i == j else 0 for i in range(D) for j in range(D)])
        cov = []
        for u in self._oracle.labels:
            A = spec.combined_matrix(u)
            IA = flint.arb_mat(D, D, [arb(float((1.0 if i == j else 0.0) - A[i, j])) for i in range(D) for j in range(D)])
            R = IA.solve(sd)
            cov.append(R * R.transpose())
        Sxx = flint.arb_mat(d, d)
        sxy = flint.arb_mat(d, 1)
        eyy = arb(0)
        opt = arb(0)
        for wi, C in zip(w, cov):
            Cx = flint.arb_mat(d, d, [C[i, j] for i in range(d) for j in range(d)])
            Cy = flint.arb_mat(d, 1, [C[i, d] for i in range(d)])
            Sxx += Cx * wi
            sxy += Cy * wi
            eyy += wi * C[d, d]
            opt += wi * (C[d, d] - (Cy.transpose() * Cx.solve(Cy))[0, 0])
        Sinv = Sxx.inv()
        theta = Sinv * sxy
        base = eyy - (sxy.transpose() * theta)[0, 0]
        self.opt = opt
        pooled = cov[0] * w[0]
        for wi, C in zip(w[1:], cov[1:]):
            pooled += C * wi
        return cov, w, Sinv, theta, base, pooled

    def _mid(self, x) -> float:
        if x.rad() > self.MAX_RADIUS * max(1.0, abs(float(x.mid()))):
            raise ArithmeticError(f"precision exhausted: radius {float(x.rad()):.3g}")
        return float(x.mid())

    def lmmse_mse(self) -> float:
        if self._prec not in self._stats:
            with _precision(self.flint, self._prec):
                self._stats[self._prec] = self._build(self._prec)
        return self._mid(self.opt)

    def fit_many(self, features) -> tuple:
        d = self.d
        groups: dict = {}
        for i, f in enumerate(features):
            groups.setdefault(tuple(j - 1 for j in f.S), []).append(i)
        betas = np.zeros((len(features), d + 1))
        mse = np.zeros(len(features))
        prec = self._prec
        pending = sorted(groups)
        while pending:
            retry = []
            with _precision(self.flint, prec):
                if prec not in self._stats:
                    self._stats[prec] = self._build(prec)
                memo: dict = {}
                for cols in pending:
                    members = groups[cols]
                    try:
                        b, e = self._fit_group(cols, [features[i].k - 1 for i in members], prec, memo)
                    except ArithmeticError:
                        if prec >= self.MAX_PREC:
                            raise
                        retry.append(cols)
                        continue
                    betas[members] = b
                    mse[members] = e
            pending = retry
            prec *= 2
        return betas, mse

    def _residual(self, cols, memo):
        """Per-environment covariances of (X, Y) after projecting out X_cols.

        Built from the residuals for ``cols[:-1]`` by one sweep step per
        environment: R <- R - R[:, j] R[j, :] / R[j, j].
        """
        if cols in memo:
            return memo[cols]
        flint = self.flint
        if not cols:
            res = self._stats[flint.ctx.prec][0]
        else:
            j = cols[-1]
            D = self.d + 1
            res = []
            for R in self._residual(cols[:-1], memo):
                col = flint.arb_mat(D, 1, [R[i, j] for i in range(D)])
                res.append(R - col * (col.transpose() * (1 / R[j, j])))
        memo[cols] = res
        return res

    def _pooled_residual(self, cols, memo):
        w = self._stats[self.flint.ctx.prec][1]
        res = self._residual(cols, memo)
        pooled = res[0] * w[0]
        for wi, R in zip(w[1:], res[1:]):
            pooled += R * wi
        return pooled

    def _fit_group(self, cols, ks, prec, memo):
        """All candidates sharing the conditioning set ``cols``."""
        flint = self.flint
        d = self.d
        D = d + 1
        _, _, Sinv, theta, base, pooled_c = self._stats[prec]
        R = self._pooled_residual(cols, memo)
        m = len(ks)
        b = np.zeros((m, D))
        e = np.zeros(m)
        # P = pooled covariance of the projections of (X, Y) on X_cols
        fx = flint.arb_mat(d, m, [pooled_c[i, k] - R[i, k] for i in range(d) for k in ks])
        g = Sinv * fx  # column r: coefficients of feature ks[r] regressed on X
        fxg = fx.transpose() * g
        fxt = fx.transpose() * theta
        gg = g.transpose() * g
        gt = g.transpose() * theta
        for r, k in enumerate(ks):
            rff = pooled_c[k, k] - R[k, k] - fxg[r, r]
            rfy = pooled_c[k, d] - R[k, d] - fxt[r, 0]
            # a ball around zero means the feature lies in the span of X
            if rff.contains(0):
                lam = gt[r, 0] / (1 + gg[r, r])
                mm = base
            else:
                lam = rfy / rff
                mm = base - rfy * rfy / rff
            b[r, 0] = self._mid(lam)
            b[r, 1:] = [self._mid(theta[j, 0] - g[j, r] * lam) for j in range(d)]
            e[r] = self._mid(mm)
        return b, e


class _precision:
    def __init__(self, flint, prec):
        self.flint = flint
        self.prec = prec

    def __enter__(self):
        self.old = self.flint.ctx.prec
        self.flint.ctx.prec = self.prec

    def __exit__(self, *exc):
        self.flint.ctx.prec = self.old


# -- module-level conveniences --------------------------------------------------


def lmmse_mse(spec: ScmSpec, labels=None, weights=None) -> float:
    return PopulationOracle(spec, labels, weights).lmmse_mse()


def fit_candidates(spec: ScmSpec, features, labels=None, weights=None, exact="auto"):
    """``(betas, mse)`` of the population augmented regressions."""
    betas, mse, _ = PopulationOracle(spec, labels, weights).fit_candidates(features, exact)
    return betas, mse


def feature_decomposition(spec: ScmSpec, f: FeatureIndex, labels=None) -> Decomposition:
    return PopulationOracle(spec, labels).feature_decompositions([f])[0]


def response_decomposition(spec: ScmSpec, labels=None) -> Decomposition:
    return PopulationOracle(spec, labels).response_decomposition()


def covers_interventions(spec: ScmSpec, f: FeatureIndex) -> bool:
    """k is not intervened and every intervened coordinate lies in S."""
    hit = set((spec.intervened() + 1).tolist())
    return f.k not in hit and hit <= set(f.S)


def covering_features(spec: ScmSpec, max_subset_size=None) -> list:
    """Every candidate accepted by :func:`covers_interventions`."""
    return [f for f in enumerate_features(spec.d, max_subset_size) if covers_interventions(spec, f)]
