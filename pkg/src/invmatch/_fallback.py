"""Pure numpy implementation of the candidate-fitting kernel.

Same signature and results as the compiled ``_kernels.fit_candidates``;
candidates are processed in batches of equal subset size.
"""
import numpy as np


def _batch_solve(sub, rhs, chol_tol):
    """Solve each SPD system in the stack; rows failing the pivot test are flagged."""
    m = sub.shape[0]
    x = np.zeros_like(rhs)
    ok = np.ones(m, dtype=bool)
    try:
        L = np.linalg.cholesky(sub)
    except np.linalg.LinAlgError:
        L = None
    if L is not None:
        piv = np.diagonal(L, axis1=1, axis2=2) ** 2
        dmax = np.diagonal(sub, axis1=1, axis2=2).max(axis=1)
        ok = np.all(piv > chol_tol * dmax[:, None], axis=1)
        z = np.linalg.solve(L, rhs[..., None])
        x = np.linalg.solve(np.swapaxes(L, 1, 2), z)[..., 0]
        x[~ok] = 0.0
        return x, ok
    for i in range(m):
        try:
            Li = np.linalg.cholesky(sub[i])
        except np.linalg.LinAlgError:
            ok[i] = False
            continue
        if np.any(np.diag(Li) ** 2 <= chol_tol * np.diag(sub[i]).max()):
            ok[i] = False
            continue
        x[i] = np.linalg.solve(Li.T, np.linalg.solve(Li, rhs[i]))
    return x, ok


def fit_candidates(grams, xtys, ginv, theta, rss_x, ks, subsets, sizes, collinear_tol, chol_tol):
    p, d, _ = grams.shape
    m = ks.shape[0]
    betas = np.zeros((m, d + 1))
    rss = np.zeros(m)
    flags = np.zeros(m, dtype=np.int8)
    for s in np.unique(sizes):
        idx = np.flatnonzero(sizes == s)
        K = ks[idx]
        SS = subsets[idx, :s]
        ff = np.zeros(len(idx))
        fy = np.zeros(len(idx))
        h = np.zeros((len(idx), d))
        ok = np.ones(len(idx), dtype=bool)
        for u in range(p):
            G = grams[u]
            sub = G[SS[:, :, None], SS[:, None, :]]
            rhs = G[SS, K[:, None]]
            c, good = _batch_solve(sub, rhs, chol_tol)
            ok &= good
            ff += np.einsum("ms,ms->m", c, rhs)
            fy += np.einsum("ms,ms->m", c, xtys[u][SS])
            h += np.einsum("dms,ms->md", G[:, SS], c)
        g = h @ ginv.T
        rff = ff - np.einsum("md,md->m", h, g)
        rfy = fy - h @ theta
        full = rff > collinear_tol * ff
        safe = np.where(full, rff, 1.0)
        lam = np.where(full, rfy / safe, (g @ theta) / (1.0 + np.einsum("md,md->m", g, g)))
        r = np.where(full, rss_x - rfy * rfy / safe, rss_x)
        r = np.maximum(r, 0.0)
        b = np.empty((len(idx), d + 1))
        b[:, 0] = lam
        b[:, 1:] = theta[None, :] - lam[:, None] * g
        b[~ok] = 0.0
        r[~ok] = 0.0
        betas[idx] = b
        rss[idx] = r
        flags[idx] = (~ok).astype(np.int8)
    return betas, rss, flags
