"""Pure numpy sweep kernels, the fallback for ``_ckernels``.

Each kernel advances a batch of replicas by one systematic scan, in place.
``X`` has shape ``(R, N)``; ``replicas`` holds the global replica index of
each row so the uniforms do not depend on how a batch was sliced.  When
``Y`` is given the two batches move together under the per-site optimal
coupling: maximal coupling for finite alphabets, shared quantile for
Gaussians.  Row r of ``X`` follows the plain chain of replica r exactly.
"""
import numpy as np
from scipy.special import ndtri

from .rng import SLOT_ACCEPT, SLOT_DRAW, SLOT_RESIDUAL, replica_keys, uniforms_from_keys

BACKEND = "python"


def _inverse_cdf(cdf, u):
    # first column whose cumulative mass exceeds u
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def _maximal_couple(p, q, u0, u1, u2):
    rows = np.arange(p.shape[0])
    a = _inverse_cdf(np.cumsum(p, axis=1), u0)
    pa = p[rows, a]
    qa = q[rows, a]
    b = a.copy()
    reject = ~(u1 * pa < np.minimum(pa, qa))
    if reject.any():
        resid = np.maximum(q[reject] - p[reject], 0.0)
        resid /= resid.sum(axis=1, keepdims=True)
        b[reject] = _inverse_cdf(np.cumsum(resid, axis=1), u2[reject])
    return a, b


def _site_uniforms(keys, sweep, i, coupled):
    u0 = uniforms_from_keys(keys, sweep, i, SLOT_DRAW)
    if not coupled:
        return u0, None, None
    return u0, uniforms_from_keys(keys, sweep, i, SLOT_ACCEPT), uniforms_from_keys(keys, sweep, i, SLOT_RESIDUAL)


def _neighbour_sum(X, nbrs, w, transform=None):
    # sequential accumulation in neighbour order, matching the compiled loop bit for bit
    acc = np.zeros(X.shape[0])
    for j, wj in zip(nbrs, w):
        col = X[:, j] if transform is None else transform(X[:, j])
        acc = acc + col * wj
    return acc


def _spin(col):
    return (2 * col - 1).astype(np.float64)


def ising_p_minus(beta, m):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(2.0 * beta * m))


def ising_sweep(X, Y, J, h, beta, seed, replicas, sweep):
    keys = replica_keys(seed, replicas)
    coupled = Y is not None
    R, N = X.shape
    for i in range(N):
        u0, u1, u2 = _site_uniforms(keys, sweep, i, coupled)
        nbrs = np.flatnonzero(J[i])
        w = J[i, nbrs]
        pm_x = ising_p_minus(beta, _neighbour_sum(X, nbrs, w, _spin) + h[i])
        a = (u0 >= pm_x).astype(X.dtype)
        if coupled:
            pm_y = ising_p_minus(beta, _neighbour_sum(Y, nbrs, w, _spin) + h[i])
            pa = np.where(a == 0, pm_x, 1.0 - pm_x)
            qa = np.where(a == 0, pm_y, 1.0 - pm_y)
            keep = u1 * pa < np.minimum(pa, qa)
            Y[:, i] = np.where(keep, a, 1 - a)
        X[:, i] = a


def _table_probs(idx, logw, alphabet, stride, xi):
    base = idx - xi * stride
    lw = logw[base[:, None] + stride * np.arange(alphabet)[None, :]]
    w = np.exp(lw - lw.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def table_sweep(X, Y, logw, alphabet, seed, replicas, sweep):
    keys = replica_keys(seed, replicas)
    coupled = Y is not None
    R, N = X.shape
    radix = alphabet ** np.arange(N - 1, -1, -1, dtype=np.int64)
    ix = X @ radix
    iy = Y @ radix if coupled else None
    for i in range(N):
        u0, u1, u2 = _site_uniforms(keys, sweep, i, coupled)
        stride = int(radix[i])
        p = _table_probs(ix, logw, alphabet, stride, X[:, i])
        if coupled:
            q = _table_probs(iy, logw, alphabet, stride, Y[:, i])
            a, b = _maximal_couple(p, q, u0, u1, u2)
            iy += (b - Y[:, i]) * stride
            Y[:, i] = b
        else:
            a = _inverse_cdf(np.cumsum(p, axis=1), u0)
        ix += (a - X[:, i]) * stride
        X[:, i] = a


def pmf_sweep(X, Y, probs, seed, replicas, sweep):
    """Free finite model: site ``i`` has law ``probs[i]`` whatever the rest."""
    keys = replica_keys(seed, replicas)
    R, N = X.shape
    cdf = np.cumsum(probs, axis=1)
    for i in range(N):
        u0 = uniforms_from_keys(keys, sweep, i, SLOT_DRAW)
        a = _inverse_cdf(np.broadcast_to(cdf[i], (R, cdf.shape[1])), u0)
        X[:, i] = a
        if Y is not None:
            # identical conditionals: the maximal coupling is diagonal
            Y[:, i] = a


def gaussian_sweep(X, Y, A, b, sigma, seed, replicas, sweep):
    keys = replica_keys(seed, replicas)
    R, N = X.shape
    for i in range(N):
        z = ndtri(uniforms_from_keys(keys, sweep, i, SLOT_DRAW))
        nbrs = np.flatnonzero(A[i])
        w = A[i, nbrs]
        X[:, i] = b[i] + _neighbour_sum(X, nbrs, w) + sigma[i] * z
        if Y is not None:
            Y[:, i] = b[i] + _neighbour_sum(Y, nbrs, w) + sigma[i] * z
