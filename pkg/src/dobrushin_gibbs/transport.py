"""Wasserstein-1 distances, exact finite transport plans and optimal couplings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, sparse
from scipy.optimize import linprog
from scipy.special import ndtr

from .core import GroundMetric
from .models import FinitePmf, Gaussian

MAX_OT_SIZE = 5000
MARGINAL_TOL = 1e-10
_LP_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


class TransportError(ValueError):
    pass


def _as_pmf(p) -> np.ndarray:
    if isinstance(p, FinitePmf):
        return np.asarray(p.probs)
    return np.asarray(p, dtype=np.float64)


def w1_discrete_metric(p, q) -> float:
    """W1 under ``1{a != b}``: half the total variation."""
    p = _as_pmf(p)
    q = _as_pmf(q)
    if p.shape != q.shape:
        raise TransportError(f"alphabet mismatch: {p.size} vs {q.size}")
    return 0.5 * float(np.abs(p - q).sum())


def _finite_line_w1(d1: FinitePmf, d2: FinitePmf) -> float:
    s1 = d1.support if d1.support is not None else np.arange(d1.alphabet, dtype=np.float64)
    s2 = d2.support if d2.support is not None else np.arange(d2.alphabet, dtype=np.float64)
    pts = np.union1d(s1, s2)
    F1 = np.array([d1.probs[s1 <= t].sum() for t in pts])
    F2 = np.array([d2.probs[s2 <= t].sum() for t in pts])
    return float(np.sum(np.abs(F1 - F2)[:-1] * np.diff(pts)))


def w1_real_line(d1, d2) -> float:
    """W1 under ``|a - b|`` between two laws on the real line."""
    if isinstance(d1, Gaussian) and isinstance(d2, Gaussian):
        if d1.sd == d2.sd:
            return abs(d1.mean - d2.mean)
        lo = min(d1.mean - 40 * d1.sd, d2.mean - 40 * d2.sd)
        hi = max(d1.mean + 40 * d1.sd, d2.mean + 40 * d2.sd)
        # equal-scale quantiles meet once; split the integral at the CDF crossing
        cross = (d2.sd * d1.mean - d1.sd * d2.mean) / (d2.sd - d1.sd)
        breaks = [lo, cross, hi] if lo < cross < hi else [lo, hi]

        def gap(t):
            return abs(ndtr((t - d1.mean) / d1.sd) - ndtr((t - d2.mean) / d2.sd))

        total = 0.0
        for x0, x1 in zip(breaks[:-1], breaks[1:]):
            val, _ = integrate.quad(gap, x0, x1, epsabs=1e-11, epsrel=1e-10, limit=200)
            total += val
        return float(total)
    if isinstance(d1, FinitePmf) and isinstance(d2, FinitePmf):
        return _finite_line_w1(d1, d2)
    raise TransportError("w1_real_line needs two Gaussians or two finite pmfs")


# --------------------------------------------------------------------------
# couplings


def maximal_coupling_from_uniforms(p, q, u0, u1, u2):
    """Maximal coupling of two pmfs driven by three uniforms.

    ``a`` is the inverse-CDF draw from ``p`` with ``u0``; it is kept for ``b``
    with probability ``min(p_a, q_a) / p_a``, otherwise ``b`` is drawn from the
    normalised positive part of ``q - p`` with ``u2``.  Conditionally on
    ``a != b`` the pair is an independent draw from the two residuals, so the
    joint law is the classical maximal coupling and ``P(a != b)`` is half the
    total variation.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    cdf = np.cumsum(p)
    a = int(min(np.searchsorted(cdf, u0, side="right"), p.size - 1))
    pa, qa = p[a], q[a]
    if u1 * pa < min(pa, qa):
        return a, a
    resid = np.maximum(q - p, 0.0)
    resid /= resid.sum()
    b = int(min(np.searchsorted(np.cumsum(resid), u2, side="right"), p.size - 1))
    return a, b


def optimal_coupling_sample(d1, d2, rng, size=None, metric: GroundMetric | None = None):
    """Sample from a W1-optimal coupling of ``d1`` and ``d2``.

    Finite pmfs under the discrete metric use the maximal coupling; laws on the
    line under ``|a - b|`` use the comonotone coupling (one shared uniform pushed
    through both quantile functions).
    """
    if type(d1) is not type(d2):
        raise TransportError("cannot couple laws of different kinds")
    if metric is None:
        metric = GroundMetric.DISCRETE if isinstance(d1, FinitePmf) else GroundMetric.ABSOLUTE
    n = 1 if size is None else int(size)
    u = rng.random((3, n))
    if metric is GroundMetric.ABSOLUTE:
        a = d1.quantile(u[0])
        b = d2.quantile(u[0])
        if isinstance(d1, FinitePmf):
            s1 = d1.support if d1.support is not None else np.arange(d1.alphabet, dtype=np.float64)
            s2 = d2.support if d2.support is not None else np.arange(d2.alphabet, dtype=np.float64)
            a, b = s1[a], s2[b]
    else:
        if isinstance(d1, Gaussian):
            raise TransportError("discrete-metric coupling needs finite pmfs")
        if d1.alphabet != d2.alphabet:
            raise TransportError("alphabet mismatch")
        p, q = d1.probs, d2.probs
        a = np.minimum(np.searchsorted(np.cumsum(p), u[0], side="right"), p.size - 1)
        b = a.copy()
        pa, qa = p[a], q[a]
        reject = ~(u[1] * pa < np.minimum(pa, qa))
        if reject.any():
            resid = np.maximum(q - p, 0.0)
            resid /= resid.sum()
            b[reject] = np.minimum(np.searchsorted(np.cumsum(resid), u[2][reject], side="right"), p.size - 1)
    if size is None:
        return a[0].item(), b[0].item()
    return a, b


# --------------------------------------------------------------------------
# exact finite transport


@dataclass(frozen=True)
class TransportPlan:
    """An optimal plan with its dual certificate.

    ``u`` and ``v`` are potentials with ``u_i + v_j <= cost_ij`` everywhere;
    ``gap`` is the primal cost minus the dual value ``u.p + v.q``.
    """

    support: tuple[tuple[int, int, float], ...]
    cost: float
    row_residual: float
    col_residual: float
    u: np.ndarray
    v: np.ndarray
    gap: float

    def matrix(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        for i, j, m in self.support:
            out[i, j] += m
        return out

    def to_csv(self) -> str:
        lines = ["source,target,mass"]
        lines += [f"{i},{j},{m:.17g}" for i, j, m in self.support]
        return "\n".join(lines) + "\n"


def _c_transform_rows(cost, v):
    """``u_i = min_j (cost_ij - v_j)``: the best row potential given ``v``."""
    return np.min(cost - v[None, :], axis=1)


def exact_ot_finite(cost, p, q) -> TransportPlan:
    """Exact optimal transport between two finite pmfs.

    Solved by the HiGHS dual simplex; the returned potentials are repaired to
    be exactly feasible and the duality gap is recomputed from them.
    """
    cost = np.asarray(cost, dtype=np.float64)
    p = _as_pmf(p)
    q = _as_pmf(q)
    if cost.ndim != 2 or cost.shape != (p.size, q.size):
        raise TransportError(f"cost shape {cost.shape} does not match pmfs ({p.size}, {q.size})")
    if max(cost.shape) > MAX_OT_SIZE:
        raise TransportError(f"transport problem larger than {MAX_OT_SIZE} points")
    if not np.all(np.isfinite(cost)) or np.any(cost < 0):
        raise TransportError("cost entries must be finite and nonnegative")
    if np.any(p < 0) or np.any(q < 0):
        raise TransportError("masses must be nonnegative")
    if abs(p.sum() - q.sum()) > MARGINAL_TOL:
        raise TransportError(f"unbalanced marginals: {p.sum()!r} vs {q.sum()!r}")

    rows = np.flatnonzero(p > 0)
    cols = np.flatnonzero(q > 0)
    sub = cost[np.ix_(rows, cols)]
    m, k = sub.shape
    plan = np.zeros((m, k))
    if m == 1 or k == 1:
        plan = np.outer(p[rows], q[cols]) / max(p[rows].sum(), 1e-300)
        vs = np.zeros(k) if m > 1 else sub[0].copy()
    else:
        row_op = sparse.kron(sparse.identity(m), np.ones((1, k)))
        col_op = sparse.kron(np.ones((1, m)), sparse.identity(k))
        A_eq = sparse.vstack([row_op, col_op]).tocsr()
        b_eq = np.concatenate([p[rows], q[cols]])
        res = linprog(sub.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds", options=_LP_OPTIONS)
        if res.status != 0:
            raise TransportError(f"transport LP failed: {res.message}")
        plan = np.maximum(res.x.reshape(m, k), 0.0)
        vs = np.asarray(res.eqlin.marginals[m:], dtype=np.float64)

    # repair potentials: v from the solver, u as its c-transform, then v as the c-transform of u
    v = np.full(q.size, 0.0)
    v[cols] = vs
    u = _c_transform_rows(cost[:, cols], v[cols])
    v = np.min(cost - u[:, None], axis=0)
    full = np.zeros(cost.shape)
    full[np.ix_(rows, cols)] = plan
    primal = float(np.sum(full * cost))
    dual = float(u @ p + v @ q)
    support = tuple(
        (int(i), int(j), float(full[i, j])) for i, j in zip(*np.nonzero(full > 0))
    )
    return TransportPlan(
        support=support,
        cost=primal,
        row_residual=float(np.abs(full.sum(axis=1) - p).max()),
        col_residual=float(np.abs(full.sum(axis=0) - q).max()),
        u=u,
        v=v,
        gap=primal - dual,
    )


def is_metric_cost(cost, tol: float = 1e-12) -> bool:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape[0] != cost.shape[1]:
        return False
    if np.any(np.abs(np.diag(cost)) > tol) or np.any(np.abs(cost - cost.T) > tol):
        return False
    # d(i,k) <= min_j d(i,j) + d(j,k)
    two_step = np.min(cost[:, :, None] + cost[None, :, :], axis=1)
    return bool(np.all(cost <= two_step + tol))


def kantorovich_dual_check(plan: TransportPlan, p, q, cost, metric: bool | None = None,
                           return_witness: bool = False):
    """Duality gap of ``plan`` recomputed from the plan alone.

    Potentials come from Bellman-Ford shortest paths in the residual graph of
    the plan (forward arcs ``i -> j`` at cost ``c_ij``, backward arcs on the
    support at ``-c_ij``).  For a metric cost the row potential is turned into
    a 1-Lipschitz witness ``f`` and the gap is ``cost(plan) - sum f d(p - q)``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    p = _as_pmf(p)
    q = _as_pmf(q)
    mat = plan.matrix(cost.shape)
    if np.any(mat < 0):
        raise TransportError("plan has negative mass")
    if (np.abs(mat.sum(axis=1) - p).max() > 1e-9) or (np.abs(mat.sum(axis=0) - q).max() > 1e-9):
        raise TransportError("plan marginals do not match")
    on_support = mat > 0
    d_src = np.zeros(cost.shape[0])
    d_sink = np.zeros(cost.shape[1])
    for _ in range(sum(cost.shape) + 1):
        new_sink = np.minimum(d_sink, np.min(d_src[:, None] + cost, axis=0))
        back = np.where(on_support, new_sink[None, :] - cost, np.inf)
        new_src = np.minimum(d_src, back.min(axis=1))
        if np.array_equal(new_sink, d_sink) and np.array_equal(new_src, d_src):
            break
        d_src, d_sink = new_src, new_sink
    v = d_sink
    u = _c_transform_rows(cost, v)
    primal = float(np.sum(mat * cost))
    if metric is None:
        metric = cost.shape[0] == cost.shape[1] and cost.shape[0] <= 400 and is_metric_cost(cost)
    if metric:
        f = u  # c-transform of v; 1-Lipschitz for a metric cost
        gap = primal - float(f @ (p - q))
        witness = f
    else:
        gap = primal - float(u @ p + v @ q)
        witness = (u, v)
    gap = max(gap, 0.0) if gap > -1e-12 else gap
    if return_witness:
        return gap, witness
    return gap
