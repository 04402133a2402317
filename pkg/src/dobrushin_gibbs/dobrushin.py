"""Dobrushin interdependence matrices and the sweep contraction matrix.

``C[i, j]`` bounds how far (in W1) the conditional of site ``i`` moves per
unit change of coordinate ``j``.  One systematic sweep propagates the vector
of expected per-site distances through ``Q = B_{N-1} ... B_0``, where ``B_i``
is the identity with row ``i`` replaced by row ``i`` of ``C``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import DEFAULT_ENUMERATION_CAP, GroundMetric
from .models import ConditionalModel, FinitePmf, FreeModel, GaussianLinear
from .transport import w1_discrete_metric, w1_real_line

ATOL = 1e-12
CLOSED_FORM_MAX_N = 12


class DobrushinError(ValueError):
    pass


class DobrushinNorms(NamedTuple):
    r: float
    r1: float
    h1: bool
    h2: bool
    h2_half: bool


@dataclass(frozen=True)
class CoefficientMatrix:
    C: np.ndarray
    r: float
    r1: float

    def __post_init__(self):
        C = np.array(self.C, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise DobrushinError("coefficient matrix must be square")
        if np.any(C < 0) or not np.all(np.isfinite(C)):
            raise DobrushinError("coefficients must be finite and nonnegative")
        if np.any(np.diag(C) != 0):
            raise DobrushinError("coefficient matrix must have zero diagonal")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)
        r, r1 = _row_col_max(C)
        if abs(r - self.r) > 1e-14 or abs(r1 - self.r1) > 1e-14:
            raise DobrushinError("stored norms disagree with the matrix")

    @classmethod
    def from_matrix(cls, C) -> "CoefficientMatrix":
        C = np.asarray(C, dtype=np.float64)
        r, r1 = _row_col_max(C)
        return cls(C, r, r1)

    @property
    def n_sites(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class ProductMatrix:
    Q: np.ndarray
    inf_norm: float
    one_norm: float


def _row_col_max(C) -> tuple[float, float]:
    C = np.asarray(C, dtype=np.float64)
    if C.size == 0:
        return 0.0, 0.0
    return float(C.sum(axis=1).max()), float(C.sum(axis=0).max())


def _as_matrix(C) -> np.ndarray:
    return np.asarray(C.C if isinstance(C, CoefficientMatrix) else C, dtype=np.float64)


# --------------------------------------------------------------------------
# coefficients


def _check_locality(model: ConditionalModel, neighborhoods, rng, trials: int = 64):
    """Spot-check that each conditional ignores coordinates outside its neighbourhood."""
    n = model.n_sites
    for _ in range(trials):
        x = rng.integers(0, model.alphabet, size=n)
        i = int(rng.integers(n))
        outside = [k for k in range(n) if k != i and k not in neighborhoods[i]]
        if not outside:
            continue
        k = outside[int(rng.integers(len(outside)))]
        y = x.copy()
        y[k] = (y[k] + 1 + int(rng.integers(model.alphabet - 1))) % model.alphabet
        px = model.conditional(i, x).probs
        py = model.conditional(i, y).probs
        if np.abs(px - py).max() > 1e-12:
            raise DobrushinError(f"conditional of site {i} depends on site {k} outside its neighbourhood")


def coefficient_matrix(model: ConditionalModel, metric: GroundMetric | None = None,
                       cap: int = DEFAULT_ENUMERATION_CAP) -> CoefficientMatrix:
    """Exact Dobrushin coefficients of ``model``.

    Finite alphabets use the discrete metric, where W1 is half the total
    variation, and the supremum runs over every assignment of the joint
    neighbourhood of ``i`` (all other coordinates are irrelevant by locality).
    Gaussian-linear conditionals with equal variances shift only their mean,
    so ``c_ij = |A_ij|`` under ``|a - b|``.
    """
    n = model.n_sites
    metric = model.metric if metric is None else metric
    if isinstance(model, FreeModel):
        return CoefficientMatrix.from_matrix(np.zeros((n, n)))
    if isinstance(model, GaussianLinear):
        if metric is not GroundMetric.ABSOLUTE:
            raise DobrushinError("Gaussian conditionals need the absolute-difference metric")
        return CoefficientMatrix.from_matrix(np.abs(model.A))
    if not model.finite or metric is not GroundMetric.DISCRETE:
        raise DobrushinError(f"unsupported metric/model pair: {metric.value} on {model.kind}")

    A = model.alphabet
    nbhds = [tuple(model.neighborhood(i)) for i in range(n)]
    _check_locality(model, nbhds, np.random.default_rng(20130401))
    C = np.zeros((n, n))
    base = model.reference_configuration()
    for i in range(n):
        nb = nbhds[i]
        if A ** len(nb) > cap:
            raise DobrushinError(f"neighbourhood of site {i} too large to enumerate ({A}^{len(nb)} > {cap})")
        for j in nb:
            others = [k for k in nb if k != j]
            best = 0.0
            for vals in itertools.product(range(A), repeat=len(others)):
                x = base.copy()
                x[others] = vals
                pmfs = []
                for a in range(A):
                    x[j] = a
                    pmfs.append(model.conditional(i, x).probs)
                for a, b in itertools.combinations(range(A), 2):
                    best = max(best, w1_discrete_metric(pmfs[a], pmfs[b]))
            C[i, j] = best
    return CoefficientMatrix.from_matrix(C)


def dobrushin_norms(C) -> DobrushinNorms:
    """``r`` (max row sum), ``r1`` (max column sum) and the uniqueness flags."""
    r, r1 = _row_col_max(_as_matrix(C))
    return DobrushinNorms(r, r1, r < 1, r1 < 1, r1 < 0.5)


def site_contraction_gaps(model: ConditionalModel, C, x, y) -> np.ndarray:
    """``sum_j c_ij d(x_j, y_j) - W1(mu_i(.|x), mu_i(.|y))`` for every site (nonnegative if C is valid)."""
    C = _as_matrix(C)
    x = model.configuration(x)
    y = model.configuration(y)
    d = model.metric.distance(x, y)
    out = np.empty(model.n_sites)
    for i in range(model.n_sites):
        px = model.conditional(i, x)
        py = model.conditional(i, y)
        w = w1_discrete_metric(px, py) if isinstance(px, FinitePmf) else w1_real_line(px, py)
        out[i] = C[i] @ d - w
    return out


# --------------------------------------------------------------------------
# sweep matrices


def update_matrix(C, i: int) -> np.ndarray:
    """``B_i``: identity with row ``i`` replaced by row ``i`` of ``C``."""
    C = _as_matrix(C)
    n = C.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"site index {i} out of range for {n} sites")
    B = np.eye(n)
    B[i] = C[i]
    return B


def q_product(C) -> ProductMatrix:
    """``Q = B_{N-1} ... B_1 B_0`` by dense multiplication."""
    C = _as_matrix(C)
    n = C.shape[0]
    Q = np.eye(n)
    for i in range(n):
        Q = update_matrix(C, i) @ Q
    return ProductMatrix(Q, *_row_col_max(Q))


def q_closed_form(C) -> np.ndarray:
    """``Q`` from the chain-sum expression, independent of matrix products.

    ``Q[k, j] = sum_{h < j} W(k, h) c_{h j}`` where ``W(k, k) = 1`` and, for
    ``h < k``, ``W(k, h)`` sums the products ``c_{k i_l} ... c_{i_2 h}`` over
    strictly decreasing index chains ``k > i_l > ... > i_1 = h``.  Column 0 is
    identically zero.
    """
    C = _as_matrix(C)
    n = C.shape[0]
    if n > CLOSED_FORM_MAX_N:
        raise DobrushinError(f"closed form limited to N <= {CLOSED_FORM_MAX_N}")
    memo: dict[tuple[int, int], float] = {}

    def chains(top: int, h: int) -> float:
        if top == h:
            return 1.0
        if top < h:
            return 0.0
        key = (top, h)
        if key not in memo:
            # first step top -> m with h <= m < top, then a chain from m down to h
            memo[key] = sum(C[top, m] * chains(m, h) for m in range(h, top))
        return memo[key]

    Q = np.zeros((n, n))
    for k in range(n):
        for j in range(1, n):
            Q[k, j] = sum(chains(k, h) * C[h, j] for h in range(j))
    return Q


@dataclass(frozen=True)
class LemmaCertificate:
    r: float
    r1: float
    inf_norm: float
    one_norm: float
    one_norm_bound: float | None
    inf_margin: float
    one_margin: float | None
    inf_holds: bool | None
    one_holds: bool | None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def verify_lemma_bounds(C, slack: float = ATOL) -> LemmaCertificate:
    """Check ``||Q||_inf <= r`` (when r < 1) and ``||Q||_1 <= r1/(1-r1)`` (when r1 < 1).

    Margins are ``bound - value``; a flag is ``None`` when its hypothesis fails.
    """
    C = _as_matrix(C)
    prod = q_product(C)
    r, r1 = _row_col_max(C)
    inf_margin = r - prod.inf_norm
    if r1 < 1:
        bound1 = r1 / (1 - r1)
        one_margin = bound1 - prod.one_norm
        one_holds = one_margin >= -slack
    else:
        bound1 = one_margin = one_holds = None
    return LemmaCertificate(
        r=r,
        r1=r1,
        inf_norm=prod.inf_norm,
        one_norm=prod.one_norm,
        one_norm_bound=bound1,
        inf_margin=inf_margin,
        one_margin=one_margin,
        inf_holds=(inf_margin >= -slack) if r < 1 else None,
        one_holds=one_holds,
    )


def ricci_lower_bound(r1: float) -> float:
    """Coarse Ricci curvature lower bound ``(1 - 2 r1) / (1 - r1)`` of one sweep."""
    if not 0 <= r1 < 1:
        raise DobrushinError(f"curvature bound needs 0 <= r1 < 1, got {r1}")
    return (1 - 2 * r1) / (1 - r1)
