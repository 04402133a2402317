"""Exact one-sweep kernels on enumerable models and exact distances to equilibrium."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import logsumexp

from .core import DEFAULT_ENUMERATION_CAP, configuration_index, enumerate_configurations
from .dobrushin import coefficient_matrix
from .models import ConditionalModel, GaussianLinear, ModelError, exact_gibbs_measure
from .transport import _LP_OPTIONS, TransportError, exact_ot_finite

ROW_TOL = 1e-12
DENSE_OT_MAX = 64


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic one-sweep kernel over mixed-radix-indexed configurations."""

    P: np.ndarray
    alphabet: int
    n_sites: int
    model: ConditionalModel | None = None

    @property
    def size(self) -> int:
        return self.P.shape[0]

    def configurations(self) -> np.ndarray:
        return enumerate_configurations(self.alphabet, self.n_sites, cap=self.size)


def site_kernel(log_weights: np.ndarray, alphabet: int, n_sites: int, i: int) -> sparse.csr_matrix:
    """Heat-bath update of site ``i`` as a sparse S x S matrix (A nonzeros per row)."""
    shape = (alphabet,) * n_sites
    lw = log_weights.reshape(shape)
    cond = np.exp(lw - logsumexp(lw, axis=i, keepdims=True)).reshape(-1)
    S = alphabet**n_sites
    stride = alphabet ** (n_sites - 1 - i)
    idx = np.arange(S)
    digit = (idx // stride) % alphabet
    base = idx - digit * stride
    cols = base[:, None] + stride * np.arange(alphabet)[None, :]
    rows = np.repeat(idx, alphabet)
    return sparse.csr_matrix((cond[cols].reshape(-1), (rows, cols.reshape(-1))), shape=(S, S))


def build_transition_matrix(model: ConditionalModel, cap: int = DEFAULT_ENUMERATION_CAP,
                            sites=None) -> TransitionMatrix:
    """``P = K_0 K_1 ... K_{N-1}``: the sites are refreshed in ascending order.

    ``sites`` restricts the product to a contiguous block of updates (used to
    check associativity by composing partial sweeps).
    """
    if not model.finite:
        raise ModelError("transition matrix needs a finite alphabet")
    A, n = model.alphabet, model.n_sites
    if A**n > cap:
        raise ModelError(f"state space {A}^{n} exceeds cap {cap}")
    lw = model.log_weight_table(cap)
    order = range(n) if sites is None else sites
    P = None
    for i in order:
        K = site_kernel(lw, A, n, i)
        P = K if P is None else P @ K
    dense = P.toarray() if P is not None else np.eye(A**n)
    return TransitionMatrix(dense, A, n, model)


def invariance_check(P, mu) -> float:
    """``||mu P - mu||_1``."""
    P = P.P if isinstance(P, TransitionMatrix) else np.asarray(P)
    mu = np.asarray(mu, dtype=np.float64)
    if P.shape != (mu.size, mu.size):
        raise ValueError(f"dimension mismatch: P is {P.shape}, mu has {mu.size} entries")
    return float(np.abs(mu @ P - mu).sum())


def _initial_law(tm: TransitionMatrix, x0) -> np.ndarray:
    x0 = np.asarray(x0)
    if x0.ndim == 1 and x0.size == tm.n_sites and x0.dtype.kind in "iu":
        nu = np.zeros(tm.size)
        nu[configuration_index(x0, tm.alphabet)] = 1.0
        return nu
    nu = np.asarray(x0, dtype=np.float64)
    if nu.shape != (tm.size,) or abs(nu.sum() - 1) > 1e-10:
        raise ValueError("initial law must be a configuration or a pmf over all configurations")
    return nu


def evolve(tm: TransitionMatrix, x0, ks) -> dict[int, np.ndarray]:
    """Laws ``nu P^k`` for every ``k`` in ``ks``."""
    nu = _initial_law(tm, x0)
    ks = sorted(set(int(k) for k in ks))
    out = {}
    cur, step = nu, 0
    for k in ks:
        while step < k:
            cur = cur @ tm.P
            step += 1
        out[k] = cur.copy()
    return out


def hamming_cost(configs: np.ndarray) -> np.ndarray:
    S, n = configs.shape
    cost = np.zeros((S, S))
    for i in range(n):  # accumulate one coordinate at a time
        col = configs[:, i]
        cost += col[:, None] != col[None, :]
    return cost


def w1_hamming_flow(p, q, alphabet: int, n_sites: int) -> tuple[float, np.ndarray]:
    """W1 under the Hamming metric as min-cost flow on the Hamming graph.

    Returns the distance and the optimal 1-Lipschitz potential (dual).
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    configs = enumerate_configurations(alphabet, n_sites, cap=p.size)
    S = p.size
    tails, heads = [], []
    for i in range(n_sites):
        stride = alphabet ** (n_sites - 1 - i)
        for shift in range(1, alphabet):
            nxt = np.arange(S) + (((configs[:, i] + shift) % alphabet) - configs[:, i]) * stride
            tails.append(np.arange(S))
            heads.append(nxt)
    tails = np.concatenate(tails)
    heads = np.concatenate(heads)
    E = tails.size
    inc = sparse.csr_matrix(
        (np.concatenate([np.ones(E), -np.ones(E)]), (np.concatenate([tails, heads]), np.tile(np.arange(E), 2))),
        shape=(S, E),
    )
    res = linprog(np.ones(E), A_eq=inc, b_eq=p - q, bounds=(0, None), method="highs-ds", options=_LP_OPTIONS)
    if res.status != 0:
        raise TransportError(f"flow LP failed: {res.message}")
    f = np.asarray(res.eqlin.marginals)
    return float(res.fun), f


def exact_w1(tm: TransitionMatrix, nu, mu) -> float:
    """Exact W1 under d_L1 (Hamming) between two laws on the enumerated space."""
    return w1_of_difference(tm, np.asarray(nu, dtype=np.float64) - np.asarray(mu, dtype=np.float64))


def w1_of_difference(tm: TransitionMatrix, diff) -> float:
    """W1 between the laws whose difference is ``diff``.

    For a metric cost the common mass can stay in place, so only the positive
    and negative parts are transported; normalising them keeps tiny distances
    at full relative precision.
    """
    diff = np.asarray(diff, dtype=np.float64)
    pos = np.maximum(diff, 0.0)
    neg = np.maximum(-diff, 0.0)
    mass = 0.5 * (pos.sum() + neg.sum())
    if mass == 0.0:
        return 0.0
    pos /= pos.sum()
    neg /= neg.sum()
    if tm.size <= DENSE_OT_MAX:
        keep_p = np.flatnonzero(pos > 0)
        keep_q = np.flatnonzero(neg > 0)
        configs = tm.configurations()
        cost = (configs[keep_p][:, None, :] != configs[keep_q][None, :, :]).sum(axis=2).astype(np.float64)
        return mass * exact_ot_finite(cost, pos[keep_p], neg[keep_q]).cost
    value, _ = w1_hamming_flow(pos, neg, tm.alphabet, tm.n_sites)
    return mass * value


def evolve_difference(tm: TransitionMatrix, nu, mu, ks) -> dict[int, np.ndarray]:
    """``(nu - mu) P^k`` propagated directly.

    ``mu`` is invariant, so the drift of the total mass caused by rounding is
    removed along ``mu`` after every step; the result keeps relative accuracy
    long after ``nu P^k - mu`` would have cancelled to noise.
    """
    mu = np.asarray(mu, dtype=np.float64)
    diff = _initial_law(tm, nu) - mu
    ks = sorted(set(int(k) for k in ks))
    out = {}
    step = 0
    diff = diff - diff.sum() * mu
    for k in ks:
        while step < k:
            diff = diff @ tm.P
            diff -= diff.sum() * mu
            step += 1
        out[k] = diff.copy()
    return out


def mean_site_distance_to(tm: TransitionMatrix, nu, mu) -> np.ndarray:
    """``E d(Z0^i, Y^i)`` under the independent coupling of ``nu`` and ``mu``."""
    configs = tm.configurations()
    out = np.empty(tm.n_sites)
    for i in range(tm.n_sites):
        mx = np.bincount(configs[:, i], weights=nu, minlength=tm.alphabet)
        my = np.bincount(configs[:, i], weights=mu, minlength=tm.alphabet)
        out[i] = 1.0 - float(mx @ my)
    return out


@dataclass(frozen=True)
class DecayRow:
    k: int
    w1_exact: float
    tv_half: float
    bound_nrk: float


def exact_w1_to_stationary(tm: TransitionMatrix, mu, x0, k_list, r: float | None = None) -> list[DecayRow]:
    """Exact ``W1(delta_x0 P^k, mu)`` with the geometric envelope ``N r^k max_i E d``.

    ``r`` defaults to the Dobrushin ``||C||_inf`` of the attached model.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if r is None:
        if tm.model is None:
            raise ValueError("need r or a transition matrix built from a model")
        r = coefficient_matrix(tm.model).r
    nu0 = _initial_law(tm, x0)
    spread = float(mean_site_distance_to(tm, nu0, mu).max())
    rows = []
    for k, diff in sorted(evolve_difference(tm, nu0, mu, k_list).items()):
        rows.append(DecayRow(
            k=k,
            w1_exact=w1_of_difference(tm, diff),
            tv_half=0.5 * float(np.abs(diff).sum()),
            bound_nrk=tm.n_sites * r**k * spread,
        ))
    return rows


def total_variation_to_stationary(tm: TransitionMatrix, mu, x0, k: int) -> float:
    """Half the L1 distance between ``nu P^k`` and ``mu``."""
    diff = evolve_difference(tm, x0, mu, [k])[k]
    return 0.5 * float(np.abs(diff).sum())


def expected_observable(tm: TransitionMatrix, x0, f_values, ks) -> dict[int, float]:
    """``P^k f(x0)`` for each ``k``; ``f_values`` is ``f`` tabulated over configurations."""
    f_values = np.asarray(f_values, dtype=np.float64)
    return {k: float(law @ f_values) for k, law in evolve(tm, x0, ks).items()}


def cesaro_mean(tm: TransitionMatrix, x0, f_values, n: int) -> float:
    """``(1/n) sum_{k=1}^n P^k f(x0)``."""
    f_values = np.asarray(f_values, dtype=np.float64)
    law = _initial_law(tm, x0)
    total = 0.0
    for _ in range(n):
        law = law @ tm.P
        total += float(law @ f_values)
    return total / n


def stationary(model: ConditionalModel, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    return exact_gibbs_measure(model, cap)


def gaussian_sweep_law(model: GaussianLinear, x0) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of one sweep ``P(x0, .)`` for Gaussian-linear conditionals.

    Updated coordinates feed later sites, so ``Y = (I - L)^{-1} (U x0 + b + sigma z)``
    with ``L``/``U`` the strictly lower/upper parts of the coefficient matrix.
    """
    A = np.asarray(model.A)
    L = np.tril(A, -1)
    U = np.triu(A, 1)
    M = np.linalg.inv(np.eye(model.n_sites) - L)
    mean = M @ (U @ np.asarray(x0, dtype=np.float64) + model.b)
    cov = M @ np.diag(model.sigma**2) @ M.T
    return mean, cov
