"""Systematic-scan Gibbs chains and their per-site optimal coupling.

A sweep refreshes sites ``0, 1, ..., N-1`` in that order, each from its
conditional given the current (partially refreshed) configuration.  Two
chains are coupled site by site: maximal coupling for finite alphabets,
a shared quantile for Gaussian conditionals.  All randomness comes from the
counter-based streams in :mod:`.rng`, so the first chain of a coupled pair
follows exactly the trajectory of the plain chain with the same seed.

Sweep ``s`` (0-based) maps ``Z_s`` to ``Z_{s+1}``.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtri

from ._pykernels import _maximal_couple
from .core import GroundMetric, enumerate_configurations
from .dobrushin import coefficient_matrix, q_product
from .kernels import state_dtype, sweep_batch
from .models import ConditionalModel, FinitePmf, Gaussian, conditional_distribution
from .rng import SLOT_ACCEPT, SLOT_DRAW, SLOT_RESIDUAL, UniformStream, counter_uniforms
from .transport import maximal_coupling_from_uniforms

SHARD_SIZE = 2048
VALIDITY_ALPHA = 1e-4
# sweep index reserved for drawing initial states, far from any real sweep
INIT_SWEEP = 1 << 62
THREADS_ENV = "DOBRUSHIN_GIBBS_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """``threads`` if given, else ``$DOBRUSHIN_GIBBS_THREADS``, else 1."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        threads = int(raw) if raw else 1
    threads = int(threads)
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return threads


@dataclass
class ChainState:
    """Position of a chain: configuration after ``sweep`` full sweeps plus ``substep`` site updates."""

    x: np.ndarray
    sweep: int = 0
    substep: int = 0

    @property
    def global_step(self) -> int:
        return self.sweep * self.x.size + self.substep


@dataclass
class CoupledTrajectory:
    distances: np.ndarray  # (k_max + 1, N)
    coalesced_at: int | None = None

    @property
    def l1(self) -> np.ndarray:
        return self.distances.sum(axis=1)


# --------------------------------------------------------------------------
# scalar reference path


def _uniforms(rng, sweep: int, site: int):
    if isinstance(rng, UniformStream):
        return rng.site_uniforms(sweep, site)
    return tuple(rng.random(3))


def _site_draw(dist, u: float):
    val = dist.quantile(u)
    return int(val) if isinstance(dist, FinitePmf) else float(val)


def gibbs_sweep(model: ConditionalModel, x, rng, sweep: int = 0) -> np.ndarray:
    """One systematic scan from ``x``.

    ``rng`` is a :class:`UniformStream` (reads the draw slot of every site at
    ``sweep``) or a numpy ``Generator`` (one uniform per site).
    """
    z = model.configuration(x).copy()
    for i in range(model.n_sites):
        u = rng.uniform(sweep, i, SLOT_DRAW) if isinstance(rng, UniformStream) else rng.random()
        z[i] = _site_draw(model.conditional(i, z), u)
    return z


def coupled_site_update(model: ConditionalModel, i: int, x: np.ndarray, y: np.ndarray, u) -> None:
    """Refresh site ``i`` of both chains in place from three uniforms."""
    p = model.conditional(i, x)
    q = model.conditional(i, y)
    if isinstance(p, Gaussian):
        x[i] = p.quantile(u[SLOT_DRAW])
        y[i] = q.quantile(u[SLOT_DRAW])
        return
    a, b = maximal_coupling_from_uniforms(p.probs, q.probs, u[SLOT_DRAW], u[SLOT_ACCEPT], u[SLOT_RESIDUAL])
    x[i] = a
    y[i] = b


def coupled_sweep(model: ConditionalModel, x, y, rng, sweep: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One sweep of the coupled pair; each site uses its own three-uniform sub-stream."""
    x = model.configuration(x).copy()
    y = model.configuration(y).copy()
    for i in range(model.n_sites):
        coupled_site_update(model, i, x, y, _uniforms(rng, sweep, i))
    return x, y


def run_chain(model: ConditionalModel, x0, k_max: int, rng, record=None) -> np.ndarray:
    """``Z_0 .. Z_{k_max}`` as a ``(k_max + 1, N)`` array.

    ``record(k, z)`` is called after every sweep when given.
    """
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    z = model.configuration(x0)
    out = np.empty((k_max + 1, model.n_sites), dtype=z.dtype)
    out[0] = z
    for k in range(k_max):
        z = gibbs_sweep(model, z, rng, sweep=k)
        out[k + 1] = z
        if record is not None:
            record(k + 1, z)
    return out


def coupled_trajectory(model: ConditionalModel, x0, y0, k_max: int, seed: int, replica: int = 0) -> CoupledTrajectory:
    """Per-sweep, per-site distances of one coupled pair (scalar path)."""
    stream = UniformStream(seed, replica)
    x = model.configuration(x0)
    y = model.configuration(y0)
    dist = np.zeros((k_max + 1, model.n_sites))
    dist[0] = model.metric.distance(x, y)
    coalesced = 0 if not dist[0].any() else None
    discrete = model.metric is GroundMetric.DISCRETE
    for k in range(k_max):
        if coalesced is not None and discrete:
            break  # the coupling keeps equal states equal
        x, y = coupled_sweep(model, x, y, stream, sweep=k)
        dist[k + 1] = model.metric.distance(x, y)
        if coalesced is None and not dist[k + 1].any():
            coalesced = k + 1
    return CoupledTrajectory(dist, coalesced if discrete else None)


# --------------------------------------------------------------------------
# batched replicas


def _shards(replicas: int, shard_size: int) -> list[np.ndarray]:
    return [np.arange(s, min(s + shard_size, replicas), dtype=np.int64) for s in range(0, replicas, shard_size)]


def _map_ordered(fn, items, threads: int):
    if threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _initial_batch(model: ConditionalModel, init, idx: np.ndarray) -> np.ndarray:
    arr = np.asarray(init)
    if arr.ndim == 1:
        z = model.configuration(arr)
        return np.ascontiguousarray(np.broadcast_to(z, (idx.size, model.n_sites)), dtype=state_dtype(model))
    return np.ascontiguousarray(arr[idx], dtype=state_dtype(model))


def draw_initial_states(model: ConditionalModel, pmf, replicas: int, seed: int) -> np.ndarray:
    """``replicas`` i.i.d. configurations from a pmf over the enumerated space.

    Uses a reserved sweep index of the counter streams, so the draw is tied to
    ``seed`` yet disjoint from the uniforms the chains consume.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    configs = enumerate_configurations(model.alphabet, model.n_sites, cap=pmf.size)
    u = counter_uniforms(seed, np.arange(replicas), INIT_SWEEP, 0, SLOT_DRAW)
    idx = np.minimum(np.searchsorted(np.cumsum(pmf), u, side="right"), pmf.size - 1)
    return configs[idx]


@dataclass
class DecayReport:
    """Coupled-chain distance decay with its two theoretical envelopes."""

    mean_site: np.ndarray  # (k_max + 1, N)
    mean_l1: np.ndarray
    stderr_l1: np.ndarray
    bound_nrk: np.ndarray  # N r^k max_i E d(Z_0^i(1), Z_0^i(2))
    bound_qk_sites: np.ndarray  # Q^k d_0, shape (k_max + 1, N)
    r: float
    replicas: int
    coalesced_at: int | None = None

    @property
    def bound_qk(self) -> np.ndarray:
        return self.bound_qk_sites.sum(axis=1)

    @property
    def k_max(self) -> int:
        return self.mean_l1.size - 1

    def header(self) -> list[str]:
        n = self.mean_site.shape[1]
        return ["sweep", *[f"mean_site_{i + 1}" for i in range(n)], "mean_l1", "stderr_l1",
                "bound_nrk", "bound_qk"]

    def rows(self) -> list[list]:
        return [[k, *self.mean_site[k].tolist(), float(self.mean_l1[k]), float(self.stderr_l1[k]),
                 float(self.bound_nrk[k]), float(self.bound_qk[k])] for k in range(self.k_max + 1)]


def estimate_w1_decay(model: ConditionalModel, x0, y0, k_max: int, replicas: int, seed: int,
                      threads: int | None = None, backend=None, shard_size: int = SHARD_SIZE,
                      C=None) -> DecayReport:
    """Monte Carlo decay of ``E d_L1(Z_k(1), Z_k(2))`` under the coupling.

    ``x0``/``y0`` are configurations or ``(replicas, N)`` arrays of initial
    states.  Replicas run in fixed-size shards whose partial sums are reduced
    in shard order, so the report does not depend on ``threads``.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    threads = resolve_threads(threads)
    n = model.n_sites
    discrete = model.metric is GroundMetric.DISCRETE

    def run(idx):
        X = _initial_batch(model, x0, idx)
        Y = _initial_batch(model, y0, idx)
        site = np.zeros((k_max + 1, n))
        s1 = np.zeros(k_max + 1)
        s2 = np.zeros(k_max + 1)
        coalesced = None
        for k in range(k_max + 1):
            if k > 0:
                sweep_batch(model, X, Y, seed, idx, k - 1, backend)
            d = model.metric.distance(X, Y)
            l1 = d.sum(axis=1)
            site[k] = d.sum(axis=0)
            s1[k] = l1.sum()
            s2[k] = (l1 * l1).sum()
            if discrete and s1[k] == 0:
                coalesced = k
                break  # every pair has met; the rest stays zero
        return site, s1, s2, coalesced

    parts = _map_ordered(run, _shards(replicas, shard_size), threads)
    site = np.zeros((k_max + 1, n))
    s1 = np.zeros(k_max + 1)
    s2 = np.zeros(k_max + 1)
    for p_site, p1, p2, _ in parts:
        site += p_site
        s1 += p1
        s2 += p2
    coal = [c for *_, c in parts]
    coalesced_at = max(coal) if discrete and all(c is not None for c in coal) else None

    mean_site = site / replicas
    mean_l1 = s1 / replicas
    if replicas > 1:
        var = np.maximum(s2 - replicas * mean_l1**2, 0.0) / (replicas - 1)
        stderr = np.sqrt(var / replicas)
    else:
        stderr = np.zeros(k_max + 1)

    Cm = coefficient_matrix(model) if C is None else C
    Q = q_product(Cm).Q
    d0 = mean_site[0]
    qk = np.empty((k_max + 1, n))
    v = d0.copy()
    for k in range(k_max + 1):
        qk[k] = v
        v = Q @ v
    r = float(Cm.r) if hasattr(Cm, "r") else float(np.asarray(Cm).sum(axis=1).max())
    env = n * r ** np.arange(k_max + 1) * d0.max()
    return DecayReport(mean_site, mean_l1, stderr, env, qk, r, replicas, coalesced_at)


def simulate_observable(model: ConditionalModel, x0, n: int, replicas: int, seed: int, observable,
                        threads: int | None = None, backend=None, shard_size: int = SHARD_SIZE) -> np.ndarray:
    """Ergodic averages ``(1/n) sum_{k=1}^n f(Z_k)``, one per replica.

    ``observable`` maps an ``(R, N)`` batch of states to ``R`` values.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    threads = resolve_threads(threads)

    def run(idx):
        X = _initial_batch(model, x0, idx)
        acc = np.zeros(idx.size)
        for k in range(n):
            sweep_batch(model, X, None, seed, idx, k, backend)
            acc += observable(X)
        return acc / n

    return np.concatenate(_map_ordered(run, _shards(replicas, shard_size), threads))


def sample_states(model: ConditionalModel, x0, sweeps: int, replicas: int, seed: int,
                  threads: int | None = None, backend=None, shard_size: int = SHARD_SIZE) -> np.ndarray:
    """States ``Z_sweeps`` of ``replicas`` independent chains started at ``x0``."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    threads = resolve_threads(threads)

    def run(idx):
        X = _initial_batch(model, x0, idx)
        for k in range(sweeps):
            sweep_batch(model, X, None, seed, idx, k, backend)
        return X

    return np.concatenate(_map_ordered(run, _shards(replicas, shard_size), threads))


# --------------------------------------------------------------------------
# coupling validity


@dataclass
class ValidityReport:
    site: int
    draws: int
    test: str
    p_first: float
    p_second: float
    mismatch_rate: float
    flagged: bool = field(init=False)

    def __post_init__(self):
        self.flagged = min(self.p_first, self.p_second) < VALIDITY_ALPHA

    @property
    def p_value(self) -> float:
        return min(self.p_first, self.p_second)


def _two_sample(a, b, finite: bool, alphabet: int | None) -> float:
    if not finite:
        return float(stats.ks_2samp(a, b).pvalue)
    table = np.vstack([np.bincount(a, minlength=alphabet), np.bincount(b, minlength=alphabet)])
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 1.0  # both samples are the same point mass
    return float(stats.chi2_contingency(table, correction=False).pvalue)


def marginal_validity_check(model: ConditionalModel, x, y, i: int, draws: int, seed: int = 0) -> ValidityReport:
    """Compare each coordinate of the coupled update of site ``i`` with direct sampling.

    The coupled pair uses the counter streams of ``seed``; the reference
    samples come from an independent numpy generator.  Finite alphabets use a
    chi-square homogeneity test, Gaussian conditionals a two-sample KS test.
    """
    if draws < 1000:
        raise ValueError("marginal validity needs at least 1000 draws")
    p = conditional_distribution(model, i, x)
    q = conditional_distribution(model, i, y)
    reps = np.arange(draws)
    u0, u1, u2 = (counter_uniforms(seed, reps, 0, i, s) for s in (SLOT_DRAW, SLOT_ACCEPT, SLOT_RESIDUAL))
    ref = np.random.default_rng([seed, i, 0x76616C6964]).random((2, draws))
    if isinstance(p, Gaussian):
        z = ndtri(u0)
        a = p.mean + p.sd * z
        b = q.mean + q.sd * z
        ra, rb = p.quantile(ref[0]), q.quantile(ref[1])
        finite = False
    else:
        P = np.broadcast_to(p.probs, (draws, p.alphabet))
        Qm = np.broadcast_to(q.probs, (draws, q.alphabet))
        a, b = _maximal_couple(P, Qm, u0, u1, u2)
        ra, rb = p.quantile(ref[0]), q.quantile(ref[1])
        finite = True
    alphabet = p.alphabet if finite else None
    return ValidityReport(
        site=int(i),
        draws=int(draws),
        test="chi2" if finite else "ks",
        p_first=_two_sample(a, ra, finite, alphabet),
        p_second=_two_sample(b, rb, finite, alphabet),
        mismatch_rate=float(np.mean(a != b)),
    )


@dataclass
class SimulationSummary:
    """Per-sweep averages over replicas of plain chains."""

    mean_site: np.ndarray  # (k_max + 1, N) mean state value per site
    obs_mean: np.ndarray
    obs_stderr: np.ndarray
    replicas: int


def simulation_summary(model: ConditionalModel, x0, k_max: int, replicas: int, seed: int, observable,
                       threads: int | None = None, backend=None, shard_size: int = SHARD_SIZE) -> SimulationSummary:
    """Replica averages of the state and of ``observable`` after every sweep ``0..k_max``."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    threads = resolve_threads(threads)
    n = model.n_sites

    def run(idx):
        X = _initial_batch(model, x0, idx)
        site = np.zeros((k_max + 1, n))
        s1 = np.zeros(k_max + 1)
        s2 = np.zeros(k_max + 1)
        for k in range(k_max + 1):
            if k > 0:
                sweep_batch(model, X, None, seed, idx, k - 1, backend)
            v = observable(X)
            site[k] = X.sum(axis=0)
            s1[k] = v.sum()
            s2[k] = (v * v).sum()
        return site, s1, s2

    site = np.zeros((k_max + 1, n))
    s1 = np.zeros(k_max + 1)
    s2 = np.zeros(k_max + 1)
    for p_site, p1, p2 in _map_ordered(run, _shards(replicas, shard_size), threads):
        site += p_site
        s1 += p1
        s2 += p2
    mean = s1 / replicas
    if replicas > 1:
        stderr = np.sqrt(np.maximum(s2 - replicas * mean**2, 0.0) / (replicas - 1) / replicas)
    else:
        stderr = np.zeros(k_max + 1)
    return SimulationSummary(site / replicas, mean, stderr, replicas)
