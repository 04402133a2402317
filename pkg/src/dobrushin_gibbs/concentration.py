"""Concentration of Gibbs-sampler empirical means.

Bounds of the form ``exp(-t^2 (1 - 2 r1)^2 n / (2 C1 alpha^2 N))`` for the
deviation of ``(1/n) sum_{k=1}^n f(Z_k)`` from its mean, the bias constant
``M`` relating that mean to ``mu(f)``, the faster ``nN`` rate for site
averages in the free case, and a moment-generating-function test of the
transport-entropy (T1) property of one sweep.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import GroundMetric, LipschitzProfile, enumerate_configurations
from .dobrushin import coefficient_matrix
from .kernel_exact import build_transition_matrix, cesaro_mean, evolve, gaussian_sweep_law
from .models import ConditionalModel, FinitePmf, FreeModel, Gaussian, GaussianLinear, exact_gibbs_measure
from .sampler import sample_states, simulate_observable

CI_LEVEL = 0.95
MGF_STABLE_LIMIT = 20.0


class BoundError(ValueError):
    """A bound was requested outside the regime where it is proved."""


@dataclass(frozen=True)
class ConcentrationBoundParams:
    n: int
    N: int
    r1: float
    C1: float
    alpha: float
    r: float | None = None
    M: float | None = None

    def __post_init__(self):
        if self.n < 1 or self.N < 1:
            raise ValueError("n and N must be positive")
        if not self.C1 > 0:
            raise ValueError("C1 must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.r1 < 0:
            raise ValueError("r1 must be nonnegative")

    @property
    def admissible(self) -> bool:
        return self.r1 < 0.5

    def rate(self) -> float:
        """Coefficient of ``t^2`` in the exponent."""
        if not self.admissible:
            raise BoundError(f"bound needs r1 < 1/2, got r1 = {self.r1}")
        return (1 - 2 * self.r1) ** 2 * self.n / (2 * self.C1 * self.alpha**2 * self.N)


def theorem_bound_a(params: ConcentrationBoundParams, t):
    """Tail bound for the deviation from ``(1/n) sum_k P^k f(x)``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    out = np.exp(-params.rate() * t**2)
    return float(out) if out.ndim == 0 else out


def theorem_bound_b(params: ConcentrationBoundParams, t):
    """Tail bound for the deviation from ``mu(f) + M/n``; needs ``r < 1``."""
    if params.r is None or not params.r < 1:
        raise BoundError("bound needs r < 1")
    return theorem_bound_a(params, t)


def free_site_average_bound(t, n: int, N: int, C1: float, alpha_g: float, r1: float = 0.0):
    """Bound for site averages ``(1/N) sum_i g(x^i)``, rate ``nN``; ``alpha_g`` is ``||g||_Lip``."""
    if r1 >= 0.5:
        raise BoundError(f"bound needs r1 < 1/2, got r1 = {r1}")
    t = np.asarray(t, dtype=np.float64)
    out = np.exp(-(t**2) * (1 - 2 * r1) ** 2 * n * N / (2 * C1 * alpha_g**2))
    return float(out) if out.ndim == 0 else out


def t1_constant(model: ConditionalModel) -> float:
    """T1 constant of the site conditionals.

    1/4 under the discrete metric; ``sigma^2`` for Gaussian conditionals.
    """
    if model.metric is GroundMetric.DISCRETE:
        return 0.25
    if isinstance(model, GaussianLinear):
        return float(np.max(model.sigma) ** 2)
    if isinstance(model, FreeModel) and isinstance(model.law, Gaussian):
        return model.law.sd**2
    raise BoundError(f"no T1 constant known for {model.kind}")


def sweep_t1_constant(N: int, C1: float, r1: float) -> float:
    """T1 constant ``N C1 / (1 - r1)^2`` of one sweep ``P(x, .)``."""
    if not 0 <= r1 < 1:
        raise BoundError(f"sweep T1 constant needs r1 < 1, got {r1}")
    return N * C1 / (1 - r1) ** 2


# --------------------------------------------------------------------------
# observables


@dataclass(frozen=True, eq=False)
class Observable:
    """``f(x) = scale * sum_i g(x^i)`` with ``g`` given on the alphabet (finite) or linear (real)."""

    name: str
    n_sites: int
    scale: float
    g: np.ndarray | None = None  # values on the alphabet; None means identity on the reals
    weights: np.ndarray | None = None  # per-site weights for real-valued states

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X)
        if self.g is not None:
            return self.scale * self.g[X].sum(axis=-1)
        w = np.ones(self.n_sites) if self.weights is None else self.weights
        return self.scale * (X @ w)

    def profile(self) -> LipschitzProfile:
        if self.g is not None:
            spread = float(self.g.max() - self.g.min())
            return LipschitzProfile(np.full(self.n_sites, abs(self.scale) * spread))
        w = np.ones(self.n_sites) if self.weights is None else self.weights
        return LipschitzProfile(np.abs(self.scale * w))

    @property
    def alpha(self) -> float:
        return self.profile().lip_norm

    def table(self, alphabet: int) -> np.ndarray:
        """Values over all configurations in mixed-radix order."""
        return self(enumerate_configurations(alphabet, self.n_sites, cap=alphabet**self.n_sites))


def site_average(N: int, g, name: str = "site_average") -> Observable:
    return Observable(name, N, 1.0 / N, g=np.asarray(g, dtype=np.float64))


def up_fraction(N: int) -> Observable:
    """Fraction of sites in symbol 1 (spin +1 for Ising)."""
    return site_average(N, [0.0, 1.0], "up_fraction")


def mean_magnetization(N: int) -> Observable:
    """``(1/N) sum_i s_i`` with spins ``s = 2x - 1``."""
    return site_average(N, [-1.0, 1.0], "mean_magnetization")


def site_sum(N: int, g, name: str = "site_sum") -> Observable:
    return Observable(name, N, 1.0, g=np.asarray(g, dtype=np.float64))


def linear_sum(N: int, weights=None, name: str = "linear_sum") -> Observable:
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    return Observable(name, N, 1.0, weights=w)


OBSERVABLES = {
    "up_fraction": up_fraction,
    "mean_magnetization": mean_magnetization,
    "sum_up": lambda N: site_sum(N, [0.0, 1.0], "sum_up"),
    "linear_sum": linear_sum,
}


# --------------------------------------------------------------------------
# bias constant


@dataclass(frozen=True)
class BiasConstant:
    value: float
    exact: bool
    stderr: float = 0.0
    site_distances: np.ndarray | None = None


def bias_constant_M(model: ConditionalModel, profile: LipschitzProfile, x, r: float | None = None,
                    mu=None, samples=None) -> BiasConstant:
    """``M = r/(1-r) * max_i E_mu d(x^i, Y^i) * sum_i delta_i``.

    ``mu`` is the exact pmf over enumerated configurations; otherwise
    ``samples`` (an ``(R, N)`` array from an equilibrated run) gives an
    estimate with a standard error.
    """
    if r is None:
        r = coefficient_matrix(model).r
    if not r < 1:
        raise BoundError(f"bias constant needs r < 1, got {r}")
    x = model.configuration(x)
    factor = r / (1 - r) * profile.sum_deltas
    if r == 0:
        return BiasConstant(0.0, mu is not None, 0.0, None)
    if mu is not None:
        configs = enumerate_configurations(model.alphabet, model.n_sites, cap=np.size(mu))
        d = model.metric.distance(configs, x[None, :])
        site = np.asarray(mu, dtype=np.float64) @ d
        return BiasConstant(factor * float(site.max()), True, 0.0, site)
    if samples is None:
        raise ValueError("need the exact measure or equilibrium samples")
    d = model.metric.distance(np.asarray(samples), x[None, :])
    site = d.mean(axis=0)
    j = int(site.argmax())
    se = float(d[:, j].std(ddof=1) / np.sqrt(d.shape[0]))
    return BiasConstant(factor * float(site[j]), False, factor * se, site)


@dataclass(frozen=True)
class BiasCheck:
    n: int
    cesaro: float
    mu_f: float
    gap: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound


def cesaro_bias_check(model: ConditionalModel, f: Observable, x, ns, r: float | None = None) -> list[BiasCheck]:
    """``|(1/n) sum_{k=1}^n P^k f(x) - mu(f)|`` against ``M/n`` on the exact kernel."""
    tm = build_transition_matrix(model)
    mu = exact_gibbs_measure(model)
    vals = f.table(model.alphabet)
    mu_f = float(mu @ vals)
    M = bias_constant_M(model, f.profile(), x, r=r, mu=mu).value
    x = model.configuration(x)
    out = []
    for n in ns:
        c = cesaro_mean(tm, x, vals, int(n))
        out.append(BiasCheck(int(n), c, mu_f, abs(c - mu_f), M / int(n)))
    return out


# --------------------------------------------------------------------------
# empirical tails


def wilson_interval(count: int, trials: int, level: float = CI_LEVEL) -> tuple[float, float]:
    ci = stats.binomtest(int(count), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class TailReport:
    """Per-``t`` empirical tails with Wilson intervals and both tail bounds."""

    t: np.ndarray
    tail_count: np.ndarray
    replicas: int
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    bound_a: np.ndarray
    bound_b: np.ndarray
    tail_count_b: np.ndarray
    M: float
    n: int
    N: int
    r1: float
    C1: float
    alpha: float
    seed: int
    centering: float
    centering_exact: bool
    mu_f: float | None

    COLUMNS = ("t", "tail_count", "replicas", "tail_hat", "ci_lo", "ci_hi", "bound_a", "bound_b",
               "M", "n", "N", "r1", "C1", "alpha", "seed")

    @property
    def tail_hat(self) -> np.ndarray:
        return self.tail_count / self.replicas

    def rows(self) -> list[list]:
        return [[float(self.t[j]), int(self.tail_count[j]), self.replicas, float(self.tail_hat[j]),
                 float(self.ci_lo[j]), float(self.ci_hi[j]), float(self.bound_a[j]), float(self.bound_b[j]),
                 self.M, self.n, self.N, self.r1, self.C1, self.alpha, self.seed] for j in range(self.t.size)]

    def violations(self, bound=None) -> np.ndarray:
        """Grid points where the lower CI edge exceeds ``bound`` (default: ``bound_a``)."""
        bound = self.bound_a if bound is None else np.asarray(bound)
        return self.ci_lo > bound


def _exact_centering(model, f, x0, n):
    tm = build_transition_matrix(model)
    return cesaro_mean(tm, model.configuration(x0), f.table(model.alphabet), n)


def empirical_tail(model: ConditionalModel, f: Observable, x0, n: int, t_grid, replicas: int, seed: int,
                   C1: float | None = None, threads: int | None = None, backend=None,
                   centering: float | None = None, aux_replicas: int | None = None) -> TailReport:
    """Tails of ``(1/n) sum_{k=1}^n f(Z_k)`` around its mean (part a) and ``mu(f) + M/n`` (part b).

    The part-(a) centering is exact for enumerable models.  Otherwise it is
    estimated from an auxiliary run with independent streams (``seed + 1``)
    unless ``centering`` is given.
    """
    if replicas < 1000:
        raise ValueError("tail estimates need at least 1000 replicas")
    t_grid = np.asarray(t_grid, dtype=np.float64)
    Cm = coefficient_matrix(model)
    C1 = t1_constant(model) if C1 is None else float(C1)
    profile = f.profile()
    params = ConcentrationBoundParams(n, model.n_sites, Cm.r1, C1, profile.lip_norm, Cm.r)
    enumerable = model.finite and model.alphabet**model.n_sites <= 4096
    centering_exact = centering is not None or enumerable
    if centering is None:
        if enumerable:
            centering = _exact_centering(model, f, x0, n)
        else:
            aux = simulate_observable(model, x0, n, aux_replicas or 4 * replicas, seed + 1, f, threads, backend)
            centering = float(aux.mean())
    means = simulate_observable(model, x0, n, replicas, seed, f, threads, backend)
    dev = means - centering
    counts = np.array([(dev >= t).sum() for t in t_grid], dtype=np.int64)

    mu_f = None
    M = float("nan")
    counts_b = np.full(t_grid.size, -1, dtype=np.int64)
    if enumerable and Cm.r < 1:
        mu = exact_gibbs_measure(model)
        mu_f = float(mu @ f.table(model.alphabet))
        M = bias_constant_M(model, profile, x0, r=Cm.r, mu=mu).value
        dev_b = means - mu_f - M / n
        counts_b = np.array([(dev_b >= t).sum() for t in t_grid], dtype=np.int64)
    elif isinstance(model, FreeModel):
        M = 0.0

    if params.admissible:
        bound_a = theorem_bound_a(params, t_grid)
        bound_b = bound_a.copy() if Cm.r < 1 else np.full(t_grid.size, np.nan)
    else:
        # no bound is proved here: report, assert nothing
        bound_a = np.full(t_grid.size, np.nan)
        bound_b = np.full(t_grid.size, np.nan)
    ci = np.array([wilson_interval(c, replicas) for c in counts])
    return TailReport(t_grid, counts, replicas, ci[:, 0], ci[:, 1], np.atleast_1d(bound_a), np.atleast_1d(bound_b),
                      counts_b, M, n, model.n_sites, Cm.r1, C1, profile.lip_norm, int(seed), float(centering),
                      centering_exact, mu_f)


# --------------------------------------------------------------------------
# T1 / moment generating function


@dataclass
class MgfRow:
    lam: float
    log_mgf: float
    bound: float
    slack: float
    stable: bool

    @property
    def margin(self) -> float:
        return self.bound + self.slack - self.log_mgf

    @property
    def holds(self) -> bool:
        return self.margin >= 0


def t1_mgf_check(values, lipschitz: float, lambda_grid, C: float, mean: float | None = None,
                 n_sigma: float = 3.0, diameter: float | None = None) -> list[MgfRow]:
    """``log E exp(lam (F - <F>)) <= lam^2 C ||F||^2 / 2`` at each ``lam``.

    ``values`` are draws of ``F`` under ``P(x0, .)``; ``mean`` is ``<F>``
    when known exactly (else the sample mean).  The slack is ``n_sigma``
    delta-method standard errors of the log of the empirical MGF.  Rows whose
    ``|lam| ||F|| diameter`` exceeds the stability limit are flagged.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 10_000:
        raise ValueError("MGF check needs at least 10^4 draws")
    centre = float(v.mean()) if mean is None else float(mean)
    dev = v - centre
    if diameter is None:
        diameter = float(np.abs(dev).max())
    out = []
    for lam in np.asarray(lambda_grid, dtype=np.float64):
        bound = lam**2 * C * lipschitz**2 / 2
        if lam == 0:
            out.append(MgfRow(0.0, 0.0, 0.0, 0.0, True))
            continue
        e = np.exp(lam * dev)
        m = e.mean()
        slack = n_sigma * e.std(ddof=1) / (m * np.sqrt(v.size))
        stable = abs(lam) * lipschitz * diameter <= MGF_STABLE_LIMIT
        out.append(MgfRow(float(lam), float(np.log(m)), float(bound), float(slack), bool(stable)))
    return out


def one_sweep_values(model: ConditionalModel, x0, F: Observable, draws: int, seed: int,
                     threads: int | None = None, backend=None) -> np.ndarray:
    """``F(Z_1)`` for ``draws`` independent sweeps from ``x0``."""
    return F(sample_states(model, x0, 1, draws, seed, threads, backend))


def one_sweep_mean(model: ConditionalModel, x0, F: Observable) -> float:
    """Exact ``E F(Z_1)`` for enumerable or Gaussian-linear models."""
    x0 = model.configuration(x0)
    if isinstance(model, GaussianLinear):
        mean, _ = gaussian_sweep_law(model, x0)
        w = np.ones(model.n_sites) if F.weights is None else F.weights
        return float(F.scale * (w @ mean))
    if isinstance(model, FreeModel) and isinstance(model.law, FinitePmf):
        return float(F.scale * model.n_sites * (model.law.probs @ F.g))
    tm = build_transition_matrix(model)
    return float(evolve(tm, x0, [1])[1] @ F.table(model.alphabet))


def gaussian_log_mgf(model: GaussianLinear, x0, weights, lam) -> np.ndarray:
    """Exact ``log E exp(lam (F - EF))`` for ``F = w . Z_1`` (one Gaussian sweep)."""
    _, cov = gaussian_sweep_law(model, x0)
    w = np.asarray(weights, dtype=np.float64)
    return np.asarray(lam, dtype=np.float64) ** 2 * float(w @ cov @ w) / 2
