"""Conditional-distribution families mu_i(.|x) and their exact Gibbs measures.

Site indices are 0-based throughout the package.  Finite-alphabet
configurations are arrays of symbol indices; for the Ising model symbol 0 is
spin -1 and symbol 1 is spin +1.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtri

from .core import DEFAULT_ENUMERATION_CAP, GroundMetric, as_configuration, configuration_index, enumerate_configurations

PMF_TOL = 1e-12


class ModelError(ValueError):
    """A model violates its own invariants."""


# --------------------------------------------------------------------------
# one-dimensional laws


@dataclass(frozen=True)
class FinitePmf:
    """Probability vector over symbols ``0..A-1``.

    ``support`` optionally attaches real coordinates to the symbols (used by
    the real-line transport routines); it must be strictly increasing.
    """

    probs: np.ndarray
    support: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).copy()
        if p.ndim != 1 or p.size == 0:
            raise ModelError("pmf must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ModelError("pmf entries must be finite and nonnegative")
        if abs(p.sum() - 1.0) > PMF_TOL:
            raise ModelError(f"pmf sums to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        if self.support is not None:
            s = np.asarray(self.support, dtype=np.float64).copy()
            if s.shape != p.shape:
                raise ModelError("support and probabilities differ in length")
            if np.any(np.diff(s) <= 0):
                raise ModelError("support points must be strictly increasing")
            s.setflags(write=False)
            object.__setattr__(self, "support", s)

    @classmethod
    def from_weights(cls, weights, support=None) -> "FinitePmf":
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not total > 0 or not np.isfinite(total):
            raise ModelError("weights are not normalizable")
        return cls(w / total, support)

    @classmethod
    def from_log_weights(cls, log_weights, support=None) -> "FinitePmf":
        lw = np.asarray(log_weights, dtype=np.float64)
        top = lw.max()
        if not np.isfinite(top):
            raise ModelError("all weights underflow to zero")
        w = np.exp(lw - top)
        return cls(w / w.sum(), support)

    @property
    def alphabet(self) -> int:
        return self.probs.size

    @property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)

    def quantile(self, u):
        """Right-continuous inverse CDF: the first symbol whose CDF exceeds ``u``."""
        idx = np.searchsorted(self.cdf, u, side="right")
        return np.minimum(idx, self.alphabet - 1)

    def mean(self) -> float:
        pts = self.support if self.support is not None else np.arange(self.alphabet)
        return float(self.probs @ pts)


@dataclass(frozen=True)
class Gaussian:
    mean: float
    sd: float

    def __post_init__(self):
        if not (self.sd > 0 and np.isfinite(self.sd)):
            raise ModelError("Gaussian standard deviation must be positive")
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "sd", float(self.sd))

    def quantile(self, u):
        return self.mean + self.sd * ndtri(u)


Distribution1D = FinitePmf | Gaussian


# --------------------------------------------------------------------------
# models


def _ordered_dot(row, x) -> float:
    """``sum_j row_j x_j`` over the nonzero entries, accumulated in index order.

    The batched kernels sum neighbours the same way, so scalar and batched
    chains agree bit for bit.
    """
    acc = 0.0
    for j in np.flatnonzero(row):
        acc = acc + float(x[j]) * float(row[j])
    return acc


class ConditionalModel:
    """Base class: a family of site conditionals on E^N."""

    kind: str = ""
    n_sites: int
    alphabet: int | None = None

    @property
    def metric(self) -> GroundMetric:
        return GroundMetric.DISCRETE if self.alphabet is not None else GroundMetric.ABSOLUTE

    @property
    def finite(self) -> bool:
        return self.alphabet is not None

    def check_site(self, i: int) -> int:
        if not (isinstance(i, (int, np.integer)) and 0 <= i < self.n_sites):
            raise IndexError(f"site index {i} out of range for {self.n_sites} sites")
        return int(i)

    def configuration(self, x) -> np.ndarray:
        return as_configuration(x, self.alphabet, self.n_sites)

    def conditional(self, i: int, x: np.ndarray):
        raise NotImplementedError

    def neighborhood(self, i: int) -> tuple[int, ...]:
        """Sites other than ``i`` on which ``mu_i(.|x)`` may depend."""
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError

    def fingerprint(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def reference_configuration(self) -> np.ndarray:
        """Base point: all-(+1) spins for Ising, symbol 0 or 0.0 otherwise."""
        if isinstance(self, IsingGraph):
            return np.ones(self.n_sites, dtype=np.int64)
        if self.finite:
            return np.zeros(self.n_sites, dtype=np.int64)
        return np.zeros(self.n_sites)


@dataclass(frozen=True, eq=False)
class IsingGraph(ConditionalModel):
    """Ising model: ``P(s) ∝ exp(beta * s * (sum_j J_ij s_j + h_i))`` for ``s = ±1``."""

    J: np.ndarray
    h: np.ndarray
    beta: float
    kind: str = field(default="ising", init=False)

    def __post_init__(self):
        J = np.array(self.J, dtype=np.float64)
        n = J.shape[0]
        if J.ndim != 2 or J.shape != (n, n):
            raise ModelError("coupling matrix must be square")
        if not np.allclose(J, J.T, rtol=0, atol=0):
            raise ModelError("coupling matrix must be symmetric")
        if np.any(np.diag(J) != 0):
            raise ModelError("coupling matrix must have zero diagonal")
        h = np.zeros(n) if self.h is None else np.array(self.h, dtype=np.float64)
        if h.shape != (n,):
            raise ModelError("field must have one entry per site")
        if not self.beta >= 0:
            raise ModelError("inverse temperature must be nonnegative")
        J.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def n_sites(self) -> int:
        return self.J.shape[0]

    @property
    def alphabet(self) -> int:
        return 2

    @classmethod
    def from_edges(cls, n_sites: int, edges, beta: float, field=None) -> "IsingGraph":
        J = np.zeros((n_sites, n_sites))
        for i, j, w in edges:
            if i == j:
                raise ModelError("self-loops are not allowed")
            J[i, j] = J[j, i] = w
        return cls(J, field, beta)

    @classmethod
    def path(cls, n_sites: int, beta: float, coupling: float = 1.0, field=None) -> "IsingGraph":
        return cls.from_edges(n_sites, [(i, i + 1, coupling) for i in range(n_sites - 1)], beta, field)

    @staticmethod
    def spins(x):
        return 2 * np.asarray(x) - 1

    def local_field(self, i: int, x) -> float:
        s = self.spins(x)
        return _ordered_dot(self.J[i], s) + float(self.h[i])

    def conditional(self, i, x):
        m = self.local_field(i, x)
        p_minus = 1.0 / (1.0 + math.exp(2.0 * self.beta * m)) if 2.0 * self.beta * m < 700 else 0.0
        return FinitePmf(np.array([p_minus, 1.0 - p_minus]))

    def neighborhood(self, i):
        return tuple(int(j) for j in np.flatnonzero(self.J[i]) if j != i)

    def log_weight_table(self, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
        s = self.spins(enumerate_configurations(2, self.n_sites, cap)).astype(np.float64)
        pair = 0.5 * np.einsum("ki,ij,kj->k", s, self.J, s)
        return self.beta * (pair + s @ self.h)

    def describe(self):
        return {"kind": "ising", "J": self.J.tolist(), "h": self.h.tolist(), "beta": self.beta}


@dataclass(frozen=True, eq=False)
class GaussianLinear(ConditionalModel):
    """Site ``i`` is Gaussian with mean ``b_i + sum_j A_ij x_j`` and sd ``sigma_i``."""

    A: np.ndarray
    b: np.ndarray
    sigma: np.ndarray
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        n = A.shape[0]
        if A.ndim != 2 or A.shape != (n, n):
            raise ModelError("mean-coefficient matrix must be square")
        if np.any(np.diag(A) != 0):
            raise ModelError("mean-coefficient matrix must have zero diagonal")
        b = np.zeros(n) if self.b is None else np.array(self.b, dtype=np.float64)
        sigma = np.array(self.sigma, dtype=np.float64).reshape(-1)
        if sigma.size == 1:
            sigma = np.full(n, sigma[0])
        if b.shape != (n,) or sigma.shape != (n,):
            raise ModelError("offsets and standard deviations need one entry per site")
        if np.any(~(sigma > 0)):
            raise ModelError("conditional standard deviations must be positive")
        for arr in (A, b, sigma):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_sites(self):
        return self.A.shape[0]

    @classmethod
    def from_covariance(cls, cov, mean=None) -> "GaussianLinear":
        """Full conditionals of the joint Gaussian N(mean, cov)."""
        cov = np.asarray(cov, dtype=np.float64)
        n = cov.shape[0]
        mean = np.zeros(n) if mean is None else np.asarray(mean, dtype=np.float64)
        K = np.linalg.inv(cov)
        d = np.diag(K)
        A = -K / d[:, None]
        np.fill_diagonal(A, 0.0)
        b = mean - A @ mean
        return cls(A, b, 1.0 / np.sqrt(d))

    @classmethod
    def two_site(cls, r: float) -> "GaussianLinear":
        """Centred bivariate Gaussian with unit variances and correlation ``r``."""
        return cls(np.array([[0.0, r], [r, 0.0]]), np.zeros(2), np.full(2, np.sqrt(1.0 - r * r)))

    def conditional(self, i, x):
        return Gaussian(float(self.b[i]) + _ordered_dot(self.A[i], np.asarray(x, dtype=np.float64)),
                        float(self.sigma[i]))

    def neighborhood(self, i):
        return tuple(int(j) for j in np.flatnonzero(self.A[i]) if j != i)

    def describe(self):
        return {"kind": "gaussian", "A": self.A.tolist(), "b": self.b.tolist(), "sigma": self.sigma.tolist()}


@dataclass(frozen=True, eq=False)
class FreeModel(ConditionalModel):
    """Every site has the same law, independent of the others."""

    n: int
    law: FinitePmf | Gaussian
    kind: str = field(default="free", init=False)

    def __post_init__(self):
        if self.n < 1:
            raise ModelError("need at least one site")
        if not isinstance(self.law, (FinitePmf, Gaussian)):
            raise ModelError("site law must be a FinitePmf or Gaussian")

    @property
    def n_sites(self):
        return self.n

    @property
    def alphabet(self):
        return self.law.alphabet if isinstance(self.law, FinitePmf) else None

    def conditional(self, i, x):
        return self.law

    def neighborhood(self, i):
        return ()

    def log_weight_table(self, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
        if not self.finite:
            raise ModelError("Gaussian free model has no finite table")
        configs = enumerate_configurations(self.alphabet, self.n, cap)
        with np.errstate(divide="ignore"):
            return np.log(self.law.probs)[configs].sum(axis=1)

    def describe(self):
        if isinstance(self.law, FinitePmf):
            law = {"pmf": self.law.probs.tolist()}
        else:
            law = {"mean": self.law.mean, "sd": self.law.sd}
        return {"kind": "free", "n_sites": self.n, **law}


@dataclass(frozen=True, eq=False)
class FinitePotential(ConditionalModel):
    """``mu ∝ pi^{⊗N} exp(-V)`` with ``V`` tabulated in mixed-radix order."""

    n: int
    A: int
    energies: np.ndarray
    reference: np.ndarray | None = None
    kind: str = field(default="potential", init=False)

    def __post_init__(self):
        if self.n < 1 or self.A < 2:
            raise ModelError("need at least one site and two symbols")
        V = np.array(self.energies, dtype=np.float64).reshape(-1)
        if V.size != self.A**self.n:
            raise ModelError(f"potential table has {V.size} entries, expected {self.A ** self.n}")
        if not np.all(np.isfinite(V)):
            raise ModelError("potential must be finite")
        pi = np.full(self.A, 1.0 / self.A) if self.reference is None else np.array(self.reference, dtype=np.float64)
        if pi.shape != (self.A,) or np.any(~(pi > 0)) or abs(pi.sum() - 1) > PMF_TOL:
            raise ModelError("reference weights must be strictly positive and sum to 1")
        V.setflags(write=False)
        pi.setflags(write=False)
        object.__setattr__(self, "energies", V)
        object.__setattr__(self, "reference", pi)
        object.__setattr__(self, "_table", None)

    @property
    def n_sites(self):
        return self.n

    @property
    def alphabet(self):
        return self.A

    def log_weight_table(self, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
        configs = enumerate_configurations(self.A, self.n, cap)
        return np.log(self.reference)[configs].sum(axis=1) - self.energies

    def _site_log_weights(self, i, x):
        base = configuration_index(x, self.A) - int(x[i]) * self.A ** (self.n - 1 - i)
        stride = self.A ** (self.n - 1 - i)
        idx = base + stride * np.arange(self.A)
        return np.log(self.reference) - self.energies[idx]

    def conditional(self, i, x):
        return FinitePmf.from_log_weights(self._site_log_weights(i, x))

    def neighborhood(self, i):
        if self._table is None:
            shape = (self.A,) * self.n
            object.__setattr__(self, "_table", self.energies.reshape(shape))
        V = self._table
        # conditional of i depends on k iff the log-odds V(.., s, ..) - V(.., 0, ..) vary with x_k
        odds = V - np.take(V, [0], axis=i)
        out = []
        for k in range(self.n):
            if k == i:
                continue
            if np.ptp(odds, axis=k).max() > 1e-12:
                out.append(k)
        return tuple(out)

    def describe(self):
        return {
            "kind": "potential",
            "n_sites": self.n,
            "alphabet": self.A,
            "potential_table": self.energies.tolist(),
            "reference": self.reference.tolist(),
        }


# --------------------------------------------------------------------------
# operations


def conditional_distribution(model: ConditionalModel, i: int, x):
    """Law of site ``i`` given the other coordinates of ``x``."""
    i = model.check_site(i)
    x = model.configuration(x)
    return model.conditional(i, x)


def conditional_sample(model: ConditionalModel, i: int, x, rng):
    """Draw site ``i`` from its conditional by inverse CDF of one uniform.

    ``rng`` is a :class:`numpy.random.Generator` or a float in (0, 1) used as
    the uniform directly.
    """
    dist = conditional_distribution(model, i, x)
    u = float(rng) if isinstance(rng, (float, np.floating)) else rng.random()
    val = dist.quantile(u)
    return int(val) if isinstance(dist, FinitePmf) else float(val)


def exact_gibbs_measure(model: ConditionalModel, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Exact pmf over all configurations, mixed-radix order, site 0 most significant."""
    if not model.finite:
        raise ModelError("exact Gibbs measure needs a finite alphabet")
    lw = model.log_weight_table(cap)
    pmf = np.exp(lw - logsumexp(lw))
    return pmf / pmf.sum()


# --------------------------------------------------------------------------
# model spec files

MODEL_KEYS = {
    "kind", "n_sites", "beta", "edges", "field", "A", "offsets", "sigma",
    "alphabet", "potential_table", "reference", "pmf", "mean", "sd",
}

_KIND_KEYS = {
    "ising": ({"n_sites"}, {"beta", "edges", "field"}),
    "gaussian": ({"n_sites", "A", "sigma"}, {"offsets"}),
    "free": ({"n_sites"}, {"pmf", "mean", "sd"}),
    "potential": ({"n_sites", "alphabet", "potential_table"}, {"reference"}),
}


class SpecError(ValueError):
    """Malformed model or experiment specification."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def _floats(value, key):
    try:
        return [float(t) for t in str(value).replace(",", " ").split()]
    except ValueError:
        raise SpecError(f"key {key!r}: expected numbers, got {value!r}", key) from None


def parse_model_text(text: str) -> dict:
    """Parse the ``key = value`` model format into a raw dict (strings)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in MODEL_KEYS:
            raise SpecError(f"line {lineno}: unknown key {key!r}", key)
        if key in out:
            raise SpecError(f"line {lineno}: duplicate key {key!r}", key)
        out[key] = value
    return out


def model_from_dict(spec: dict) -> ConditionalModel:
    """Build a model from a dict of spec keys (values may be strings or already parsed)."""
    unknown = set(spec) - MODEL_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise SpecError(f"unknown model key {key!r}", key)
    kind = str(spec.get("kind", "")).strip().lower()
    if kind not in _KIND_KEYS:
        raise SpecError(f"model kind must be one of {sorted(_KIND_KEYS)}, got {kind!r}", "kind")
    required, optional = _KIND_KEYS[kind]
    missing = required - set(spec)
    if missing:
        key = sorted(missing)[0]
        raise SpecError(f"model kind {kind!r} requires key {key!r}", key)
    extra = set(spec) - required - optional - {"kind"}
    if extra:
        key = sorted(extra)[0]
        raise SpecError(f"key {key!r} is not valid for model kind {kind!r}", key)

    def nums(key):
        v = spec[key]
        if isinstance(v, (list, tuple, np.ndarray)):
            return [float(t) for t in np.asarray(v, dtype=np.float64).reshape(-1)]
        return _floats(v, key)

    def scalar(key):
        vals = nums(key)
        if len(vals) != 1:
            raise SpecError(f"key {key!r} expects one number", key)
        return vals[0]

    n_f = scalar("n_sites")
    if n_f != int(n_f) or n_f < 1:
        raise SpecError("n_sites must be a positive integer", "n_sites")
    n = int(n_f)
    try:
        if kind == "ising":
            beta = scalar("beta") if "beta" in spec else 0.0
            edges = []
            if "edges" in spec:
                raw = spec["edges"]
                groups = raw if isinstance(raw, list) else [g for g in str(raw).split(";") if g.strip()]
                for g in groups:
                    vals = [float(t) for t in g] if isinstance(g, (list, tuple)) else _floats(g, "edges")
                    if len(vals) != 3 or vals[0] != int(vals[0]) or vals[1] != int(vals[1]):
                        raise SpecError("each edge is 'i j J_ij' with integer sites", "edges")
                    i, j = int(vals[0]), int(vals[1])
                    if not (0 <= i < n and 0 <= j < n):
                        raise SpecError(f"edge ({i}, {j}) out of range", "edges")
                    edges.append((i, j, vals[2]))
            fld = nums("field") if "field" in spec else None
            return IsingGraph.from_edges(n, edges, beta, fld)
        if kind == "gaussian":
            A = np.array(nums("A"))
            if A.size != n * n:
                raise SpecError(f"A needs {n * n} entries", "A")
            b = nums("offsets") if "offsets" in spec else None
            return GaussianLinear(A.reshape(n, n), b, nums("sigma"))
        if kind == "free":
            if "pmf" in spec:
                if "mean" in spec or "sd" in spec:
                    raise SpecError("free model takes either pmf or mean/sd", "pmf")
                return FreeModel(n, FinitePmf(nums("pmf")))
            if "mean" not in spec or "sd" not in spec:
                raise SpecError("free model needs pmf or both mean and sd", "pmf")
            return FreeModel(n, Gaussian(scalar("mean"), scalar("sd")))
        alphabet = scalar("alphabet")
        ref = nums("reference") if "reference" in spec else None
        return FinitePotential(n, int(alphabet), nums("potential_table"), ref)
    except ModelError as exc:
        raise SpecError(str(exc)) from exc


def load_model(path) -> ConditionalModel:
    with open(path) as fh:
        return model_from_dict(parse_model_text(fh.read()))
