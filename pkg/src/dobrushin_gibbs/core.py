"""Ground metrics, configurations, the L1 product metric and Lipschitz profiles."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

DEFAULT_ENUMERATION_CAP = 4096


class GroundMetric(enum.Enum):
    """Metric on a single coordinate.

    ``DISCRETE`` is ``1{a != b}`` on symbol indices, ``ABSOLUTE`` is ``|a - b|``
    on real scalars.
    """

    DISCRETE = "discrete"
    ABSOLUTE = "absolute"

    def distance(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        if self is GroundMetric.DISCRETE:
            return (a != b).astype(np.float64)
        return np.abs(a.astype(np.float64) - b.astype(np.float64))

    @property
    def real_valued(self) -> bool:
        return self is GroundMetric.ABSOLUTE


def as_configuration(states, alphabet: int | None = None, n_sites: int | None = None) -> np.ndarray:
    """Validate and return a configuration as a 1-D array.

    Finite configurations (``alphabet`` given) hold int64 symbol indices in
    ``[0, alphabet)``; otherwise float64 reals.
    """
    arr = np.asarray(states)
    if arr.ndim != 1:
        raise ValueError(f"configuration must be one-dimensional, got shape {arr.shape}")
    if n_sites is not None and arr.shape[0] != n_sites:
        raise ValueError(f"configuration has length {arr.shape[0]}, expected {n_sites}")
    if alphabet is None:
        out = arr.astype(np.float64)
        if not np.all(np.isfinite(out)):
            raise ValueError("real configuration contains non-finite values")
        return out
    if arr.dtype.kind == "f":
        if not np.all(arr == np.round(arr)):
            raise ValueError("symbol indices must be integers")
    elif arr.dtype.kind not in "iu":
        raise ValueError(f"symbol indices must be integers, got dtype {arr.dtype}")
    out = arr.astype(np.int64)
    if out.size and (out.min() < 0 or out.max() >= alphabet):
        raise ValueError(f"symbol indices must lie in [0, {alphabet})")
    return out


def l1_distance(x, y, metric: GroundMetric) -> float:
    """Sum over sites of the ground distance, ``d_L1(x, y)``."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if (x.dtype.kind == "f") != (y.dtype.kind == "f"):
        raise TypeError("cannot compare symbolic and real configurations")
    if metric is GroundMetric.DISCRETE and x.dtype.kind == "f":
        if not (np.all(x == np.round(x)) and np.all(y == np.round(y))):
            raise TypeError("discrete metric needs symbol-index configurations")
    return float(np.sum(metric.distance(x, y)))


@dataclass(frozen=True)
class LipschitzProfile:
    """Per-coordinate Lipschitz constants ``delta_i(f)`` of a function on E^N."""

    deltas: tuple[float, ...]

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.deltas)
        if any(not np.isfinite(d) for d in deltas):
            raise ValueError("Lipschitz coefficients must be finite")
        if any(d < 0 for d in deltas):
            raise ValueError("Lipschitz coefficients must be nonnegative")
        object.__setattr__(self, "deltas", deltas)

    @property
    def lip_norm(self) -> float:
        """Lipschitz norm w.r.t. d_L1, i.e. the largest coordinate coefficient."""
        return max(self.deltas) if self.deltas else 0.0

    @property
    def sum_deltas(self) -> float:
        return float(sum(self.deltas))

    @property
    def n_sites(self) -> int:
        return len(self.deltas)

    @classmethod
    def uniform(cls, n_sites: int, delta: float) -> "LipschitzProfile":
        return cls((float(delta),) * n_sites)


def enumerate_configurations(alphabet: int, n_sites: int, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """All of ``{0..A-1}^N`` in mixed-radix order (site 0 most significant)."""
    size = alphabet**n_sites
    if size > cap:
        raise ValueError(f"state space of size {alphabet}^{n_sites} = {size} exceeds enumeration cap {cap}")
    return np.array(list(itertools.product(range(alphabet), repeat=n_sites)), dtype=np.int64).reshape(size, n_sites)


def configuration_index(x, alphabet: int) -> int:
    """Mixed-radix index of a finite configuration, site 0 most significant."""
    idx = 0
    for s in np.asarray(x, dtype=np.int64):
        idx = idx * alphabet + int(s)
    return idx


def lipschitz_profile(
    f: Callable[[np.ndarray], float] | None = None,
    *,
    alphabet: int | None = None,
    n_sites: int | None = None,
    declared=None,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> LipschitzProfile:
    """Lipschitz profile of ``f``.

    With ``declared`` the caller supplies the coefficients and only their sign
    is validated.  Otherwise ``f`` is evaluated on every configuration of the
    finite space ``{0..A-1}^N`` (discrete ground metric) and ``delta_i`` is the
    largest change of ``f`` under a change of coordinate ``i`` alone.
    """
    if declared is not None:
        return LipschitzProfile(tuple(declared))
    if f is None or alphabet is None or n_sites is None:
        raise ValueError("brute-force mode needs f, alphabet and n_sites")
    configs = enumerate_configurations(alphabet, n_sites, cap)
    values = np.array([float(f(x)) for x in configs]).reshape((alphabet,) * n_sites)
    deltas = []
    for i in range(n_sites):
        # all pairs equal off i differ by d = 1 under the discrete metric
        spread = values.max(axis=i) - values.min(axis=i)
        deltas.append(float(spread.max()) if spread.size else 0.0)
    return LipschitzProfile(tuple(deltas))
