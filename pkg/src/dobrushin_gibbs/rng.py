"""Counter-based uniform streams.

Every uniform used by a chain is a pure function of
``(master_seed, replica, sweep, site, slot)``, so plain and coupled chains,
scalar and batched code paths, and any sharding of replicas over threads all
see the same numbers.  The mix is the SplitMix64 finalizer applied once per
counter component.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
SEED_SALT = 0x5851F42D4C957F2D

# slots consumed per site update
N_SLOTS = 3
SLOT_DRAW = 0      # inverse-CDF / shared quantile
SLOT_ACCEPT = 1    # maximal-coupling acceptance
SLOT_RESIDUAL = 2  # maximal-coupling residual draw

_INV_2_53 = 1.0 / 9007199254740992.0


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _absorb(state: int, counter: int) -> int:
    return _mix((state + (counter + 1) * GAMMA) & MASK64)


def counter_uniform(seed: int, replica: int, sweep: int, site: int, slot: int) -> float:
    """One uniform in the open interval (0, 1)."""
    z = _mix((seed ^ SEED_SALT) & MASK64)
    z = _absorb(z, replica)
    z = _absorb(z, sweep)
    z = _absorb(z, site * N_SLOTS + slot)
    return ((z >> 11) + 0.5) * _INV_2_53


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def _absorb_array(state: np.ndarray, counter) -> np.ndarray:
    inc = (np.asarray(counter, dtype=np.uint64) + np.uint64(1)) * np.uint64(GAMMA)
    return _mix_array(state + inc)


def replica_keys(seed: int, replicas) -> np.ndarray:
    """Per-replica stream keys (uint64), the state after absorbing the replica index."""
    replicas = np.asarray(replicas, dtype=np.int64).astype(np.uint64)
    base = np.full(replicas.shape, (seed ^ SEED_SALT) & MASK64, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _absorb_array(_mix_array(base), replicas)


def uniforms_from_keys(keys: np.ndarray, sweep: int, site: int, slot: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = _absorb_array(keys, np.uint64(sweep))
        z = _absorb_array(z, np.uint64(site * N_SLOTS + slot))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53


def counter_uniforms(seed: int, replicas, sweep: int, site: int, slot: int) -> np.ndarray:
    """Vectorised :func:`counter_uniform` over an array of replica indices."""
    return uniforms_from_keys(replica_keys(seed, replicas), sweep, site, slot)


class UniformStream:
    """The uniform stream of a single replica.

    ``site_uniforms(sweep, site)`` returns the three uniforms reserved for one
    site update; a plain Gibbs update reads only the first.
    """

    def __init__(self, seed: int, replica: int = 0):
        if not 0 <= seed <= MASK64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        if replica < 0:
            raise ValueError("replica index must be nonnegative")
        self.seed = int(seed)
        self.replica = int(replica)

    def uniform(self, sweep: int, site: int, slot: int = SLOT_DRAW) -> float:
        return counter_uniform(self.seed, self.replica, sweep, site, slot)

    def site_uniforms(self, sweep: int, site: int) -> tuple[float, float, float]:
        return tuple(self.uniform(sweep, site, s) for s in range(N_SLOTS))

    def __repr__(self):
        return f"UniformStream(seed={self.seed}, replica={self.replica})"
