"""Backend selection for the batched sweep kernels.

The compiled ``_ckernels`` module is used when it was built; otherwise the
numpy fallback.  ``DOBRUSHIN_GIBBS_BACKEND=python`` forces the fallback.
"""
from __future__ import annotations

import logging
import os

import numpy as np

from . import _pykernels
from .models import ConditionalModel, FinitePmf, FinitePotential, FreeModel, GaussianLinear, IsingGraph

log = logging.getLogger(__name__)

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

_requested = os.environ.get("DOBRUSHIN_GIBBS_BACKEND", "auto").lower()
if _requested == "python" or _ckernels is None:
    if _requested == "cython":
        log.warning("cython kernels requested but not built; using numpy fallback")
    default_backend = _pykernels
else:
    default_backend = _ckernels

BACKEND = default_backend.BACKEND


def get_backend(name: str | None = None):
    if name is None:
        return default_backend
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {sorted(BACKENDS)}") from None


def state_dtype(model: ConditionalModel):
    return np.int64 if model.finite else np.float64


def _table(model):
    cache = getattr(model, "_kernel_logw", None)
    if cache is None:
        cache = np.ascontiguousarray(model.log_weight_table(cap=1 << 24), dtype=np.float64)
        object.__setattr__(model, "_kernel_logw", cache)
    return cache


def sweep_batch(model: ConditionalModel, X: np.ndarray, Y: np.ndarray | None, seed: int,
                replicas: np.ndarray, sweep: int, backend=None) -> None:
    """Advance ``X`` (and ``Y`` under the coupling) by one systematic scan, in place."""
    kern = get_backend(backend) if (backend is None or isinstance(backend, str)) else backend
    replicas = np.ascontiguousarray(replicas, dtype=np.int64)
    seed = int(seed)
    if isinstance(model, IsingGraph):
        kern.ising_sweep(X, Y, np.ascontiguousarray(model.J), np.ascontiguousarray(model.h),
                         model.beta, seed, replicas, sweep)
    elif isinstance(model, FinitePotential):
        kern.table_sweep(X, Y, _table(model), model.alphabet, seed, replicas, sweep)
    elif isinstance(model, FreeModel) and isinstance(model.law, FinitePmf):
        probs = np.ascontiguousarray(np.broadcast_to(model.law.probs, (model.n_sites, model.alphabet)))
        kern.pmf_sweep(X, Y, probs, seed, replicas, sweep)
    elif isinstance(model, FreeModel):
        n = model.n_sites
        kern.gaussian_sweep(X, Y, np.zeros((n, n)), np.full(n, model.law.mean), np.full(n, model.law.sd),
                            seed, replicas, sweep)
    elif isinstance(model, GaussianLinear):
        kern.gaussian_sweep(X, Y, np.ascontiguousarray(model.A), np.ascontiguousarray(model.b),
                            np.ascontiguousarray(model.sigma), seed, replicas, sweep)
    else:
        raise TypeError(f"no sweep kernel for {type(model).__name__}")
