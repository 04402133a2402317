# cython: language_level=3
"""Compiled sweep kernels; same signatures and streams as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY
from libc.stdint cimport uint64_t, int64_t
from scipy.special.cython_special cimport ndtri

cnp.import_array()

BACKEND = "cython"

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX2 = 0x94D049BB133111EBULL
cdef uint64_t SEED_SALT = 0x5851F42D4C957F2DULL
cdef int N_SLOTS = 3
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


cdef inline uint64_t _absorb(uint64_t state, uint64_t counter) noexcept nogil:
    return _mix(state + (counter + 1) * GAMMA)


cdef inline uint64_t _replica_key(uint64_t seed, int64_t replica) noexcept nogil:
    return _absorb(_mix(seed ^ SEED_SALT), <uint64_t>replica)


cdef inline double _uniform(uint64_t key, int64_t sweep, int site, int slot) noexcept nogil:
    cdef uint64_t z = _absorb(key, <uint64_t>sweep)
    z = _absorb(z, <uint64_t>(site * N_SLOTS + slot))
    return (<double>(z >> 11) + 0.5) * INV_2_53


cdef inline double _p_minus(double beta, double m) noexcept nogil:
    return 1.0 / (1.0 + exp(2.0 * beta * m))


def ising_sweep(cnp.int64_t[:, ::1] X, Y, const double[:, ::1] J, const double[::1] h, double beta,
                uint64_t seed, const cnp.int64_t[::1] replicas, int64_t sweep):
    cdef Py_ssize_t R = X.shape[0], N = X.shape[1]
    cdef Py_ssize_t r, i, k
    cdef cnp.int64_t[:, ::1] Yv
    cdef bint coupled = Y is not None
    if coupled:
        Yv = Y
    else:
        Yv = X
    # compressed neighbour lists
    cdef cnp.int64_t[::1] indptr = np.zeros(N + 1, dtype=np.int64)
    nz = [np.flatnonzero(np.asarray(J[i])) for i in range(N)]
    for i in range(N):
        indptr[i + 1] = indptr[i] + len(nz[i])
    cdef cnp.int64_t[::1] nbr = np.concatenate(nz + [np.zeros(0, dtype=np.int64)]).astype(np.int64)
    cdef double[::1] wt = np.array([J[i, j] for i in range(N) for j in nz[i]], dtype=np.float64)
    cdef uint64_t key
    cdef double mx, my, pmx, pmy, u0, u1, pa, qa
    cdef int64_t a
    with nogil:
        for r in range(R):
            key = _replica_key(seed, replicas[r])
            for i in range(N):
                u0 = _uniform(key, sweep, i, 0)
                mx = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    mx = mx + (2 * X[r, nbr[k]] - 1) * wt[k]
                pmx = _p_minus(beta, mx + h[i])
                a = 0 if u0 < pmx else 1
                if coupled:
                    my = 0.0
                    for k in range(indptr[i], indptr[i + 1]):
                        my = my + (2 * Yv[r, nbr[k]] - 1) * wt[k]
                    pmy = _p_minus(beta, my + h[i])
                    u1 = _uniform(key, sweep, i, 1)
                    if a == 0:
                        pa = pmx
                        qa = pmy
                    else:
                        pa = 1.0 - pmx
                        qa = 1.0 - pmy
                    if u1 * pa < (pa if pa < qa else qa):
                        Yv[r, i] = a
                    else:
                        Yv[r, i] = 1 - a
                X[r, i] = a


cdef inline Py_ssize_t _inverse_cdf(const double* p, Py_ssize_t A, double u) noexcept nogil:
    cdef double c = 0.0
    cdef Py_ssize_t s
    for s in range(A):
        c = c + p[s]
        if u < c:
            return s
    return A - 1


cdef inline void _table_probs(const double[::1] logw, int64_t base, int64_t stride, Py_ssize_t A,
                              double* out) noexcept nogil:
    cdef Py_ssize_t s
    cdef double top = -INFINITY, tot = 0.0
    for s in range(A):
        out[s] = logw[base + s * stride]
        if out[s] > top:
            top = out[s]
    for s in range(A):
        out[s] = exp(out[s] - top)
        tot = tot + out[s]
    for s in range(A):
        out[s] = out[s] / tot


def table_sweep(cnp.int64_t[:, ::1] X, Y, const double[::1] logw, int alphabet,
                uint64_t seed, const cnp.int64_t[::1] replicas, int64_t sweep):
    cdef Py_ssize_t R = X.shape[0], N = X.shape[1], A = alphabet
    cdef Py_ssize_t r, i, s
    cdef cnp.int64_t[:, ::1] Yv
    cdef bint coupled = Y is not None
    if coupled:
        Yv = Y
    else:
        Yv = X
    cdef cnp.int64_t[::1] radix = (alphabet ** np.arange(N - 1, -1, -1, dtype=np.int64)).astype(np.int64)
    cdef double[::1] p = np.empty(A)
    cdef double[::1] q = np.empty(A)
    cdef double[::1] res = np.empty(A)
    cdef uint64_t key
    cdef int64_t ix, iy, a, b
    cdef double u0, u1, u2, pa, qa, tot
    with nogil:
        for r in range(R):
            key = _replica_key(seed, replicas[r])
            ix = 0
            iy = 0
            for i in range(N):
                ix = ix + X[r, i] * radix[i]
                if coupled:
                    iy = iy + Yv[r, i] * radix[i]
            for i in range(N):
                u0 = _uniform(key, sweep, i, 0)
                _table_probs(logw, ix - X[r, i] * radix[i], radix[i], A, &p[0])
                a = _inverse_cdf(&p[0], A, u0)
                if coupled:
                    _table_probs(logw, iy - Yv[r, i] * radix[i], radix[i], A, &q[0])
                    u1 = _uniform(key, sweep, i, 1)
                    pa = p[a]
                    qa = q[a]
                    if u1 * pa < (pa if pa < qa else qa):
                        b = a
                    else:
                        u2 = _uniform(key, sweep, i, 2)
                        tot = 0.0
                        for s in range(A):
                            res[s] = q[s] - p[s] if q[s] > p[s] else 0.0
                            tot = tot + res[s]
                        for s in range(A):
                            res[s] = res[s] / tot
                        b = _inverse_cdf(&res[0], A, u2)
                    iy = iy + (b - Yv[r, i]) * radix[i]
                    Yv[r, i] = b
                ix = ix + (a - X[r, i]) * radix[i]
                X[r, i] = a


def pmf_sweep(cnp.int64_t[:, ::1] X, Y, const double[:, ::1] probs,
              uint64_t seed, const cnp.int64_t[::1] replicas, int64_t sweep):
    cdef Py_ssize_t R = X.shape[0], N = X.shape[1], A = probs.shape[1]
    cdef Py_ssize_t r, i
    cdef cnp.int64_t[:, ::1] Yv
    cdef bint coupled = Y is not None
    if coupled:
        Yv = Y
    else:
        Yv = X
    cdef uint64_t key
    cdef int64_t a
    with nogil:
        for r in range(R):
            key = _replica_key(seed, replicas[r])
            for i in range(N):
                a = _inverse_cdf(&probs[i, 0], A, _uniform(key, sweep, i, 0))
                X[r, i] = a
                if coupled:
                    Yv[r, i] = a


def gaussian_sweep(double[:, ::1] X, Y, const double[:, ::1] Amat, const double[::1] b, const double[::1] sigma,
                   uint64_t seed, const cnp.int64_t[::1] replicas, int64_t sweep):
    cdef Py_ssize_t R = X.shape[0], N = X.shape[1]
    cdef Py_ssize_t r, i, k
    cdef double[:, ::1] Yv
    cdef bint coupled = Y is not None
    if coupled:
        Yv = Y
    else:
        Yv = X
    cdef cnp.int64_t[::1] indptr = np.zeros(N + 1, dtype=np.int64)
    nz = [np.flatnonzero(np.asarray(Amat[i])) for i in range(N)]
    for i in range(N):
        indptr[i + 1] = indptr[i] + len(nz[i])
    cdef cnp.int64_t[::1] nbr = np.concatenate(nz + [np.zeros(0, dtype=np.int64)]).astype(np.int64)
    cdef double[::1] wt = np.array([Amat[i, j] for i in range(N) for j in nz[i]], dtype=np.float64)
    cdef uint64_t key
    cdef double z, mx, my
    with nogil:
        for r in range(R):
            key = _replica_key(seed, replicas[r])
            for i in range(N):
                z = ndtri(_uniform(key, sweep, i, 0))
                mx = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    mx = mx + X[r, nbr[k]] * wt[k]
                X[r, i] = b[i] + mx + sigma[i] * z
                if coupled:
                    my = 0.0
                    for k in range(indptr[i], indptr[i + 1]):
                        my = my + Yv[r, nbr[k]] * wt[k]
                    Yv[r, i] = b[i] + my + sigma[i] * z
