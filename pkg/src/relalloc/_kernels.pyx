# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled replication kernel.

Mirrors ``_reference.replicate`` operation for operation (same stream layout,
same floating-point evaluation order) and runs a block of replications
without the GIL.
"""

from libc.math cimport sqrt, floor, fabs
from libc.stdint cimport uint64_t, int64_t
from scipy.special.cython_special cimport betaincinv

import numpy as np

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t STREAM_MULT = 0xD1B54A32D192ED03ULL
cdef uint64_t M1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t M2 = 0x94D049BB133111EBULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0
cdef double FLOOR_RTOL = 1e-12

cdef enum:
    TWO_STAGE = 0
    HYBRID = 1
    FIXED = 2


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * M1
    z = (z ^ (z >> 27)) * M2
    return z ^ (z >> 31)


cdef inline uint64_t replication_key(uint64_t seed, uint64_t rep) noexcept nogil:
    return mix64(mix64(seed) + (rep + 1) * GOLDEN)


cdef inline uint64_t stream_key(uint64_t rep_key, uint64_t stream) noexcept nogil:
    return mix64(rep_key ^ ((stream + 1) * STREAM_MULT))


cdef inline double uniform(uint64_t skey, uint64_t counter) noexcept nogil:
    return <double>(mix64(skey + (counter + 1) * GOLDEN) >> 11) * INV_2_53


cdef int64_t count_successes(uint64_t skey, int64_t start, int64_t stop, double p) noexcept nogil:
    cdef int64_t c, total = 0
    for c in range(start, stop):
        if uniform(skey, <uint64_t>c) < p:
            total += 1
    return total


cdef inline int64_t isqrt(int64_t m) noexcept nogil:
    cdef int64_t k = <int64_t>sqrt(<double>m)
    while k * k > m:
        k -= 1
    while (k + 1) * (k + 1) <= m:
        k += 1
    return k


cdef inline int64_t floor_tol(double x) noexcept nogil:
    cdef double k = floor(x)
    cdef double scale = fabs(x)
    if scale < 1.0:
        scale = 1.0
    if x - k > 1.0 - FLOOR_RTOL * scale:
        k += 1.0
    return <int64_t>k


cdef void predictor(int64_t m, double* weights, Py_ssize_t n, double* out) noexcept nogil:
    cdef Py_ssize_t i
    cdef double total = 0.0
    for i in range(n):
        out[i] = sqrt(weights[i])
    for i in range(n):
        total += out[i]
    for i in range(n):
        out[i] = m * (out[i] / total)


cdef int corrected_split(int64_t m, double* predicted, int64_t* floors, Py_ssize_t n,
                         int64_t* sizes) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef int64_t used = 0, v, fsum = 0
    for i in range(n):
        fsum += floors[i]
    if fsum > m:
        return -1
    for i in range(n - 1):
        v = floor_tol(predicted[i])
        if v < floors[i]:
            v = floors[i]
        sizes[i] = v
        used += v
    sizes[n - 1] = m - used
    while sizes[n - 1] < floors[n - 1]:
        k = -1
        for i in range(n - 1):
            if sizes[i] > floors[i] and (k < 0 or sizes[i] > sizes[k]):
                k = i
        if k < 0:
            return -1
        sizes[k] -= 1
        sizes[n - 1] += 1
    return 0


cdef void u_weights(double* a, double* b, Py_ssize_t n, double* out) noexcept nogil:
    # a, b are posterior parameters of one parallel group
    cdef Py_ssize_t i, j
    cdef double r, rj, value
    for i in range(n):
        r = a[i] + b[i]
        value = a[i] * b[i] / (r * (r + 1.0))
        for j in range(n):
            if j == i:
                continue
            rj = a[j] + b[j]
            value *= b[j] * (b[j] + 1.0) / (rj * (rj + 1.0))
        out[i] = value


cdef int run_one(
    double[::1] alpha, double[::1] beta, int64_t[::1] group_sizes, int64_t[::1] offsets,
    int scheme, int64_t m, int64_t[::1] fixed, double[::1] bconst,
    uint64_t seed, uint64_t rep,
    double[::1] p, uint64_t[::1] keys, int64_t[::1] sizes, int64_t[::1] ones, double[::1] pa, double[::1] pb,
    double[::1] work, double[::1] work2, int64_t[::1] floors, int64_t[::1] sub,
    double* pv_out, double* se_out,
) noexcept nogil:
    cdef Py_ssize_t K = alpha.shape[0]
    cdef Py_ssize_t G = group_sizes.shape[0]
    cdef Py_ssize_t k, g, l, off, n
    cdef uint64_t rk = replication_key(seed, rep)
    cdef uint64_t prior_key = stream_key(rk, 0)
    cdef int64_t first = 0, L, Lt, s1
    cdef double lin, sq, r, val, mean_q, var, mq, v, gmean, gvar, smean, svar, est, truth, acc, err

    for k in range(K):
        p[k] = betaincinv(alpha[k], beta[k], uniform(prior_key, <uint64_t>k))
        keys[k] = stream_key(rk, <uint64_t>(k + 1))

    if scheme == TWO_STAGE:
        first = isqrt(m)
    elif scheme == HYBRID:
        first = isqrt(isqrt(m))

    # stage one: posterior parameters after `first` units
    for k in range(K):
        s1 = count_successes(keys[k], 0, first, p[k])
        ones[k] = s1
        pa[k] = alpha[k] + s1
        pb[k] = beta[k] + (first - s1)

    if scheme == TWO_STAGE:
        L = first
        u_weights(&pa[0], &pb[0], K, &work[0])
        predictor(m, &work[0], K, &work2[0])
        for k in range(K):
            floors[k] = L
        if corrected_split(m, &work2[0], &floors[0], K, &sizes[0]) != 0:
            return -1
    elif scheme == HYBRID:
        L = isqrt(m)
        Lt = first
        # second moments of each subsystem reliability
        for g in range(G):
            off = offsets[g]
            n = group_sizes[g]
            lin = 1.0
            sq = 1.0
            for l in range(n):
                r = pa[off + l] + pb[off + l]
                lin *= pb[off + l] / r
                sq *= pb[off + l] * (pb[off + l] + 1.0) / (r * (r + 1.0))
            work2[g] = 1.0 - 2.0 * lin + sq
            floors[g] = L if L > n * Lt else n * Lt
        for g in range(G):
            val = 1.0
            for l in range(G):
                if l != g:
                    val *= work2[l]
            work[g] = bconst[g] * val
        predictor(m, &work[0], G, &work2[0])
        for g in range(G):
            work2[g] = <double>floor_tol(work2[g])
        if corrected_split(m, &work2[0], &floors[0], G, &sub[0]) != 0:
            return -1
        for g in range(G):
            off = offsets[g]
            n = group_sizes[g]
            u_weights(&pa[off], &pb[off], n, &work[0])
            predictor(sub[g], &work[0], n, &work2[0])
            for l in range(n):
                floors[l] = Lt
            if corrected_split(sub[g], &work2[0], &floors[0], n, &sizes[off]) != 0:
                return -1
    else:
        for k in range(K):
            sizes[k] = fixed[k]

    # stage two and posterior moments
    for k in range(K):
        s1 = ones[k] + count_successes(keys[k], first, sizes[k], p[k])
        pa[k] = alpha[k] + s1
        pb[k] = beta[k] + (sizes[k] - s1)

    truth = 1.0
    for g in range(G):
        off = offsets[g]
        n = group_sizes[g]
        for l in range(n):
            r = pa[off + l] + pb[off + l]
            mq = pb[off + l] / r
            v = pa[off + l] * pb[off + l] / (r * r * (r + 1.0))
            if l == 0:
                mean_q = mq
                var = v
            else:
                var = mean_q * mean_q * v + mq * mq * var + var * v
                mean_q = mean_q * mq
        gmean = 1.0 - mean_q
        gvar = var
        if g == 0:
            smean = gmean
            svar = gvar
        else:
            svar = smean * smean * gvar + gmean * gmean * svar + svar * gvar
            smean = smean * gmean
        acc = 1.0
        for l in range(n):
            acc = acc * (1.0 - p[off + l])
        truth = truth * (1.0 - acc)

    est = smean
    err = est - truth
    pv_out[0] = svar
    se_out[0] = err * err
    return 0


def simulate_block(problem, int64_t m, master_seed, int64_t start, int64_t stop):
    """Losses of replications ``start <= rep < stop``; see ``_reference.simulate_block``."""
    cdef double[::1] alpha = np.ascontiguousarray(problem.alpha, dtype=np.float64)
    cdef double[::1] beta = np.ascontiguousarray(problem.beta, dtype=np.float64)
    cdef int64_t[::1] group_sizes = np.ascontiguousarray(problem.group_sizes, dtype=np.int64)
    cdef int64_t[::1] offsets = np.ascontiguousarray(
        np.concatenate([[0], np.cumsum(problem.group_sizes)[:-1]]), dtype=np.int64)
    cdef int64_t[::1] fixed = np.ascontiguousarray(problem.fixed_sizes(m), dtype=np.int64)
    cdef double[::1] bconst = np.ascontiguousarray(problem.b_constants, dtype=np.float64)
    cdef int scheme = problem.scheme_code
    cdef uint64_t seed = <uint64_t>(int(master_seed) & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t K = alpha.shape[0]
    cdef Py_ssize_t G = group_sizes.shape[0]
    cdef Py_ssize_t W = K if K > G else G
    if scheme == FIXED and fixed.shape[0] != K:
        raise ValueError("fixed sizes do not match the number of components")

    out_pv = np.empty(stop - start)
    out_se = np.empty(stop - start)
    cdef double[::1] pv = out_pv
    cdef double[::1] se = out_se
    cdef double[::1] p = np.empty(K)
    cdef uint64_t[::1] keys = np.empty(K, dtype=np.uint64)
    cdef int64_t[::1] sizes = np.empty(K, dtype=np.int64)
    cdef int64_t[::1] ones = np.empty(K, dtype=np.int64)
    cdef double[::1] pa = np.empty(K)
    cdef double[::1] pb = np.empty(K)
    cdef double[::1] work = np.empty(W)
    cdef double[::1] work2 = np.empty(W)
    cdef int64_t[::1] floors = np.empty(W, dtype=np.int64)
    cdef int64_t[::1] sub = np.empty(G, dtype=np.int64)
    cdef int64_t rep
    cdef int status = 0

    with nogil:
        for rep in range(start, stop):
            status = run_one(alpha, beta, group_sizes, offsets, scheme, m, fixed, bconst,
                             seed, <uint64_t>rep, p, keys, sizes, ones, pa, pb, work, work2,
                             floors, sub, &pv[rep - start], &se[rep - start])
            if status != 0:
                break
    if status != 0:
        raise ValueError(f"sample budget too small: m={m} (replication {rep})")
    return out_pv, out_se


def uniforms(uint64_t skey, int64_t start, int64_t stop):
    out = np.empty(stop - start)
    cdef double[::1] view = out
    cdef int64_t c
    for c in range(start, stop):
        view[c - start] = uniform(skey, <uint64_t>c)
    return out


def count(uint64_t skey, int64_t start, int64_t stop, double p):
    return count_successes(skey, start, stop, p)
