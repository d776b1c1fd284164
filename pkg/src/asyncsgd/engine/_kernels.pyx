# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the shared-memory gradient engine.

Everything here runs with the GIL released so that worker threads make
real concurrent progress.  The shared parameter vector is mutated through
coordinate-level compare-and-swap adds: concurrent updates to the same
coordinate are never lost, while a full-vector read remains deliberately
unsynchronized (it may observe a mix of old and new coordinates).

The batch-gradient kernel accumulates strictly left to right, so a
single-worker run is bit-reproducible and both execution modes of the
engine share the exact same floating-point path.
"""

from libc.math cimport exp as c_exp
from libc.math cimport pow as c_pow

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef extern from *:
    """
    #include <stdint.h>
    #include <string.h>

    static inline double asgd_atomic_load_f64(const double *addr) {
        uint64_t bits = __atomic_load_n((const uint64_t *)addr, __ATOMIC_RELAXED);
        double out;
        memcpy(&out, &bits, sizeof out);
        return out;
    }

    static inline void asgd_atomic_add_f64(double *addr, double val) {
        uint64_t expected = __atomic_load_n((uint64_t *)addr, __ATOMIC_RELAXED);
        for (;;) {
            double cur, nxt;
            uint64_t desired;
            memcpy(&cur, &expected, sizeof cur);
            nxt = cur + val;
            memcpy(&desired, &nxt, sizeof desired);
            /* on failure `expected` reloads the current bits, so the loop retries
               against fresh contents and no concurrent add can be dropped */
            if (__atomic_compare_exchange_n((uint64_t *)addr, &expected, desired,
                                            1, __ATOMIC_RELAXED, __ATOMIC_RELAXED))
                return;
        }
    }

    static inline long long asgd_atomic_fetch_inc_i64(long long *addr) {
        return __atomic_fetch_add(addr, 1LL, __ATOMIC_ACQ_REL);
    }
    """
    double asgd_atomic_load_f64(const double *addr) nogil
    void asgd_atomic_add_f64(double *addr, double val) nogil
    long long asgd_atomic_fetch_inc_i64(long long *addr) nogil


cdef enum:
    _LOSS_LEAST_SQUARES = 0
    _LOSS_LOGISTIC = 1
    _SCHED_POLY = 0
    _SCHED_BACKOFF = 1

LOSS_LEAST_SQUARES = _LOSS_LEAST_SQUARES
LOSS_LOGISTIC = _LOSS_LOGISTIC
SCHED_POLY = _SCHED_POLY
SCHED_BACKOFF = _SCHED_BACKOFF


cdef double _step_alpha(int sched_kind, double alpha, double beta,
                        double epoch_alpha, long long k) noexcept nogil:
    if sched_kind == _SCHED_POLY:
        return alpha * c_pow(<double> k, -beta)
    return epoch_alpha


cdef long long _grad_batch(const long long[::1] indptr,
                           const long long[::1] indices,
                           const double[::1] data,
                           const double[::1] labels,
                           const long long[::1] rows,
                           long long row_lo, long long row_hi,
                           int loss_kind,
                           const double[::1] xread,
                           double[::1] gbuf,
                           signed char[::1] seen,
                           long long[::1] touched) noexcept nogil:
    """Mean gradient of rows[row_lo:row_hi] at `xread` into gbuf/touched.

    gbuf and seen must be zero outside previously touched entries; both are
    restored to that state by the caller via the returned touched list.
    Returns the number of touched coordinates.
    """
    cdef long long ntouch = 0
    cdef long long r, i, p, j
    cdef double dot, coeff, b, m
    cdef long long nrows = row_hi - row_lo

    for r in range(row_lo, row_hi):
        i = rows[r]
        b = labels[i]
        dot = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            dot += data[p] * xread[indices[p]]
        if loss_kind == _LOSS_LEAST_SQUARES:
            coeff = dot - b
        else:
            m = b * dot
            coeff = -b / (1.0 + c_exp(m))
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if not seen[j]:
                seen[j] = 1
                touched[ntouch] = j
                ntouch += 1
            gbuf[j] += coeff * data[p]

    if nrows > 1:
        for p in range(ntouch):
            gbuf[touched[p]] /= <double> nrows
    return ntouch


def grad_batch(const long long[::1] indptr, const long long[::1] indices,
               const double[::1] data, const double[::1] labels,
               const long long[::1] rows, int loss_kind,
               const double[::1] x,
               double[::1] gbuf, signed char[::1] seen, long long[::1] touched):
    """Python entry point to the batch-gradient kernel (whole `rows` list).

    Leaves gbuf/seen dirty on the touched entries; returns the touched count.
    The caller gathers gbuf[touched[:n]] and must then call clear_touched.
    """
    return _grad_batch(indptr, indices, data, labels, rows, 0, rows.shape[0],
                       loss_kind, x, gbuf, seen, touched)


def clear_touched(double[::1] gbuf, signed char[::1] seen,
                  long long[::1] touched, long long ntouch):
    cdef long long p
    for p in range(ntouch):
        gbuf[touched[p]] = 0.0
        seen[touched[p]] = 0


def run_worker_epoch(double[::1] x, long long[::1] counter,
                     const long long[::1] indptr, const long long[::1] indices,
                     const double[::1] data, const double[::1] labels,
                     int loss_kind,
                     const long long[::1] order,
                     long long batch, long long batch_lo, long long batch_hi,
                     int sched_kind, double alpha, double beta, double epoch_alpha,
                     long long burn_in, int accumulate_avg, int racy,
                     double[::1] avg_sum, long long[::1] avg_meta,
                     long long[::1] ks_out,
                     double[::1] xbuf, double[::1] gbuf,
                     signed char[::1] seen, long long[::1] touched):
    """One worker's share of one epoch, entirely without the GIL.

    Processes batches [batch_lo, batch_hi) of the epoch permutation
    `order`.  Per step: read the full parameter vector coordinate by
    coordinate (no snapshot consistency), compute the mini-batch gradient
    at that read, fetch-increment the shared counter to obtain the step
    index k, then subtract alpha_k * g from the shared vector through
    atomic adds.  Post burn-in the read snapshot is accumulated into this
    worker's private average buffer (merged by the caller after joining).

    `racy` switches the write-back to plain unsynchronized read-modify-write;
    that mode can drop concurrent updates and exists only for benchmarking
    the cost of the atomic path.
    """
    cdef long long d = x.shape[0]
    cdef long long n_rows = order.shape[0]
    cdef long long bi, lo, hi, k, p, j, ntouch
    cdef double a_k, upd
    cdef bint record_ks = ks_out.shape[0] > 0

    with nogil:
        for bi in range(batch_lo, batch_hi):
            lo = bi * batch
            hi = lo + batch
            if hi > n_rows:
                hi = n_rows

            for j in range(d):
                xbuf[j] = asgd_atomic_load_f64(&x[j])

            ntouch = _grad_batch(indptr, indices, data, labels, order,
                                 lo, hi, loss_kind, xbuf, gbuf, seen, touched)

            k = asgd_atomic_fetch_inc_i64(&counter[0]) + 1
            a_k = _step_alpha(sched_kind, alpha, beta, epoch_alpha, k)
            if record_ks:
                ks_out[bi - batch_lo] = k

            for p in range(ntouch):
                j = touched[p]
                upd = -(a_k * gbuf[j])
                if racy:
                    x[j] = x[j] + upd
                else:
                    asgd_atomic_add_f64(&x[j], upd)
                gbuf[j] = 0.0
                seen[j] = 0

            if accumulate_avg and k > burn_in:
                for j in range(d):
                    avg_sum[j] += xbuf[j]
                avg_meta[0] += 1


def inject_updates(double[::1] x, const long long[::1] coords,
                   const double[::1] vals, int racy):
    """Apply a fixed list of coordinate increments to the shared vector.

    Test harness for the no-lost-updates contract: with racy=0 the final
    vector must equal the exact sum of all injected values regardless of
    how many threads run this concurrently.
    """
    cdef long long i
    with nogil:
        for i in range(coords.shape[0]):
            if racy:
                x[coords[i]] = x[coords[i]] + vals[i]
            else:
                asgd_atomic_add_f64(&x[coords[i]], vals[i])


def fetch_increment(long long[::1] counter):
    """Atomic fetch-and-increment of a shared one-element counter array."""
    return asgd_atomic_fetch_inc_i64(&counter[0])


def atomic_add_coords(double[::1] x, const long long[::1] coords,
                      const double[::1] vals):
    cdef long long i
    with nogil:
        for i in range(coords.shape[0]):
            asgd_atomic_add_f64(&x[coords[i]], vals[i])


def read_snapshot(double[::1] x, double[::1] out):
    """Coordinate-by-coordinate unsynchronized read of the shared vector."""
    cdef long long j
    with nogil:
        for j in range(x.shape[0]):
            out[j] = asgd_atomic_load_f64(&x[j])


def simulate_linear(const double[:, ::1] hess, const double[::1] x_star,
                    const double[:, ::1] noise, const double[::1] alphas,
                    const long long[::1] apply_order, const long long[::1] apply_key,
                    double[::1] x, double[::1] avg_sum, long long burn_in,
                    double[:, ::1] updates_ws):
    """Delay-queue iteration for an affine residual, single logical thread.

    Step k (1-based) first makes visible every earlier update whose
    scheduled application step (apply_key, presorted with apply_order)
    is <= k, then reads the stale vector, evaluates
    g = H (x - x_star) + noise[k-1] and schedules -alphas[k-1] * g.
    Remaining updates are flushed after the last step, so the returned
    vector has every issued update incorporated.

    Returns the number of snapshots accumulated into avg_sum.
    """
    cdef long long n = noise.shape[0]
    cdef long long d = x.shape[0]
    cdef long long k, i, j, l, ptr = 0
    cdef long long navg = 0
    cdef double g, a_k

    with nogil:
        for k in range(1, n + 1):
            while ptr < n and apply_key[ptr] <= k:
                i = apply_order[ptr]
                for j in range(d):
                    x[j] -= updates_ws[i, j]
                ptr += 1

            if k > burn_in:
                for j in range(d):
                    avg_sum[j] += x[j]
                navg += 1

            i = k - 1
            a_k = alphas[i]
            for j in range(d):
                g = noise[i, j]
                for l in range(d):
                    g += hess[j, l] * (x[l] - x_star[l])
                updates_ws[i, j] = a_k * g

        while ptr < n:
            i = apply_order[ptr]
            for j in range(d):
                x[j] -= updates_ws[i, j]
            ptr += 1

    return navg
