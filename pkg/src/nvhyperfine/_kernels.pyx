# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled propagation kernels.

H(t) = h0 + cos(2 pi freq t) v; each step is the exact exponential of the
Hamiltonian at the step midpoint, exp(-2 pi i dt H(t_k + dt/2)).

Consecutive midpoint Hamiltonians differ by O(dt), so the eigenvectors of
the previous step nearly diagonalize the next one.  The eigenproblem is
therefore solved by complex Jacobi sweeps started from the previous
eigenbasis; LAPACK is only used for the first step.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, M_PI
from scipy.linalg.cython_lapack cimport zheev

cnp.import_array()

DEF MAXN = 16
DEF MAX_SWEEPS = 30


cdef inline double cabs2(double complex z) noexcept nogil:
    return z.real * z.real + z.imag * z.imag


cdef void _orthonormalize(double complex* w, int n) noexcept nogil:
    # modified Gram-Schmidt on the columns of w (column j at w[i + j*n])
    cdef int i, j, k
    cdef double complex proj
    cdef double nrm
    for j in range(n):
        for k in range(j):
            proj = 0
            for i in range(n):
                proj = proj + w[i + k * n].conjugate() * w[i + j * n]
            for i in range(n):
                w[i + j * n] = w[i + j * n] - proj * w[i + k * n]
        nrm = 0
        for i in range(n):
            nrm += cabs2(w[i + j * n])
        nrm = sqrt(nrm)
        for i in range(n):
            w[i + j * n] = w[i + j * n] / nrm


cdef int _jacobi(double complex* b, double complex* w, int n) noexcept nogil:
    """Diagonalize Hermitian b in place, accumulating rotations into the columns of w."""
    cdef int sweep, p, q, k
    cdef double off, diag, absb, zeta, t, c, s
    cdef double complex bpq, e, jpp, jpq, jqp, jqq, xp, xq
    for sweep in range(MAX_SWEEPS):
        off = 0
        diag = 0
        for p in range(n):
            diag += cabs2(b[p + p * n])
            for q in range(p + 1, n):
                off += cabs2(b[p + q * n])
        if off <= 1e-32 * diag or off == 0:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                bpq = b[p + q * n]
                absb = sqrt(cabs2(bpq))
                if absb == 0:
                    continue
                e = bpq / absb
                zeta = (b[q + q * n].real - b[p + p * n].real) / (2 * absb)
                if zeta >= 0:
                    t = 1.0 / (zeta + sqrt(1 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1 + zeta * zeta))
                c = 1.0 / sqrt(1 + t * t)
                s = t * c
                # J = diag(1, e*) . [[c, s], [-s, c]]
                jpp = c
                jpq = s
                jqp = -s * e.conjugate()
                jqq = c * e.conjugate()
                for k in range(n):
                    xp = b[k + p * n]
                    xq = b[k + q * n]
                    b[k + p * n] = xp * jpp + xq * jqp
                    b[k + q * n] = xp * jpq + xq * jqq
                for k in range(n):
                    xp = b[p + k * n]
                    xq = b[q + k * n]
                    b[p + k * n] = jpp.conjugate() * xp + jqp.conjugate() * xq
                    b[q + k * n] = jpq.conjugate() * xp + jqq.conjugate() * xq
                b[p + q * n] = 0
                b[q + p * n] = 0
                b[p + p * n] = b[p + p * n].real
                b[q + q * n] = b[q + q * n].real
                for k in range(n):
                    xp = w[k + p * n]
                    xq = w[k + q * n]
                    w[k + p * n] = xp * jpp + xq * jqp
                    w[k + q * n] = xp * jpq + xq * jqq
    return -1


cdef void _exp_from_eigen(double complex* w, double* ev, double dt, int n,
                          double complex* ph, double complex* u, double complex* g,
                          double complex[:, ::1] out) noexcept nogil:
    cdef int i, j, k
    cdef double complex acc
    for k in range(n):
        ph[k] = cos(2 * M_PI * dt * ev[k]) - 1j * sin(2 * M_PI * dt * ev[k])
    for i in range(n):
        for j in range(n):
            acc = 0
            for k in range(n):
                acc = acc + w[i + k * n] * ph[k] * w[j + k * n].conjugate()
            u[i * n + j] = acc
    # one Newton-Schulz step, u <- u (3 - u^dagger u) / 2, removes the O(eps) unitarity defect
    for i in range(n):
        for j in range(n):
            acc = 0
            for k in range(n):
                acc = acc + u[k * n + i].conjugate() * u[k * n + j]
            g[i * n + j] = -acc
        g[i * n + i] = g[i * n + i] + 3
    for i in range(n):
        for j in range(n):
            acc = 0
            for k in range(n):
                acc = acc + u[i * n + k] * g[k * n + j]
            out[i, j] = 0.5 * acc


def step_unitaries(h0, v, double freq, double t0, double dt, Py_ssize_t nsteps):
    cdef double complex[:, ::1] h0v = np.ascontiguousarray(h0, dtype=np.complex128)
    cdef double complex[:, ::1] vv = np.ascontiguousarray(v, dtype=np.complex128)
    cdef int n = h0v.shape[0]
    if n > MAXN:
        raise ValueError(f"compiled kernel supports dimension <= {MAXN}")
    out = np.empty((nsteps, n, n), dtype=np.complex128)
    if nsteps == 0:
        return out
    cdef double complex[:, :, ::1] outv = out
    cdef double complex w[MAXN * MAXN]
    cdef double complex b[MAXN * MAXN]
    cdef double complex hw[MAXN * MAXN]
    cdef double complex hbuf[MAXN * MAXN]
    cdef double complex ph[MAXN]
    cdef double complex ubuf[MAXN * MAXN]
    cdef double complex gbuf[MAXN * MAXN]
    cdef double ev[MAXN]
    cdef double complex work[4 * MAXN]
    cdef double rwork[3 * MAXN]
    cdef int lwork = 4 * MAXN, info = 0
    cdef char jobz = b'V'
    cdef char uplo = b'L'
    cdef Py_ssize_t s
    cdef int i, j, k, sweeps
    cdef double c
    cdef double complex acc
    cdef bint failed = False
    with nogil:
        for s in range(nsteps):
            c = cos(2 * M_PI * freq * (t0 + (s + 0.5) * dt))
            if s == 0:
                for j in range(n):
                    for i in range(n):
                        w[i + j * n] = h0v[i, j] + c * vv[i, j]
                zheev(&jobz, &uplo, &n, w, &n, ev, work, &lwork, rwork, &info)
                if info != 0:
                    failed = True
                    break
            else:
                # hw = H w ; b = w^dagger hw  (column-major)
                for i in range(n):
                    for k in range(n):
                        hbuf[i * n + k] = h0v[i, k] + c * vv[i, k]
                for j in range(n):
                    for i in range(n):
                        acc = 0
                        for k in range(n):
                            acc = acc + hbuf[i * n + k] * w[k + j * n]
                        hw[i + j * n] = acc
                for j in range(n):
                    for i in range(n):
                        acc = 0
                        for k in range(n):
                            acc = acc + w[k + i * n].conjugate() * hw[k + j * n]
                        b[i + j * n] = acc
                sweeps = _jacobi(b, w, n)
                if sweeps < 0:
                    failed = True
                    break
                _orthonormalize(w, n)
                for k in range(n):
                    ev[k] = b[k + k * n].real
            _exp_from_eigen(w, ev, dt, n, ph, ubuf, gbuf, outv[s])
    if failed:
        raise ArithmeticError("eigendecomposition of a step Hamiltonian did not converge")
    return out


cdef inline void _mm(const double complex* a, const double complex* b, double complex* out, int n) noexcept nogil:
    # row-major out = a @ b; i-k-j order keeps the inner loop contiguous
    cdef int i, j, k
    cdef double complex aik
    for i in range(n * n):
        out[i] = 0
    for i in range(n):
        for k in range(n):
            aik = a[i * n + k]
            for j in range(n):
                out[i * n + j] = out[i * n + j] + aik * b[k * n + j]


cdef inline void _mv(const double complex* a, const double complex* x, double complex* out, int n) noexcept nogil:
    cdef int i, k
    cdef double complex acc
    for i in range(n):
        acc = 0
        for k in range(n):
            acc = acc + a[i * n + k] * x[k]
        out[i] = acc


cdef inline void _eye(double complex* a, int n) noexcept nogil:
    cdef int i
    for i in range(n * n):
        a[i] = 0
    for i in range(n):
        a[i * n + i] = 1


def chain_product(steps):
    """Ordered product steps[-1] @ ... @ steps[0]."""
    cdef const double complex[:, :, ::1] sv = np.ascontiguousarray(steps, dtype=np.complex128)
    cdef Py_ssize_t m = sv.shape[0]
    cdef int n = sv.shape[1]
    if n > MAXN:
        raise ValueError(f"compiled kernel supports dimension <= {MAXN}")
    cdef double complex bufa[MAXN * MAXN]
    cdef double complex bufb[MAXN * MAXN]
    cdef double complex* r = bufa
    cdef double complex* tmp = bufb
    cdef double complex* swap
    cdef Py_ssize_t s
    with nogil:
        _eye(r, n)
        for s in range(m):
            _mm(&sv[s, 0, 0], r, tmp, n)
            swap = r
            r = tmp
            tmp = swap
    result = np.empty((n, n), dtype=np.complex128)
    cdef double complex[:, ::1] res = result
    for s in range(n * n):
        res[s // n, s % n] = r[s]
    return result


def evolve_periodic(steps, psi0, sample_steps):
    """Apply steps cyclically to psi0, recording the state after each requested step count.

    ``sample_steps`` must be nondecreasing; the state after ``k`` steps is
    steps[(k-1) % N] ... steps[0] psi0.  Long runs use the products of the
    first m steps at the needed offsets m plus whole-period jumps; short runs
    step literally, whichever needs fewer multiplications.
    """
    cdef const double complex[:, :, ::1] sv = np.ascontiguousarray(steps, dtype=np.complex128)
    samples_arr = np.ascontiguousarray(sample_steps, dtype=np.int64)
    cdef const cnp.int64_t[::1] samples = samples_arr
    cdef Py_ssize_t period = sv.shape[0]
    cdef int n = sv.shape[1]
    cdef Py_ssize_t nsamp = samples.shape[0]
    if n > MAXN:
        raise ValueError(f"compiled kernel supports dimension <= {MAXN}")
    if nsamp and (samples[0] < 0 or np.any(np.diff(samples_arr) < 0)):
        raise ValueError("sample_steps must be nonnegative and nondecreasing")
    out = np.empty((nsamp, n), dtype=np.complex128)
    if nsamp == 0:
        return out
    if period == 0:
        raise ValueError("need at least one step")
    cdef double complex[:, ::1] outv = out
    cdef double complex psi[MAXN]
    cdef double complex tmp[MAXN]
    cdef Py_ssize_t q, i, done = 0, idx = 0, k_done = 0, k, m
    for i in range(n):
        psi[i] = psi0[i]
    cdef Py_ssize_t total = samples[nsamp - 1]

    if total <= period * n:
        with nogil:
            for q in range(nsamp):
                while done < samples[q]:
                    _mv(&sv[idx, 0, 0], psi, tmp, n)
                    for i in range(n):
                        psi[i] = tmp[i]
                    done += 1
                    idx += 1
                    if idx == period:
                        idx = 0
                for i in range(n):
                    outv[q, i] = psi[i]
        return out

    offsets = np.unique(samples_arr % period)
    cdef const cnp.int64_t[::1] offv = offsets
    cdef Py_ssize_t noff = offv.shape[0]
    table_arr = np.empty((noff, n, n), dtype=np.complex128)
    cdef double complex[:, :, ::1] table = table_arr
    lookup_arr = np.searchsorted(offsets, samples_arr % period).astype(np.int64)
    cdef const cnp.int64_t[::1] lookup = lookup_arr
    cdef double complex bufa[MAXN * MAXN]
    cdef double complex bufb[MAXN * MAXN]
    cdef double complex* r = bufa
    cdef double complex* nxt = bufb
    cdef double complex* swap
    cdef Py_ssize_t j = 0
    with nogil:
        # running product of the first s steps, saved at every needed offset; ends as the period map
        _eye(r, n)
        for m in range(period):
            if j < noff and offv[j] == m:
                for i in range(n * n):
                    table[j, i // n, i % n] = r[i]
                j += 1
            _mm(&sv[m, 0, 0], r, nxt, n)
            swap = r
            r = nxt
            nxt = swap
        for q in range(nsamp):
            k = samples[q] // period
            while k_done < k:
                _mv(r, psi, tmp, n)
                for i in range(n):
                    psi[i] = tmp[i]
                k_done += 1
            _mv(&table[lookup[q], 0, 0], psi, tmp, n)
            for i in range(n):
                outv[q, i] = tmp[i]
    return out
