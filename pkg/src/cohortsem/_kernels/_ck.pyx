# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Gaussian batch kernels (BLAS-fused per missingness pattern).

Mirrors :mod:`cohortsem._kernels.numpy_backend`. Arrays are C-ordered;
BLAS sees their transposes, so an (n, m) residual buffer is the (m, n)
matrix whose columns are per-row residual vectors, and a C-ordered lower
Cholesky factor is an upper factor to LAPACK/BLAS.
"""

import numpy as np

from libc.math cimport log
from scipy.linalg.cython_blas cimport dsyrk, dtrsm
from scipy.linalg.cython_lapack cimport dpotrf, dpotri

cdef double _LOG_2PI = 1.8378770664093453


cdef void _solve_chol_batch(double* Lp, double* Bp, int m, int n) noexcept nogil:
    # B (m, n Fortran) <- L^{-1} B, then L^{-T} times that: B <- Sigma^{-1} B
    cdef char side = b'L', uplo = b'U', diag = b'N'
    cdef char trans_t = b'T', trans_n = b'N'
    cdef double one = 1.0
    dtrsm(&side, &uplo, &trans_t, &diag, &m, &n, &one, Lp, &m, Bp, &m)


cdef void _solve_chol_t(double* Lp, double* Bp, int m, int n) noexcept nogil:
    cdef char side = b'L', uplo = b'U', diag = b'N'
    cdef char trans_n = b'N'
    cdef double one = 1.0
    dtrsm(&side, &uplo, &trans_n, &diag, &m, &n, &one, Lp, &m, Bp, &m)


cdef void _syrk_lower(double* Sp, double* Cp, int m, int n) noexcept nogil:
    # C-order (m, m) target: BLAS upper triangle = C-order lower triangle
    cdef char uplo = b'U', trans = b'N'
    cdef double one = 1.0, zero = 0.0
    dsyrk(&uplo, &trans, &m, &n, &one, Sp, &m, &zero, Cp, &m)


def gauss_affine(double[:, ::1] L, double[:, ::1] Ysub, double[::1] base,
                 double[::1] avec, double[::1] t):
    """See numpy_backend.gauss_affine; identical contract."""
    cdef int n = Ysub.shape[0]
    cdef int m = Ysub.shape[1]
    ll_arr = np.empty(n)
    s_sum_arr = np.zeros(m)
    s_dot_t_arr = np.zeros(m)
    asr_arr = np.empty(n)
    m2_arr = np.empty((m, m))
    buf_arr = np.empty((n, m))
    cdef double[::1] ll = ll_arr
    cdef double[::1] s_sum = s_sum_arr
    cdef double[::1] s_dot_t = s_dot_t_arr
    cdef double[::1] asr = asr_arr
    cdef double[:, ::1] M2 = m2_arr
    cdef double[:, ::1] S = buf_arr
    cdef int i, k
    cdef double ti, quad, acc, sik, logdet, c0

    with nogil:
        for i in range(n):
            ti = t[i]
            for k in range(m):
                S[i, k] = Ysub[i, k] - base[k] - ti * avec[k]
        _solve_chol_batch(&L[0, 0], &S[0, 0], m, n)  # whiten: rows hold L^{-1} r
        logdet = 0.0
        for k in range(m):
            logdet += log(L[k, k])
        c0 = -0.5 * m * _LOG_2PI - logdet
        for i in range(n):
            quad = 0.0
            for k in range(m):
                quad += S[i, k] * S[i, k]
            ll[i] = c0 - 0.5 * quad
        _solve_chol_t(&L[0, 0], &S[0, 0], m, n)  # rows now hold Sigma^{-1} r
        for i in range(n):
            ti = t[i]
            acc = 0.0
            for k in range(m):
                sik = S[i, k]
                s_sum[k] += sik
                s_dot_t[k] += ti * sik
                acc += avec[k] * sik
            asr[i] = acc
        _syrk_lower(&S[0, 0], &M2[0, 0], m, n)
        for i in range(m):
            for k in range(i + 1, m):
                M2[i, k] = M2[k, i]
    return ll_arr, s_sum_arr, s_dot_t_arr, asr_arr, m2_arr


def gauss_batch(double[:, ::1] L, double[:, ::1] R):
    """See numpy_backend.gauss_batch; identical contract."""
    cdef int n = R.shape[0]
    cdef int m = R.shape[1]
    ll_arr = np.empty(n)
    m2_arr = np.empty((m, m))
    s_arr = np.array(R, copy=True)
    cdef double[::1] ll = ll_arr
    cdef double[:, ::1] M2 = m2_arr
    cdef double[:, ::1] S = s_arr
    cdef int i, k
    cdef double quad, logdet, c0

    with nogil:
        _solve_chol_batch(&L[0, 0], &S[0, 0], m, n)
        logdet = 0.0
        for k in range(m):
            logdet += log(L[k, k])
        c0 = -0.5 * m * _LOG_2PI - logdet
        for i in range(n):
            quad = 0.0
            for k in range(m):
                quad += S[i, k] * S[i, k]
            ll[i] = c0 - 0.5 * quad
        _solve_chol_t(&L[0, 0], &S[0, 0], m, n)
        _syrk_lower(&S[0, 0], &M2[0, 0], m, n)
        for i in range(m):
            for k in range(i + 1, m):
                M2[i, k] = M2[k, i]
    return ll_arr, s_arr, m2_arr


def cohort_scalar_mean(double[:, ::1] sigma,
                       Py_ssize_t[::1] obs_cat, Py_ssize_t[::1] obs_off,
                       Py_ssize_t[::1] rows_cat, Py_ssize_t[::1] rows_off,
                       double[::1] y_cat, Py_ssize_t[::1] y_off,
                       double[::1] nu, double[::1] avec, double[::1] t,
                       bint need_grad, double[::1] ll_rows_out,
                       double[::1] dnu, double[::1] dAmean, double[::1] dm,
                       double[:, ::1] G):
    """See numpy_backend.cohort_scalar_mean; identical contract.

    The whole pattern loop (submatrix gather, Cholesky, solves,
    reductions, scatter-adds) runs without the GIL; only the scratch
    allocation up front touches Python.
    """
    cdef Py_ssize_t n_pat = obs_off.shape[0] - 1
    cdef Py_ssize_t K = sigma.shape[0]
    cdef Py_ssize_t pp, i, j, k, m, nr, base
    cdef Py_ssize_t max_rows = 0
    for pp in range(n_pat):
        if rows_off[pp + 1] - rows_off[pp] > max_rows:
            max_rows = rows_off[pp + 1] - rows_off[pp]

    sub_arr = np.empty(K * K)
    inv_arr = np.empty(K * K)
    m2_arr = np.empty(K * K)
    r_arr = np.empty(max_rows * K)
    cdef double[::1] sub = sub_arr
    cdef double[::1] inv = inv_arr
    cdef double[::1] M2 = m2_arr
    cdef double[::1] R = r_arr
    cdef char uplo = b'U'
    cdef int info = 0, mi, ni
    cdef double total = 0.0, logdet, c0, quad, acc, ti, sik, half_nr
    cdef bint failed = False
    cdef bint want_rows = ll_rows_out.shape[0] > 0

    with nogil:
        for pp in range(n_pat):
            m = obs_off[pp + 1] - obs_off[pp]
            nr = rows_off[pp + 1] - rows_off[pp]
            mi = <int> m
            ni = <int> nr
            # gather the pattern covariance into the (K, K) scratch, packed
            # as an (m, m) C-order block
            for j in range(m):
                for k in range(m):
                    sub[j * m + k] = sigma[obs_cat[obs_off[pp] + j],
                                              obs_cat[obs_off[pp] + k]]
            dpotrf(&uplo, &mi, &sub[0], &mi, &info)
            if info != 0:
                failed = True
                break
            if need_grad:
                for j in range(m * m):
                    inv[j] = sub[j]
                dpotri(&uplo, &mi, &inv[0], &mi, &info)
                if info != 0:
                    failed = True
                    break
                # dpotri fills the C-order lower triangle; mirror it
                for j in range(m):
                    for k in range(j + 1, m):
                        inv[j * m + k] = inv[k * m + j]
            logdet = 0.0
            for j in range(m):
                logdet += log(sub[j * m + j])
            c0 = -0.5 * m * _LOG_2PI - logdet
            # residuals for this pattern's rows
            base = y_off[pp]
            for i in range(nr):
                ti = t[rows_cat[rows_off[pp] + i]]
                for k in range(m):
                    R[i * m + k] = (y_cat[base + i * m + k]
                                    - nu[obs_cat[obs_off[pp] + k]]
                                    - ti * avec[obs_cat[obs_off[pp] + k]])
            _solve_chol_batch(&sub[0], &R[0], mi, ni)
            for i in range(nr):
                quad = 0.0
                for k in range(m):
                    quad += R[i * m + k] * R[i * m + k]
                total += c0 - 0.5 * quad
                if want_rows:
                    ll_rows_out[rows_cat[rows_off[pp] + i]] = c0 - 0.5 * quad
            if not need_grad:
                continue
            _solve_chol_t(&sub[0], &R[0], mi, ni)
            for i in range(nr):
                ti = t[rows_cat[rows_off[pp] + i]]
                acc = 0.0
                for k in range(m):
                    sik = R[i * m + k]
                    dnu[obs_cat[obs_off[pp] + k]] += sik
                    dAmean[obs_cat[obs_off[pp] + k]] += ti * sik
                    acc += avec[obs_cat[obs_off[pp] + k]] * sik
                dm[rows_cat[rows_off[pp] + i]] = acc
            _syrk_lower(&R[0], &M2[0], mi, ni)
            half_nr = 0.5 * nr
            for j in range(m):
                for k in range(j):  # strict C-lower of the packed block
                    M2[k * m + j] = M2[j * m + k]
            for j in range(m):
                for k in range(m):
                    G[obs_cat[obs_off[pp] + j], obs_cat[obs_off[pp] + k]] += (
                        0.5 * M2[j * m + k] - half_nr * inv[j * m + k])
    if failed:
        return float("nan")
    return total


def chol_lower(double[:, ::1] A):
    """Lower Cholesky factor of ``A``, or None when not positive definite."""
    cdef int m = A.shape[0]
    out_arr = np.array(A, copy=True)
    cdef double[:, ::1] W = out_arr
    cdef char uplo = b'U'
    cdef int info = 0
    cdef int i, k
    with nogil:
        dpotrf(&uplo, &m, &W[0, 0], &m, &info)
        if info == 0:
            for i in range(m):
                for k in range(i + 1, m):
                    W[i, k] = 0.0
    if info > 0:
        return None
    if info < 0:
        raise ValueError(f"dpotrf failed with info={info}")
    return out_arr


def chol_inverse(double[:, ::1] L):
    """Inverse of the matrix whose lower Cholesky factor is ``L``."""
    cdef int m = L.shape[0]
    out_arr = np.array(L, copy=True)
    cdef double[:, ::1] A = out_arr
    cdef char uplo = b'U'
    cdef int info = 0
    cdef int i, k
    with nogil:
        dpotri(&uplo, &m, &A[0, 0], &m, &info)
        for i in range(m):
            for k in range(i + 1, m):
                A[i, k] = A[k, i]
    if info != 0:
        raise np.linalg.LinAlgError(f"dpotri failed with info={info}")
    return out_arr
