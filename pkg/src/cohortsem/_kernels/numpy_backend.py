"""Pure-NumPy implementation of the hot Gaussian batch kernels.

Each call handles one missingness pattern within one cohort: all rows
share the observed-column set, so one Cholesky factor covers the batch.
The compiled backend (``_ck``) implements the same two entry points with
identical semantics; results agree to floating-point reordering.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

_LOG_2PI = float(np.log(2.0 * np.pi))


def gauss_affine(L, Ysub, base, avec, t):
    """Batched MVN log-density and gradient pieces for mean ``base + t_i * avec``.

    Parameters
    ----------
    L : (m, m) lower Cholesky factor of the pattern covariance
    Ysub : (n, m) observed outcome block for the pattern's rows
    base : (m,) mean offset shared by all rows
    avec : (m,) per-row mean direction
    t : (n,) per-row scalar multiplying ``avec``

    Returns
    -------
    ll_rows : (n,) per-row log density
    s_sum : (m,) sum over rows of S_i = Sigma^{-1} r_i
    s_dot_t : (m,) sum over rows of t_i * S_i
    asr : (n,) avec . S_i per row
    M2 : (m, m) sum over rows of S_i S_i'
    """
    R = Ysub - base - np.outer(t, avec)
    Z = solve_triangular(L, R.T, lower=True, check_finite=False)
    quad = np.einsum("ij,ij->j", Z, Z)
    logdet = float(np.sum(np.log(np.diag(L))))
    m = L.shape[0]
    ll_rows = -0.5 * (m * _LOG_2PI + quad) - logdet
    St = solve_triangular(L, Z, lower=True, trans=1, check_finite=False)
    s_sum = St.sum(axis=1)
    s_dot_t = St @ t
    asr = avec @ St
    M2 = St @ St.T
    return ll_rows, s_sum, s_dot_t, asr, M2


def gauss_batch(L, R):
    """Batched MVN log-density for explicit residuals.

    Returns ``(ll_rows, S, M2)`` with ``S`` the (n, m) matrix whose rows
    are S_i = Sigma^{-1} r_i.
    """
    Z = solve_triangular(L, R.T, lower=True, check_finite=False)
    quad = np.einsum("ij,ij->j", Z, Z)
    logdet = float(np.sum(np.log(np.diag(L))))
    m = L.shape[0]
    ll_rows = -0.5 * (m * _LOG_2PI + quad) - logdet
    St = solve_triangular(L, Z, lower=True, trans=1, check_finite=False)
    M2 = St @ St.T
    return ll_rows, St.T.copy(), M2


def chol_inverse(L):
    """Inverse of the matrix whose Cholesky factor is ``L`` (symmetric)."""
    from scipy.linalg import cho_solve

    return cho_solve((L, True), np.eye(L.shape[0]), check_finite=False)


def chol_lower(A):
    """Lower Cholesky factor of ``A``, or None when not positive definite."""
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return None


def cohort_scalar_mean(sigma, obs_cat, obs_off, rows_cat, rows_off,
                       y_cat, y_off, nu, avec, t, need_grad,
                       ll_rows_out, dnu, dAmean, dm, G):
    """Whole-cohort log density for row means ``nu + t_i * avec``.

    Patterns are stored concatenated: pattern ``p`` observes columns
    ``obs_cat[obs_off[p]:obs_off[p+1]]``, covers the data rows
    ``rows_cat[rows_off[p]:rows_off[p+1]]``, and its observed outcome
    block lives flattened in ``y_cat[y_off[p]:y_off[p+1]]`` (row-major).

    Accumulates gradient pieces into ``dnu``, ``dAmean`` (sum of t_i S_i),
    ``dm`` (avec . S_i per row) and ``G`` (dl/dSigma) when ``need_grad``;
    fills ``ll_rows_out`` per data row when its length is nonzero.
    Returns the summed log density, or NaN when any pattern covariance is
    not positive definite.
    """
    total = 0.0
    n_pat = obs_off.shape[0] - 1
    for pp in range(n_pat):
        obs = obs_cat[obs_off[pp]:obs_off[pp + 1]]
        rows = rows_cat[rows_off[pp]:rows_off[pp + 1]]
        m = obs.size
        Ysub = y_cat[y_off[pp]:y_off[pp + 1]].reshape(rows.size, m)
        sub = sigma[np.ix_(obs, obs)]
        L = chol_lower(sub)
        if L is None:
            return float("nan")
        ll_rows, s_sum, s_dot_t, asr, M2 = gauss_affine(
            L, Ysub, nu[obs], avec[obs], t[rows])
        total += float(ll_rows.sum())
        if ll_rows_out.shape[0]:
            ll_rows_out[rows] = ll_rows
        if need_grad:
            dnu[obs] += s_sum
            dAmean[obs] += s_dot_t
            dm[rows] = asr
            G[np.ix_(obs, obs)] += 0.5 * (M2 - rows.size * chol_inverse(L))
    return total
