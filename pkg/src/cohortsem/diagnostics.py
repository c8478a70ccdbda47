"""Convergence diagnostics: split potential scale reduction and
rank-normalized effective sample size.

Both operate on per-parameter draw matrices shaped (chains, draws). The
split R-hat halves every chain before comparing between- and within-chain
variances; ESS rank-normalizes the pooled draws, then applies Geyer's
initial monotone positive sequence to per-chain autocorrelations.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

__all__ = ["rhat", "ess", "split_rhat_array", "ess_array", "summarize_param"]

_MIN_DRAWS = 100


def _check_matrix(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a (chains, draws) matrix")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 chains")
    if x.shape[1] < _MIN_DRAWS:
        raise ValueError(f"need at least {_MIN_DRAWS} draws per chain")
    return x


def _split(x):
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, half:2 * half]], axis=0)


def split_rhat_array(x) -> float:
    """Split R-hat of one parameter. NaN for (near-)constant chains."""
    x = _split(_check_matrix(x))
    n = x.shape[1]
    chain_means = x.mean(axis=1)
    chain_vars = x.var(axis=1, ddof=1)
    w = chain_vars.mean()
    if w < 1e-300 * max(1.0, abs(chain_means).max()) ** 2 or not np.isfinite(w):
        return float("nan")  # constant chains carry no mixing information
    b = n * chain_means.var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _rank_normalize(x):
    flat = rankdata(x, method="average").reshape(x.shape)
    return ndtri((flat - 0.375) / (x.size + 0.25))


def _autocovariance(x):
    """Per-chain autocovariance by FFT, biased normalization (1/n)."""
    c, n = x.shape
    xc = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n].real
    return acov / n


def ess_array(x) -> float:
    """Rank-normalized bulk effective sample size of one parameter."""
    x = _split(_check_matrix(x))
    if np.allclose(x, x.ravel()[0]):
        return float("nan")
    z = _rank_normalize(x)
    c, n = z.shape
    acov = _autocovariance(z)
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    var_plus = w * (n - 1) / n + z.mean(axis=1).var(ddof=1)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    # Geyer pairwise sums: keep while positive, enforce monotone decay
    tau = 1.0
    last_pair = np.inf
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, last_pair)
        tau += 2.0 * pair
        last_pair = pair
        t += 2
    return float(c * n / tau)


def _param_matrix(draws, param):
    return draws.by_chain(param)


def rhat(draws, param: str) -> float:
    """Split R-hat of a named parameter from posterior draws."""
    return split_rhat_array(_param_matrix(draws, param))


def ess(draws, param: str) -> float:
    """Rank-normalized effective sample size of a named parameter."""
    return ess_array(_param_matrix(draws, param))


def summarize_param(x) -> dict:
    """Posterior summary of one (chains, draws) matrix.

    R-hat/ESS come back NaN (rather than raising) when the run is too
    short for the estimators' preconditions.
    """
    flat = np.asarray(x).ravel()
    q = np.percentile(flat, [2.5, 50.0, 97.5])
    try:
        rh, es = split_rhat_array(x), ess_array(x)
    except ValueError:
        rh, es = float("nan"), float("nan")
    return {
        "mean": float(flat.mean()),
        "sd": float(flat.std(ddof=1)),
        "q2.5": float(q[0]),
        "median": float(q[1]),
        "q97.5": float(q[2]),
        "rhat": rh,
        "ess": es,
    }
