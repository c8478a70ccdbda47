"""Model evidence: WAIC, bridge-sampling marginal likelihood, Bayes factors.

WAIC works on the (draws x individuals) pointwise log-likelihood matrix:
``lpd`` is the column-wise log-mean-exp, the effective parameter count is
the column-wise sample variance, and the standard error follows the usual
sqrt(N * var) estimator of the summed pointwise contributions.

The marginal likelihood uses the iterative optimal-bridge estimator of
Meng & Wong (1996) with a moment-matched multivariate normal proposal on
the unconstrained scale: half the posterior draws fit the proposal, the
other half enter the bridge. Run it on the fully marginal model variant;
latent-heavy parameter vectors make the estimate unstable.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

__all__ = [
    "WaicResult",
    "BridgeResult",
    "EvidenceReport",
    "waic",
    "elpd_difference",
    "bridge_logml",
    "bayes_factor",
    "evidence_verdict",
]


@dataclass(frozen=True)
class WaicResult:
    elpd_waic: float
    p_waic: float
    waic: float
    waic_se: float
    lpd: float
    pointwise_elpd: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class BridgeResult:
    logml: float
    n_iterations: int
    rel_mcse: float
    warning: str | None = None

    @property
    def flagged(self) -> bool:
        return self.warning is not None


@dataclass(frozen=True)
class EvidenceReport:
    """Comparison summary between two fitted models."""

    waic_1: WaicResult
    waic_2: WaicResult
    elpd_diff: float
    elpd_diff_se: float
    log_ml_1: float | None = None
    log_ml_2: float | None = None
    bf_12: float | None = None
    verdict: str | None = None


def waic(pointwise_loglik: np.ndarray) -> WaicResult:
    """WAIC from an (S draws x N individuals) pointwise log-likelihood matrix."""
    ll = np.asarray(pointwise_loglik, dtype=np.float64)
    if ll.ndim != 2 or ll.shape[0] < 2:
        raise ValueError("need an (S, N) matrix with S >= 2")
    bad = ~np.isfinite(ll).all(axis=0)
    if bad.any():
        raise ValueError(
            f"non-finite pointwise log-likelihood for individuals "
            f"{np.flatnonzero(bad).tolist()}")
    S, N = ll.shape
    lpd_i = logsumexp(ll, axis=0) - math.log(S)
    p_i = ll.var(axis=0, ddof=1)
    elpd_i = lpd_i - p_i
    lpd = float(lpd_i.sum())
    p_waic = float(p_i.sum())
    elpd = float(elpd_i.sum())
    se = 2.0 * math.sqrt(N * float(elpd_i.var(ddof=1))) if N > 1 else 0.0
    return WaicResult(
        elpd_waic=elpd,
        p_waic=p_waic,
        waic=-2.0 * elpd,
        waic_se=se,
        lpd=lpd,
        pointwise_elpd=elpd_i,
    )


def elpd_difference(w1: WaicResult, w2: WaicResult) -> tuple[float, float]:
    """Paired elpd difference (model 1 minus model 2) and its standard error.

    The paired form uses per-individual differences, the right comparison
    scale when both models scored the same individuals.
    """
    d = w1.pointwise_elpd - w2.pointwise_elpd
    if d.shape != w1.pointwise_elpd.shape:
        raise ValueError("pointwise shapes differ")
    n = d.size
    se = math.sqrt(n * float(d.var(ddof=1))) if n > 1 else 0.0
    return float(d.sum()), se


def bridge_logml(draws_unconstrained: np.ndarray, log_posterior,
                 seed: int = 0, tol: float = 1e-6, max_iter: int = 1000,
                 min_draws: int = 2000, split_seed: int | None = None) -> BridgeResult:
    """Log marginal likelihood by iterative optimal bridge sampling.

    Parameters
    ----------
    draws_unconstrained : (S, dim) posterior draws on the unconstrained scale
    log_posterior : callable mapping a vector to the *normalized-prior*
        unnormalized log posterior (log likelihood + log prior + transform
        Jacobian), so its integral over the unconstrained space is the
        marginal likelihood
    seed : RNG seed for the proposal draws
    split_seed : when given, the half-split is a seeded random permutation
        instead of the first/second half in draw order

    Raw draw counts weight the two bridge terms (no effective-sample-size
    reweighting); the relative MCSE uses the iid approximation of the
    optimal-bridge variance, and estimates with relative MCSE above 10%
    come back flagged.
    """
    draws = np.asarray(draws_unconstrained, dtype=np.float64)
    if draws.ndim != 2 or draws.shape[0] < min_draws:
        raise ValueError(f"need at least {min_draws} posterior draws")
    S, dim = draws.shape
    if split_seed is not None:
        perm = np.random.default_rng(split_seed).permutation(S)
        draws = draws[perm]
    half = S // 2
    fit_half, bridge_half = draws[:half], draws[half:]
    n2 = bridge_half.shape[0]
    n1 = n2  # proposal sample count matches the bridge half

    mean = fit_half.mean(axis=0)
    cov = np.cov(fit_half.T)
    if dim == 1:
        cov = np.atleast_2d(cov)
    cov[np.diag_indices_from(cov)] += 1e-10 * (1.0 + np.diag(cov))
    L = np.linalg.cholesky(cov)
    logdet = float(np.sum(np.log(np.diag(L))))
    norm_const = -0.5 * dim * math.log(2.0 * math.pi) - logdet

    def g_logpdf(pts):
        z = solve_triangular(L, (pts - mean).T, lower=True, check_finite=False)
        return norm_const - 0.5 * np.einsum("ij,ij->j", z, z)

    rng = np.random.default_rng(seed)
    prop = mean + rng.standard_normal((n1, dim)) @ L.T

    l1 = np.array([log_posterior(p) for p in bridge_half]) - g_logpdf(bridge_half)
    l2 = np.array([log_posterior(p) for p in prop]) - g_logpdf(prop)
    finite1 = np.isfinite(l1)
    if not finite1.all():
        # posterior draws must have finite density; numerical edge cases only
        l1 = l1[finite1]
    lstar = float(np.median(l1))
    s1 = n1 / (n1 + n2)
    s2 = n2 / (n1 + n2)
    e1 = np.exp(l1 - lstar)           # posterior-half weights
    e2 = np.exp(np.clip(l2 - lstar, -700, 700))  # proposal weights, may be 0
    r = 1.0
    logml_old = np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        num = e2 / (s1 * e2 + s2 * r)
        den = 1.0 / (s1 * e1 + s2 * r)
        r = (n2 / (n1 * 1.0)) * num.sum() / den.sum()
        logml = math.log(r) + lstar
        if abs(logml - logml_old) < tol:
            break
        logml_old = logml
    logml = math.log(r) + lstar

    # iid relative-variance approximation of the optimal bridge
    f1 = e2 / (s1 * e2 + s2 * r)   # proposal side
    f2 = 1.0 / (s1 * e1 + s2 * r)  # posterior side (scale cancels in Var/E^2)
    re2 = (f1.var() / (n1 * max(f1.mean(), 1e-300) ** 2)
           + f2.var() / (n2 * max(f2.mean(), 1e-300) ** 2))
    rel_mcse = math.sqrt(max(re2, 0.0))
    warning = None
    if rel_mcse > 0.10:
        warning = (f"bridge estimate unstable: relative MCSE {rel_mcse:.3f} "
                   "exceeds 10% (posterior/proposal overlap too small)")
        warnings.warn(warning, stacklevel=2)
    return BridgeResult(logml=float(logml), n_iterations=n_iter,
                        rel_mcse=rel_mcse, warning=warning)


def bayes_factor(log_ml_1: float, log_ml_2: float) -> tuple[float, float]:
    """Bayes factor of model 1 over model 2: ``(BF, log BF)``."""
    if not (np.isfinite(log_ml_1) and np.isfinite(log_ml_2)):
        raise ValueError("both log marginal likelihoods must be finite")
    log_bf = log_ml_1 - log_ml_2
    return float(np.exp(log_bf)), float(log_bf)


def evidence_verdict(bf: float) -> str:
    """Plain-language strength band for a Bayes factor (either direction)."""
    favored = "model 1" if bf >= 1.0 else "model 2"
    b = max(bf, 1.0 / bf) if bf > 0 else math.inf
    if b > 10**2:
        grade = "decisive evidence"
    elif b > 10**1.5:
        grade = "strong evidence"
    elif b > 10**0.5:
        grade = "substantial evidence"
    else:
        return "negligible difference between the models"
    return f"{grade} for {favored}"
