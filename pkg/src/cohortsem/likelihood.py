"""Model log-densities and gradients for the three latent-handling variants.

The measurement model per cohort is a second-order factor structure:
outcomes load on subdomain factors through one free positive loading each,
subdomain factors load on a single cognition score, and the cognition
score follows a piecewise-linear (or linear) regression on exposure with a
propensity adjustment:

* Full: both latent levels stay in the parameter vector. Row density is
  ``N(y_obs; W(nu + Lambda xi), W Psi W')`` times the latent-model terms
  ``N(xi; gamma eta, Phi)`` and ``N(eta; m, sigma^2)``.
* ReducedXi: subdomain scores integrated out. Row density is
  ``N(y_obs; W(nu + a eta), W(Psi + Lambda Phi Lambda') W')`` with
  ``a = Lambda gamma``, times the eta regression term.
* FullyMarginal: cognition score integrated out too. Row density is
  ``N(y_obs; W(nu + a m), W(Psi + Lambda Phi Lambda' + sigma^2 a a') W')``.

Missing outcomes are collapsed with per-row observed-index lists; rows
sharing a missingness pattern share one Cholesky factorization per
evaluation. Gradients are analytic, using ``dl/dSigma = (S S' - Sigma^{-1})/2``
with ``S = Sigma^{-1} r`` accumulated over rows, and ``dl/dmu = S``.

At the hinge kink (x exactly equal to the break-point) the derivative
from the below-break side is used: the hinge indicator is strict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from . import _kernels
from .cohorts import CohortData, CohortSpec, validate_cohort
from .params import (
    CohortParams,
    LatentHandling,
    ModelVariant,
    ParameterSet,
    ParamLayout,
    assemble_psi,
)
from .priors import PriorConfig, PriorEvaluator

__all__ = [
    "SelectionIndex",
    "linear_predictor",
    "marginal_moments_xi",
    "loglik_full",
    "loglik_reduced",
    "loglik_fully_marginal",
    "PosteriorDensity",
    "grad_log_posterior",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# selection structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionIndex:
    """Observed-column index lists, grouped by shared missingness pattern.

    ``row_indices[i]`` is the strictly increasing array of observed column
    indices of row i. ``patterns`` groups rows with identical lists:
    tuples ``(obs_idx, rows)``.
    """

    row_indices: tuple[np.ndarray, ...]
    patterns: tuple[tuple[np.ndarray, np.ndarray], ...]

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "SelectionIndex":
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        if not mask.any(axis=1).all():
            raise ValueError("every row needs at least one observed outcome")
        rows_idx = tuple(np.flatnonzero(r) for r in mask)
        uniq, inverse = np.unique(mask, axis=0, return_inverse=True)
        patterns = []
        for u in range(uniq.shape[0]):
            obs = np.flatnonzero(uniq[u])
            rows = np.flatnonzero(inverse == u)
            patterns.append((obs, rows))
        return cls(rows_idx, tuple(patterns))


# ---------------------------------------------------------------------------
# elementary model pieces
# ---------------------------------------------------------------------------


def linear_predictor(x, p, beta1, beta2, log_bp, alpha):
    """Dose-response mean: ``beta1*x + beta2*max(x - exp(log_bp), 0) + alpha*p``.

    The linear dose-response model is the ``beta2 = 0`` case. Continuous at
    the break-point; vectorized over ``x`` and ``p``.
    """
    x = np.asarray(x, dtype=np.float64)
    hinge = np.maximum(x - np.exp(log_bp), 0.0)
    return beta1 * x + beta2 * hinge + alpha * np.asarray(p, dtype=np.float64)


def _lambda_gamma(cp: CohortParams, spec: CohortSpec) -> np.ndarray:
    """a = Lambda gamma as a K-vector: a_k = lam_k * gamma[factor(k)]."""
    return cp.lam * cp.gamma[spec.factor_map]


def _loading_cov(cp: CohortParams, spec: CohortSpec) -> np.ndarray:
    """Lambda Phi Lambda' built from the sparse one-loading-per-row structure."""
    w = cp.lam * cp.phi_sd[spec.factor_map]
    same = spec.factor_map[:, None] == spec.factor_map[None, :]
    return np.where(same, np.outer(w, w), 0.0)


def marginal_moments_xi(cp: CohortParams, spec: CohortSpec, eta: float):
    """Conditional moments of the outcome vector given the cognition score.

    With subdomain scores integrated out: mean ``nu + Lambda gamma eta``,
    covariance ``Psi + Lambda Phi Lambda'``.
    """
    a = _lambda_gamma(cp, spec)
    mean = cp.nu + a * float(eta)
    cov = assemble_psi(cp.psi_diag, cp.rho, spec.resid_pairs) + _loading_cov(cp, spec)
    return mean, cov


def _normal_lp_vec(x, mean, var):
    z2 = (x - mean) ** 2 / var
    return -0.5 * (z2 + np.log(var) + _LOG_2PI)


# ---------------------------------------------------------------------------
# per-cohort log-likelihoods (value-only public API)
# ---------------------------------------------------------------------------


def _pattern_chol(sigma, patterns):
    """Cholesky factor per missingness pattern; None when not PD."""
    K = sigma.shape[0]
    try:
        L_full = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        return None
    out = []
    for obs, _rows in patterns:
        if obs.size == K:
            out.append(L_full)
        else:
            try:
                out.append(np.linalg.cholesky(sigma[np.ix_(obs, obs)]))
            except np.linalg.LinAlgError:
                return None
    return out


def _rows_mvn_loglik(sigma, mean_rows, data: CohortData, sel: SelectionIndex):
    """Per-row collapsed MVN log density with row-specific means."""
    n = data.n
    out = np.empty(n)
    chols = _pattern_chol(sigma, sel.patterns)
    if chols is None:
        return None
    for (obs, rows), L in zip(sel.patterns, chols):
        R = data.Y[np.ix_(rows, obs)] - mean_rows[np.ix_(rows, obs)]
        ll_rows, _S, _M2 = _kernels.gauss_batch(L, np.ascontiguousarray(R))
        out[rows] = ll_rows
    return out


def _check_latents(cp, spec, need_eta, need_xi):
    if need_eta and cp.eta is None:
        raise ValueError("variant requires eta in the parameter set")
    if need_xi and cp.xi is None:
        raise ValueError("variant requires xi in the parameter set")


def loglik_full(ps: ParameterSet, data: CohortData, spec: CohortSpec,
                cohort: int = 0) -> float:
    """Joint log density of one cohort with both latent levels in theta."""
    validate_cohort(spec, data)
    cp = ps.cohorts[cohort]
    _check_latents(cp, spec, True, True)
    sel = SelectionIndex.from_mask(data.mask)
    psi = assemble_psi(cp.psi_diag, cp.rho, spec.resid_pairs, check_pd=False)
    mean_rows = cp.nu + cp.xi[:, spec.factor_map] * cp.lam
    rows = _rows_mvn_loglik(psi, mean_rows, data, sel)
    if rows is None:
        return -np.inf
    ll = float(rows.sum())
    # latent-model terms
    phi2 = cp.phi_sd**2
    ll += float(_normal_lp_vec(cp.xi, np.outer(cp.eta, cp.gamma), phi2).sum())
    m = linear_predictor(data.x, data.p, ps.beta1, ps.beta2, ps.log_bp, cp.alpha)
    ll += float(_normal_lp_vec(cp.eta, m, cp.sigma2).sum())
    return ll


def loglik_reduced(ps: ParameterSet, data: CohortData, spec: CohortSpec,
                   cohort: int = 0) -> float:
    """Log density with subdomain scores integrated out; eta stays in theta."""
    validate_cohort(spec, data)
    cp = ps.cohorts[cohort]
    _check_latents(cp, spec, True, False)
    sel = SelectionIndex.from_mask(data.mask)
    _mean0, cov = marginal_moments_xi(cp, spec, 0.0)
    a = _lambda_gamma(cp, spec)
    mean_rows = cp.nu + np.outer(cp.eta, a)
    rows = _rows_mvn_loglik(cov, mean_rows, data, sel)
    if rows is None:
        return -np.inf
    m = linear_predictor(data.x, data.p, ps.beta1, ps.beta2, ps.log_bp, cp.alpha)
    return float(rows.sum() + _normal_lp_vec(cp.eta, m, cp.sigma2).sum())


def loglik_fully_marginal(ps: ParameterSet, data: CohortData, spec: CohortSpec,
                          cohort: int = 0) -> float:
    """Observed-data log density with both latent levels integrated out.

    Moments: mean ``nu + a m_i``; covariance
    ``Psi + Lambda Phi Lambda' + sigma^2 a a'`` with ``a = Lambda gamma``.
    """
    validate_cohort(spec, data)
    cp = ps.cohorts[cohort]
    sel = SelectionIndex.from_mask(data.mask)
    a = _lambda_gamma(cp, spec)
    cov = (assemble_psi(cp.psi_diag, cp.rho, spec.resid_pairs, check_pd=False)
           + _loading_cov(cp, spec) + cp.sigma2 * np.outer(a, a))
    m = linear_predictor(data.x, data.p, ps.beta1, ps.beta2, ps.log_bp, cp.alpha)
    mean_rows = cp.nu + np.outer(m, a)
    rows = _rows_mvn_loglik(cov, mean_rows, data, sel)
    if rows is None:
        return -np.inf
    return float(rows.sum())


# ---------------------------------------------------------------------------
# posterior density with analytic gradient (sampler hot path)
# ---------------------------------------------------------------------------


class _CohortWorkspace:
    """Static per-cohort structures reused by every evaluation."""

    def __init__(self, c: int, spec: CohortSpec, data: CohortData,
                 layout: ParamLayout, row_offset: int):
        validate_cohort(spec, data)
        self.spec = spec
        self.data = data
        self.c = c
        self.K = spec.n_outcomes
        self.d = spec.n_factors
        self.F = spec.factor_map
        self.sameF = np.asarray(self.F[:, None] == self.F[None, :])
        self.sameF_f = self.sameF.astype(np.float64)
        self.pairs_j = np.array([j for j, _ in spec.resid_pairs], dtype=np.intp)
        self.pairs_k = np.array([k for _, k in spec.resid_pairs], dtype=np.intp)
        self.x = data.x
        self.p = data.p
        self.row_offset = row_offset
        sel = SelectionIndex.from_mask(data.mask)
        self.patterns = []
        for obs, rows in sel.patterns:
            Ysub = np.ascontiguousarray(data.Y[np.ix_(rows, obs)])
            Dsub = np.zeros((obs.size, self.d))
            Dsub[np.arange(obs.size), self.F[obs]] = 1.0
            self.patterns.append((obs, rows, Ysub, Dsub))
        # concatenated pattern layout consumed by the batched kernel
        self.obs_cat = np.concatenate([o for o, _, _, _ in self.patterns]).astype(np.intp)
        self.obs_off = np.cumsum([0] + [o.size for o, _, _, _ in self.patterns]).astype(np.intp)
        self.rows_cat = np.concatenate([r for _, r, _, _ in self.patterns]).astype(np.intp)
        self.rows_off = np.cumsum([0] + [r.size for _, r, _, _ in self.patterns]).astype(np.intp)
        self.y_cat = np.concatenate([y.ravel() for _, _, y, _ in self.patterns])
        self.y_off = np.cumsum([0] + [y.size for _, _, y, _ in self.patterns]).astype(np.intp)
        self._empty = np.empty(0)
        self._empty_mat = np.empty((0, 0))
        # packed-vector slices
        v = layout.variant
        self.nu_sl = layout.sl("nu", c)
        self.lam_sl = layout.sl("lambda", c)
        self.gamma_sl = layout.sl("gamma", c) if self.d > 1 else None
        self.psi_sl = layout.sl("psi", c)
        self.rho_sl = layout.sl("rho", c) if spec.n_resid_pairs else None
        self.phi_sl = layout.sl("phi_sd", c)
        self.sig_sl = layout.sl("sigma2", c)
        self.alpha_sl = layout.sl("alpha", c)
        self.eta_sl = layout.sl("eta", c) if v.has_eta else None
        self.xi_sl = layout.sl("xi", c) if v.has_xi else None


class PosteriorDensity:
    """Unnormalized log posterior on the unconstrained scale, with gradient.

    Built once per (variant, dataset, priors); evaluations are pure
    functions of the input vector, so one instance can be shared by
    concurrently running chains only if each chain evaluates sequentially;
    chains in this package each construct their own lightweight closure
    over a shared instance (no mutable state is written during
    evaluation).
    """

    def __init__(self, variant: ModelVariant,
                 cohorts: list[tuple[CohortSpec, CohortData]],
                 prior_cfg: PriorConfig | None = None):
        self.variant = variant
        self.prior_cfg = prior_cfg or PriorConfig()
        specs = [sp for sp, _ in cohorts]
        self.layout = ParamLayout(variant, specs)
        self.prior = PriorEvaluator(self.layout, self.prior_cfg)
        self.workspaces = []
        off = 0
        for c, (sp, da) in enumerate(cohorts):
            self.workspaces.append(_CohortWorkspace(c, sp, da, self.layout, off))
            off += da.n
        self.n_individuals = off
        self.dim = self.layout.dim

    # -- public entry points -------------------------------------------------

    def value_and_grad(self, v: np.ndarray):
        """Log posterior (likelihood + prior + transform Jacobian) and gradient.

        Invalid regions (overflowed transforms, non-PD residual
        covariance) return ``(-inf, zero gradient)``.
        """
        x, logjac = self.layout.constrain(v)
        if not np.isfinite(x).all():
            return -np.inf, np.zeros(self.dim)
        lp, grad_x = self.prior.value_and_grad(x)
        ll = self._accumulate(x, grad_x, need_grad=True, pointwise=None)
        if ll is None or not np.isfinite(ll + lp):
            return -np.inf, np.zeros(self.dim)
        grad_v = self.layout.grad_to_unconstrained(v, x, grad_x)
        return ll + lp + logjac, grad_v

    def value(self, v: np.ndarray) -> float:
        """Log posterior without the gradient (bridge-sampling path)."""
        x, logjac = self.layout.constrain(v)
        if not np.isfinite(x).all():
            return -np.inf
        lp, _ = self.prior.value_and_grad(x)
        ll = self._accumulate(x, None, need_grad=False, pointwise=None)
        if ll is None or not np.isfinite(ll + lp):
            return -np.inf
        return ll + lp + logjac

    def loglik_x(self, x: np.ndarray) -> float:
        """Model log likelihood (including latent-model terms) at a
        constrained vector."""
        ll = self._accumulate(np.asarray(x, dtype=np.float64), None,
                              need_grad=False, pointwise=None)
        return -np.inf if ll is None else ll

    def pointwise_x(self, x: np.ndarray) -> np.ndarray:
        """Per-individual log density of the observed outcome vector.

        Conditional on the draw's latent scores for Full/ReducedXi,
        marginal for FullyMarginal; latent-model terms excluded. This is
        the pointwise unit consumed by information criteria.
        """
        out = np.empty(self.n_individuals)
        ll = self._accumulate(np.asarray(x, dtype=np.float64), None,
                              need_grad=False, pointwise=out)
        if ll is None:
            out[:] = -np.inf
        return out

    # -- assembly -------------------------------------------------------------

    def _accumulate(self, x, grad_x, need_grad: bool, pointwise):
        variant = self.variant
        if variant.has_hinge:
            beta1 = x[self.layout.sl("beta1")][0]
            beta2 = x[self.layout.sl("beta2")][0]
            log_bp = x[self.layout.sl("log_bp")][0]
        else:
            beta1 = x[self.layout.sl("beta1")][0]
            beta2 = 0.0
            log_bp = 0.0
        bp = np.exp(log_bp)
        total = 0.0
        dbeta1 = dbeta2 = dlogbp = 0.0
        for ws in self.workspaces:
            res = self._cohort(ws, x, grad_x, need_grad, pointwise,
                               beta1, beta2, bp)
            if res is None:
                return None
            ll_c, db1, db2, dbp_sum = res
            total += ll_c
            dbeta1 += db1
            dbeta2 += db2
            dlogbp += dbp_sum
        if need_grad:
            grad_x[self.layout.sl("beta1")] += dbeta1
            if variant.has_hinge:
                grad_x[self.layout.sl("beta2")] += dbeta2
                # d hinge / d log_bp = -beta2 * bp on rows above the break
                grad_x[self.layout.sl("log_bp")] += -beta2 * bp * dlogbp
        return total

    def _cohort(self, ws: _CohortWorkspace, x, grad_x, need_grad, pointwise,
                beta1, beta2, bp):
        variant = self.variant
        nu = x[ws.nu_sl]
        lam = x[ws.lam_sl]
        gamma = np.ones(ws.d)
        if ws.gamma_sl is not None:
            gamma[1:] = x[ws.gamma_sl]
        psi_diag = x[ws.psi_sl]
        rho = x[ws.rho_sl] if ws.rho_sl is not None else np.empty(0)
        phi_sd = x[ws.phi_sl]
        sigma2 = x[ws.sig_sl][0]
        alpha = x[ws.alpha_sl][0]

        F = ws.F
        K = ws.K
        psi_off = None
        if rho.size:
            sd = np.sqrt(psi_diag)
            psi_off = rho * sd[ws.pairs_j] * sd[ws.pairs_k]

        hinge = np.maximum(ws.x - bp, 0.0)
        active = ws.x > bp
        m = beta1 * ws.x + beta2 * hinge + alpha * ws.p

        if variant.latent_handling is LatentHandling.FULL:
            # psi is the row covariance there; its Cholesky doubles as the
            # positive-definiteness check
            psi = np.zeros((K, K))
            psi.reshape(-1)[:: K + 1] = psi_diag
            if rho.size:
                psi[ws.pairs_j, ws.pairs_k] = psi_off
                psi[ws.pairs_k, ws.pairs_j] = psi_off
            return self._cohort_full(ws, x, grad_x, need_grad, pointwise,
                                     nu, lam, gamma, psi, psi_diag, psi_off,
                                     rho, phi_sd, sigma2, m, hinge, active)

        a = lam * gamma[F]
        w = lam * phi_sd[F]
        sigma = ws.sameF_f * np.outer(w, w)
        sigma.reshape(-1)[:: K + 1] += psi_diag
        if rho.size:
            sigma[ws.pairs_j, ws.pairs_k] += psi_off
            sigma[ws.pairs_k, ws.pairs_j] += psi_off
            # PD of the residual covariance is required by the model even
            # when the loading term would make the sum PD on its own; a
            # purely diagonal residual covariance is always PD
            psi = np.zeros((K, K))
            psi.reshape(-1)[:: K + 1] = psi_diag
            psi[ws.pairs_j, ws.pairs_k] = psi_off
            psi[ws.pairs_k, ws.pairs_j] = psi_off
            if _kernels.chol_lower(psi) is None:
                return None
        marginal = variant.latent_handling is LatentHandling.FULLY_MARGINAL
        if marginal:
            sigma += sigma2 * np.outer(a, a)
            t_all = m
        else:
            eta = x[ws.eta_sl]
            t_all = eta

        if need_grad:
            G = np.zeros((K, K))
            dnu = np.zeros(K)
            dAmean = np.zeros(K)
            dm = np.empty(ws.data.n)
        else:
            G = dnu = dAmean = dm = None
        ll_rows_out = (pointwise[ws.row_offset:ws.row_offset + ws.data.n]
                       if pointwise is not None else ws._empty)
        ll = _kernels.cohort_scalar_mean(
            sigma, ws.obs_cat, ws.obs_off, ws.rows_cat, ws.rows_off,
            ws.y_cat, ws.y_off, nu, a, t_all, need_grad, ll_rows_out,
            dnu if need_grad else ws._empty,
            dAmean if need_grad else ws._empty,
            dm if need_grad else ws._empty,
            G if need_grad else ws._empty_mat)
        if np.isnan(ll):
            return None

        db1 = db2 = dbp_sum = 0.0
        if not marginal:
            # eta regression term
            resid_eta = t_all - m
            ll += float(np.sum(-0.5 * (resid_eta**2 / sigma2
                                       + np.log(sigma2) + _LOG_2PI)))
            if need_grad:
                dm_eta = resid_eta / sigma2
                grad_x[ws.eta_sl] += dm - dm_eta
                grad_x[ws.sig_sl] += float(
                    np.sum(resid_eta**2) / (2 * sigma2**2)
                    - ws.data.n / (2 * sigma2))
                db1 = float(ws.x @ dm_eta)
                db2 = float(hinge @ dm_eta)
                dbp_sum = float(dm_eta[active].sum())
                dalpha = float(ws.p @ dm_eta)
                grad_x[ws.alpha_sl] += dalpha
        elif need_grad:
            db1 = float(ws.x @ dm)
            db2 = float(hinge @ dm)
            dbp_sum = float(dm[active].sum())
            grad_x[ws.alpha_sl] += float(ws.p @ dm)

        if need_grad:
            grad_x[ws.nu_sl] += dnu
            GLw = (G * ws.sameF) @ w
            dlam_cov = 2.0 * phi_sd[F] * GLw
            if marginal:
                Ga = G @ a
                dA = dAmean + 2.0 * sigma2 * Ga
                grad_x[ws.sig_sl] += float(a @ Ga)
            else:
                dA = dAmean
            grad_x[ws.lam_sl] += gamma[F] * dA + dlam_cov
            if ws.gamma_sl is not None:
                dgam = np.bincount(F, weights=lam * dA, minlength=ws.d)[1:]
                grad_x[ws.gamma_sl] += dgam
            dphi = 2.0 * np.bincount(F, weights=lam * GLw, minlength=ws.d)
            grad_x[ws.phi_sl] += dphi
            dpsi = np.diag(G).copy()
            if rho.size:
                goff = G[ws.pairs_j, ws.pairs_k]
                np.add.at(dpsi, ws.pairs_j, goff * psi_off / psi_diag[ws.pairs_j])
                np.add.at(dpsi, ws.pairs_k, goff * psi_off / psi_diag[ws.pairs_k])
                grad_x[ws.rho_sl] += 2.0 * goff * np.sqrt(
                    psi_diag[ws.pairs_j] * psi_diag[ws.pairs_k])
            grad_x[ws.psi_sl] += dpsi
        return ll, db1, db2, dbp_sum

    def _cohort_full(self, ws, x, grad_x, need_grad, pointwise,
                     nu, lam, gamma, psi, psi_diag, psi_off, rho, phi_sd,
                     sigma2, m, hinge, active):
        """Full variant: covariance is Psi alone, means carry xi per row."""
        eta = x[ws.eta_sl]
        xi = x[ws.xi_sl].reshape(ws.data.n, ws.d)
        F = ws.F
        mean_lat = xi[:, F] * lam  # (n, K) Lambda xi per row
        K = ws.K
        ll = 0.0
        G = np.zeros((K, K)) if need_grad else None
        dnu = np.zeros(K) if need_grad else None
        dlam = np.zeros(K) if need_grad else None
        dxi = np.zeros((ws.data.n, ws.d)) if need_grad else None
        L_full = _kernels.chol_lower(psi)
        if L_full is None:
            return None
        for obs, rows, Ysub, Dsub in ws.patterns:
            if obs.size == K:
                L = L_full
            else:
                L = _kernels.chol_lower(psi[np.ix_(obs, obs)])
                if L is None:
                    return None
            R = Ysub - nu[obs] - mean_lat[np.ix_(rows, obs)]
            ll_rows, S, M2 = _kernels.gauss_batch(L, np.ascontiguousarray(R))
            ll += float(ll_rows.sum())
            if pointwise is not None:
                pointwise[ws.row_offset + rows] = ll_rows
            if need_grad:
                dnu[obs] += S.sum(axis=0)
                dlam[obs] += np.einsum("nk,nk->k", S, xi[np.ix_(rows, F[obs])])
                dxi[rows] += S @ (Dsub * lam[obs, None])
                ginc = 0.5 * (M2 - rows.size * _kernels.chol_inverse(L))
                G[np.ix_(obs, obs)] += ginc

        # xi | eta
        phi2 = phi_sd**2
        resid_xi = xi - np.outer(eta, gamma)
        ll += float(np.sum(-0.5 * (resid_xi**2 / phi2 + np.log(phi2) + _LOG_2PI)))
        # eta | exposure
        resid_eta = eta - m
        ll += float(np.sum(-0.5 * (resid_eta**2 / sigma2 + np.log(sigma2) + _LOG_2PI)))

        db1 = db2 = dbp_sum = 0.0
        if need_grad:
            scaled = resid_xi / phi2  # (n, d)
            dxi -= scaled
            grad_x[ws.xi_sl] += dxi.ravel()
            deta = scaled @ gamma - resid_eta / sigma2
            grad_x[ws.eta_sl] += deta
            if ws.gamma_sl is not None:
                grad_x[ws.gamma_sl] += (eta @ scaled)[1:]
            grad_x[ws.phi_sl] += (resid_xi**2 / phi2).sum(axis=0) / phi_sd \
                - ws.data.n / phi_sd
            grad_x[ws.sig_sl] += float(np.sum(resid_eta**2) / (2 * sigma2**2)
                                       - ws.data.n / (2 * sigma2))
            dm_eta = resid_eta / sigma2
            db1 = float(ws.x @ dm_eta)
            db2 = float(hinge @ dm_eta)
            dbp_sum = float(dm_eta[active].sum())
            grad_x[ws.alpha_sl] += float(ws.p @ dm_eta)
            grad_x[ws.nu_sl] += dnu
            grad_x[ws.lam_sl] += dlam
            dpsi = np.diag(G).copy()
            if rho.size:
                goff = G[ws.pairs_j, ws.pairs_k]
                np.add.at(dpsi, ws.pairs_j, goff * psi_off / psi_diag[ws.pairs_j])
                np.add.at(dpsi, ws.pairs_k, goff * psi_off / psi_diag[ws.pairs_k])
                grad_x[ws.rho_sl] += 2.0 * goff * np.sqrt(
                    psi_diag[ws.pairs_j] * psi_diag[ws.pairs_k])
            grad_x[ws.psi_sl] += dpsi
        return ll, db1, db2, dbp_sum


def grad_log_posterior(v: np.ndarray, variant: ModelVariant,
                       cohorts: list[tuple[CohortSpec, CohortData]],
                       priors: PriorConfig | None = None):
    """Log posterior and gradient at an unconstrained vector.

    Convenience wrapper around :class:`PosteriorDensity` for one-off
    evaluations; build the density object directly when evaluating many
    points.
    """
    return PosteriorDensity(variant, cohorts, priors).value_and_grad(v)
