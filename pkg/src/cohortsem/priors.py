"""Prior configuration and log-prior evaluation.

All scalar "(a, b)" normal priors are (mean, sd). Priors on variances
(outcome residual variances, cognition residual variance) are normals
truncated to positive support, with the truncation constant included so
the prior is properly normalized (bridge-sampling evidence needs the
constants). Residual correlations get a Beta prior on (rho+1)/2;
subdomain residual sds get an inverse-gamma prior.

Latent scores (eta, xi) carry no prior here: their densities are part of
the model likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln, log_ndtr

from .params import ModelVariant, ParameterSet, ParamLayout

__all__ = ["PriorConfig", "log_prior", "log_prior_blocks"]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of every prior block.

    Defaults follow the application setup: N(1,1) truncated-positive
    loadings, N(0,50) intercepts, N(100,50) truncated outcome residual
    variances, IG(6,20) subdomain residual sds, N(150,50) truncated
    cognition residual variance, lognormal(0,0.5) break-point (i.e. a
    N(0,0.5) prior on log break-point), Beta(1,1) on (rho+1)/2, and
    weakly informative N(0,1.5) slopes and propensity coefficients.
    """

    loading_prior: tuple[float, float] = (1.0, 1.0)
    gamma_prior: tuple[float, float] = (1.0, 1.0)
    nu_prior: tuple[float, float] = (0.0, 50.0)
    psi_prior: tuple[float, float] = (100.0, 50.0)
    phi_sd_prior: tuple[float, float] = (6.0, 20.0)   # inverse-gamma (shape, scale)
    sigma2_prior: tuple[float, float] = (150.0, 50.0)
    alpha_prior: tuple[float, float] = (0.0, 1.5)
    logbp_prior: tuple[float, float] = (0.0, 0.5)
    beta_prior: tuple[float, float] = (0.0, 1.5)
    rho_prior: tuple[float, float] = (1.0, 1.0)       # Beta (a, b) on (rho+1)/2

    def __post_init__(self):
        for name in ("loading_prior", "gamma_prior", "nu_prior", "psi_prior",
                     "sigma2_prior", "alpha_prior", "logbp_prior", "beta_prior"):
            if getattr(self, name)[1] <= 0:
                raise ValueError(f"{name}: sd must be positive")
        if self.phi_sd_prior[0] <= 0 or self.phi_sd_prior[1] <= 0:
            raise ValueError("phi_sd_prior: shape and scale must be positive")
        if self.rho_prior[0] <= 0 or self.rho_prior[1] <= 0:
            raise ValueError("rho_prior: Beta parameters must be positive")


# -- scalar/vector block densities (constrained scale) ----------------------

def _normal_lp(x, mean, sd):
    z = (np.asarray(x, dtype=np.float64) - mean) / sd
    return float(np.sum(-0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI))


def _normal_grad(x, mean, sd):
    return -(np.asarray(x, dtype=np.float64) - mean) / (sd * sd)


def _truncpos_normal_lp(x, mean, sd):
    # normalization: P(X > 0) = Phi(mean/sd) for X ~ N(mean, sd^2)
    x = np.asarray(x, dtype=np.float64)
    if (x <= 0).any():
        return -np.inf
    return _normal_lp(x, mean, sd) - float(x.size) * float(log_ndtr(mean / sd))


def _invgamma_lp(x, shape, scale):
    x = np.asarray(x, dtype=np.float64)
    if (x <= 0).any():
        return -np.inf
    return float(np.sum(shape * np.log(scale) - gammaln(shape)
                        - (shape + 1.0) * np.log(x) - scale / x))


def _invgamma_grad(x, shape, scale):
    x = np.asarray(x, dtype=np.float64)
    return -(shape + 1.0) / x + scale / (x * x)


def _rho_beta_lp(rho, a, b):
    # Beta(a, b) density of (rho+1)/2 times the 1/2 change-of-variable factor;
    # per-entry constant is -(a+b-1)*log 2 - betaln (log(1/2) when a = b = 1)
    rho = np.asarray(rho, dtype=np.float64)
    if rho.size == 0:
        return 0.0
    if (np.abs(rho) >= 1).any():
        return -np.inf
    lp = ((a - 1.0) * np.log1p(rho) + (b - 1.0) * np.log1p(-rho)
          - (a + b - 1.0) * np.log(2.0) - betaln(a, b))
    return float(lp.sum())


def _rho_beta_grad(rho, a, b):
    rho = np.asarray(rho, dtype=np.float64)
    return (a - 1.0) / (1.0 + rho) - (b - 1.0) / (1.0 - rho)


# -- ParameterSet-level API --------------------------------------------------

def log_prior_blocks(ps: ParameterSet, cfg: PriorConfig,
                     variant: ModelVariant | None = None) -> dict[str, float]:
    """Per-block log-prior contributions; values sum to ``log_prior``."""
    variant = variant or ModelVariant()
    out: dict[str, float] = {}
    out["beta"] = _normal_lp(ps.beta1, *cfg.beta_prior)
    if variant.has_hinge:
        out["beta"] += _normal_lp(ps.beta2, *cfg.beta_prior)
        out["log_bp"] = _normal_lp(ps.log_bp, *cfg.logbp_prior)
    nu = lam = gam = psi = rho = phi = sig = alp = 0.0
    for cp in ps.cohorts:
        nu += _normal_lp(cp.nu, *cfg.nu_prior)
        lam += _truncpos_normal_lp(cp.lam, *cfg.loading_prior)
        if cp.gamma.size > 1:
            gam += _truncpos_normal_lp(cp.gamma[1:], *cfg.gamma_prior)
        psi += _truncpos_normal_lp(cp.psi_diag, *cfg.psi_prior)
        rho += _rho_beta_lp(cp.rho, *cfg.rho_prior)
        phi += _invgamma_lp(cp.phi_sd, *cfg.phi_sd_prior)
        sig += _truncpos_normal_lp(cp.sigma2, *cfg.sigma2_prior)
        alp += _normal_lp(cp.alpha, *cfg.alpha_prior)
    out.update({"nu": nu, "lambda": lam, "gamma": gam, "psi": psi,
                "rho": rho, "phi_sd": phi, "sigma2": sig, "alpha": alp})
    return out


def log_prior(ps: ParameterSet, cfg: PriorConfig,
              variant: ModelVariant | None = None) -> float:
    """Total log prior density of a ParameterSet on the constrained scale."""
    return float(sum(log_prior_blocks(ps, cfg, variant).values()))


# -- packed-vector API (sampler hot path) ------------------------------------

_BLOCK_PRIORS = {
    "beta1": "beta_prior",
    "beta2": "beta_prior",
    "log_bp": "logbp_prior",
    "nu": "nu_prior",
    "alpha": "alpha_prior",
    "lambda": "loading_prior",
    "gamma": "gamma_prior",
    "psi": "psi_prior",
    "sigma2": "sigma2_prior",
}
_TRUNCATED = {"lambda", "gamma", "psi", "sigma2"}


class PriorEvaluator:
    """Precompiled prior evaluation on packed constrained vectors.

    Block structure is flattened once into concatenated index arrays so
    each evaluation is a handful of vectorized operations (this sits on
    the sampler's hot path).
    """

    def __init__(self, layout: ParamLayout, cfg: PriorConfig):
        self.layout = layout
        self.cfg = cfg
        nrm_idx, nrm_mean, nrm_isd = [], [], []
        ig_idx, rho_idx = [], []
        const = 0.0
        for b in layout.blocks:
            if b.name in ("eta", "xi"):
                continue
            idx = np.arange(b.sl.start, b.sl.stop)
            if b.name == "phi_sd":
                ig_idx.append(idx)
            elif b.name == "rho":
                rho_idx.append(idx)
            else:
                mean, sd = getattr(cfg, _BLOCK_PRIORS[b.name])
                nrm_idx.append(idx)
                nrm_mean.append(np.full(idx.size, mean))
                nrm_isd.append(np.full(idx.size, 1.0 / sd))
                const += idx.size * (-np.log(sd) - 0.5 * _LOG_2PI)
                if b.name in _TRUNCATED:
                    const -= idx.size * float(log_ndtr(mean / sd))
        self._nrm_idx = np.concatenate(nrm_idx) if nrm_idx else np.empty(0, int)
        self._nrm_mean = np.concatenate(nrm_mean) if nrm_mean else np.empty(0)
        self._nrm_isd = np.concatenate(nrm_isd) if nrm_isd else np.empty(0)
        self._ig_idx = np.concatenate(ig_idx) if ig_idx else np.empty(0, int)
        self._rho_idx = np.concatenate(rho_idx) if rho_idx else np.empty(0, int)
        a, b = cfg.phi_sd_prior
        const += self._ig_idx.size * float(a * np.log(b) - gammaln(a))
        a, b = cfg.rho_prior
        const -= self._rho_idx.size * float((a + b - 1.0) * np.log(2.0)
                                            + betaln(a, b))
        self._const = const

    def value_and_grad(self, x: np.ndarray):
        """Log prior and its gradient w.r.t. the constrained vector.

        Positivity/interval support is guaranteed by the constraint
        transform, so no support checks happen here.
        """
        grad = np.zeros_like(x)
        z = (x[self._nrm_idx] - self._nrm_mean) * self._nrm_isd
        lp = self._const - 0.5 * float(z @ z)
        grad[self._nrm_idx] = -z * self._nrm_isd
        if self._ig_idx.size:
            a, b = self.cfg.phi_sd_prior
            xb = x[self._ig_idx]
            lx = np.log(xb)
            inv = 1.0 / xb
            lp += float(-(a + 1.0) * lx.sum() - b * inv.sum())
            grad[self._ig_idx] = -(a + 1.0) * inv + b * inv * inv
        if self._rho_idx.size:
            a, b = self.cfg.rho_prior
            r = x[self._rho_idx]
            lp += float(((a - 1.0) * np.log1p(r) + (b - 1.0) * np.log1p(-r)).sum())
            grad[self._rho_idx] = (a - 1.0) / (1.0 + r) - (b - 1.0) / (1.0 - r)
        return lp, grad

    def center(self) -> np.ndarray:
        """Prior center on the constrained scale, used to seed chains.

        Location parameters for normal blocks, the inverse-gamma mean
        (or scale when the mean does not exist) for subdomain sds, zero
        for correlations and latent scores.
        """
        cfg = self.cfg
        x = np.zeros(self.layout.dim)
        for b in self.layout.blocks:
            if b.name in ("eta", "xi", "rho"):
                continue
            if b.name == "phi_sd":
                shape, scale = cfg.phi_sd_prior
                x[b.sl] = scale / (shape - 1.0) if shape > 1.0 else scale
            else:
                mean, sd = getattr(cfg, _BLOCK_PRIORS[b.name])
                if b.name in _TRUNCATED and mean <= 0:
                    mean = sd  # keep the center strictly inside the support
                x[b.sl] = mean
        return x
