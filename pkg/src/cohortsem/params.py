"""Parameter space, model variants, and constraint transforms.

The sampler works on an unconstrained real vector; the model is written in
terms of constrained parameters (positive loadings and variances,
correlations in (-1, 1)). ``ParamLayout`` owns the packing order and the
bijection between the two scales, including the log-Jacobian the posterior
needs on the unconstrained scale.

Transform conventions:

* positive parameters: ``theta = exp(v)``, log-Jacobian ``v``;
* residual correlations: ``rho = 2*expit(v) - 1``, log-Jacobian
  ``log((1 - rho^2)/2)``;
* everything else (intercepts, slopes, log break-point, latent scores):
  identity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .cohorts import CohortSpec

__all__ = [
    "LatentHandling",
    "DoseResponse",
    "ModelVariant",
    "CohortParams",
    "ParameterSet",
    "ParamBlock",
    "ParamLayout",
    "assemble_psi",
    "PsiNotPositiveDefinite",
]

_REAL, _POS, _CORR = 0, 1, 2


class LatentHandling(enum.Enum):
    """Which latent scores stay in the sampled parameter vector."""

    FULL = "full"            # subdomain scores and cognition score sampled
    REDUCED_XI = "reduced"   # subdomain scores integrated out analytically
    FULLY_MARGINAL = "marginal"  # cognition score integrated out as well


class DoseResponse(enum.Enum):
    PIECEWISE = "piecewise"
    LINEAR = "linear"


@dataclass(frozen=True)
class ModelVariant:
    latent_handling: LatentHandling = LatentHandling.REDUCED_XI
    dose_response: DoseResponse = DoseResponse.PIECEWISE

    @property
    def has_eta(self) -> bool:
        return self.latent_handling in (LatentHandling.FULL, LatentHandling.REDUCED_XI)

    @property
    def has_xi(self) -> bool:
        return self.latent_handling is LatentHandling.FULL

    @property
    def has_hinge(self) -> bool:
        return self.dose_response is DoseResponse.PIECEWISE

    @classmethod
    def parse(cls, latents: str, dose: str) -> "ModelVariant":
        return cls(LatentHandling(latents), DoseResponse(dose))


class PsiNotPositiveDefinite(ValueError):
    """Raised when a residual covariance assembled from (psi, rho) is not PD."""

    def __init__(self, pairs):
        self.pairs = tuple(pairs)
        super().__init__(
            "residual covariance is not positive definite; "
            f"correlated pairs involved: {self.pairs}"
        )


def assemble_psi(psi_diag, rho, resid_pairs, check_pd: bool = True) -> np.ndarray:
    """Build the outcome residual covariance from variances and pair correlations.

    Entry (j, k) is ``rho_p * sqrt(psi_j * psi_k)`` for each listed pair,
    zero elsewhere off the diagonal. Raises :class:`PsiNotPositiveDefinite`
    when the result has a non-positive eigenvalue (only possible when pairs
    interact; a single correlation in (-1, 1) is always fine).
    """
    psi_diag = np.asarray(psi_diag, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if (psi_diag <= 0).any():
        raise ValueError("psi_diag entries must be positive")
    if rho.size and (np.abs(rho) >= 1).any():
        raise ValueError("residual correlations must lie in (-1, 1)")
    if len(resid_pairs) != rho.size:
        raise ValueError("rho length must match resid_pairs")
    psi = np.diag(psi_diag.copy())
    sd = np.sqrt(psi_diag)
    for r, (j, k) in zip(rho, resid_pairs):
        psi[j, k] = psi[k, j] = r * sd[j] * sd[k]
    if check_pd and len(resid_pairs) > 0:
        try:
            np.linalg.cholesky(psi)
        except np.linalg.LinAlgError:
            raise PsiNotPositiveDefinite(resid_pairs) from None
    return psi


@dataclass(frozen=True)
class CohortParams:
    """Cohort-specific parameters; latent scores optional by variant."""

    nu: np.ndarray            # (K,) outcome intercepts
    lam: np.ndarray           # (K,) free loadings, one per outcome, > 0
    gamma: np.ndarray         # (d,) second-level loadings, gamma[0] == 1
    psi_diag: np.ndarray      # (K,) residual variances, > 0
    rho: np.ndarray           # (J,) residual correlations in (-1, 1)
    phi_sd: np.ndarray        # (d,) subdomain residual sds, > 0
    sigma2: float             # cognition residual variance, > 0
    alpha: float              # propensity coefficient
    eta: np.ndarray | None = None   # (n,) cognition scores
    xi: np.ndarray | None = None    # (n, d) subdomain scores


@dataclass(frozen=True)
class ParameterSet:
    """All model parameters: shared dose-response block plus per-cohort blocks."""

    beta1: float
    beta2: float
    log_bp: float
    cohorts: tuple[CohortParams, ...]

    @property
    def breakpoint(self) -> float:
        return math.exp(self.log_bp)


@dataclass(frozen=True)
class ParamBlock:
    name: str          # block label, e.g. "lambda"
    cohort: int        # cohort index, -1 for shared blocks
    kind: int          # _REAL / _POS / _CORR
    sl: slice          # position in the packed vector


class ParamLayout:
    """Packing order and constraint bijection for one model variant.

    Blocks are laid out as: shared dose-response parameters, then the
    structural blocks of each cohort in turn, then latent-score blocks
    (when the variant samples them). The same layout object serves the
    likelihood evaluator (block views into the packed vector), the prior,
    and draw labelling.
    """

    def __init__(self, variant: ModelVariant, specs: list[CohortSpec]):
        self.variant = variant
        self.specs = list(specs)
        blocks: list[ParamBlock] = []
        names: list[str] = []
        pos = 0

        def add(name, cohort, kind, size, labels):
            nonlocal pos
            blocks.append(ParamBlock(name, cohort, kind, slice(pos, pos + size)))
            names.extend(labels)
            pos += size

        add("beta1", -1, _REAL, 1, ["beta1"])
        if variant.has_hinge:
            add("beta2", -1, _REAL, 1, ["beta2"])
            add("log_bp", -1, _REAL, 1, ["log_bp"])
        for c, sp in enumerate(self.specs):
            cid = sp.cohort_id
            K, d, J = sp.n_outcomes, sp.n_factors, sp.n_resid_pairs
            add("nu", c, _REAL, K, [f"nu[{cid}][{k}]" for k in range(K)])
            add("lambda", c, _POS, K, [f"lambda[{cid}][{k}]" for k in range(K)])
            if d > 1:
                add("gamma", c, _POS, d - 1, [f"gamma[{cid}][{f}]" for f in range(1, d)])
            add("psi", c, _POS, K, [f"psi[{cid}][{k}]" for k in range(K)])
            if J:
                add("rho", c, _CORR, J, [f"rho[{cid}][{j}]" for j in range(J)])
            add("phi_sd", c, _POS, d, [f"phi_sd[{cid}][{f}]" for f in range(d)])
            add("sigma2", c, _POS, 1, [f"sigma2[{cid}]"])
            add("alpha", c, _REAL, 1, [f"alpha[{cid}]"])
        if variant.has_eta:
            for c, sp in enumerate(self.specs):
                add("eta", c, _REAL, sp.n,
                    [f"eta[{sp.cohort_id}][{i}]" for i in range(sp.n)])
        if variant.has_xi:
            for c, sp in enumerate(self.specs):
                add("xi", c, _REAL, sp.n * sp.n_factors,
                    [f"xi[{sp.cohort_id}][{i},{f}]"
                     for i in range(sp.n) for f in range(sp.n_factors)])

        self.blocks = tuple(blocks)
        self.param_names = tuple(names)
        self.dim = pos
        kinds = np.zeros(pos, dtype=np.int8)
        for b in blocks:
            kinds[b.sl] = b.kind
        self.pos_idx = np.flatnonzero(kinds == _POS)
        self.corr_idx = np.flatnonzero(kinds == _CORR)
        self._block_map = {(b.name, b.cohort): b.sl for b in blocks}

    def sl(self, name: str, cohort: int = -1) -> slice:
        return self._block_map[(name, cohort)]

    def has_block(self, name: str, cohort: int = -1) -> bool:
        return (name, cohort) in self._block_map

    # -- packing ----------------------------------------------------------

    def pack(self, ps: ParameterSet) -> np.ndarray:
        """Flatten a ParameterSet into a constrained vector."""
        x = np.empty(self.dim)
        x[self.sl("beta1")] = ps.beta1
        if self.variant.has_hinge:
            x[self.sl("beta2")] = ps.beta2
            x[self.sl("log_bp")] = ps.log_bp
        for c, (sp, cp) in enumerate(zip(self.specs, ps.cohorts)):
            x[self.sl("nu", c)] = cp.nu
            x[self.sl("lambda", c)] = cp.lam
            if sp.n_factors > 1:
                x[self.sl("gamma", c)] = cp.gamma[1:]
            x[self.sl("psi", c)] = cp.psi_diag
            if sp.n_resid_pairs:
                x[self.sl("rho", c)] = cp.rho
            x[self.sl("phi_sd", c)] = cp.phi_sd
            x[self.sl("sigma2", c)] = cp.sigma2
            x[self.sl("alpha", c)] = cp.alpha
            if self.variant.has_eta:
                x[self.sl("eta", c)] = cp.eta
            if self.variant.has_xi:
                x[self.sl("xi", c)] = np.ravel(cp.xi)
        return x

    def unpack(self, x: np.ndarray) -> ParameterSet:
        """Rebuild a ParameterSet from a constrained vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}")
        cohorts = []
        for c, sp in enumerate(self.specs):
            d = sp.n_factors
            gamma = np.ones(d)
            if d > 1:
                gamma[1:] = x[self.sl("gamma", c)]
            rho = x[self.sl("rho", c)] if sp.n_resid_pairs else np.empty(0)
            eta = x[self.sl("eta", c)].copy() if self.variant.has_eta else None
            xi = (x[self.sl("xi", c)].reshape(sp.n, d).copy()
                  if self.variant.has_xi else None)
            cohorts.append(CohortParams(
                nu=x[self.sl("nu", c)].copy(),
                lam=x[self.sl("lambda", c)].copy(),
                gamma=gamma,
                psi_diag=x[self.sl("psi", c)].copy(),
                rho=np.asarray(rho).copy(),
                phi_sd=x[self.sl("phi_sd", c)].copy(),
                sigma2=float(x[self.sl("sigma2", c)][0]),
                alpha=float(x[self.sl("alpha", c)][0]),
                eta=eta,
                xi=xi,
            ))
        beta2 = float(x[self.sl("beta2")][0]) if self.variant.has_hinge else 0.0
        log_bp = float(x[self.sl("log_bp")][0]) if self.variant.has_hinge else 0.0
        return ParameterSet(
            beta1=float(x[self.sl("beta1")][0]),
            beta2=beta2,
            log_bp=log_bp,
            cohorts=tuple(cohorts),
        )

    # -- constraint bijection ----------------------------------------------

    def to_unconstrained(self, ps: ParameterSet | np.ndarray) -> np.ndarray:
        """Map a ParameterSet (or packed constrained vector) to sampling space."""
        x = ps if isinstance(ps, np.ndarray) else self.pack(ps)
        if not np.isfinite(x).all():
            raise ValueError("non-finite parameter values")
        v = np.array(x, dtype=np.float64)
        if (x[self.pos_idx] <= 0).any():
            raise ValueError("positivity-constrained entries must be > 0")
        v[self.pos_idx] = np.log(x[self.pos_idx])
        r = x[self.corr_idx]
        if r.size:
            if (np.abs(r) >= 1).any():
                raise ValueError("correlations must lie in (-1, 1)")
            v[self.corr_idx] = np.log1p(r) - np.log1p(-r)  # logit((r+1)/2)
        return v

    def from_unconstrained(self, v: np.ndarray):
        """Map sampling-space vector to (ParameterSet, log-Jacobian)."""
        x, logjac = self.constrain(v)
        return self.unpack(x), logjac

    def constrain(self, v: np.ndarray):
        """Vector-level inverse transform; returns (constrained, log-Jacobian).

        Hot path: no ParameterSet objects are built. Overflow in exp maps
        to inf, which the posterior treats as an invalid (-inf) region.
        """
        v = np.asarray(v, dtype=np.float64)
        if not np.isfinite(v).all():
            raise ValueError("non-finite unconstrained values")
        x = v.copy()
        pv = v[self.pos_idx]
        with np.errstate(over="ignore"):
            x[self.pos_idx] = np.exp(pv)
        logjac = float(pv.sum())
        cv = v[self.corr_idx]
        if cv.size:
            x[self.corr_idx] = 2.0 * expit(cv) - 1.0
            # log drho/dv = log 2 - softplus(v) - softplus(-v)
            sp = np.logaddexp(0.0, cv) + np.logaddexp(0.0, -cv)
            logjac += float((math.log(2.0) * cv.size) - sp.sum())
        return x, logjac

    def grad_to_unconstrained(self, v, x, grad_x):
        """Chain-rule a constrained-scale gradient and add the Jacobian term.

        Returns d/dv [ f(x(v)) + logjac(v) ] given df/dx.
        """
        g = grad_x.copy()
        g[self.pos_idx] *= x[self.pos_idx]
        g[self.pos_idx] += 1.0  # d logjac / dv for exp blocks
        r = x[self.corr_idx]
        if r.size:
            g[self.corr_idx] *= 0.5 * (1.0 - r * r)
            g[self.corr_idx] -= r  # d logjac / dv for correlation blocks
        return g

    # -- misc ---------------------------------------------------------------

    def validate(self, ps: ParameterSet) -> None:
        """Check ParameterSet invariants against this layout."""
        for c, (sp, cp) in enumerate(zip(self.specs, ps.cohorts)):
            if cp.gamma[0] != 1.0:
                raise ValueError(f"cohort {sp.cohort_id}: gamma[0] must be exactly 1")
            for label, arr in (("lambda", cp.lam), ("gamma", cp.gamma[1:]),
                               ("psi_diag", cp.psi_diag), ("phi_sd", cp.phi_sd)):
                if (np.asarray(arr) <= 0).any():
                    raise ValueError(f"cohort {sp.cohort_id}: {label} must be > 0")
            if cp.sigma2 <= 0:
                raise ValueError(f"cohort {sp.cohort_id}: sigma2 must be > 0")
            if cp.rho.size and (np.abs(cp.rho) >= 1).any():
                raise ValueError(f"cohort {sp.cohort_id}: rho outside (-1, 1)")
            assemble_psi(cp.psi_diag, cp.rho, sp.resid_pairs)  # raises if not PD
            if self.variant.has_eta and (cp.eta is None or cp.eta.shape != (sp.n,)):
                raise ValueError(f"cohort {sp.cohort_id}: eta missing or misshaped")
            if self.variant.has_xi and (
                cp.xi is None or cp.xi.shape != (sp.n, sp.n_factors)
            ):
                raise ValueError(f"cohort {sp.cohort_id}: xi missing or misshaped")

    def strip_latents(self, ps: ParameterSet) -> ParameterSet:
        """Drop latent-score fields not sampled under this layout's variant."""
        cohorts = tuple(
            replace(cp,
                    eta=cp.eta if self.variant.has_eta else None,
                    xi=cp.xi if self.variant.has_xi else None)
            for cp in ps.cohorts
        )
        return replace(ps, cohorts=cohorts)
