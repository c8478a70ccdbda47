"""Per-cohort measurement structure and observed data containers.

A cohort is a group of individuals that share an outcome battery: which
test scores were collected, which subdomain factor each outcome loads on,
and which outcome pairs carry a free residual correlation. Different
cohorts may use different batteries; the structural dose-response part of
the model is shared across cohorts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = ["CohortSpec", "CohortData", "validate_cohort"]


@dataclass(frozen=True)
class CohortSpec:
    """Measurement structure of one cohort.

    Parameters
    ----------
    cohort_id : str
        Unique label, used in parameter names and file names.
    n_outcomes : int
        Number of observed outcome variables (columns of Y).
    n_factors : int
        Number of subdomain factors.
    factor_map : array of int, shape (n_outcomes,)
        0-based factor index each outcome loads on.
    resid_pairs : tuple of (int, int)
        0-based outcome index pairs with a free residual correlation.
    n : int
        Number of individuals.
    outcome_names : tuple of str, optional
        Column labels; generated as ``y01..`` when omitted.
    """

    cohort_id: str
    n_outcomes: int
    n_factors: int
    factor_map: np.ndarray
    resid_pairs: tuple[tuple[int, int], ...] = ()
    n: int = 0
    outcome_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        fm = np.asarray(self.factor_map, dtype=np.int64)
        fm.setflags(write=False)
        object.__setattr__(self, "factor_map", fm)
        if self.n_outcomes < 1 or self.n_factors < 1:
            raise ValueError("n_outcomes and n_factors must be >= 1")
        if fm.shape != (self.n_outcomes,):
            raise ValueError(
                f"factor_map has length {fm.shape}, expected ({self.n_outcomes},)"
            )
        if fm.min() < 0 or fm.max() >= self.n_factors:
            raise ValueError("factor_map entries must lie in [0, n_factors)")
        counts = np.bincount(fm, minlength=self.n_factors)
        if (counts == 0).any():
            missing = np.flatnonzero(counts == 0).tolist()
            raise ValueError(f"factors with no mapped outcome: {missing}")
        if (counts < 3).any():
            warnings.warn(
                f"cohort {self.cohort_id!r}: some factors have fewer than 3 "
                "outcomes; loadings may be weakly identified",
                stacklevel=2,
            )
        pairs = []
        for j, k in self.resid_pairs:
            if j == k:
                raise ValueError(f"self-pair ({j},{k}) in resid_pairs")
            if not (0 <= j < self.n_outcomes and 0 <= k < self.n_outcomes):
                raise ValueError(f"resid pair ({j},{k}) out of range")
            pairs.append((min(j, k), max(j, k)))
        if len(set(pairs)) != len(pairs):
            raise ValueError("duplicate entries in resid_pairs")
        object.__setattr__(self, "resid_pairs", tuple(pairs))
        if not self.outcome_names:
            names = tuple(f"y{k + 1:02d}" for k in range(self.n_outcomes))
            object.__setattr__(self, "outcome_names", names)
        elif len(self.outcome_names) != self.n_outcomes:
            raise ValueError("outcome_names length mismatch")

    @property
    def n_resid_pairs(self) -> int:
        return len(self.resid_pairs)


@dataclass(frozen=True)
class CohortData:
    """Observed data for one cohort.

    ``Y`` holds outcome values (masked cells may be NaN), ``mask`` is True
    where observed, ``x`` is the nonnegative exposure covariate and ``p``
    the propensity score. Rows with no observed outcome are rejected:
    they carry no information and would break the row likelihood.
    """

    Y: np.ndarray
    mask: np.ndarray
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        Y = np.array(self.Y, dtype=np.float64)
        mask = np.array(self.mask, dtype=bool)
        x = np.array(self.x, dtype=np.float64)
        p = np.array(self.p, dtype=np.float64)
        if Y.ndim != 2:
            raise ValueError("Y must be 2-D (n individuals x K outcomes)")
        n, k = Y.shape
        if mask.shape != (n, k):
            raise ValueError("mask shape must match Y")
        if x.shape != (n,) or p.shape != (n,):
            raise ValueError("x and p must be length-n vectors")
        if not mask.any(axis=1).all():
            bad = np.flatnonzero(~mask.any(axis=1)).tolist()
            raise ValueError(f"rows with zero observed outcomes: {bad}")
        if (x < 0).any():
            raise ValueError("exposure x must be nonnegative")
        if not np.isfinite(Y[mask]).all():
            raise ValueError("non-finite observed outcome values")
        if not (np.isfinite(x).all() and np.isfinite(p).all()):
            raise ValueError("non-finite covariate values")
        for name, arr in (("Y", Y), ("mask", mask), ("x", x), ("p", p)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def n_outcomes(self) -> int:
        return self.Y.shape[1]


def validate_cohort(spec: CohortSpec, data: CohortData) -> None:
    """Check that a data block is dimensioned for its cohort spec."""
    if data.n_outcomes != spec.n_outcomes:
        raise ValueError(
            f"cohort {spec.cohort_id!r}: data has {data.n_outcomes} outcomes, "
            f"spec declares {spec.n_outcomes}"
        )
    if spec.n and data.n != spec.n:
        raise ValueError(
            f"cohort {spec.cohort_id!r}: data has {data.n} rows, spec declares {spec.n}"
        )
