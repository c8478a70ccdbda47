import os

# single-threaded BLAS: the models use many small factorizations, where
# thread fan-out costs more than it saves (must be set before numpy loads)
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from cohortsem.cohorts import CohortData, CohortSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_cohort(cid="a", n=8, K=5, d=2, pairs=((0, 2),), seed=0,
                missing=0.25):
    """Small random cohort with a guaranteed-observed first column."""
    import warnings

    r = np.random.default_rng(seed)
    fm = np.array([k % d for k in range(K)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # tiny test batteries
        spec = CohortSpec(cid, K, d, fm, resid_pairs=pairs, n=n)
    Y = r.normal(size=(n, K))
    mask = r.random((n, K)) > missing
    mask[:, 0] = True
    x = r.uniform(0.0, 2.6, n)
    p = r.normal(size=n)
    return spec, CohortData(np.where(mask, Y, np.nan), mask, x, p)


@pytest.fixture
def two_cohorts():
    return [make_cohort("a", n=8, K=5, d=2, pairs=((0, 2),), seed=1),
            make_cohort("b", n=6, K=4, d=2, pairs=(), seed=2)]


def random_theta(layout, rng, scale=0.4):
    """Random valid unconstrained point near the origin."""
    return rng.normal(scale=scale, size=layout.dim)
